#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "g2l/errors.hpp"

namespace g2l {

using json = nlohmann::json;

// Rejects keys outside `allowed`; context names the offending section.
inline void require_known_keys(const json& j,
                               std::initializer_list<const char*> allowed,
                               const std::string& context) {
  if (!j.is_object()) {
    throw Error(ErrorCode::kConfigError, context + " must be an object");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) {
      throw Error(ErrorCode::kConfigError,
                  "unknown key '" + context + "." + it.key() + "'");
    }
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& context) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::kConfigError,
                "bad value for '" + context + "." + key + "'");
  }
}

}  // namespace g2l
