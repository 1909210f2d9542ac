#pragma once

#include "g2l/json_util.hpp"
#include "g2l/synth.hpp"

namespace g2l {

json gen_config_to_json(const GenConfig& c);
GenConfig gen_config_from_json(const json& j);

}  // namespace g2l
