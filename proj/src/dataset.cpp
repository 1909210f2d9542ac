#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "g2l/errors.hpp"
#include "g2l/config_io.hpp"
#include "g2l/json_util.hpp"
#include "g2l/rng.hpp"
#include "g2l/synth.hpp"

namespace g2l {

namespace {

constexpr char kRecordMagic[4] = {'G', '2', 'L', 'S'};

class ByteWriter {
 public:
  void u8(std::uint8_t x) { buf_.push_back(x); }
  void u16(std::uint16_t x) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(x >> (8 * i)));
  }
  void u32(std::uint32_t x) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(x >> (8 * i)));
  }
  void u64(std::uint64_t x) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(x >> (8 * i)));
  }
  void i32(std::int32_t x) { u32(static_cast<std::uint32_t>(x)); }
  void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : buf_(b) {}
  std::uint8_t u8() {
    if (pos_ >= buf_.size()) {
      throw Error(ErrorCode::kIoError, "record truncated");
    }
    return buf_[pos_++];
  }
  std::uint16_t u16() {
    std::uint16_t x = 0;
    for (int i = 0; i < 2; ++i) x |= std::uint16_t(u8()) << (8 * i);
    return x;
  }
  std::uint32_t u32() {
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= std::uint32_t(u8()) << (8 * i);
    return x;
  }
  std::uint64_t u64() {
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= std::uint64_t(u8()) << (8 * i);
    return x;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_record(const SceneRecord& rec) {
  ByteWriter w;
  for (char c : kRecordMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(DatasetManifest::kFormatVersion);
  const auto& in = rec.intrinsics;
  w.f64(in.fx);
  w.f64(in.fy);
  w.f64(in.cx);
  w.f64(in.cy);
  w.i32(in.width);
  w.i32(in.height);
  w.i32(rec.depth.width);
  w.i32(rec.depth.height);
  for (auto z : rec.depth.mm) w.u16(z);
  const auto& d = rec.detection;
  w.i32(d.bbox.u_min);
  w.i32(d.bbox.v_min);
  w.i32(d.bbox.u_max);
  w.i32(d.bbox.v_max);
  w.i32(d.class_id);
  w.i32(d.cpm_peak.u);
  w.i32(d.cpm_peak.v);
  w.u32(static_cast<std::uint32_t>(d.one_hot.size()));
  for (double x : d.one_hot) w.f64(x);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) w.f64(rec.gt_pose.rotation(r, c));
  for (int i = 0; i < 3; ++i) w.f64(rec.gt_pose.translation[i]);
  w.u32(static_cast<std::uint32_t>(rec.labels.size()));
  for (std::size_t i = 0; i < rec.labels.size(); i += 8) {
    std::uint8_t byte = 0;
    for (std::size_t b = 0; b < 8 && i + b < rec.labels.size(); ++b) {
      if (rec.labels[i + b]) byte |= std::uint8_t(1u << b);
    }
    w.u8(byte);
  }
  w.u64(rec.seed);
  return w.take();
}

SceneRecord decode_record(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  for (char c : kRecordMagic) {
    if (r.u8() != static_cast<std::uint8_t>(c)) {
      throw Error(ErrorCode::kIoError, "bad record magic");
    }
  }
  const auto version = r.u32();
  if (version != DatasetManifest::kFormatVersion) {
    throw Error(ErrorCode::kIoError,
                "unsupported record version " + std::to_string(version));
  }
  SceneRecord rec;
  auto& in = rec.intrinsics;
  in.fx = r.f64();
  in.fy = r.f64();
  in.cx = r.f64();
  in.cy = r.f64();
  in.width = r.i32();
  in.height = r.i32();
  const int w = r.i32();
  const int h = r.i32();
  if (w <= 0 || h <= 0 || w > 1 << 14 || h > 1 << 14) {
    throw Error(ErrorCode::kIoError, "bad depth size");
  }
  rec.depth = DepthImage(w, h);
  for (auto& z : rec.depth.mm) z = r.u16();
  auto& d = rec.detection;
  d.bbox.u_min = r.i32();
  d.bbox.v_min = r.i32();
  d.bbox.u_max = r.i32();
  d.bbox.v_max = r.i32();
  d.class_id = r.i32();
  d.cpm_peak.u = r.i32();
  d.cpm_peak.v = r.i32();
  const auto classes = r.u32();
  if (classes > 4096) throw Error(ErrorCode::kIoError, "bad class count");
  d.one_hot.resize(classes);
  for (auto& x : d.one_hot) x = r.f64();
  rec.class_id = d.class_id;
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) rec.gt_pose.rotation(i, c) = r.f64();
  for (int i = 0; i < 3; ++i) rec.gt_pose.translation[i] = r.f64();
  const auto n = r.u32();
  if (n > static_cast<std::uint32_t>(w) * h) {
    throw Error(ErrorCode::kIoError, "bad label count");
  }
  rec.labels.resize(n);
  for (std::size_t i = 0; i < n; i += 8) {
    const std::uint8_t byte = r.u8();
    for (std::size_t b = 0; b < 8 && i + b < n; ++b) {
      rec.labels[i + b] = (byte >> b) & 1u;
    }
  }
  rec.seed = r.u64();
  if (!r.done()) throw Error(ErrorCode::kIoError, "trailing bytes in record");
  return rec;
}

void write_record(const SceneRecord& rec, const std::filesystem::path& path) {
  const auto bytes = encode_record(rec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

SceneRecord read_record(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_record(bytes);
}

// --- manifest -------------------------------------------------------------

namespace {

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec3(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 3) {
    throw Error(ErrorCode::kConfigError, ctx + " must be a 3-vector");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json shape_json(const ShapeSpec& s) {
  return {{"kind", to_string(s.kind)}, {"size", s.size},   {"n_points", s.n_points},
          {"seed", s.seed},            {"class_id", s.class_id}, {"name", s.name}};
}

ShapeSpec json_shape(const json& j) {
  require_known_keys(j, {"kind", "size", "n_points", "seed", "class_id", "name"},
                     "objects[]");
  ShapeSpec s;
  std::string kind = to_string(s.kind);
  read_opt(j, "kind", kind, "objects[]");
  s.kind = shape_kind_from_string(kind);
  s.name = kind;
  read_opt(j, "size", s.size, "objects[]");
  read_opt(j, "n_points", s.n_points, "objects[]");
  read_opt(j, "seed", s.seed, "objects[]");
  read_opt(j, "class_id", s.class_id, "objects[]");
  read_opt(j, "name", s.name, "objects[]");
  return s;
}

}  // namespace

json gen_config_to_json(const GenConfig& c) {
  json objects = json::array();
  for (const auto& s : c.objects) objects.push_back(shape_json(s));
  const auto& p = c.poses;
  const auto& r = c.render;
  const auto& cl = r.clutter;
  json spheres = json::array();
  for (const auto& s : cl.spheres) {
    spheres.push_back({{"center", vec3_json(s.center)}, {"radius", s.radius}});
  }
  json planes = json::array();
  for (const auto& pl : cl.planes) {
    planes.push_back({{"normal", vec3_json(pl.normal)}, {"offset", pl.offset}});
  }
  return {
      {"objects", objects},
      {"n_train", c.n_train},
      {"n_test", c.n_test},
      {"seed", c.seed},
      {"poses",
       {{"mode", p.mode == RotationSampling::kUniform ? "uniform" : "view_cone"},
        {"min_elevation_deg", p.min_elevation_deg},
        {"max_elevation_deg", p.max_elevation_deg},
        {"max_inplane_deg", p.max_inplane_deg},
        {"translation_min", vec3_json(p.translation_min)},
        {"translation_max", vec3_json(p.translation_max)}}},
      {"render",
       {{"noise_sigma", r.noise_sigma},
        {"epsilon", r.epsilon},
        {"bbox_margin_px", r.bbox_margin_px},
        {"num_classes", r.num_classes},
        {"render_spacing", r.render_spacing},
        {"clutter",
         {{"background_plane", cl.background_plane},
          {"max_spheres", cl.max_spheres},
          {"sphere_radius_min", cl.sphere_radius_min},
          {"sphere_radius_max", cl.sphere_radius_max},
          {"min_visibility", cl.min_visibility},
          {"object_gap", cl.object_gap},
          {"spheres", spheres},
          {"planes", planes}}}}},
      {"intrinsics",
       {{"fx", c.intrinsics.fx},
        {"fy", c.intrinsics.fy},
        {"cx", c.intrinsics.cx},
        {"cy", c.intrinsics.cy},
        {"width", c.intrinsics.width},
        {"height", c.intrinsics.height}}},
  };
}

GenConfig gen_config_from_json(const json& j) {
  require_known_keys(j, {"objects", "n_train", "n_test", "seed", "poses", "render",
                         "intrinsics"},
                     "data");
  GenConfig c;
  if (j.contains("objects")) {
    c.objects.clear();
    for (const auto& o : j.at("objects")) c.objects.push_back(json_shape(o));
  }
  read_opt(j, "n_train", c.n_train, "data");
  read_opt(j, "n_test", c.n_test, "data");
  read_opt(j, "seed", c.seed, "data");
  if (j.contains("poses")) {
    const auto& p = j.at("poses");
    require_known_keys(p, {"mode", "min_elevation_deg", "max_elevation_deg",
                           "max_inplane_deg", "translation_min", "translation_max"},
                       "data.poses");
    std::string mode = "view_cone";
    read_opt(p, "mode", mode, "data.poses");
    if (mode == "uniform") {
      c.poses.mode = RotationSampling::kUniform;
    } else if (mode == "view_cone") {
      c.poses.mode = RotationSampling::kViewCone;
    } else {
      throw Error(ErrorCode::kConfigError, "bad value for 'data.poses.mode'");
    }
    read_opt(p, "min_elevation_deg", c.poses.min_elevation_deg, "data.poses");
    read_opt(p, "max_elevation_deg", c.poses.max_elevation_deg, "data.poses");
    read_opt(p, "max_inplane_deg", c.poses.max_inplane_deg, "data.poses");
    if (p.contains("translation_min"))
      c.poses.translation_min = json_vec3(p["translation_min"], "data.poses.translation_min");
    if (p.contains("translation_max"))
      c.poses.translation_max = json_vec3(p["translation_max"], "data.poses.translation_max");
  }
  if (j.contains("render")) {
    const auto& r = j.at("render");
    require_known_keys(r, {"noise_sigma", "epsilon", "bbox_margin_px", "num_classes",
                           "render_spacing", "clutter"},
                       "data.render");
    read_opt(r, "noise_sigma", c.render.noise_sigma, "data.render");
    read_opt(r, "epsilon", c.render.epsilon, "data.render");
    read_opt(r, "bbox_margin_px", c.render.bbox_margin_px, "data.render");
    read_opt(r, "num_classes", c.render.num_classes, "data.render");
    read_opt(r, "render_spacing", c.render.render_spacing, "data.render");
    if (r.contains("clutter")) {
      const auto& cl = r.at("clutter");
      const std::string ctx = "data.render.clutter";
      require_known_keys(cl, {"background_plane", "max_spheres", "sphere_radius_min",
                              "sphere_radius_max", "min_visibility", "object_gap",
                              "spheres", "planes"},
                         ctx);
      auto& cc = c.render.clutter;
      read_opt(cl, "background_plane", cc.background_plane, ctx);
      read_opt(cl, "max_spheres", cc.max_spheres, ctx);
      read_opt(cl, "sphere_radius_min", cc.sphere_radius_min, ctx);
      read_opt(cl, "sphere_radius_max", cc.sphere_radius_max, ctx);
      read_opt(cl, "min_visibility", cc.min_visibility, ctx);
      read_opt(cl, "object_gap", cc.object_gap, ctx);
      if (cl.contains("spheres")) {
        for (const auto& s : cl["spheres"]) {
          require_known_keys(s, {"center", "radius"}, ctx + ".spheres[]");
          cc.spheres.push_back({json_vec3(s.at("center"), ctx + ".spheres[].center"),
                                s.at("radius").get<double>()});
        }
      }
      if (cl.contains("planes")) {
        for (const auto& s : cl["planes"]) {
          require_known_keys(s, {"normal", "offset"}, ctx + ".planes[]");
          cc.planes.push_back({json_vec3(s.at("normal"), ctx + ".planes[].normal").normalized(),
                               s.at("offset").get<double>()});
        }
      }
    }
  }
  if (j.contains("intrinsics")) {
    const auto& in = j.at("intrinsics");
    require_known_keys(in, {"fx", "fy", "cx", "cy", "width", "height"},
                       "data.intrinsics");
    read_opt(in, "fx", c.intrinsics.fx, "data.intrinsics");
    read_opt(in, "fy", c.intrinsics.fy, "data.intrinsics");
    read_opt(in, "cx", c.intrinsics.cx, "data.intrinsics");
    read_opt(in, "cy", c.intrinsics.cy, "data.intrinsics");
    read_opt(in, "width", c.intrinsics.width, "data.intrinsics");
    read_opt(in, "height", c.intrinsics.height, "data.intrinsics");
  }
  return c;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  const json j = {{"format_version", m.format_version},
                  {"config", gen_config_to_json(m.config)},
                  {"splits", {{"train", m.train}, {"test", m.test}}}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIoError, "malformed manifest: " + std::string(e.what()));
  }
  require_known_keys(j, {"format_version", "config", "splits"}, "manifest");
  DatasetManifest m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != DatasetManifest::kFormatVersion) {
    throw Error(ErrorCode::kIoError, "unsupported manifest version");
  }
  m.config = gen_config_from_json(j.at("config"));
  m.train = j.at("splits").at("train").get<std::vector<std::string>>();
  m.test = j.at("splits").at("test").get<std::vector<std::string>>();
  return m;
}

std::vector<std::string> train_subset(const DatasetManifest& m, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::kConfigError, "train fraction must be in (0, 1]");
  }
  const auto n = static_cast<std::size_t>(
      std::max(1.0, std::round(fraction * static_cast<double>(m.train.size()))));
  return {m.train.begin(), m.train.begin() + std::min(n, m.train.size())};
}

DatasetManifest gen_dataset(const GenConfig& cfg,
                            const std::filesystem::path& out_dir) {
  if (cfg.objects.empty()) throw Error(ErrorCode::kConfigError, "no objects");
  if (cfg.n_train < 0 || cfg.n_test < 0 || cfg.n_train + cfg.n_test == 0) {
    throw Error(ErrorCode::kConfigError, "n_train/n_test must be non-negative");
  }
  cfg.intrinsics.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw Error(ErrorCode::kIoError, "cannot create directory " + out_dir.string());
  }

  DatasetManifest manifest;
  manifest.config = cfg;
  int num_classes = cfg.render.num_classes;
  for (const auto& s : cfg.objects) num_classes = std::max(num_classes, s.class_id + 1);
  manifest.config.render.num_classes = num_classes;
  RenderOptions opts = manifest.config.render;

  for (std::size_t oi = 0; oi < cfg.objects.size(); ++oi) {
    const ShapeSpec& shape = cfg.objects[oi];
    const ObjectModel model = make_object(shape);
    const auto render_pts = render_surface(shape, opts.render_spacing);
    const int total = cfg.n_train + cfg.n_test;
    std::vector<std::string> names;
    for (int i = 0; i < total; ++i) {
      const std::uint64_t base = mix_seed(mix_seed(cfg.seed, oi), i);
      // Retry with fresh pose and clutter until the object is visible enough.
      for (std::uint64_t attempt = 0;; ++attempt) {
        const std::uint64_t seed = mix_seed(base, attempt);
        const Pose pose = sample_pose(cfg.poses, seed);
        try {
          const SceneRecord rec =
              render_scene(render_pts, model, pose, opts, cfg.intrinsics, seed);
          char name[64];
          std::snprintf(name, sizeof(name), "%s_%05d.bin", shape.name.c_str(), i);
          write_record(rec, out_dir / name);
          names.emplace_back(name);
          break;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kObjectNotVisible &&
              e.code() != ErrorCode::kEmptyCloud) {
            throw;
          }
          if (attempt > 1000) throw;
        }
      }
    }
    manifest.train.insert(manifest.train.end(), names.begin(),
                          names.begin() + cfg.n_train);
    manifest.test.insert(manifest.test.end(), names.begin() + cfg.n_train,
                         names.end());
  }
  Rng rng(mix_seed(cfg.seed, 999));
  std::shuffle(manifest.train.begin(), manifest.train.end(), rng);
  write_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace g2l
