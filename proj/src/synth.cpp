#include "g2l/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Geometry>

#include "g2l/errors.hpp"
#include "g2l/rng.hpp"

namespace g2l {

ShapeKind shape_kind_from_string(const std::string& s) {
  if (s == "cube") return ShapeKind::kCube;
  if (s == "l_prism") return ShapeKind::kLPrism;
  if (s == "blob") return ShapeKind::kBlob;
  throw Error(ErrorCode::kConfigError, "unknown shape kind '" + s + "'");
}

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kCube: return "cube";
    case ShapeKind::kLPrism: return "l_prism";
    case ShapeKind::kBlob: return "blob";
  }
  return "?";
}

namespace {

// Planar patch origin + s * e1 + t * e2, s, t in [0, 1].
struct Rect {
  Vec3 origin;
  Vec3 e1;
  Vec3 e2;
  double area() const { return e1.cross(e2).norm(); }
};

void add_box_faces(const Vec3& lo, const Vec3& hi, std::vector<Rect>& out) {
  const Vec3 d = hi - lo;
  const Vec3 ex(d.x(), 0, 0), ey(0, d.y(), 0), ez(0, 0, d.z());
  out.push_back({lo, ex, ey});
  out.push_back({lo + ez, ex, ey});
  out.push_back({lo, ex, ez});
  out.push_back({lo + ey, ex, ez});
  out.push_back({lo, ey, ez});
  out.push_back({lo + ex, ey, ez});
}

// L cross-section in x-y extruded along z. Arms have different lengths and
// widths so the solid has no proper rotational symmetry.
struct LDims {
  double a, b, w1, w2, t;
};

LDims l_dims(double size) {
  return {size, 0.65 * size, 0.35 * size, 0.3 * size, 0.4 * size};
}

std::vector<Rect> l_prism_faces(double size) {
  const auto [a, b, w1, w2, t] = l_dims(size);
  const Vec3 shift(-a / 2, -b / 2, -t / 2);  // bounding-box centred
  std::vector<Rect> faces;
  const Vec3 ez(0, 0, t);
  for (double z : {0.0, t}) {
    const Vec3 zo(0, 0, z);
    faces.push_back({shift + zo, {a, 0, 0}, {0, w1, 0}});
    faces.push_back({shift + zo + Vec3(0, w1, 0), {w2, 0, 0}, {0, b - w1, 0}});
  }
  // Outline (0,0) (a,0) (a,w1) (w2,w1) (w2,b) (0,b).
  const Vec3 outline[] = {{0, 0, 0}, {a, 0, 0},  {a, w1, 0},
                          {w2, w1, 0}, {w2, b, 0}, {0, b, 0}};
  for (int i = 0; i < 6; ++i) {
    const Vec3& p = outline[i];
    const Vec3& q = outline[(i + 1) % 6];
    faces.push_back({shift + p, q - p, ez});
  }
  return faces;
}

std::vector<Vec3> l_prism_vertices(double size) {
  const auto [a, b, w1, w2, t] = l_dims(size);
  const Vec3 shift(-a / 2, -b / 2, -t / 2);
  std::vector<Vec3> v;
  const double xy[6][2] = {{0, 0}, {a, 0}, {a, w1}, {w2, w1}, {w2, b}, {0, b}};
  for (double z : {0.0, t}) {
    for (const auto& c : xy) v.push_back(shift + Vec3(c[0], c[1], z));
  }
  return v;
}

std::vector<Rect> cube_faces(double size) {
  std::vector<Rect> faces;
  add_box_faces(Vec3::Constant(-size / 2), Vec3::Constant(size / 2), faces);
  return faces;
}

std::vector<Vec3> cube_vertices(double size) {
  std::vector<Vec3> v;
  for (int i = 0; i < 8; ++i) {
    v.emplace_back((i & 4) ? size / 2 : -size / 2, (i & 2) ? size / 2 : -size / 2,
                   (i & 1) ? size / 2 : -size / 2);
  }
  return v;
}

// Smooth star-shaped radius function for the blob.
struct BlobShape {
  double base;
  Vec3 dirs[3];
  double amps[3];

  explicit BlobShape(double size, std::uint64_t seed) : base(size / 2) {
    Rng rng(mix_seed(seed, 77));
    for (int i = 0; i < 3; ++i) {
      Vec3 d(gaussian(rng, 1.0), gaussian(rng, 1.0), gaussian(rng, 1.0));
      dirs[i] = d.normalized();
      amps[i] = uniform(rng, 0.1, 0.3);
    }
  }

  double radius(const Vec3& unit) const {
    double r = 1.0;
    for (int i = 0; i < 3; ++i) {
      const double c = unit.dot(dirs[i]);
      r += amps[i] * (c * c - 1.0 / 3.0);
    }
    return base * r;
  }
};

Vec3 fibonacci_dir(int i, int n) {
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  const double z = 1.0 - 2.0 * (i + 0.5) / n;
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  const double phi = golden * i;
  return {r * std::cos(phi), r * std::sin(phi), z};
}

std::vector<Vec3> sample_rects(const std::vector<Rect>& faces, int n,
                               std::uint64_t seed) {
  double total = 0.0;
  for (const auto& f : faces) total += f.area();
  std::vector<Vec3> out;
  Rng rng(mix_seed(seed, 11));
  // Largest-remainder apportionment keeps the total exactly n.
  std::vector<int> counts(faces.size());
  std::vector<std::pair<double, std::size_t>> rema;
  int assigned = 0;
  for (std::size_t i = 0; i < faces.size(); ++i) {
    const double share = n * faces[i].area() / total;
    counts[i] = static_cast<int>(std::floor(share));
    assigned += counts[i];
    rema.emplace_back(share - counts[i], i);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](auto& x, auto& y) { return x.first > y.first; });
  for (int i = 0; assigned < n; ++i, ++assigned) ++counts[rema[i].second];

  for (std::size_t fi = 0; fi < faces.size(); ++fi) {
    const Rect& f = faces[fi];
    const int c = counts[fi];
    if (c == 0) continue;
    // Jittered grid with aspect matching the face.
    const double aspect = f.e1.norm() / f.e2.norm();
    int nu = std::max(1, static_cast<int>(std::round(std::sqrt(c * aspect))));
    int nv = std::max(1, (c + nu - 1) / nu);
    std::vector<std::pair<int, int>> cells;
    for (int i = 0; i < nu; ++i)
      for (int j = 0; j < nv; ++j) cells.emplace_back(i, j);
    std::shuffle(cells.begin(), cells.end(), rng);
    for (int s = 0; s < c; ++s) {
      const auto [i, j] = cells[s % cells.size()];
      const double u = (i + uniform(rng, 0.0, 1.0)) / nu;
      const double v = (j + uniform(rng, 0.0, 1.0)) / nv;
      out.push_back(f.origin + u * f.e1 + v * f.e2);
    }
  }
  return out;
}

std::vector<Vec3> grid_rects(const std::vector<Rect>& faces, double spacing) {
  std::vector<Vec3> out;
  for (const auto& f : faces) {
    const int nu = std::max(1, static_cast<int>(std::ceil(f.e1.norm() / spacing)));
    const int nv = std::max(1, static_cast<int>(std::ceil(f.e2.norm() / spacing)));
    for (int i = 0; i <= nu; ++i) {
      for (int j = 0; j <= nv; ++j) {
        out.push_back(f.origin + (double(i) / nu) * f.e1 + (double(j) / nv) * f.e2);
      }
    }
  }
  return out;
}

}  // namespace

ObjectModel make_object(const ShapeSpec& spec) {
  if (spec.n_points < 100) {
    throw Error(ErrorCode::kConfigError, "n_points must be at least 100");
  }
  if (!(spec.size > 0.0)) {
    throw Error(ErrorCode::kConfigError, "size must be positive");
  }
  ObjectModel model;
  model.class_id = spec.class_id;
  model.name = spec.name;
  switch (spec.kind) {
    case ShapeKind::kCube:
    case ShapeKind::kLPrism: {
      const bool cube = spec.kind == ShapeKind::kCube;
      auto verts = cube ? cube_vertices(spec.size) : l_prism_vertices(spec.size);
      const auto faces = cube ? cube_faces(spec.size) : l_prism_faces(spec.size);
      const int rest = spec.n_points - static_cast<int>(verts.size());
      model.surface_points = std::move(verts);
      for (auto& p : sample_rects(faces, rest, spec.seed)) {
        model.surface_points.push_back(p);
      }
      model.symmetric = cube;
      break;
    }
    case ShapeKind::kBlob: {
      const BlobShape blob(spec.size, spec.seed);
      for (int i = 0; i < spec.n_points; ++i) {
        const Vec3 d = fibonacci_dir(i, spec.n_points);
        model.surface_points.push_back(blob.radius(d) * d);
      }
      model.symmetric = false;
      break;
    }
  }
  model.diameter = compute_diameter(model.surface_points);
  return model;
}

ObjectModel make_object(ShapeKind kind, double size, int n_points,
                        std::uint64_t seed) {
  ShapeSpec spec;
  spec.kind = kind;
  spec.size = size;
  spec.n_points = n_points;
  spec.seed = seed;
  spec.name = to_string(kind);
  return make_object(spec);
}

std::vector<Vec3> render_surface(const ShapeSpec& spec, double spacing) {
  switch (spec.kind) {
    case ShapeKind::kCube: return grid_rects(cube_faces(spec.size), spacing);
    case ShapeKind::kLPrism: return grid_rects(l_prism_faces(spec.size), spacing);
    case ShapeKind::kBlob: {
      const BlobShape blob(spec.size, spec.seed);
      const double r = spec.size * 0.65;
      const int n = static_cast<int>(4.0 * M_PI * r * r / (spacing * spacing));
      std::vector<Vec3> out;
      out.reserve(n);
      for (int i = 0; i < n; ++i) {
        const Vec3 d = fibonacci_dir(i, n);
        out.push_back(blob.radius(d) * d);
      }
      return out;
    }
  }
  return {};
}

bool SceneRecord::operator==(const SceneRecord& o) const {
  return depth.width == o.depth.width && depth.height == o.depth.height &&
         depth.mm == o.depth.mm && intrinsics.fx == o.intrinsics.fx &&
         intrinsics.fy == o.intrinsics.fy && intrinsics.cx == o.intrinsics.cx &&
         intrinsics.cy == o.intrinsics.cy &&
         intrinsics.width == o.intrinsics.width &&
         intrinsics.height == o.intrinsics.height &&
         detection.bbox == o.detection.bbox &&
         detection.class_id == o.detection.class_id &&
         detection.cpm_peak == o.detection.cpm_peak &&
         detection.one_hot == o.detection.one_hot &&
         gt_pose.rotation == o.gt_pose.rotation &&
         gt_pose.translation == o.gt_pose.translation &&
         class_id == o.class_id && labels == o.labels && seed == o.seed;
}

namespace {

constexpr double kFar = std::numeric_limits<double>::infinity();

double ray_plane(const Vec3& dir, const PlaneObstacle& pl) {
  const double denom = pl.normal.dot(dir);
  if (std::abs(denom) < 1e-12) return kFar;
  const double t = pl.offset / denom;
  return t > 0.0 ? t : kFar;
}

double ray_sphere(const Vec3& dir, const SphereObstacle& s) {
  // |t d - c|^2 = r^2
  const double a = dir.squaredNorm();
  const double b = -2.0 * dir.dot(s.center);
  const double c = s.center.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - 4 * a * c;
  if (disc < 0.0) return kFar;
  const double sq = std::sqrt(disc);
  const double t0 = (-b - sq) / (2 * a);
  const double t1 = (-b + sq) / (2 * a);
  if (t0 > 0.0) return t0;
  if (t1 > 0.0) return t1;
  return kFar;
}

double min_distance_to(const std::vector<Vec3>& pts, const Vec3& c) {
  double best = kFar;
  for (const auto& p : pts) best = std::min(best, (p - c).squaredNorm());
  return std::sqrt(best);
}

// Random clutter that stays at least `gap` away from the posed object.
void random_clutter(const std::vector<Vec3>& object_cam, const Pose& pose,
                    double diameter, const ClutterConfig& cfg,
                    const CameraIntrinsics& intr, Rng& rng,
                    std::vector<PlaneObstacle>& planes,
                    std::vector<SphereObstacle>& spheres) {
  const Vec3 t = pose.translation;
  if (cfg.background_plane) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double gap = uniform(rng, 20.0, 150.0);
      const double tilt = uniform(rng, 0.0, 30.0) * M_PI / 180.0;
      const double az = uniform(rng, 0.0, 2 * M_PI);
      const Vec3 n = Vec3(std::sin(tilt) * std::cos(az),
                          std::sin(tilt) * std::sin(az), -std::cos(tilt));
      const Vec3 anchor = t + Vec3(0, 0, diameter / 2 + gap);
      PlaneObstacle pl{n, n.dot(anchor)};
      // Object must lie on the camera side (n . X > offset) with margin.
      double min_sd = kFar;
      for (const auto& p : object_cam) min_sd = std::min(min_sd, n.dot(p) - pl.offset);
      if (min_sd > cfg.object_gap) {
        planes.push_back(pl);
        break;
      }
    }
  }
  if (cfg.max_spheres > 0) {
    const int count =
        std::uniform_int_distribution<int>(0, cfg.max_spheres)(rng);
    for (int s = 0; s < count; ++s) {
      for (int attempt = 0; attempt < 20; ++attempt) {
        SphereObstacle sp;
        sp.radius = uniform(rng, cfg.sphere_radius_min, cfg.sphere_radius_max);
        const double z = t.z() + uniform(rng, -diameter, diameter);
        // Anywhere in the image, biased towards the object's neighbourhood.
        const double span_u = 0.35 * intr.width;
        const double span_v = 0.35 * intr.height;
        const Eigen::Vector2d c2 = project(t, intr);
        const double u = c2.x() + uniform(rng, -span_u, span_u);
        const double v = c2.y() + uniform(rng, -span_v, span_v);
        sp.center = Vec3((u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z);
        if (min_distance_to(object_cam, sp.center) - sp.radius > cfg.object_gap) {
          spheres.push_back(sp);
          break;
        }
      }
    }
  }
}

}  // namespace

SceneRecord render_scene(const ShapeSpec& shape, const ObjectModel& model,
                         const Pose& pose, const RenderOptions& opts,
                         const CameraIntrinsics& intr, std::uint64_t seed) {
  return render_scene(render_surface(shape, opts.render_spacing), model, pose,
                      opts, intr, seed);
}

SceneRecord render_scene(const std::vector<Vec3>& render_points,
                         const ObjectModel& model, const Pose& pose,
                         const RenderOptions& opts,
                         const CameraIntrinsics& intr, std::uint64_t seed) {
  intr.validate();
  Rng rng(mix_seed(seed, 1));
  const int w = intr.width;
  const int h = intr.height;

  // Object z-buffer from point splats.
  std::vector<double> obj_z(std::size_t(w) * h, kFar);
  for (const auto& p : render_points) {
    const Vec3 c = pose.apply(p);
    if (c.z() <= 0.0) continue;
    const int u = static_cast<int>(std::lround(intr.fx * c.x() / c.z() + intr.cx));
    const int v = static_cast<int>(std::lround(intr.fy * c.y() / c.z() + intr.cy));
    if (u < 0 || v < 0 || u >= w || v >= h) continue;
    double& z = obj_z[std::size_t(v) * w + u];
    z = std::min(z, c.z());
  }

  const auto object_cam = transform_points(pose, model.surface_points);
  std::vector<PlaneObstacle> planes = opts.clutter.planes;
  std::vector<SphereObstacle> spheres = opts.clutter.spheres;
  random_clutter(object_cam, pose, model.diameter, opts.clutter, intr, rng,
                 planes, spheres);

  int full = 0;
  int visible = 0;
  std::vector<double> depth(std::size_t(w) * h, kFar);
  std::vector<std::uint8_t> is_object(std::size_t(w) * h, 0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const Vec3 dir((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
      double zc = kFar;
      for (const auto& pl : planes) zc = std::min(zc, ray_plane(dir, pl));
      for (const auto& sp : spheres) zc = std::min(zc, ray_sphere(dir, sp));
      const std::size_t idx = std::size_t(v) * w + u;
      const double zo = obj_z[idx];
      if (zo < kFar) ++full;
      if (zo < zc) {
        ++visible;
        is_object[idx] = 1;
        depth[idx] = zo;
      } else {
        depth[idx] = zc;
      }
    }
  }
  if (visible == 0 || visible < opts.clutter.min_visibility * full) {
    throw Error(ErrorCode::kObjectNotVisible,
                std::to_string(visible) + " of " + std::to_string(full) +
                    " object pixels visible");
  }

  SceneRecord rec;
  rec.seed = seed;
  rec.intrinsics = intr;
  rec.gt_pose = pose;
  rec.class_id = model.class_id;
  rec.depth = DepthImage(w, h);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (!(depth[i] < kFar)) continue;
    double z = depth[i];
    if (opts.noise_sigma > 0.0) z += gaussian(rng, opts.noise_sigma);
    const double q = std::round(z);
    if (q > 65535.0) continue;
    rec.depth.mm[i] = static_cast<std::uint16_t>(std::max(1.0, q));
  }

  // Oracle detection: tight box around visible object pixels plus margin.
  BoundingBox box{w, h, -1, -1};
  const Eigen::Vector2d c2 = project(pose.apply(centroid(model.surface_points)), intr);
  Pixel peak;
  double best = kFar;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (!is_object[std::size_t(v) * w + u]) continue;
      box.u_min = std::min(box.u_min, u);
      box.v_min = std::min(box.v_min, v);
      box.u_max = std::max(box.u_max, u);
      box.v_max = std::max(box.v_max, v);
      const double d = (Eigen::Vector2d(u, v) - c2).squaredNorm();
      if (d < best) {
        best = d;
        peak = {u, v};
      }
    }
  }
  const int m = opts.bbox_margin_px;
  box.u_min = std::max(0, box.u_min - m);
  box.v_min = std::max(0, box.v_min - m);
  box.u_max = std::min(w - 1, std::max(box.u_max + m, box.u_min + 1));
  box.v_max = std::min(h - 1, std::max(box.v_max + m, box.v_min + 1));
  rec.detection.bbox = box;
  rec.detection.class_id = model.class_id;
  rec.detection.cpm_peak = peak;
  rec.detection.one_hot.assign(std::max(opts.num_classes, model.class_id + 1), 0.0);
  rec.detection.one_hot[model.class_id] = 1.0;

  const PointCloud crop = frustum_crop(rec.depth, intr, rec.detection);
  rec.labels = label_points(crop, model, pose, LabelingConfig{opts.epsilon});
  return rec;
}

Mat3 random_rotation_uniform(std::uint64_t seed) {
  Rng rng(seed);
  // Shoemake's subgroup algorithm.
  const double u1 = uniform(rng, 0.0, 1.0);
  const double u2 = uniform(rng, 0.0, 2 * M_PI);
  const double u3 = uniform(rng, 0.0, 2 * M_PI);
  const double a = std::sqrt(1 - u1);
  const double b = std::sqrt(u1);
  Eigen::Quaterniond q(b * std::cos(u3), a * std::sin(u2), a * std::cos(u2),
                       b * std::sin(u3));
  return q.normalized().toRotationMatrix();
}

Pose sample_pose(const PoseSamplingConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 2));
  Pose pose;
  for (int i = 0; i < 3; ++i) {
    pose.translation[i] = uniform(rng, cfg.translation_min[i], cfg.translation_max[i]);
  }
  if (cfg.mode == RotationSampling::kUniform) {
    pose.rotation = random_rotation_uniform(mix_seed(seed, 3));
    return pose;
  }
  // Camera on the view sphere around the model, looking at its origin.
  const double deg = M_PI / 180.0;
  const double s_lo = std::sin(cfg.min_elevation_deg * deg);
  const double s_hi = std::sin(cfg.max_elevation_deg * deg);
  const double elev = std::asin(uniform(rng, s_lo, s_hi));  // area-uniform
  const double az = uniform(rng, 0.0, 2 * M_PI);
  const double roll = uniform(rng, -cfg.max_inplane_deg, cfg.max_inplane_deg) * deg;
  const Vec3 cam_pos(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
                     std::sin(elev));
  const Vec3 forward = -cam_pos;
  Vec3 up_hint = Vec3::UnitZ();
  if (std::abs(forward.dot(up_hint)) > 0.999) up_hint = Vec3(std::cos(az), std::sin(az), 0);
  // Image y points down, so model "up" maps to -y.
  const Vec3 x_axis = forward.cross(up_hint).normalized();
  const Vec3 y_axis = forward.cross(x_axis).normalized();
  Mat3 look;
  look.row(0) = x_axis.transpose();
  look.row(1) = y_axis.transpose();
  look.row(2) = forward.transpose();
  pose.rotation = axis_angle(Vec3::UnitZ(), roll) * look;
  return pose;
}

int view_bucket(const ObjectModel& model, const Pose& pose) {
  const KeypointSet kps = bbx8_keypoints(model);
  // Direction from the object to the camera, in the model frame.
  const Vec3 to_cam = -(pose.rotation.transpose() * pose.translation).normalized();
  int best = 0;
  double best_dot = -kFar;
  for (int i = 0; i < 8; ++i) {
    const double d = kps.points.row(i).normalized().dot(to_cam.transpose());
    if (d > best_dot) {
      best_dot = d;
      best = i;
    }
  }
  return best;
}

}  // namespace g2l
