#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "g2l/annotate.hpp"
#include "g2l/frustum_sphere.hpp"
#include "g2l/geom.hpp"

namespace g2l {

enum class ShapeKind { kCube, kLPrism, kBlob };

ShapeKind shape_kind_from_string(const std::string& s);
std::string to_string(ShapeKind kind);

// Parametric object description; the model and its dense render samples are
// both regenerated from it.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::kLPrism;
  double size = 120.0;  // mm, longest nominal extent
  int n_points = 2048;
  std::uint64_t seed = 0;
  int class_id = 0;
  std::string name = "l_prism";
};

ObjectModel make_object(const ShapeSpec& spec);
ObjectModel make_object(ShapeKind kind, double size, int n_points,
                        std::uint64_t seed);
// Regular-spacing surface samples for z-buffer splatting.
std::vector<Vec3> render_surface(const ShapeSpec& spec, double spacing);

struct SphereObstacle {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

struct PlaneObstacle {
  Vec3 normal = -Vec3::UnitZ();  // unit
  double offset = 0.0;           // normal . X = offset
};

struct ClutterConfig {
  bool background_plane = true;
  int max_spheres = 3;
  double sphere_radius_min = 15.0;
  double sphere_radius_max = 40.0;
  double min_visibility = 0.3;
  // Minimum gap between clutter surfaces and the object, mm.
  double object_gap = 16.0;
  // Fixed obstacles, used in addition to the random ones.
  std::vector<SphereObstacle> spheres;
  std::vector<PlaneObstacle> planes;
};

struct SceneRecord {
  DepthImage depth;
  CameraIntrinsics intrinsics;
  Detection2D detection;
  Pose gt_pose;
  int class_id = 0;
  // Labels of frustum_crop(depth, intrinsics, detection), in crop order.
  std::vector<std::uint8_t> labels;
  std::uint64_t seed = 0;

  bool operator==(const SceneRecord& o) const;
};

struct RenderOptions {
  ClutterConfig clutter;
  double noise_sigma = 2.0;
  double epsilon = 8.0;
  int bbox_margin_px = 3;
  int num_classes = 1;
  double render_spacing = 1.0;
};

// Throws ObjectNotVisible when occlusion leaves less than min_visibility of
// the object's pixels (or none).
SceneRecord render_scene(const ShapeSpec& shape, const ObjectModel& model,
                         const Pose& pose, const RenderOptions& opts,
                         const CameraIntrinsics& intr, std::uint64_t seed);

// Variant taking pre-computed render samples.
SceneRecord render_scene(const std::vector<Vec3>& render_points,
                         const ObjectModel& model, const Pose& pose,
                         const RenderOptions& opts,
                         const CameraIntrinsics& intr, std::uint64_t seed);

enum class RotationSampling { kUniform, kViewCone };

struct PoseSamplingConfig {
  RotationSampling mode = RotationSampling::kViewCone;
  // View-cone mode: camera elevation above the model x-y plane and in-plane
  // roll about the optical axis.
  double min_elevation_deg = 20.0;
  double max_elevation_deg = 90.0;
  double max_inplane_deg = 30.0;
  Vec3 translation_min{-60.0, -40.0, 550.0};
  Vec3 translation_max{60.0, 40.0, 700.0};
};

Mat3 random_rotation_uniform(std::uint64_t seed);
Pose sample_pose(const PoseSamplingConfig& cfg, std::uint64_t seed);

// Index of the BBX-8 corner facing the camera; coarse viewpoint bucket.
int view_bucket(const ObjectModel& model, const Pose& pose);

struct GenConfig {
  std::vector<ShapeSpec> objects{ShapeSpec{}};
  int n_train = 500;  // per object
  int n_test = 100;   // per object
  PoseSamplingConfig poses;
  RenderOptions render;
  CameraIntrinsics intrinsics;
  std::uint64_t seed = 1;
};

struct DatasetManifest {
  static constexpr int kFormatVersion = 1;
  int format_version = kFormatVersion;
  GenConfig config;
  std::vector<std::string> train;  // record file names, shuffled
  std::vector<std::string> test;
};

// Writes manifest.json and one .bin record per scene into out_dir.
DatasetManifest gen_dataset(const GenConfig& cfg,
                            const std::filesystem::path& out_dir);

void write_record(const SceneRecord& rec, const std::filesystem::path& path);
SceneRecord read_record(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_record(const SceneRecord& rec);
SceneRecord decode_record(const std::vector<std::uint8_t>& bytes);

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Deterministic prefix of the shuffled train list; at least one record.
std::vector<std::string> train_subset(const DatasetManifest& m, double fraction);

}  // namespace g2l
