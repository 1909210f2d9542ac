#pragma once

#include <string>
#include <vector>

#include "g2l/geom.hpp"

namespace g2l {

struct ObjectModel {
  std::vector<Vec3> surface_points;  // model frame
  double diameter = 0.0;
  int class_id = 0;
  std::string name;
  bool symmetric = false;

  // Checks the diameter against the point set and rejects planar sets.
  void validate() const;
};

// Exact maximum pairwise distance.
double compute_diameter(const std::vector<Vec3>& points);

enum class KeypointScheme { kBbx8, kFps };

struct KeypointSet {
  PointMatrix points;  // K x 3, model frame
  KeypointScheme scheme = KeypointScheme::kBbx8;

  int count() const { return static_cast<int>(points.rows()); }
};

struct LabelingConfig {
  double epsilon = 8.0;
};

// Row i holds K unit vectors [v_i1 | v_i2 | ...], i.e. N x (3K).
struct VectorFieldGT {
  Eigen::MatrixXd vectors;
  int num_keypoints = 0;
};

// label_i = 1 iff the nearest transformed model point is closer than epsilon.
std::vector<std::uint8_t> label_points(const PointCloud& cloud,
                                       const ObjectModel& model,
                                       const Pose& gt,
                                       const LabelingConfig& cfg);

KeypointSet bbx8_keypoints(const ObjectModel& model);

// Greedy max-min order; seed is the point farthest from the centroid, ties go
// to the lowest index.
std::vector<std::size_t> fps_indices(const std::vector<Vec3>& points, int k);
KeypointSet fps_keypoints(const ObjectModel& model, int k);

VectorFieldGT vector_field_gt(const PointCloud& canonical_cloud,
                              const PointMatrix& keypoints);

// T - mean(segmented); throws EmptyCloud.
Vec3 translation_residual_gt(const PointCloud& segmented, const Vec3& gt_t);

}  // namespace g2l
