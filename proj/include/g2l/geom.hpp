#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace g2l {

// All lengths are millimetres.
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
// K x 3 point matrix, one point per row.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

bool is_rotation(const Mat3& r, double tol = 1e-9);

// Rigid transform p -> rotation * p + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const;
};

// Returns the pose equivalent to applying `second` after `first`.
Pose compose(const Pose& second, const Pose& first);

struct PointCloud {
  std::vector<Vec3> points;
  // Per-point object labels in {0, 1}; same length as points when present.
  std::optional<std::vector<std::uint8_t>> labels;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

PointMatrix to_matrix(const std::vector<Vec3>& points);
std::vector<Vec3> to_points(const PointMatrix& m);
Vec3 centroid(const std::vector<Vec3>& points);

PointCloud transform_points(const Pose& pose, const PointCloud& cloud);
std::vector<Vec3> transform_points(const Pose& pose,
                                   const std::vector<Vec3>& points);
PointMatrix transform_points(const Pose& pose, const PointMatrix& points);

// Least-squares rotation R minimising sum |R (s_i - s_mean) - (t_i - t_mean)|^2,
// with the determinant forced to +1. Throws DegenerateConfiguration when the
// centred source has rank < 2.
Mat3 kabsch_align(const PointMatrix& source, const PointMatrix& target);

// Angle of the relative rotation a^T b in [0, pi].
double rotation_geodesic_error(const Mat3& a, const Mat3& b);

Mat3 axis_angle(const Vec3& axis, double angle_rad);

}  // namespace g2l
