#include "g2l/geom.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "g2l/errors.hpp"

namespace g2l {

bool is_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  if (((r.transpose() * r) - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) {
    return false;
  }
  return std::abs(r.determinant() - 1.0) <= tol;
}

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose compose(const Pose& second, const Pose& first) {
  Pose out;
  out.rotation = second.rotation * first.rotation;
  out.translation = second.rotation * first.translation + second.translation;
  return out;
}

PointMatrix to_matrix(const std::vector<Vec3>& points) {
  PointMatrix m(static_cast<Eigen::Index>(points.size()), 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
  }
  return m;
}

std::vector<Vec3> to_points(const PointMatrix& m) {
  std::vector<Vec3> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[i] = m.row(i).transpose();
  return out;
}

Vec3 centroid(const std::vector<Vec3>& points) {
  Vec3 sum = Vec3::Zero();
  for (const auto& p : points) sum += p;
  return points.empty() ? sum : Vec3(sum / static_cast<double>(points.size()));
}

std::vector<Vec3> transform_points(const Pose& pose,
                                   const std::vector<Vec3>& points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(pose.apply(p));
  return out;
}

PointCloud transform_points(const Pose& pose, const PointCloud& cloud) {
  PointCloud out;
  out.points = transform_points(pose, cloud.points);
  out.labels = cloud.labels;
  return out;
}

PointMatrix transform_points(const Pose& pose, const PointMatrix& points) {
  PointMatrix out = points * pose.rotation.transpose();
  out.rowwise() += pose.translation.transpose();
  return out;
}

Mat3 kabsch_align(const PointMatrix& source, const PointMatrix& target) {
  if (source.rows() != target.rows()) {
    throw Error(ErrorCode::kDegenerateConfiguration,
                "source and target keypoint counts differ");
  }
  if (source.rows() < 3) {
    throw Error(ErrorCode::kDegenerateConfiguration, "need at least 3 points");
  }
  const PointMatrix src = source.rowwise() - source.colwise().mean();
  const PointMatrix tgt = target.rowwise() - target.colwise().mean();

  Eigen::JacobiSVD<Eigen::MatrixXd> rank_svd(src);
  const auto& sv = rank_svd.singularValues();
  if (sv(0) <= 0.0 || sv(1) <= 1e-9 * sv(0)) {
    throw Error(ErrorCode::kDegenerateConfiguration,
                "source keypoints are collinear or coincident");
  }

  const Mat3 cov = src.transpose() * tgt;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 fix = Mat3::Identity();
  // Reflection: flip the direction of the smallest singular value.
  if ((v * u.transpose()).determinant() < 0.0) fix(2, 2) = -1.0;
  return v * fix * u.transpose();
}

double rotation_geodesic_error(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  const double cos_part = (rel.trace() - 1.0) / 2.0;
  const Vec3 skew(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0),
                  rel(1, 0) - rel(0, 1));
  // atan2 form of arccos((tr - 1) / 2); stays accurate near 0 and pi.
  const double angle = std::atan2(skew.norm() / 2.0, cos_part);
  return std::clamp(angle, 0.0, M_PI);
}

Mat3 axis_angle(const Vec3& axis, double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

}  // namespace g2l
