#include "g2l/frustum_sphere.hpp"

#include <cmath>
#include <string>

#include "g2l/errors.hpp"

namespace g2l {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::kConfigError, "focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::kConfigError, "image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw Error(ErrorCode::kConfigError, "principal point outside image");
  }
}

void Detection2D::validate(const CameraIntrinsics& intr) const {
  if (bbox.u_min >= bbox.u_max || bbox.v_min >= bbox.v_max) {
    throw Error(ErrorCode::kConfigError, "bbox has non-positive extent");
  }
  if (bbox.u_min < 0 || bbox.v_min < 0 || bbox.u_max >= intr.width ||
      bbox.v_max >= intr.height) {
    throw Error(ErrorCode::kConfigError, "bbox outside image");
  }
  if (!bbox.contains(cpm_peak.u, cpm_peak.v)) {
    throw Error(ErrorCode::kConfigError, "cpm peak outside bbox");
  }
  int ones = 0;
  for (double x : one_hot) {
    if (x == 1.0) {
      ++ones;
    } else if (x != 0.0) {
      ones = -1;
      break;
    }
  }
  if (ones != 1) {
    throw Error(ErrorCode::kConfigError, "one_hot must have a single 1 entry");
  }
}

Vec3 backproject_pixel(int u, int v, double z, const CameraIntrinsics& intr) {
  return {(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z};
}

Eigen::Vector2d project(const Vec3& p, const CameraIntrinsics& intr) {
  return {intr.fx * p.x() / p.z() + intr.cx, intr.fy * p.y() / p.z() + intr.cy};
}

namespace {

PointCloud backproject_box(const DepthImage& depth,
                           const CameraIntrinsics& intr,
                           const BoundingBox& box) {
  if (depth.width != intr.width || depth.height != intr.height) {
    throw Error(ErrorCode::kShapeMismatch,
                "depth image size does not match intrinsics");
  }
  PointCloud cloud;
  for (int v = std::max(0, box.v_min); v <= std::min(box.v_max, depth.height - 1);
       ++v) {
    for (int u = std::max(0, box.u_min);
         u <= std::min(box.u_max, depth.width - 1); ++u) {
      const std::uint16_t z = depth.at(u, v);
      if (z == 0) continue;
      cloud.points.push_back(backproject_pixel(u, v, z, intr));
    }
  }
  if (cloud.empty()) {
    throw Error(ErrorCode::kEmptyCloud, "no valid depth in region");
  }
  return cloud;
}

}  // namespace

PointCloud backproject(const DepthImage& depth, const CameraIntrinsics& intr) {
  return backproject_box(depth, intr,
                         {0, 0, depth.width - 1, depth.height - 1});
}

PointCloud frustum_crop(const DepthImage& depth, const CameraIntrinsics& intr,
                        const Detection2D& det) {
  return backproject_box(depth, intr, det.bbox);
}

Vec3 sphere_center(const Detection2D& det, const DepthImage& depth,
                   const CameraIntrinsics& intr) {
  const auto [u, v] = det.cpm_peak;
  if (u < 0 || v < 0 || u >= depth.width || v >= depth.height ||
      depth.at(u, v) == 0) {
    throw Error(ErrorCode::kMissingDepthAtPeak,
                "no depth at pixel (" + std::to_string(u) + ", " +
                    std::to_string(v) + ")");
  }
  return backproject_pixel(u, v, depth.at(u, v), intr);
}

std::vector<std::size_t> sphere_crop_indices(const PointCloud& cloud,
                                             const SphereRegion& region) {
  std::vector<std::size_t> keep;
  const double r2 = region.radius * region.radius;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    if ((cloud.points[i] - region.center).squaredNorm() <= r2) keep.push_back(i);
  }
  return keep;
}

PointCloud sphere_crop(const PointCloud& cloud, const SphereRegion& region) {
  if (!(region.radius > 0.0)) {
    throw Error(ErrorCode::kConfigError, "sphere radius must be positive");
  }
  const auto keep = sphere_crop_indices(cloud, region);
  if (keep.empty()) {
    throw Error(ErrorCode::kEmptyCloud, "no points inside sphere");
  }
  PointCloud out;
  out.points.reserve(keep.size());
  for (auto i : keep) out.points.push_back(cloud.points[i]);
  if (cloud.labels) {
    std::vector<std::uint8_t> labels;
    labels.reserve(keep.size());
    for (auto i : keep) labels.push_back((*cloud.labels)[i]);
    out.labels = std::move(labels);
  }
  return out;
}

}  // namespace g2l
