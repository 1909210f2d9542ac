#pragma once

#include <cstdint>
#include <vector>

#include "g2l/geom.hpp"

namespace g2l {

struct CameraIntrinsics {
  double fx = 140.0;
  double fy = 140.0;
  double cx = 80.0;
  double cy = 60.0;
  int width = 160;
  int height = 120;

  void validate() const;
};

// Row-major depth in integer millimetres; 0 marks a missing measurement.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> mm;

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), mm(std::size_t(w) * h, 0) {}

  std::uint16_t at(int u, int v) const { return mm[std::size_t(v) * width + u]; }
  std::uint16_t& at(int u, int v) { return mm[std::size_t(v) * width + u]; }
};

struct Pixel {
  int u = 0;
  int v = 0;
  bool operator==(const Pixel&) const = default;
};

// Inclusive pixel bounds.
struct BoundingBox {
  int u_min = 0;
  int v_min = 0;
  int u_max = 0;
  int v_max = 0;

  bool contains(int u, int v) const {
    return u >= u_min && u <= u_max && v >= v_min && v <= v_max;
  }
  bool operator==(const BoundingBox&) const = default;
};

struct Detection2D {
  BoundingBox bbox;
  int class_id = 0;
  Pixel cpm_peak;
  std::vector<double> one_hot;

  void validate(const CameraIntrinsics& intr) const;
};

struct SphereRegion {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

Vec3 backproject_pixel(int u, int v, double z, const CameraIntrinsics& intr);
// Continuous pixel coordinates of a camera-frame point.
Eigen::Vector2d project(const Vec3& p, const CameraIntrinsics& intr);

// Points are emitted in row-major pixel order. Throws EmptyCloud.
PointCloud backproject(const DepthImage& depth, const CameraIntrinsics& intr);
PointCloud frustum_crop(const DepthImage& depth, const CameraIntrinsics& intr,
                        const Detection2D& det);
// Throws MissingDepthAtPeak.
Vec3 sphere_center(const Detection2D& det, const DepthImage& depth,
                   const CameraIntrinsics& intr);
// Closed ball; labels are subset alongside points. Throws EmptyCloud.
PointCloud sphere_crop(const PointCloud& cloud, const SphereRegion& region);
// Index form of sphere_crop, for callers that track provenance.
std::vector<std::size_t> sphere_crop_indices(const PointCloud& cloud,
                                             const SphereRegion& region);

}  // namespace g2l
