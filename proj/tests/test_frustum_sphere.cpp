#include <doctest.h>

#include <functional>
#include <random>
#include <set>
#include <tuple>

#include "g2l/errors.hpp"
#include "g2l/frustum_sphere.hpp"
#include "g2l/synth.hpp"

using namespace g2l;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::kIoError;
}

Detection2D full_box(const CameraIntrinsics& intr) {
  Detection2D d;
  d.bbox = {0, 0, intr.width - 1, intr.height - 1};
  d.cpm_peak = {static_cast<int>(intr.cx), static_cast<int>(intr.cy)};
  d.one_hot = {1.0};
  return d;
}

SceneRecord test_scene(std::uint64_t seed, double noise) {
  ShapeSpec spec;
  const ObjectModel model = make_object(spec);
  RenderOptions opts;
  opts.noise_sigma = noise;
  PoseSamplingConfig poses;
  for (std::uint64_t s = seed;; ++s) {
    try {
      return render_scene(spec, model, sample_pose(poses, s), opts, CameraIntrinsics{}, s);
    } catch (const Error&) {
    }
  }
}

}  // namespace

TEST_CASE("backproject pinhole cases") {
  CameraIntrinsics intr;
  const Vec3 c = backproject_pixel(80, 60, 500, intr);
  CHECK(c == Vec3(0, 0, 500));
  const Vec3 t = backproject_pixel(80 + 140, 60, 100, intr);
  CHECK((t - Vec3(100, 0, 100)).norm() < 1e-12);

  DepthImage zero(intr.width, intr.height);
  CHECK(code_of([&] { backproject(zero, intr); }) == ErrorCode::kEmptyCloud);

  DepthImage one(intr.width, intr.height);
  one.at(80, 60) = 500;
  const PointCloud cloud = backproject(one, intr);
  REQUIRE(cloud.size() == 1);
  CHECK(cloud.points[0] == Vec3(0, 0, 500));
}

TEST_CASE("backproject and project are inverse") {
  CameraIntrinsics intr;
  for (int u = 0; u < intr.width; u += 13) {
    for (int v = 0; v < intr.height; v += 11) {
      const Vec3 p = backproject_pixel(u, v, 300 + u + v, intr);
      const auto px = project(p, intr);
      CHECK(px.x() == doctest::Approx(u));
      CHECK(px.y() == doctest::Approx(v));
    }
  }
}

TEST_CASE("frustum_crop cases") {
  CameraIntrinsics intr;
  const SceneRecord rec = test_scene(40, 2.0);
  const Detection2D full = full_box(intr);
  const PointCloud all = backproject(rec.depth, intr);
  CHECK(frustum_crop(rec.depth, intr, full).points == all.points);

  DepthImage sparse(intr.width, intr.height);
  sparse.at(5, 5) = 700;
  Detection2D elsewhere = full;
  elsewhere.bbox = {50, 50, 70, 70};
  CHECK(code_of([&] { frustum_crop(sparse, intr, elsewhere); }) == ErrorCode::kEmptyCloud);
}

TEST_CASE("frustum_crop keeps every object-labelled point of a rendered scene") {
  for (std::uint64_t s = 1; s <= 10; ++s) {
    const SceneRecord rec = test_scene(100 * s, 0.0);
    const PointCloud crop = frustum_crop(rec.depth, rec.intrinsics, rec.detection);
    const PointCloud all = backproject(rec.depth, rec.intrinsics);
    const ObjectModel model = make_object(ShapeSpec{});
    const auto labels_all = label_points(all, model, rec.gt_pose, LabelingConfig{});
    const auto n_all = std::count(labels_all.begin(), labels_all.end(), 1);
    CHECK(std::count(rec.labels.begin(), rec.labels.end(), 1) == n_all);
    CHECK(crop.size() <= all.size());
  }
}

TEST_CASE("frustum_crop is a subset of the full back-projection") {
  CameraIntrinsics intr;
  const SceneRecord rec = test_scene(7, 2.0);
  std::set<std::tuple<double, double, double>> all;
  for (const auto& p : backproject(rec.depth, intr).points) all.emplace(p.x(), p.y(), p.z());
  for (const auto& p : frustum_crop(rec.depth, intr, rec.detection).points) {
    CHECK(all.count({p.x(), p.y(), p.z()}) == 1);
  }
}

TEST_CASE("sphere_center cases") {
  CameraIntrinsics intr;
  DepthImage d(intr.width, intr.height);
  d.at(80, 60) = 400;
  Detection2D det = full_box(intr);
  CHECK(sphere_center(det, d, intr) == Vec3(0, 0, 400));
  det.cpm_peak = {10, 10};
  CHECK(code_of([&] { sphere_center(det, d, intr); }) == ErrorCode::kMissingDepthAtPeak);
}

TEST_CASE("sphere_center from the oracle peak lies within a diameter of the object centre") {
  const ObjectModel model = make_object(ShapeSpec{});
  const Vec3 model_centre = centroid(model.surface_points);
  for (std::uint64_t s = 1; s <= 20; ++s) {
    const SceneRecord rec = test_scene(37 * s, 2.0);
    const Vec3 c = sphere_center(rec.detection, rec.depth, rec.intrinsics);
    CHECK((c - rec.gt_pose.apply(model_centre)).norm() < model.diameter);
  }
}

TEST_CASE("sphere_crop boundary and errors") {
  PointCloud cloud;
  cloud.points = {{10, 0, 0}, {11, 0, 0}, {0, 0, 0}};
  cloud.labels = std::vector<std::uint8_t>{1, 0, 1};
  const PointCloud out = sphere_crop(cloud, SphereRegion{Vec3::Zero(), 10.0});
  REQUIRE(out.size() == 2);
  CHECK(out.points[0] == Vec3(10, 0, 0));
  CHECK(out.points[1] == Vec3(0, 0, 0));
  REQUIRE(out.labels);
  CHECK(*out.labels == std::vector<std::uint8_t>{1, 1});
  CHECK(code_of([&] { sphere_crop(cloud, SphereRegion{Vec3(500, 0, 0), 5}); }) ==
        ErrorCode::kEmptyCloud);
  CHECK(code_of([&] { sphere_crop(cloud, SphereRegion{Vec3::Zero(), 0}); }) ==
        ErrorCode::kConfigError);
}

TEST_CASE("sphere_crop output is a subset whose points all lie in the ball") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int trial = 0; trial < 50; ++trial) {
    PointCloud cloud;
    for (int i = 0; i < 200; ++i) cloud.points.emplace_back(u(rng), u(rng), u(rng));
    const SphereRegion r{Vec3(u(rng), u(rng), u(rng)) * 0.3, 60.0 + trial};
    PointCloud out;
    try {
      out = sphere_crop(cloud, r);
    } catch (const Error&) {
      continue;
    }
    std::size_t inside = 0;
    for (const auto& p : cloud.points) inside += (p - r.center).squaredNorm() <= r.radius * r.radius;
    CHECK(out.size() == inside);
    for (const auto& p : out.points) {
      CHECK((p - r.center).norm() <= r.radius + 1e-12);
      CHECK(std::find(cloud.points.begin(), cloud.points.end(), p) != cloud.points.end());
    }
  }
}

TEST_CASE("noise-free sphere crop from the oracle peak keeps every object point") {
  const ObjectModel model = make_object(ShapeSpec{});
  for (std::uint64_t s = 1; s <= 20; ++s) {
    const SceneRecord rec = test_scene(53 * s, 0.0);
    PointCloud crop = frustum_crop(rec.depth, rec.intrinsics, rec.detection);
    crop.labels = rec.labels;
    const Vec3 c = sphere_center(rec.detection, rec.depth, rec.intrinsics);
    const PointCloud sp = sphere_crop(crop, SphereRegion{c, model.diameter});
    CHECK(std::count(sp.labels->begin(), sp.labels->end(), 1) ==
          std::count(rec.labels.begin(), rec.labels.end(), 1));
  }
}
