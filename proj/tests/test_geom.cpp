#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "g2l/errors.hpp"
#include "g2l/geom.hpp"
#include "oracles.hpp"

using namespace g2l;

TEST_CASE("transform_points basic cases") {
  PointCloud cloud;
  cloud.points = {{1, 2, 3}, {-4, 0.5, 7}};
  const PointCloud same = transform_points(Pose::identity(), cloud);
  CHECK(same.points == cloud.points);

  Pose shift;
  shift.translation = {5, 0, 0};
  CHECK(transform_points(shift, std::vector<Vec3>{{1, 2, 3}})[0] == Vec3(6, 2, 3));

  Pose rot;
  rot.rotation = axis_angle(Vec3::UnitZ(), std::numbers::pi / 2);
  const Vec3 p = transform_points(rot, std::vector<Vec3>{{1, 0, 0}})[0];
  CHECK((p - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("transform_points keeps labels and preserves distances") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Pose pose;
    pose.rotation = oracle::random_rotation(rng);
    pose.translation = Vec3::Random() * 100;
    PointCloud c;
    c.points = oracle::random_points(rng, 20, 50);
    c.labels = std::vector<std::uint8_t>(20, 1);
    const PointCloud t = transform_points(pose, c);
    REQUIRE(t.labels);
    CHECK(*t.labels == *c.labels);
    for (int i = 1; i < 20; ++i) {
      CHECK((t.points[i] - t.points[0]).norm() ==
            doctest::Approx((c.points[i] - c.points[0]).norm()).epsilon(1e-12));
    }
    const PointCloud back = transform_points(pose.inverse(), t);
    for (int i = 0; i < 20; ++i) CHECK((back.points[i] - c.points[i]).norm() < 1e-9);
  }
}

TEST_CASE("compose applies first then second") {
  std::mt19937_64 rng(5);
  Pose a{oracle::random_rotation(rng), Vec3(1, 2, 3)};
  Pose b{oracle::random_rotation(rng), Vec3(-3, 0, 9)};
  const Vec3 p(0.3, -2, 5);
  CHECK((compose(b, a).apply(p) - b.apply(a.apply(p))).norm() < 1e-12);
}

TEST_CASE("kabsch_align recovers identity and random rotations") {
  std::mt19937_64 rng(11);
  const PointMatrix src = to_matrix(oracle::random_points(rng, 8, 60));
  CHECK(oracle::geodesic(kabsch_align(src, src), Mat3::Identity()) < 1e-7);
  for (int trial = 0; trial < 200; ++trial) {
    const Mat3 r0 = oracle::random_rotation(rng);
    const PointMatrix s = to_matrix(oracle::random_points(rng, 4 + trial % 10, 80));
    const PointMatrix t = (s * r0.transpose()).eval();
    const Mat3 r = kabsch_align(s, t);
    CHECK(is_rotation(r));
    CHECK(rotation_geodesic_error(r, r0) < 1e-6);
  }
}

TEST_CASE("kabsch_align rejects degenerate input") {
  PointMatrix line(3, 3);
  line << 0, 0, 0, 1, 1, 1, 2, 2, 2;
  CHECK_THROWS_AS(kabsch_align(line, line), Error);
  try {
    kabsch_align(line, line);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateConfiguration);
  }
  PointMatrix two(2, 3);
  two << 0, 0, 0, 1, 0, 0;
  CHECK_THROWS_AS(kabsch_align(two, two), Error);
  PointMatrix a(4, 3), b(3, 3);
  a.setRandom();
  b.setRandom();
  CHECK_THROWS_AS(kabsch_align(a, b), Error);
}

TEST_CASE("kabsch_align returns a proper rotation for mirrored targets") {
  std::mt19937_64 rng(17);
  const PointMatrix s = to_matrix(oracle::random_points(rng, 10, 50));
  PointMatrix t = s;
  t.col(0) *= -1.0;
  const Mat3 r = kabsch_align(s, t);
  CHECK(is_rotation(r));
  CHECK(r.determinant() == doctest::Approx(1.0));
}

TEST_CASE("rotation_geodesic_error cases") {
  const Mat3 i = Mat3::Identity();
  CHECK(rotation_geodesic_error(i, i) == 0.0);
  CHECK(rotation_geodesic_error(i, axis_angle(Vec3::UnitZ(), std::numbers::pi / 2)) ==
        doctest::Approx(std::numbers::pi / 2));
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat3 a = oracle::random_rotation(rng);
    const Vec3 axis = Vec3::Random().normalized();
    CHECK(rotation_geodesic_error(a, a * axis_angle(axis, std::numbers::pi)) ==
          doctest::Approx(std::numbers::pi));
  }
}

TEST_CASE("rotation_geodesic_error matches trace formula, symmetric, in range") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const Mat3 a = oracle::random_rotation(rng);
    const Mat3 b = oracle::random_rotation(rng);
    const double e = rotation_geodesic_error(a, b);
    CHECK(e >= 0.0);
    CHECK(e <= std::numbers::pi);
    CHECK(e == doctest::Approx(rotation_geodesic_error(b, a)).epsilon(1e-9));
    CHECK(e == doctest::Approx(oracle::geodesic(a, b)).epsilon(1e-6));
  }
}
