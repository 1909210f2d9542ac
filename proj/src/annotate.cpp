#include "g2l/annotate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <unordered_map>

#include <Eigen/SVD>

#include "g2l/errors.hpp"

namespace g2l {

double compute_diameter(const std::vector<Vec3>& points) {
  double best = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      best = std::max(best, (points[i] - points[j]).squaredNorm());
    }
  }
  return std::sqrt(best);
}

void ObjectModel::validate() const {
  if (surface_points.size() < 4) {
    throw Error(ErrorCode::kDegenerateModel, "model needs at least 4 points");
  }
  const PointMatrix m = to_matrix(surface_points);
  const PointMatrix c = m.rowwise() - m.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(c);
  const auto& sv = svd.singularValues();
  if (sv(2) <= 1e-9 * sv(0)) {
    throw Error(ErrorCode::kDegenerateModel, "model points are coplanar");
  }
  if (std::abs(compute_diameter(surface_points) - diameter) > 1e-6) {
    throw Error(ErrorCode::kDegenerateModel,
                "diameter does not match the point set");
  }
}

namespace {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 73856093ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 19349663ULL;
    h ^= static_cast<std::uint64_t>(k.z) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

CellKey cell_of(const Vec3& p, double cell) {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell)),
          static_cast<std::int64_t>(std::floor(p.y() / cell)),
          static_cast<std::int64_t>(std::floor(p.z() / cell))};
}

}  // namespace

std::vector<std::uint8_t> label_points(const PointCloud& cloud,
                                       const ObjectModel& model,
                                       const Pose& gt,
                                       const LabelingConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) {
    throw Error(ErrorCode::kConfigError, "epsilon must be positive");
  }
  const auto transformed = transform_points(gt, model.surface_points);
  // Cell size epsilon: any point closer than epsilon sits in one of the 27
  // neighbouring cells.
  const double cell = cfg.epsilon;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> grid;
  grid.reserve(transformed.size());
  for (std::size_t i = 0; i < transformed.size(); ++i) {
    grid[cell_of(transformed[i], cell)].push_back(i);
  }

  const double eps2 = cfg.epsilon * cfg.epsilon;
  std::vector<std::uint8_t> labels(cloud.size(), 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const CellKey c = cell_of(p, cell);
    bool hit = false;
    for (std::int64_t dx = -1; dx <= 1 && !hit; ++dx) {
      for (std::int64_t dy = -1; dy <= 1 && !hit; ++dy) {
        for (std::int64_t dz = -1; dz <= 1 && !hit; ++dz) {
          auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == grid.end()) continue;
          for (std::size_t j : it->second) {
            if ((p - transformed[j]).squaredNorm() < eps2) {
              hit = true;
              break;
            }
          }
        }
      }
    }
    labels[i] = hit ? 1 : 0;
  }
  return labels;
}

KeypointSet bbx8_keypoints(const ObjectModel& model) {
  if (model.surface_points.empty()) {
    throw Error(ErrorCode::kDegenerateModel, "empty model");
  }
  Vec3 lo = model.surface_points.front();
  Vec3 hi = lo;
  for (const auto& p : model.surface_points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  if (((hi - lo).array() <= 0.0).any()) {
    throw Error(ErrorCode::kDegenerateModel,
                "bounding box has zero extent on an axis");
  }
  KeypointSet kps;
  kps.scheme = KeypointScheme::kBbx8;
  kps.points.resize(8, 3);
  for (int i = 0; i < 8; ++i) {
    kps.points(i, 0) = (i & 4) ? hi.x() : lo.x();
    kps.points(i, 1) = (i & 2) ? hi.y() : lo.y();
    kps.points(i, 2) = (i & 1) ? hi.z() : lo.z();
  }
  return kps;
}

std::vector<std::size_t> fps_indices(const std::vector<Vec3>& points, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > points.size()) {
    throw Error(ErrorCode::kTooFewPoints,
                "cannot sample " + std::to_string(k) + " of " +
                    std::to_string(points.size()) + " points");
  }
  const Vec3 c = centroid(points);
  std::size_t seed = 0;
  double seed_d = -1.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d = (points[i] - c).squaredNorm();
    if (d > seed_d) {
      seed_d = d;
      seed = i;
    }
  }

  std::vector<std::size_t> chosen{seed};
  std::vector<double> min_d(points.size(), std::numeric_limits<double>::infinity());
  std::size_t last = seed;
  while (chosen.size() < static_cast<std::size_t>(k)) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      min_d[i] = std::min(min_d[i], (points[i] - points[last]).squaredNorm());
      if (min_d[i] > best_d) {
        best_d = min_d[i];
        best = i;
      }
    }
    chosen.push_back(best);
    last = best;
  }
  return chosen;
}

KeypointSet fps_keypoints(const ObjectModel& model, int k) {
  if (k < 3) {
    throw Error(ErrorCode::kTooFewPoints, "FPS keypoints need k >= 3");
  }
  const auto idx = fps_indices(model.surface_points, k);
  KeypointSet kps;
  kps.scheme = KeypointScheme::kFps;
  kps.points.resize(k, 3);
  for (int i = 0; i < k; ++i) {
    kps.points.row(i) = model.surface_points[idx[i]].transpose();
  }
  return kps;
}

VectorFieldGT vector_field_gt(const PointCloud& canonical_cloud,
                              const PointMatrix& keypoints) {
  const auto n = static_cast<Eigen::Index>(canonical_cloud.size());
  const auto k = keypoints.rows();
  VectorFieldGT gt;
  gt.num_keypoints = static_cast<int>(k);
  gt.vectors = Eigen::MatrixXd::Zero(n, 3 * k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3& p = canonical_cloud.points[i];
    for (Eigen::Index j = 0; j < k; ++j) {
      const Vec3 d = keypoints.row(j).transpose() - p;
      const double len = d.norm();
      if (len < 1e-9) continue;  // direction undefined
      gt.vectors.block<1, 3>(i, 3 * j) = (d / len).transpose();
    }
  }
  return gt;
}

Vec3 translation_residual_gt(const PointCloud& segmented, const Vec3& gt_t) {
  if (segmented.empty()) {
    throw Error(ErrorCode::kEmptyCloud, "segmented cloud is empty");
  }
  return gt_t - centroid(segmented.points);
}

}  // namespace g2l
