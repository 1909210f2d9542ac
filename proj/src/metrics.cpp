#include "g2l/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "g2l/errors.hpp"
#include "g2l/kdtree.hpp"

namespace g2l {

double add(const ObjectModel& model, const Pose& gt, const Pose& est) {
  if (model.surface_points.empty()) {
    throw Error(ErrorCode::kDegenerateModel, "empty model");
  }
  double sum = 0.0;
  for (const auto& x : model.surface_points) {
    sum += (gt.apply(x) - est.apply(x)).norm();
  }
  return sum / static_cast<double>(model.surface_points.size());
}

double add_s(const ObjectModel& model, const Pose& gt, const Pose& est) {
  if (model.surface_points.empty()) {
    throw Error(ErrorCode::kDegenerateModel, "empty model");
  }
  const KdTree3 tree(transform_points(est, model.surface_points));
  double sum = 0.0;
  for (const auto& x : model.surface_points) {
    sum += std::sqrt(tree.nearest_squared_distance(gt.apply(x)));
  }
  return sum / static_cast<double>(model.surface_points.size());
}

PoseErrorRecord evaluate_pose(const ObjectModel& model, const Pose& gt,
                              const Pose& est, std::string scene_id) {
  PoseErrorRecord rec;
  rec.scene_id = std::move(scene_id);
  rec.add_mm = add(model, gt, est);
  rec.adds_mm = add_s(model, gt, est);
  rec.diameter = model.diameter;
  rec.symmetric = model.symmetric;
  return rec;
}

double accuracy_at_threshold(const std::vector<double>& errors, double diameter,
                             double fraction) {
  if (!(diameter > 0.0)) {
    throw Error(ErrorCode::kConfigError, "diameter must be positive");
  }
  if (errors.empty()) return 0.0;
  const double limit = fraction * diameter;
  const auto hits = std::count_if(errors.begin(), errors.end(),
                                  [&](double e) { return e < limit; });
  return static_cast<double>(hits) / static_cast<double>(errors.size());
}

double adds_auc(const std::vector<double>& errors, double max_threshold) {
  if (errors.empty()) return 0.0;
  std::vector<double> sorted(errors);
  std::sort(sorted.begin(), sorted.end());
  // accuracy(t) = #{e < t} / n is piecewise constant between sorted errors.
  const double n = static_cast<double>(sorted.size());
  double area = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double e = std::clamp(sorted[i], 0.0, max_threshold);
    area += (e - prev) * static_cast<double>(i) / n;
    prev = e;
  }
  area += (max_threshold - prev);  // every error is below t beyond the last
  return area / max_threshold;
}

AccuracyCurve accuracy_curve(const std::vector<double>& errors,
                             double max_threshold, int samples) {
  AccuracyCurve curve;
  const double n = static_cast<double>(std::max<std::size_t>(errors.size(), 1));
  for (int i = 0; i < samples; ++i) {
    const double t = max_threshold * static_cast<double>(i) / (samples - 1);
    const auto hits = std::count_if(errors.begin(), errors.end(),
                                    [&](double e) { return e < t; });
    curve.thresholds.push_back(t);
    curve.accuracy.push_back(errors.empty() ? 0.0 : hits / n);
  }
  curve.auc = adds_auc(errors, max_threshold);
  return curve;
}

}  // namespace g2l
