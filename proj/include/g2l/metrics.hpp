#pragma once

#include <string>
#include <vector>

#include "g2l/annotate.hpp"
#include "g2l/geom.hpp"

namespace g2l {

struct PoseErrorRecord {
  std::string scene_id;
  double add_mm = 0.0;
  double adds_mm = 0.0;
  double diameter = 0.0;
  bool symmetric = false;

  // ADD-S for symmetric objects, ADD otherwise.
  double error() const { return symmetric ? adds_mm : add_mm; }
};

struct AccuracyCurve {
  std::vector<double> thresholds;  // ascending, mm
  std::vector<double> accuracy;    // fraction with error < threshold
  double auc = 0.0;
};

// Mean distance between corresponding transformed model points.
double add(const ObjectModel& model, const Pose& gt, const Pose& est);
// Mean distance from each gt-transformed point to the closest est-transformed
// point.
double add_s(const ObjectModel& model, const Pose& gt, const Pose& est);

PoseErrorRecord evaluate_pose(const ObjectModel& model, const Pose& gt,
                              const Pose& est, std::string scene_id = {});

// Share of errors strictly below fraction * diameter.
double accuracy_at_threshold(const std::vector<double>& errors, double diameter,
                             double fraction = 0.1);

// Exact area under the accuracy-vs-threshold step function on (0, max],
// normalised by max.
double adds_auc(const std::vector<double>& errors, double max_threshold = 100.0);

AccuracyCurve accuracy_curve(const std::vector<double>& errors,
                             double max_threshold = 100.0, int samples = 101);

}  // namespace g2l
