#pragma once

// Absolute and relative trajectory error.

#include <vector>

#include "legslam/dataset.hpp"

namespace legslam {

struct AteResult {
  double rmse = 0.0;
  std::vector<double> errors;  // per associated pose, meters
  Se3d alignment;              // maps estimate positions onto the truth
  int pairs = 0;
};

/// Rigid (no scale) Umeyama alignment of associated positions, then RMSE of
/// the residual translations. Throws TooFewPairs below three pairs.
AteResult compute_ate(const Trajectory& estimate, const Trajectory& truth,
                      double max_offset = kDefaultAssociationOffset);

/// RMSE of relative-translation error over pairs delta associated poses
/// apart. Throws TooFewPairs.
double compute_rte(const Trajectory& estimate, const Trajectory& truth, int delta_frames = 1,
                   double max_offset = kDefaultAssociationOffset);

/// As above with the interval given in seconds: each pose is paired with
/// the first associated pose at least delta_seconds later.
double compute_rte_seconds(const Trajectory& estimate, const Trajectory& truth, double delta_seconds,
                           double max_offset = kDefaultAssociationOffset);

}  // namespace legslam
