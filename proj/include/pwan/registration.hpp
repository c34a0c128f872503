#pragma once

#include <Eigen/Dense>
#include <limits>
#include <memory>
#include <vector>

#include "pwan/coherence.hpp"
#include "pwan/measure.hpp"
#include "pwan/pwan.hpp"
#include "pwan/transforms.hpp"

namespace pwan {

enum class TransformKind { kRigid, kNonRigid };

// Trimmed/thresholded nearest-neighbor refinement: iterate
//   1. nn(j) = closest reference point to T(y_j), residual d_j
//   2. selection s_j: distance kind keeps d_j <= h; mass kind keeps the
//      smallest residuals until their weight reaches m
//   3. one gradient step on  sum_j s_j d_j + C(theta)  with step-halving so
//      the fixed-selection objective never increases across accepted steps
// until the relative decrease drops below `tolerance` or `max_iterations`.
struct FineTuneConfig {
  int max_iterations = 200;
  double step = 0.05;       // initial step; adapts (doubles/halves) per iterate
  double tolerance = 1e-6;  // relative fixed-selection decrease stop rule
};

struct FineTuneOutcome {
  int iterations = 0;
  double objective = 0.0;   // last accepted value (selection + coherence)
  bool degenerate = false;  // an iteration selected nothing (all s_j = 0)
  bool converged = false;   // stopped by tolerance / zero step, not budget
};

// `mass_or_threshold` is m for the mass kind and h for the distance kind.
// The coherence term is evaluated through `coherence` when given (non-rigid
// displacement fields); pass nullptr for rigid or unregularized runs.
FineTuneOutcome fine_tune(TransformModel& transform,
                          const DiscreteMeasure& reference,
                          const DiscreteMeasure& source, DivergenceKind kind,
                          double mass_or_threshold, const FineTuneConfig& cfg,
                          const CoherenceRegularizer* coherence = nullptr);

struct RegistrationConfig {
  TransformKind mode = TransformKind::kNonRigid;
  PwanConfig pwan;              // adversarial phase budget and divergence kind
  CoherenceConfig coherence;    // non-rigid only; lambda = 0 disables
  FineTuneConfig fine_tune;     // max_iterations = 0 disables the phase
};

// Defaults mirroring the synthetic-experiment recipe: full batch, Adam/1e-4
// on the potential, RMSprop/1e-4 on the transform, 25 potential updates per
// step for rigid and 20 for non-rigid, plateau switch to fine-tune over a
// 200-step window, and (rho, lambda, sigma) = (2, 0.01, 0.1) coherence.
RegistrationConfig default_registration_config(TransformKind mode);

struct RegistrationReport {
  std::vector<TraceEntry> trace;
  double divergence = 0.0;     // final full-batch estimate after both phases
  double bound = 0.0;
  int pwan_steps = 0;
  FineTuneOutcome fine_tune;
  double mse = std::numeric_limits<double>::quiet_NaN();  // vs gt when given
  double pwan_seconds = 0.0;       // wall clock per phase
  double fine_tune_seconds = 0.0;
};

struct RegistrationResult {
  std::unique_ptr<TransformModel> transform;
  std::unique_ptr<PotentialNet> potential;  // trained potential (both phases)
  Eigen::MatrixXd moved;       // transform applied to every source point
  RegistrationReport report;
};

// Full pipeline: adversarial alignment (full batch, masses = point counts via
// unit weights) followed by the fine-tune phase. The divergence kind, target
// mass/threshold, and budgets come from cfg.pwan. When `gt_moved` is given
// (one ground-truth row per source point) the report carries the MSE of the
// final moved set against it.
RegistrationResult register_point_sets(const DiscreteMeasure& source,
                                       const DiscreteMeasure& reference,
                                       const RegistrationConfig& cfg,
                                       const Eigen::MatrixXd* gt_moved = nullptr);

// Mean squared Euclidean error. The correspondence overload maps aligned row
// i to target row correspondence[i]; entries of -1 are excluded, any other
// out-of-range entry throws.
double mse(const Eigen::MatrixXd& aligned, const Eigen::MatrixXd& target);
double mse(const Eigen::MatrixXd& aligned, const Eigen::MatrixXd& target,
           const std::vector<int>& correspondence);

// (180/pi) * arccos((Tr(A B^T) - 1) / 2), the geodesic angle between two
// rotation matrices, in degrees.
double rotation_error_deg(const Eigen::Matrix3d& A, const Eigen::Matrix3d& B);

// Index of the nearest row of `targets` for every row of `queries` (exact;
// kd-tree above 2000 targets, brute force below). Ties break to the lowest
// index.
std::vector<int> nearest_neighbors(const Eigen::MatrixXd& queries,
                                   const Eigen::MatrixXd& targets);

// Occupancy-grid thinning: cells of side `cell` anchored at the origin, one
// point per occupied cell (the centroid of its members), unit weight each,
// emitted in first-occurrence order.
DiscreteMeasure voxel_downsample(const DiscreteMeasure& m, double cell);

}  // namespace pwan
