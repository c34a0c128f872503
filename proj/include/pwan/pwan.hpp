#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "pwan/measure.hpp"
#include "pwan/potential.hpp"
#include "pwan/transforms.hpp"

namespace pwan {

// Which partial divergence the adversarial objective targets:
//   kMass      L_{M,m}: cheapest way to move at least mass m, marginals
//              dominated by the two measures; the bound h is learned.
//   kDistance  L_{D,h}: transport is only worthwhile below distance h; the
//              bound is that fixed threshold.
enum class DivergenceKind { kMass, kDistance };

struct TraceEntry {
  int step = 0;            // outer step index
  double loss = 0.0;       // potential objective after the last inner ascent
                           // (includes the gradient penalty term)
  double gp = 0.0;         // penalty aggregate at that update
  double bound = 0.0;      // h after the step
  double divergence = 0.0; // penalty-free estimate on the step's batch,
                           // evaluated after the transform update
  Eigen::VectorXd transform_snapshot;  // filled when snapshots are enabled
};

enum class OptimizerKind { kAdam, kRmsprop };

struct PwanConfig {
  DivergenceKind kind = DivergenceKind::kMass;
  double mass = 0.0;        // m (mass kind); must lie in (0, min masses]
  double threshold = 0.0;   // fixed h >= 0 (distance kind)
  double initial_bound = 0.0;  // learnable-bound init; <= 0 derives a quarter
                               // of the joint support diameter
  NetConfig net;

  int outer_steps = 2000;
  int potential_updates = 10;  // inner ascent steps per outer step
  int batch_size = 0;          // 0 = full batch (no sampling draws at all)

  // Optimizer assignment is configurable; the registration default pairs
  // Adam on the potential with RMSprop on the transform, both at 1e-4.
  OptimizerKind potential_optimizer = OptimizerKind::kAdam;
  OptimizerKind theta_optimizer = OptimizerKind::kRmsprop;
  double potential_lr = 1e-4;
  double theta_lr = 1e-4;
  double theta_lr_decay = 1.0;    // multiplicative per outer step
  double gp_coefficient = 1.0;
  GpAggregation gp_aggregation = GpAggregation::kMax;
  // Penalty evaluation points: the two batches plus (by default) an equal
  // number of uniform random interpolates between random cross pairs, which
  // polices the Lipschitz constraint between the supports where the bound
  // estimate would otherwise overshoot. false = data points only (cheaper;
  // the registration defaults use it since transform gradients only read
  // the potential at data points).
  bool gp_interpolates = true;

  int trace_every = 1;      // record every k-th outer step (first and last
                            // are always recorded); 1 keeps the one-record-
                            // per-step contract
  bool snapshot_transforms = false;  // store transform params in the trace
  int plateau_window = 0;   // > 0 stops early once the trailing-window mean
                            // loss stops moving by plateau_tol (relative)
  double plateau_tol = 1e-4;

  std::uint64_t seed = 0;   // net init (make_potential) and batch sampling
};

// Optional penalty on the transform parameters: returns its energy and adds
// its gradient into the presized accumulator.
using ThetaRegularizer =
    std::function<double(const TransformModel&, Eigen::VectorXd&)>;

struct PwanResult {
  std::vector<TraceEntry> trace;
  double divergence = 0.0;  // final full-batch penalty-free estimate
  double bound = 0.0;       // final h
  int steps_run = 0;
};

// Builds the potential dictated by the config: learnable bound for the mass
// kind (initialized at initial_bound or a quarter of the joint diameter),
// fixed bound = threshold for the distance kind. input_dim follows the data.
PotentialNet make_potential(const PwanConfig& cfg, const DiscreteMeasure& alpha,
                            const DiscreteMeasure& beta);

// Value of the potential objective, split into its pieces:
//   data       sum_i a_i f(x_i) - sum_j b_j f(ty_j)
//   bound_term h (m - mass_beta) for the mass kind, 0 for the distance kind
//              (the distance kind's -h*mass_beta is a reporting constant that
//              never enters the maximized objective)
//   penalty    gp_coefficient * aggregate of max(|grad f|^2, 1) over all the
//              x_i and ty_j
// The maximized surrogate is data + bound_term - penalty; the reported
// divergence is data + bound_term (mass) or data - h*mass_beta (distance).
struct LossBreakdown {
  double data = 0.0;
  double bound_term = 0.0;
  double penalty = 0.0;
  double total() const { return data + bound_term - penalty; }
};

LossBreakdown potential_loss(const PotentialNet& net, const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& a, const Eigen::MatrixXd& TY,
                             const Eigen::VectorXd& b, const PwanConfig& cfg,
                             double mass_beta);

// Transform-parameter gradient of the objective's data term:
//   -sum_j coeffs_j J_theta(y_j)^T grad_x f(T(y_j)).
// Points omitted by the potential (flat region) contribute nothing.
Eigen::VectorXd theta_gradient(const PotentialNet& net, const Eigen::MatrixXd& Y,
                               const Eigen::VectorXd& coeffs,
                               const TransformModel& transform,
                               const std::vector<int>& rows = {});

// Geometric mass-growth schedule m = m_tilde * s^v (s >= 1).
double mass_annealing(double m_tilde, double s, int v);

// Alternating adversarial fit. Each outer step draws one mini-batch from
// each measure (X first, then Y; full batch draws nothing), runs
// `potential_updates` Adam ascent steps on the potential objective
//
//   L = sum_i a_i f(x_i) - sum_j b_j f(T(y_j)) [+ h (m - m_beta), mass kind]
//       - gp_coefficient * penalty,
//
// with a_i, b_j the per-atom masses (total/batch for sampled batches, exact
// weights for full batch) and the penalty evaluated at the x_i and T(y_j)
// (plus random cross-pair interpolates when gp_interpolates is set),
// then takes one RMSprop descent step on the transform parameters using
// grad_theta = -sum_j b_j J_j^T grad f(T(y_j)) plus the regularizer's
// gradient. Batch sampling uses an Rng forked from cfg.seed. Throws
// std::runtime_error if the objective turns non-finite, naming the step.
PwanResult pwan_fit(const DiscreteMeasure& alpha, const DiscreteMeasure& beta,
                    PotentialNet& net, TransformModel& transform,
                    const PwanConfig& cfg,
                    const ThetaRegularizer& regularizer = {});

struct DivergenceEstimate {
  double value = 0.0;
  double bound = 0.0;
  std::vector<TraceEntry> trace;
};

// Trains a fresh potential against the fixed pair (no transform) and reports
// the final full-batch estimate of the divergence picked by cfg.kind.
DivergenceEstimate estimate_divergence(const DiscreteMeasure& alpha,
                                       const DiscreteMeasure& beta,
                                       const PwanConfig& cfg);

}  // namespace pwan
