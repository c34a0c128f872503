#pragma once

#include <utility>
#include <vector>

#include "pwan/measure.hpp"

namespace pwan {

struct TransportEntry {
  int i = 0;  // index into the first (alpha) measure
  int j = 0;  // index into the second (beta) measure
  double mass = 0.0;
};

// A feasible (near-optimal-certified) partial transport plan. `objective` is
// the value of the solved problem: the transport cost for the mass-constrained
// kind, or transport cost minus h * transported mass for the threshold kind.
struct TransportPlan {
  std::vector<TransportEntry> entries;
  double objective = 0.0;
  double transported = 0.0;   // total mass on real (non-dummy) pairs
  double duality_gap = 0.0;   // |primal - dual| certificate from the solver

  Eigen::VectorXd row_mass(int rows) const;
  Eigen::VectorXd col_mass(int cols) const;
};

// Validates a requested mass target against the two totals: throws
// std::invalid_argument outside [0, min(total masses)] (with a 1e-9 relative
// slack), otherwise returns the value clamped into that interval.
double clamp_mass_target(const DiscreteMeasure& alpha,
                         const DiscreteMeasure& beta, double m);

// Least transport cost over plans whose marginals are dominated by alpha and
// beta and whose total transported mass is at least m. Requires
// 0 <= m <= min(total masses) (up to a 1e-9 relative slack, then clamped).
TransportPlan solve_partial_mass(const DiscreteMeasure& alpha,
                                 const DiscreteMeasure& beta, double m);

// Least value of (transport cost - h * transported mass) over plans whose
// marginals are dominated by alpha and beta; h >= 0. The optimum never moves
// mass across pairs farther apart than h.
TransportPlan solve_distance_threshold(const DiscreteMeasure& alpha,
                                       const DiscreteMeasure& beta, double h);

// Full-mass special case; requires equal totals (1e-9 relative).
double wasserstein1(const DiscreteMeasure& alpha, const DiscreteMeasure& beta);

struct DualityCertificate {
  double best_value = 0.0;  // max over the grid of threshold value + m*h
  double best_h = 0.0;
  std::vector<std::pair<double, double>> curve;  // (h, value + m*h)
};

// Evaluates the threshold problem on the given h grid and returns the largest
// value of (objective + m*h). This never exceeds the mass-constrained optimum
// and approaches it when the grid contains the optimal h.
DualityCertificate duality_certificate(const DiscreteMeasure& alpha,
                                       const DiscreteMeasure& beta, double m,
                                       const std::vector<double>& h_grid);

// Builds a grid of `total_points` thresholds covering [0, joint diameter],
// concentrated around the maximizer of (threshold value + m*h) by staged
// refinement (the objective is concave in h, so the coarse argmax brackets
// the true maximizer).
std::vector<double> duality_h_grid(const DiscreteMeasure& alpha,
                                   const DiscreteMeasure& beta, double m,
                                   int total_points);

// Residual (untransported) mass of each marginal under the plan. Either
// residual may be identically zero (full-mass plans).
std::pair<DiscreteMeasure, DiscreteMeasure> omitted_mass(
    const TransportPlan& plan, const DiscreteMeasure& alpha,
    const DiscreteMeasure& beta);

}  // namespace pwan
