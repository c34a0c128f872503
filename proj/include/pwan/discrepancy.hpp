#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace pwan {

// Kernel-based comparison discrepancies used alongside the transport ones in
// the toy sweeps. Throughout, phi(.|u, sigma) is the isotropic normal DENSITY
// with mean u and VARIANCE sigma — not standard deviation; a std-dev reading
// would change every value below.
struct ToyConfig {
  double sigma = 1.0;  // Gaussian variance
  double omega = 0.2;  // uniform-mixture weight inside the KL mixture
};

// Isotropic normal density at `point` with the given mean and variance,
// in the dimension of the inputs. Throws when variance <= 0 or dims differ.
double gaussian_density(const Eigen::RowVectorXd& point,
                        const Eigen::RowVectorXd& mean, double variance);

// Squared L2 distance between the Gaussian kernel-density estimates of the
// two sets (rows are points):
//   (1/|X|^2) sum_{x,x'} phi(0|x-x', 2s) + (1/|Y|^2) sum_{y,y'} phi(0|y-y', 2s)
//   - (2/(|X||Y|)) sum_{x,y} phi(0|x-y, 2s)
// Symmetric, zero when X = Y. Throws on empty sets or mismatched dimensions.
double l2_distance(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                   double sigma);

// Negative average log-likelihood of Y under a uniform/KDE mixture on X:
//   -(1/q) sum_{y in Y} log( omega/q + (1-omega) (1/r) sum_{x in X} phi(y|x, s) )
// with q = |Y|, r = |X|. Not symmetric. Throws on empty sets, mismatched
// dimensions, or omega outside [0, 1) (omega = 0 is allowed; the mixture then
// has no uniform floor and a fully separated pair may overflow to +inf).
double kl_divergence(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                     double sigma, double omega);

// A deterministic sweep result: one named column per discrepancy, one row per
// grid point. values(i, j) belongs to columns[j].
struct SweepTable {
  std::vector<std::string> columns;
  Eigen::MatrixXd values;
};

// Robustness sweep: 10 equi-spaced data points in [0, 3]; the reference set X
// is the data plus `outliers` seeded-uniform points in [7.8, 8.2]; the source
// set Y is the data translated by t over the grid. Columns:
//   t, kl, l2, lm (mass-constrained oracle at `mass`),
//   ld (distance-threshold oracle at `threshold`).
// All points carry unit weight.
struct Fig5Config {
  int outliers = 1000;  // N
  double t_min = -1.0;
  double t_max = 8.0;
  double t_step = 0.05;
  double mass = 10.0;      // m for the lm column
  double threshold = 2.0;  // h for the ld column
  ToyConfig toy;
  std::uint64_t seed = 0;
};
SweepTable fig5_sweep(const Fig5Config& cfg);

// Smoothness sweep: the reference set X = {-2, 2} is fixed and the source set
// Y = {x, y} (two scalar points) moves over the (x, y) grid. Columns:
//   x, y, kl, l2, w1 (full-mass transport oracle).
// omega defaults to 0 here (clean data), and both sets carry unit weight, so
// the w1 surface is piecewise linear with slope magnitude 1 in each
// coordinate away from its kinks.
struct Fig12Config {
  double lo = -4.0;
  double hi = 4.0;
  double step = 0.1;
  ToyConfig toy{1.0, 0.0};
};
SweepTable fig12_sweep(const Fig12Config& cfg);

}  // namespace pwan
