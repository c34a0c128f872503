#pragma once

#include <Eigen/Dense>
#include <string>

#include "pwan/rng.hpp"

namespace pwan {

// A weighted point set: n points in R^d with nonnegative weights. Weights are
// general nonnegative masses, not probabilities; nothing is normalized.
// Instances are immutable after construction.
class DiscreteMeasure {
 public:
  // Throws std::invalid_argument unless every coordinate is finite, every
  // weight is finite and >= 0, sizes agree, and the total mass is positive.
  DiscreteMeasure(Eigen::MatrixXd points, Eigen::VectorXd weights);

  // Unit weight per point.
  static DiscreteMeasure uniform(Eigen::MatrixXd points);

  // Same validation except the total mass may be zero (used for residual /
  // omitted-mass results, which legitimately vanish for full-mass plans).
  static DiscreteMeasure residual(Eigen::MatrixXd points,
                                  Eigen::VectorXd weights);

  const Eigen::MatrixXd& points() const { return points_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  int size() const { return static_cast<int>(points_.rows()); }
  int dim() const { return static_cast<int>(points_.cols()); }
  double total_mass() const { return total_mass_; }

  // n i.i.d. draws proportional to the weights; each drawn point gets weight
  // total_mass()/n so the batch preserves the total mass exactly.
  DiscreteMeasure empirical_batch(int n, Rng& rng) const;

 private:
  DiscreteMeasure() = default;
  Eigen::MatrixXd points_;
  Eigen::VectorXd weights_;
  double total_mass_ = 0.0;
};

// Pairwise Euclidean distances, d(a_i, b_j); dimensions must agree.
Eigen::MatrixXd cost_matrix(const DiscreteMeasure& a, const DiscreteMeasure& b);

// Largest pairwise distance within one point set / across the union of two.
double diameter(const Eigen::MatrixXd& points);
double joint_diameter(const DiscreteMeasure& a, const DiscreteMeasure& b);

// Text format: whitespace-separated, one point per line, D coordinate columns
// plus an optional final weight column (default weight 1); '#' starts a
// comment. A "# dim: D" comment pins D; otherwise dim_hint (if positive)
// decides, and failing both, every column is read as a coordinate.
DiscreteMeasure load_points(const std::string& path, int dim_hint = -1);
void save_points(const std::string& path, const DiscreteMeasure& m,
                 bool write_weights = false);

}  // namespace pwan
