#pragma once

#include <Eigen/Dense>

namespace pwan {

// First-order update rules used by the alternating training loop. Both
// perform one descent step in place; callers negate the gradient for ascent.

struct AdamState {
  Eigen::VectorXd m;  // first-moment accumulator
  Eigen::VectorXd v;  // second-moment accumulator
  long t = 0;
};

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
               AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct RmspropState {
  Eigen::VectorXd acc;  // running mean of squared gradients
};

void rmsprop_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                  RmspropState& state, double lr, double decay = 0.99,
                  double eps = 1e-8);

}  // namespace pwan
