#include "pwan/optimizers.hpp"

#include <cmath>
#include <stdexcept>

namespace pwan {

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
               AdamState& state, double lr, double beta1, double beta2,
               double eps) {
  if (grad.size() != params.size()) {
    throw std::invalid_argument("adam_step: gradient size mismatch");
  }
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
    state.t = 0;
  }
  ++state.t;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  params.array() -= lr * (state.m.array() / bc1) /
                    ((state.v.array() / bc2).sqrt() + eps);
}

void rmsprop_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                  RmspropState& state, double lr, double decay, double eps) {
  if (grad.size() != params.size()) {
    throw std::invalid_argument("rmsprop_step: gradient size mismatch");
  }
  if (state.acc.size() != params.size()) {
    state.acc = Eigen::VectorXd::Zero(params.size());
  }
  state.acc = decay * state.acc + (1.0 - decay) * grad.cwiseProduct(grad);
  params.array() -= lr * grad.array() / (state.acc.array().sqrt() + eps);
}

}  // namespace pwan
