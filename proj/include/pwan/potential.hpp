#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace pwan {

// Point-wise MLP architecture: hidden ReLU layers of the given widths, a
// scalar linear output, and optional skip connections between hidden layers.
// A skip (from, to) adds a width-matching linear map of hidden layer `from`'s
// activation into hidden layer `to`'s pre-activation (1-based, from < to).
struct NetConfig {
  int input_dim = 3;
  std::vector<int> hidden = {128, 256, 512, 256, 128};
  std::vector<std::pair<int, int>> skips = {{1, 4}};
};

enum class BoundKind { kFixed, kLearnable };

enum class GpAggregation { kMax, kMean };

// Bounded Lipschitz-target potential f(x) = clip(-|g(x)|, -h, 0) where g is
// the MLP above and h >= 0 is the bound: a fixed constant, or softplus(eta)
// with eta a trainable parameter. Outputs lie in [-h, 0] exactly.
//
// Gradient conventions (all subgradient choices are pinned so finite
// differences at activation-stable probes match analytically):
//   ReLU'(0) = 0, d|.|/dt at 0 = 0, and at |g(x)| == h the interior
//   (unclipped) one-sided derivative is used.
class PotentialNet {
 public:
  PotentialNet(NetConfig cfg, BoundKind kind, double initial_h,
               std::uint64_t seed);

  const NetConfig& config() const { return cfg_; }
  BoundKind bound_kind() const { return kind_; }
  int param_count() const { return static_cast<int>(theta_.size()); }
  Eigen::VectorXd& params() { return theta_; }
  const Eigen::VectorXd& params() const { return theta_; }

  // Current bound h (softplus(eta) when learnable).
  double bound() const;
  // Param index of eta (-1 when fixed) and dh/deta (0 when fixed).
  int eta_index() const { return eta_; }
  double bound_derivative() const;

  // X has one point per row (n x input_dim).
  Eigen::VectorXd forward(const Eigen::MatrixXd& X) const;
  Eigen::MatrixXd input_gradient(const Eigen::MatrixXd& X) const;  // n x d

  // Gradient of sum_i coeffs[i] * f(x_i) with respect to every parameter
  // (including eta when learnable).
  Eigen::VectorXd value_param_gradient(const Eigen::MatrixXd& X,
                                       const Eigen::VectorXd& coeffs) const;

  // Penalty value: aggregate over eval points of max(|grad_x f|^2, 1), with
  // `agg` choosing max (default training setting) or mean. When `param_grad`
  // is non-null it receives d(penalty)/d(params) computed by differentiating
  // through the input-gradient (double backprop); the gradient is identically
  // zero whenever the constant-1 branch attains the aggregate.
  double gradient_penalty(const Eigen::MatrixXd& X, GpAggregation agg,
                          Eigen::VectorXd* param_grad) const;

  // Hash of the discrete activation pattern (ReLU signs, output sign, clip
  // state) at the given points; used to detect kink-free probe neighborhoods.
  std::uint64_t activation_signature(const Eigen::MatrixXd& X) const;

  // Versioned checkpoint; from_json validates and round-trips exactly.
  nlohmann::json to_json() const;
  static PotentialNet from_json(const nlohmann::json& j);
  void save_checkpoint(const std::string& path) const;
  static PotentialNet load_checkpoint(const std::string& path);

 private:
  struct Slice {
    int offset = 0;
    int rows = 0;
    int cols = 0;
  };

  struct Workspace {
    std::vector<Eigen::MatrixXd> pre;   // per hidden layer, w_l x n
    std::vector<Eigen::MatrixXd> act;   // post-ReLU, w_l x n
    Eigen::RowVectorXd raw;             // 1 x n
  };

  PotentialNet() = default;
  void build_layout();
  void run_forward(const Eigen::MatrixXd& Xt, Workspace& ws) const;
  // Per-point d f / d raw given raw values and the current bound.
  Eigen::RowVectorXd clip_seeds(const Eigen::RowVectorXd& raw) const;
  // Backward pass to the input; optionally accumulates parameter gradients.
  Eigen::MatrixXd backward(const Eigen::MatrixXd& Xt, const Workspace& ws,
                           const Eigen::RowVectorXd& seeds,
                           Eigen::VectorXd* param_grad) const;

  Eigen::Map<const Eigen::MatrixXd> mat(const Slice& s) const {
    return {theta_.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<Eigen::MatrixXd> mat(const Slice& s) {
    return {theta_.data() + s.offset, s.rows, s.cols};
  }

  NetConfig cfg_;
  BoundKind kind_ = BoundKind::kFixed;
  double fixed_h_ = 0.0;
  Eigen::VectorXd theta_;
  std::vector<Slice> w_, b_;      // hidden layers
  Slice w_out_, b_out_;
  std::vector<Slice> skip_;       // parallel to cfg_.skips
  std::vector<std::vector<int>> skips_into_;  // per hidden layer: skip ids
  int eta_ = -1;
};

double softplus(double x);
double softplus_inverse(double y);
double sigmoid(double x);

}  // namespace pwan
