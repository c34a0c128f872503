#include "pwan/pwan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "pwan/optimizers.hpp"
#include "pwan/rng.hpp"
#include "pwan/transport.hpp"

namespace pwan {
namespace {

struct Batch {
  Eigen::MatrixXd points;   // q x d
  Eigen::VectorXd coeffs;   // per-atom mass represented by each sample
  std::vector<int> rows;    // original indices; empty for full batch
};

Batch full_batch(const DiscreteMeasure& mu) {
  return {mu.points(), mu.weights(), {}};
}

// Inverse-CDF draws with replacement; each sample stands for total/count mass.
Batch sampled_batch(const DiscreteMeasure& mu, int count, Rng& rng) {
  Eigen::VectorXd cum(mu.size());
  double acc = 0.0;
  for (int i = 0; i < mu.size(); ++i) {
    acc += mu.weights()(i);
    cum(i) = acc;
  }
  Batch b;
  b.points.resize(count, mu.dim());
  b.coeffs = Eigen::VectorXd::Constant(count, mu.total_mass() / count);
  b.rows.resize(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) {
    const double u = rng.uniform() * acc;
    const double* it = std::upper_bound(cum.data(), cum.data() + cum.size(), u);
    int idx = static_cast<int>(it - cum.data());
    if (idx >= mu.size()) idx = mu.size() - 1;
    b.points.row(s) = mu.points().row(idx);
    b.rows[static_cast<std::size_t>(s)] = idx;
  }
  return b;
}

// Penalty-free objective value: the data terms plus the bound correction of
// the chosen divergence kind.
double divergence_value(const PotentialNet& net, const TransformModel& transform,
                        const Batch& bx, const Batch& by, const PwanConfig& cfg,
                        double mass_beta) {
  const Eigen::VectorXd fx = net.forward(bx.points);
  const Eigen::VectorXd fy = net.forward(transform.apply(by.points, by.rows));
  const double base = bx.coeffs.dot(fx) - by.coeffs.dot(fy);
  if (cfg.kind == DivergenceKind::kMass) {
    return base + net.bound() * (cfg.mass - mass_beta);
  }
  return base - net.bound() * mass_beta;
}

void check_finite(double value, const char* what, int step) {
  if (!std::isfinite(value)) {
    throw std::runtime_error("pwan: non-finite " + std::string(what) +
                             " at outer step " + std::to_string(step));
  }
}

struct OptState {
  AdamState adam;
  RmspropState rms;
};

void optimizer_step(OptimizerKind kind, Eigen::VectorXd& params,
                    const Eigen::VectorXd& grad, OptState& state, double lr) {
  if (kind == OptimizerKind::kAdam) {
    adam_step(params, grad, state.adam, lr);
  } else {
    rmsprop_step(params, grad, state.rms, lr);
  }
}

}  // namespace

LossBreakdown potential_loss(const PotentialNet& net, const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& a, const Eigen::MatrixXd& TY,
                             const Eigen::VectorXd& b, const PwanConfig& cfg,
                             double mass_beta) {
  if (X.rows() == 0 || TY.rows() == 0) {
    throw std::invalid_argument("pwan: empty batch");
  }
  LossBreakdown out;
  out.data = a.dot(net.forward(X)) - b.dot(net.forward(TY));
  if (cfg.kind == DivergenceKind::kMass) {
    out.bound_term = net.bound() * (cfg.mass - mass_beta);
  }
  Eigen::MatrixXd eval(X.rows() + TY.rows(), X.cols());
  eval.topRows(X.rows()) = X;
  eval.bottomRows(TY.rows()) = TY;
  out.penalty = cfg.gp_coefficient *
                net.gradient_penalty(eval, cfg.gp_aggregation, nullptr);
  return out;
}

Eigen::VectorXd theta_gradient(const PotentialNet& net, const Eigen::MatrixXd& Y,
                               const Eigen::VectorXd& coeffs,
                               const TransformModel& transform,
                               const std::vector<int>& rows) {
  const Eigen::MatrixXd ty = transform.apply(Y, rows);
  Eigen::MatrixXd U = net.input_gradient(ty);
  U.array().colwise() *= -coeffs.array();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(transform.param_count());
  transform.accumulate_param_gradient(Y, U, rows, grad);
  return grad;
}

double mass_annealing(double m_tilde, double s, int v) {
  if (!(m_tilde > 0.0) || !std::isfinite(m_tilde)) {
    throw std::invalid_argument("pwan: annealing base mass must be positive");
  }
  if (!(s >= 1.0) || !std::isfinite(s)) {
    throw std::invalid_argument("pwan: annealing factor must be >= 1");
  }
  if (v < 0) {
    throw std::invalid_argument("pwan: annealing step must be >= 0");
  }
  return m_tilde * std::pow(s, v);
}

PotentialNet make_potential(const PwanConfig& cfg, const DiscreteMeasure& alpha,
                            const DiscreteMeasure& beta) {
  NetConfig net = cfg.net;
  net.input_dim = alpha.dim();
  if (cfg.kind == DivergenceKind::kDistance) {
    if (!(cfg.threshold >= 0.0) || !std::isfinite(cfg.threshold)) {
      throw std::invalid_argument("pwan: distance kind needs threshold >= 0");
    }
    return PotentialNet(net, BoundKind::kFixed, cfg.threshold, cfg.seed);
  }
  double h0 = cfg.initial_bound;
  if (!(h0 > 0.0)) {
    h0 = 0.25 * joint_diameter(alpha, beta);
    if (!(h0 > 0.0)) h0 = 1.0;  // coincident supports; any positive init
  }
  return PotentialNet(net, BoundKind::kLearnable, h0, cfg.seed);
}

PwanResult pwan_fit(const DiscreteMeasure& alpha, const DiscreteMeasure& beta,
                    PotentialNet& net, TransformModel& transform,
                    const PwanConfig& cfg, const ThetaRegularizer& regularizer) {
  if (alpha.dim() != beta.dim()) {
    throw std::invalid_argument("pwan: dimension mismatch between measures");
  }
  if (transform.param_count() > 0 && alpha.dim() != 3) {
    throw std::invalid_argument("pwan: transform models expect 3-d points");
  }
  if (cfg.outer_steps < 0 || cfg.potential_updates < 1 || cfg.batch_size < 0) {
    throw std::invalid_argument("pwan: bad step/batch configuration");
  }
  const double mass_beta = beta.total_mass();
  double mass_target = cfg.mass;
  if (cfg.kind == DivergenceKind::kMass) {
    mass_target = clamp_mass_target(alpha, beta, cfg.mass);
    if (!(mass_target > 0.0)) {
      throw std::invalid_argument("pwan: mass target must be positive");
    }
  }
  PwanConfig run = cfg;
  run.mass = mass_target;

  Rng master(cfg.seed);
  Rng batch_rng = master.fork();
  Rng gp_rng = master.fork();

  OptState potential_state, theta_state;
  Eigen::VectorXd theta_grad(transform.param_count());

  PwanResult result;
  double lr_theta = cfg.theta_lr;
  std::vector<double> loss_history;
  loss_history.reserve(static_cast<std::size_t>(cfg.outer_steps));

  const Batch fx = full_batch(alpha);
  const Batch fy = full_batch(beta);

  for (int t = 0; t < cfg.outer_steps; ++t) {
    Batch sx, sy;
    const Batch* px = &fx;
    const Batch* py = &fy;
    if (cfg.batch_size > 0) {
      sx = sampled_batch(alpha, cfg.batch_size, batch_rng);
      sy = sampled_batch(beta, cfg.batch_size, batch_rng);
      px = &sx;
      py = &sy;
    }

    const int q = static_cast<int>(px->points.rows());
    const int r = static_cast<int>(py->points.rows());
    Eigen::VectorXd signed_coeffs(q + r);
    signed_coeffs.head(q) = px->coeffs;
    signed_coeffs.tail(r) = -py->coeffs;

    double last_loss = 0.0, last_gp = 0.0;
    for (int inner = 0; inner < cfg.potential_updates; ++inner) {
      Eigen::MatrixXd eval(q + r, alpha.dim());
      eval.topRows(q) = px->points;
      eval.bottomRows(r) = transform.apply(py->points, py->rows);

      const Eigen::VectorXd f = net.forward(eval);
      double loss = signed_coeffs.dot(f);
      Eigen::VectorXd grad = net.value_param_gradient(eval, signed_coeffs);
      if (cfg.kind == DivergenceKind::kMass) {
        loss += net.bound() * (run.mass - mass_beta);
        grad(net.eta_index()) +=
            net.bound_derivative() * (run.mass - mass_beta);
      }
      // Penalty points: the batches themselves, optionally extended with
      // uniform interpolates between random cross pairs so the Lipschitz
      // constraint is also policed between the two supports.
      Eigen::MatrixXd gp_eval;
      if (cfg.gp_interpolates) {
        gp_eval.resize(2 * (q + r), alpha.dim());
        gp_eval.topRows(q + r) = eval;
        for (int k = 0; k < q + r; ++k) {
          const int i = gp_rng.uniform_int(q);
          const int j = gp_rng.uniform_int(r);
          const double u = gp_rng.uniform();
          gp_eval.row(q + r + k) = u * eval.row(i) + (1.0 - u) * eval.row(q + j);
        }
      }
      Eigen::VectorXd gp_grad = Eigen::VectorXd::Zero(net.param_count());
      const double gp = net.gradient_penalty(
          cfg.gp_interpolates ? gp_eval : eval, cfg.gp_aggregation, &gp_grad);
      loss -= cfg.gp_coefficient * gp;
      grad -= cfg.gp_coefficient * gp_grad;

      // Ascent: the update rules descend, so feed the negated gradient.
      grad = -grad;
      optimizer_step(cfg.potential_optimizer, net.params(), grad,
                     potential_state, cfg.potential_lr);
      last_loss = loss;
      last_gp = gp;
    }
    check_finite(last_loss, "potential objective", t);

    if (transform.param_count() > 0) {
      theta_grad = theta_gradient(net, py->points, py->coeffs, transform,
                                  py->rows);
      if (regularizer) {
        const double energy = regularizer(transform, theta_grad);
        check_finite(energy, "transform regularizer", t);
      }
      optimizer_step(cfg.theta_optimizer, transform.params(), theta_grad,
                     theta_state, lr_theta);
    }
    lr_theta *= cfg.theta_lr_decay;

    loss_history.push_back(last_loss);
    const bool record = (cfg.trace_every <= 1) || (t % cfg.trace_every == 0) ||
                        (t + 1 == cfg.outer_steps);
    if (record) {
      TraceEntry e;
      e.step = t;
      e.loss = last_loss;
      e.gp = last_gp;
      e.bound = net.bound();
      e.divergence = divergence_value(net, transform, *px, *py, run, mass_beta);
      if (cfg.snapshot_transforms) e.transform_snapshot = transform.params();
      check_finite(e.divergence, "divergence estimate", t);
      result.trace.push_back(e);
    }
    result.steps_run = t + 1;

    if (cfg.plateau_window > 0) {
      const int w = cfg.plateau_window;
      const int n = static_cast<int>(loss_history.size());
      if (n >= 2 * w) {
        double recent = 0.0, previous = 0.0;
        for (int i = n - w; i < n; ++i) recent += loss_history[static_cast<std::size_t>(i)];
        for (int i = n - 2 * w; i < n - w; ++i) previous += loss_history[static_cast<std::size_t>(i)];
        recent /= w;
        previous /= w;
        if (std::abs(recent - previous) <
            cfg.plateau_tol * std::max(1.0, std::abs(recent))) {
          break;
        }
      }
    }
  }

  result.divergence = divergence_value(net, transform, fx, fy, run, mass_beta);
  result.bound = net.bound();
  check_finite(result.divergence, "final divergence", result.steps_run);
  return result;
}

DivergenceEstimate estimate_divergence(const DiscreteMeasure& alpha,
                                       const DiscreteMeasure& beta,
                                       const PwanConfig& cfg) {
  PotentialNet net = make_potential(cfg, alpha, beta);
  IdentityTransform identity;
  PwanResult fit = pwan_fit(alpha, beta, net, identity, cfg);
  DivergenceEstimate out;
  out.value = fit.divergence;
  out.bound = fit.bound;
  out.trace = std::move(fit.trace);
  return out;
}

}  // namespace pwan
