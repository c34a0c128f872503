#include "pwan/potential.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "pwan/rng.hpp"

namespace pwan {

double softplus(double x) {
  return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) {
    throw std::invalid_argument("softplus_inverse: argument must be positive");
  }
  // log(e^y - 1), stable for large y.
  return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

void validate_config(const NetConfig& cfg) {
  if (cfg.input_dim < 1) {
    throw std::invalid_argument("potential: input_dim must be >= 1");
  }
  if (cfg.hidden.empty()) {
    throw std::invalid_argument("potential: need at least one hidden layer");
  }
  for (int w : cfg.hidden) {
    if (w < 1) throw std::invalid_argument("potential: hidden width must be >= 1");
  }
  const int K = static_cast<int>(cfg.hidden.size());
  for (const auto& [from, to] : cfg.skips) {
    if (from < 1 || to <= from || to > K) {
      throw std::invalid_argument(
          "potential: skip must satisfy 1 <= from < to <= #hidden");
    }
  }
}

}  // namespace

PotentialNet::PotentialNet(NetConfig cfg, BoundKind kind, double initial_h,
                           std::uint64_t seed)
    : cfg_(std::move(cfg)), kind_(kind) {
  validate_config(cfg_);
  build_layout();
  if (kind_ == BoundKind::kLearnable) {
    if (!(initial_h > 0.0)) {
      throw std::invalid_argument(
          "potential: learnable bound needs a positive initial value");
    }
  } else {
    if (!(initial_h >= 0.0)) {
      throw std::invalid_argument("potential: fixed bound must be >= 0");
    }
    fixed_h_ = initial_h;
  }

  // Uniform[-s, s] with s = 1/sqrt(fan_in), drawn in parameter-vector order.
  Rng rng(seed);
  auto fill = [&](const Slice& s, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int k = 0; k < s.rows * s.cols; ++k) {
      theta_[s.offset + k] = rng.uniform(-bound, bound);
    }
  };
  const int K = static_cast<int>(cfg_.hidden.size());
  for (int l = 0; l < K; ++l) {
    const int fan_in = l == 0 ? cfg_.input_dim : cfg_.hidden[l - 1];
    fill(w_[l], fan_in);
    fill(b_[l], fan_in);
  }
  fill(w_out_, cfg_.hidden[K - 1]);
  fill(b_out_, cfg_.hidden[K - 1]);
  for (size_t si = 0; si < skip_.size(); ++si) {
    fill(skip_[si], cfg_.hidden[cfg_.skips[si].first - 1]);
  }
  if (eta_ >= 0) theta_[eta_] = softplus_inverse(initial_h);
}

void PotentialNet::build_layout() {
  const int K = static_cast<int>(cfg_.hidden.size());
  int off = 0;
  auto add = [&](int rows, int cols) {
    Slice s{off, rows, cols};
    off += rows * cols;
    return s;
  };
  w_.clear();
  b_.clear();
  for (int l = 0; l < K; ++l) {
    const int fan_in = l == 0 ? cfg_.input_dim : cfg_.hidden[l - 1];
    w_.push_back(add(cfg_.hidden[l], fan_in));
    b_.push_back(add(cfg_.hidden[l], 1));
  }
  w_out_ = add(1, cfg_.hidden[K - 1]);
  b_out_ = add(1, 1);
  skip_.clear();
  skips_into_.assign(static_cast<size_t>(K), {});
  for (size_t si = 0; si < cfg_.skips.size(); ++si) {
    const auto [from, to] = cfg_.skips[si];
    skip_.push_back(add(cfg_.hidden[to - 1], cfg_.hidden[from - 1]));
    skips_into_[static_cast<size_t>(to - 1)].push_back(static_cast<int>(si));
  }
  eta_ = -1;
  if (kind_ == BoundKind::kLearnable) {
    eta_ = off;
    off += 1;
  }
  theta_ = Eigen::VectorXd::Zero(off);
}

double PotentialNet::bound() const {
  return kind_ == BoundKind::kLearnable ? softplus(theta_[eta_]) : fixed_h_;
}

double PotentialNet::bound_derivative() const {
  return kind_ == BoundKind::kLearnable ? sigmoid(theta_[eta_]) : 0.0;
}

void PotentialNet::run_forward(const Eigen::MatrixXd& Xt,
                               Workspace& ws) const {
  const int K = static_cast<int>(cfg_.hidden.size());
  const int n = static_cast<int>(Xt.cols());
  ws.pre.resize(static_cast<size_t>(K));
  ws.act.resize(static_cast<size_t>(K));
  const Eigen::MatrixXd* cur = &Xt;
  for (int l = 0; l < K; ++l) {
    Eigen::MatrixXd& pre = ws.pre[static_cast<size_t>(l)];
    pre.noalias() = mat(w_[l]) * (*cur);
    pre.colwise() += mat(b_[l]).col(0);
    for (int si : skips_into_[static_cast<size_t>(l)]) {
      pre.noalias() +=
          mat(skip_[static_cast<size_t>(si)]) *
          ws.act[static_cast<size_t>(cfg_.skips[static_cast<size_t>(si)].first -
                                     1)];
    }
    ws.act[static_cast<size_t>(l)] = pre.cwiseMax(0.0);
    cur = &ws.act[static_cast<size_t>(l)];
  }
  ws.raw.resize(n);
  ws.raw.noalias() = mat(w_out_) * (*cur);
  ws.raw.array() += theta_[b_out_.offset];
}

Eigen::RowVectorXd PotentialNet::clip_seeds(
    const Eigen::RowVectorXd& raw) const {
  const double h = bound();
  Eigen::RowVectorXd s(raw.size());
  for (int i = 0; i < raw.size(); ++i) {
    const double a = std::abs(raw[i]);
    if (a <= h && raw[i] != 0.0) {
      s[i] = raw[i] > 0.0 ? -1.0 : 1.0;
    } else {
      s[i] = 0.0;  // clipped region, or the |.| kink itself
    }
  }
  return s;
}

Eigen::MatrixXd PotentialNet::backward(const Eigen::MatrixXd& Xt,
                                       const Workspace& ws,
                                       const Eigen::RowVectorXd& seeds,
                                       Eigen::VectorXd* param_grad) const {
  const int K = static_cast<int>(cfg_.hidden.size());
  if (param_grad != nullptr) {
    Eigen::Map<Eigen::MatrixXd>(param_grad->data() + w_out_.offset, 1,
                                w_out_.cols)
        .noalias() += seeds * ws.act[static_cast<size_t>(K - 1)].transpose();
    (*param_grad)[b_out_.offset] += seeds.sum();
  }
  std::vector<Eigen::MatrixXd> bar(static_cast<size_t>(K));
  bar[static_cast<size_t>(K - 1)].noalias() = mat(w_out_).transpose() * seeds;
  Eigen::MatrixXd input_bar;
  for (int l = K - 1; l >= 0; --l) {
    // ReLU'(0) = 0: propagate only where the pre-activation is positive.
    const Eigen::MatrixXd barpre =
        (ws.pre[static_cast<size_t>(l)].array() > 0.0)
            .select(bar[static_cast<size_t>(l)], 0.0);
    const Eigen::MatrixXd& below =
        l == 0 ? Xt : ws.act[static_cast<size_t>(l - 1)];
    if (param_grad != nullptr) {
      Eigen::Map<Eigen::MatrixXd>(param_grad->data() + w_[l].offset,
                                  w_[l].rows, w_[l].cols)
          .noalias() += barpre * below.transpose();
      Eigen::Map<Eigen::VectorXd>(param_grad->data() + b_[l].offset,
                                  b_[l].rows)
          .noalias() += barpre.rowwise().sum();
    }
    for (int si : skips_into_[static_cast<size_t>(l)]) {
      const int from = cfg_.skips[static_cast<size_t>(si)].first - 1;
      if (param_grad != nullptr) {
        Eigen::Map<Eigen::MatrixXd>(
            param_grad->data() + skip_[static_cast<size_t>(si)].offset,
            skip_[static_cast<size_t>(si)].rows,
            skip_[static_cast<size_t>(si)].cols)
            .noalias() +=
            barpre * ws.act[static_cast<size_t>(from)].transpose();
      }
      Eigen::MatrixXd& target = bar[static_cast<size_t>(from)];
      if (target.size() == 0) {
        target.noalias() =
            mat(skip_[static_cast<size_t>(si)]).transpose() * barpre;
      } else {
        target.noalias() +=
            mat(skip_[static_cast<size_t>(si)]).transpose() * barpre;
      }
    }
    if (l == 0) {
      input_bar.noalias() = mat(w_[0]).transpose() * barpre;
    } else {
      Eigen::MatrixXd& target = bar[static_cast<size_t>(l - 1)];
      if (target.size() == 0) {
        target.noalias() = mat(w_[l]).transpose() * barpre;
      } else {
        target.noalias() += mat(w_[l]).transpose() * barpre;
      }
    }
  }
  return input_bar;
}

Eigen::VectorXd PotentialNet::forward(const Eigen::MatrixXd& X) const {
  if (X.cols() != cfg_.input_dim) {
    throw std::invalid_argument("potential: input dimension mismatch");
  }
  const Eigen::MatrixXd Xt = X.transpose();
  Workspace ws;
  run_forward(Xt, ws);
  const double h = bound();
  Eigen::VectorXd f(X.rows());
  for (int i = 0; i < f.size(); ++i) {
    f[i] = std::max(-std::abs(ws.raw[i]), -h);
  }
  return f;
}

Eigen::MatrixXd PotentialNet::input_gradient(const Eigen::MatrixXd& X) const {
  if (X.cols() != cfg_.input_dim) {
    throw std::invalid_argument("potential: input dimension mismatch");
  }
  const Eigen::MatrixXd Xt = X.transpose();
  Workspace ws;
  run_forward(Xt, ws);
  const Eigen::RowVectorXd seeds = clip_seeds(ws.raw);
  return backward(Xt, ws, seeds, nullptr).transpose();
}

Eigen::VectorXd PotentialNet::value_param_gradient(
    const Eigen::MatrixXd& X, const Eigen::VectorXd& coeffs) const {
  if (X.cols() != cfg_.input_dim || X.rows() != coeffs.size()) {
    throw std::invalid_argument("potential: batch/coefficient size mismatch");
  }
  const Eigen::MatrixXd Xt = X.transpose();
  Workspace ws;
  run_forward(Xt, ws);
  const Eigen::RowVectorXd seeds =
      clip_seeds(ws.raw).cwiseProduct(coeffs.transpose());
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(param_count());
  backward(Xt, ws, seeds, &grad);
  if (eta_ >= 0) {
    // In the clipped region f == -h, so df/dh = -1 there and 0 elsewhere.
    const double h = bound();
    double acc = 0.0;
    for (int i = 0; i < X.rows(); ++i) {
      if (std::abs(ws.raw[i]) > h) acc -= coeffs[i];
    }
    grad[eta_] = acc * bound_derivative();
  }
  return grad;
}

double PotentialNet::gradient_penalty(const Eigen::MatrixXd& X,
                                      GpAggregation agg,
                                      Eigen::VectorXd* param_grad) const {
  if (X.cols() != cfg_.input_dim) {
    throw std::invalid_argument("potential: input dimension mismatch");
  }
  const int n = static_cast<int>(X.rows());
  if (n == 0) {
    throw std::invalid_argument("potential: empty penalty batch");
  }
  const Eigen::MatrixXd Xt = X.transpose();
  Workspace ws;
  run_forward(Xt, ws);
  const Eigen::RowVectorXd seeds = clip_seeds(ws.raw);
  const Eigen::MatrixXd U = backward(Xt, ws, seeds, nullptr);  // d x n
  const Eigen::RowVectorXd nsq = U.colwise().squaredNorm();

  double value = 0.0;
  std::vector<int> selected;
  double coeff = 1.0;
  if (agg == GpAggregation::kMax) {
    int arg = 0;
    for (int i = 1; i < n; ++i) {
      if (nsq[i] > nsq[arg]) arg = i;
    }
    value = std::max(nsq[arg], 1.0);
    if (nsq[arg] > 1.0) selected.push_back(arg);
  } else {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += std::max(nsq[i], 1.0);
      if (nsq[i] > 1.0) selected.push_back(i);
    }
    value = acc / n;
    coeff = 1.0 / n;
  }
  if (param_grad == nullptr) return value;
  param_grad->setZero(param_count());
  if (selected.empty()) return value;  // the constant branch wins everywhere

  // Differentiate sum_i coeff * |grad_x f(x_i)|^2 over the selected points.
  // The input gradient is s_i * grad_x g(x_i) with piecewise-constant s_i and
  // ReLU masks, so its parameter derivative is obtained by pushing the
  // tangent 2*coeff*u_i through a forward (JVP) pass and differentiating the
  // resulting directional derivative with respect to the weights.
  const int ns = static_cast<int>(selected.size());
  const int K = static_cast<int>(cfg_.hidden.size());
  Eigen::MatrixXd tact0(cfg_.input_dim, ns);
  std::vector<Eigen::MatrixXd> masks(static_cast<size_t>(K));
  std::vector<Eigen::MatrixXd> acts(static_cast<size_t>(K));
  Eigen::RowVectorXd s_sel(ns);
  for (int k = 0; k < ns; ++k) {
    const int i = selected[static_cast<size_t>(k)];
    tact0.col(k) = 2.0 * coeff * U.col(i);
    s_sel[k] = seeds[i];
  }
  for (int l = 0; l < K; ++l) {
    masks[static_cast<size_t>(l)].resize(cfg_.hidden[l], ns);
    acts[static_cast<size_t>(l)].resize(cfg_.hidden[l], ns);
    for (int k = 0; k < ns; ++k) {
      const int i = selected[static_cast<size_t>(k)];
      masks[static_cast<size_t>(l)].col(k) =
          (ws.pre[static_cast<size_t>(l)].col(i).array() > 0.0)
              .cast<double>();
      acts[static_cast<size_t>(l)].col(k) =
          ws.act[static_cast<size_t>(l)].col(i);
    }
  }

  std::vector<Eigen::MatrixXd> tact(static_cast<size_t>(K));
  {
    const Eigen::MatrixXd* cur = &tact0;
    for (int l = 0; l < K; ++l) {
      Eigen::MatrixXd tpre = mat(w_[l]) * (*cur);
      for (int si : skips_into_[static_cast<size_t>(l)]) {
        tpre.noalias() +=
            mat(skip_[static_cast<size_t>(si)]) *
            tact[static_cast<size_t>(
                cfg_.skips[static_cast<size_t>(si)].first - 1)];
      }
      tact[static_cast<size_t>(l)] =
          masks[static_cast<size_t>(l)].cwiseProduct(tpre);
      cur = &tact[static_cast<size_t>(l)];
    }
  }

  // Reverse pass over the tangent computation. Biases and eta never enter the
  // tangent, so their penalty gradient is zero (almost everywhere exact).
  Eigen::Map<Eigen::MatrixXd>(param_grad->data() + w_out_.offset, 1,
                              w_out_.cols)
      .noalias() += s_sel * tact[static_cast<size_t>(K - 1)].transpose();
  std::vector<Eigen::MatrixXd> tbar(static_cast<size_t>(K));
  tbar[static_cast<size_t>(K - 1)].noalias() =
      mat(w_out_).transpose() * s_sel;
  for (int l = K - 1; l >= 0; --l) {
    const Eigen::MatrixXd tbarpre =
        masks[static_cast<size_t>(l)].cwiseProduct(
            tbar[static_cast<size_t>(l)]);
    const Eigen::MatrixXd& below =
        l == 0 ? tact0 : tact[static_cast<size_t>(l - 1)];
    Eigen::Map<Eigen::MatrixXd>(param_grad->data() + w_[l].offset, w_[l].rows,
                                w_[l].cols)
        .noalias() += tbarpre * below.transpose();
    for (int si : skips_into_[static_cast<size_t>(l)]) {
      const int from = cfg_.skips[static_cast<size_t>(si)].first - 1;
      Eigen::Map<Eigen::MatrixXd>(
          param_grad->data() + skip_[static_cast<size_t>(si)].offset,
          skip_[static_cast<size_t>(si)].rows,
          skip_[static_cast<size_t>(si)].cols)
          .noalias() += tbarpre * tact[static_cast<size_t>(from)].transpose();
      Eigen::MatrixXd& target = tbar[static_cast<size_t>(from)];
      if (target.size() == 0) {
        target.noalias() =
            mat(skip_[static_cast<size_t>(si)]).transpose() * tbarpre;
      } else {
        target.noalias() +=
            mat(skip_[static_cast<size_t>(si)]).transpose() * tbarpre;
      }
    }
    if (l > 0) {
      Eigen::MatrixXd& target = tbar[static_cast<size_t>(l - 1)];
      if (target.size() == 0) {
        target.noalias() = mat(w_[l]).transpose() * tbarpre;
      } else {
        target.noalias() += mat(w_[l]).transpose() * tbarpre;
      }
    }
  }
  return value;
}

std::uint64_t PotentialNet::activation_signature(
    const Eigen::MatrixXd& X) const {
  const Eigen::MatrixXd Xt = X.transpose();
  Workspace ws;
  run_forward(Xt, ws);
  const double h = bound();
  std::uint64_t hash = 1469598103934665603ull;
  auto mix = [&hash](std::uint8_t byte) {
    hash ^= byte;
    hash *= 1099511628211ull;
  };
  for (int i = 0; i < Xt.cols(); ++i) {
    for (const auto& pre : ws.pre) {
      for (int r = 0; r < pre.rows(); ++r) {
        mix(pre(r, i) > 0.0 ? 1 : 0);
      }
    }
    mix(ws.raw[i] > 0.0 ? 1 : (ws.raw[i] < 0.0 ? 2 : 0));
    mix(std::abs(ws.raw[i]) <= h ? 1 : 0);
  }
  return hash;
}

nlohmann::json PotentialNet::to_json() const {
  nlohmann::json j;
  j["format"] = "pwan-potential-checkpoint";
  j["schema"] = 1;
  j["input_dim"] = cfg_.input_dim;
  j["hidden"] = cfg_.hidden;
  nlohmann::json skips = nlohmann::json::array();
  for (const auto& [from, to] : cfg_.skips) {
    skips.push_back({from, to});
  }
  j["skips"] = skips;
  j["bound_kind"] = kind_ == BoundKind::kLearnable ? "learnable" : "fixed";
  if (kind_ == BoundKind::kFixed) j["fixed_h"] = fixed_h_;
  j["params"] = std::vector<double>(theta_.data(), theta_.data() + theta_.size());
  return j;
}

PotentialNet PotentialNet::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "pwan-potential-checkpoint" ||
      j.value("schema", 0) != 1) {
    throw std::runtime_error("potential checkpoint: unrecognized format");
  }
  PotentialNet net;
  net.cfg_.input_dim = j.at("input_dim").get<int>();
  net.cfg_.hidden = j.at("hidden").get<std::vector<int>>();
  net.cfg_.skips.clear();
  for (const auto& s : j.at("skips")) {
    net.cfg_.skips.emplace_back(s.at(0).get<int>(), s.at(1).get<int>());
  }
  validate_config(net.cfg_);
  const std::string kind = j.at("bound_kind").get<std::string>();
  net.kind_ = kind == "learnable" ? BoundKind::kLearnable : BoundKind::kFixed;
  net.build_layout();
  if (net.kind_ == BoundKind::kFixed) {
    net.fixed_h_ = j.at("fixed_h").get<double>();
  }
  const auto params = j.at("params").get<std::vector<double>>();
  if (static_cast<int>(params.size()) != net.param_count()) {
    throw std::runtime_error("potential checkpoint: parameter count mismatch");
  }
  for (int i = 0; i < net.param_count(); ++i) {
    net.theta_[i] = params[static_cast<size_t>(i)];
  }
  return net;
}

void PotentialNet::save_checkpoint(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("potential: cannot open " + path);
  out << to_json().dump(2) << '\n';
  if (!out) throw std::runtime_error("potential: write failed for " + path);
}

PotentialNet PotentialNet::load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("potential: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

}  // namespace pwan
