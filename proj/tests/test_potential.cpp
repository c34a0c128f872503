#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "pwan/potential.hpp"
#include "pwan/rng.hpp"

using namespace pwan;

namespace {

// Independent forward route: recompute the unclipped MLP value from the
// documented checkpoint layout (per hidden layer W then b, column-major, then
// the output row and bias). Only used on skip-free configs.
double reference_raw(const nlohmann::json& j, const Eigen::RowVectorXd& x) {
  const auto params = j.at("params").get<std::vector<double>>();
  const auto hidden = j.at("hidden").get<std::vector<int>>();
  int fan_in = j.at("input_dim").get<int>();
  int off = 0;
  Eigen::VectorXd cur = x.transpose();
  for (const int width : hidden) {
    const Eigen::Map<const Eigen::MatrixXd> W(params.data() + off, width,
                                              fan_in);
    off += width * fan_in;
    const Eigen::Map<const Eigen::VectorXd> b(params.data() + off, width);
    off += width;
    cur = (W * cur + b).cwiseMax(0.0);
    fan_in = width;
  }
  const Eigen::Map<const Eigen::RowVectorXd> w_out(params.data() + off,
                                                   fan_in);
  off += fan_in;
  return w_out * cur + params[static_cast<size_t>(off)];
}

// Hand-wired single-hidden-unit net: raw(x) = out_w * relu(w*x + b) + out_b.
PotentialNet make_line_net(double w, double b, double out_w, double out_b,
                           double h) {
  NetConfig cfg;
  cfg.input_dim = 1;
  cfg.hidden = {1};
  cfg.skips = {};
  PotentialNet net(cfg, BoundKind::kFixed, h, /*seed=*/0);
  REQUIRE(net.param_count() == 4);
  net.params() << w, b, out_w, out_b;
  return net;
}

Eigen::MatrixXd random_points(Rng& rng, int n, int dim, double spread) {
  Eigen::MatrixXd X(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < dim; ++k) X(i, k) = rng.uniform(-spread, spread);
  }
  return X;
}

// A probe is kink-free when the discrete activation pattern (ReLU signs,
// output sign, clip state) is stable under the finite-difference step in
// every input coordinate.
bool input_stable(const PotentialNet& net, const Eigen::RowVectorXd& x,
                  double step) {
  const std::uint64_t sig = net.activation_signature(x);
  for (int k = 0; k < x.size(); ++k) {
    for (const double sgn : {-1.0, 1.0}) {
      Eigen::RowVectorXd p = x;
      p[k] += sgn * step;
      if (net.activation_signature(p) != sig) return false;
    }
  }
  return true;
}

// Same idea for parameter perturbations: every +-step on every parameter must
// leave the pattern of the whole batch unchanged.
bool param_stable(const PotentialNet& net, const Eigen::MatrixXd& X,
                  double step) {
  const std::uint64_t sig = net.activation_signature(X);
  PotentialNet probe = net;
  for (int p = 0; p < net.param_count(); ++p) {
    for (const double sgn : {-1.0, 1.0}) {
      probe.params() = net.params();
      probe.params()[p] += sgn * step;
      if (probe.activation_signature(X) != sig) return false;
    }
  }
  return true;
}

}  // namespace

TEST_SUITE("potential") {

TEST_CASE("forward clips the negated magnitude into [-h, 0]") {
  // raw(x) = 2x on x > 0.
  const PotentialNet net = make_line_net(1.0, 0.0, 2.0, 0.0, /*h=*/1.0);

  Eigen::MatrixXd X(3, 1);
  X << 0.15, 2.5, -1.0;
  const Eigen::VectorXd f = net.forward(X);
  CHECK(f[0] == doctest::Approx(-0.3).epsilon(1e-15));  // raw 0.3 -> -0.3
  CHECK(f[1] == -1.0);                                  // raw 5 -> lower clip
  CHECK(f[2] == 0.0);                                   // relu kills x < 0

  // Negative raw values clip the same way: raw(x) = -2x on x > 0.
  const PotentialNet neg = make_line_net(1.0, 0.0, -2.0, 0.0, 1.0);
  const Eigen::VectorXd g = neg.forward(X);
  CHECK(g[0] == doctest::Approx(-0.3).epsilon(1e-15));
  CHECK(g[1] == -1.0);

  // h = 0 forces the output to zero everywhere.
  const PotentialNet flat = make_line_net(1.0, 0.0, 2.0, 0.0, 0.0);
  CHECK(flat.forward(X).cwiseAbs().maxCoeff() == 0.0);
  CHECK(flat.bound() == 0.0);
}

TEST_CASE("forward stays in [-h, 0] for random parameters") {
  Rng rng(60);
  int checked = 0;
  for (int trial = 0; trial < 25; ++trial) {
    NetConfig cfg;
    cfg.input_dim = 1 + rng.uniform_int(3);
    cfg.hidden = {4 + rng.uniform_int(5), 4 + rng.uniform_int(5)};
    cfg.skips = (trial % 2 == 0) ? std::vector<std::pair<int, int>>{{1, 2}}
                                 : std::vector<std::pair<int, int>>{};
    const bool learnable = trial % 3 == 0;
    PotentialNet net(cfg, learnable ? BoundKind::kLearnable : BoundKind::kFixed,
                     rng.uniform(0.0, 2.0), rng.raw());
    // Random rescale so magnitudes vary wildly.
    net.params() *= rng.uniform(0.1, 30.0);
    const double h = net.bound();
    const Eigen::MatrixXd X = random_points(rng, 400, cfg.input_dim, 5.0);
    const Eigen::VectorXd f = net.forward(X);
    for (int i = 0; i < f.size(); ++i) {
      CHECK(f[i] <= 0.0);
      CHECK(f[i] >= -h - 1e-12);
    }
    checked += static_cast<int>(f.size());
  }
  CHECK(checked == 10000);
}

TEST_CASE("skip connections add a linear map of the earlier activation") {
  NetConfig cfg;
  cfg.input_dim = 1;
  cfg.hidden = {1, 1};
  cfg.skips = {{1, 2}};
  PotentialNet net(cfg, BoundKind::kFixed, /*h=*/10.0, 0);
  REQUIRE(net.param_count() == 7);  // w1 b1 w2 b2 w_out b_out skip
  net.params() << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 3.0;
  // pre2 = 0 * act1 + 0 + 3 * act1, so raw(x) = relu(3 relu(x)).
  Eigen::MatrixXd X(2, 1);
  X << 0.2, -0.7;
  const Eigen::VectorXd f = net.forward(X);
  CHECK(f[0] == doctest::Approx(-0.6).epsilon(1e-15));
  CHECK(f[1] == 0.0);

  // Invalid skip wiring is rejected.
  NetConfig bad = cfg;
  bad.skips = {{2, 1}};
  CHECK_THROWS_AS(PotentialNet(bad, BoundKind::kFixed, 1.0, 0),
                  std::invalid_argument);
}

TEST_CASE("forward matches an independent reconstruction from the checkpoint") {
  Rng rng(61);
  for (int trial = 0; trial < 5; ++trial) {
    NetConfig cfg;
    cfg.input_dim = 2;
    cfg.hidden = {5, 4, 3};
    cfg.skips = {};
    PotentialNet net(cfg, BoundKind::kFixed, /*h=*/0.8, rng.raw());
    net.params() *= 3.0;  // push some points into the clip
    const nlohmann::json j = net.to_json();
    for (int i = 0; i < 40; ++i) {
      Eigen::RowVectorXd x(2);
      x << rng.uniform(-2, 2), rng.uniform(-2, 2);
      const double raw = reference_raw(j, x);
      const double expected = -std::min(std::abs(raw), 0.8);
      CHECK(net.forward(x)(0) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("unclipped regime reduces to a plain critic") {
  // With the bound far above every |raw|, the clip never binds: outputs are
  // exactly -|raw| and two nets differing only in h agree everywhere.
  Rng rng(62);
  NetConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden = {8, 8};
  cfg.skips = {{1, 2}};
  PotentialNet a(cfg, BoundKind::kFixed, 1e3, 999);
  PotentialNet b(cfg, BoundKind::kFixed, 1e6, 999);
  REQUIRE(a.params() == b.params());  // same seed, same init
  const Eigen::MatrixXd X = random_points(rng, 100, 3, 2.0);
  const Eigen::VectorXd fa = a.forward(X);
  const Eigen::VectorXd fb = b.forward(X);
  CHECK((fa - fb).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fa.minCoeff() > -1e3);  // nothing reached the bound
  const Eigen::MatrixXd ga = a.input_gradient(X);
  const Eigen::MatrixXd gb = b.input_gradient(X);
  CHECK((ga - gb).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("input gradient: closed forms on the hand-wired net") {
  const PotentialNet net = make_line_net(1.0, 0.0, 2.0, 0.0, 1.0);
  Eigen::MatrixXd X(3, 1);
  X << 0.2, 2.5, -0.5;
  const Eigen::MatrixXd g = net.input_gradient(X);
  CHECK(g(0, 0) == doctest::Approx(-2.0).epsilon(1e-15));  // active slope
  CHECK(g(1, 0) == 0.0);  // clipped flat region
  CHECK(g(2, 0) == 0.0);  // dead relu
}

TEST_CASE("input gradient matches finite differences at kink-free probes") {
  Rng rng(63);
  NetConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden = {6, 5, 4};
  cfg.skips = {{1, 3}};
  PotentialNet net(cfg, BoundKind::kFixed, 0.9, 7);
  net.params() *= 2.0;
  const double step = 1e-6;
  int tested = 0;
  for (int attempt = 0; attempt < 400 && tested < 25; ++attempt) {
    Eigen::RowVectorXd x(3);
    for (int k = 0; k < 3; ++k) x[k] = rng.uniform(-2, 2);
    if (!input_stable(net, x, 10 * step)) continue;
    const Eigen::MatrixXd g = net.input_gradient(x);
    for (int k = 0; k < 3; ++k) {
      Eigen::RowVectorXd hi = x, lo = x;
      hi[k] += step;
      lo[k] -= step;
      const double fd = (net.forward(hi)(0) - net.forward(lo)(0)) / (2 * step);
      CHECK(std::abs(fd - g(0, k)) <=
            1e-6 * std::max(1.0, std::abs(g(0, k))));
    }
    ++tested;
  }
  CHECK(tested == 25);
}

TEST_CASE("parameter gradient: closed form on the hand-wired net") {
  const PotentialNet net = make_line_net(1.0, 0.0, 2.0, 0.0, 1.0);
  Eigen::MatrixXd X(1, 1);
  X << 0.2;  // active, unclipped: f = -2x
  Eigen::VectorXd coeff(1);
  coeff << 1.5;
  const Eigen::VectorXd g = net.value_param_gradient(X, coeff);
  REQUIRE(g.size() == 4);
  // V = c * (-(w_out * relu(w x + b) + b_out)) at the probe.
  CHECK(g[0] == doctest::Approx(-1.5 * 2.0 * 0.2).epsilon(1e-14));  // dV/dw
  CHECK(g[1] == doctest::Approx(-1.5 * 2.0).epsilon(1e-14));        // dV/db
  CHECK(g[2] == doctest::Approx(-1.5 * 0.2).epsilon(1e-14));  // dV/dw_out
  CHECK(g[3] == doctest::Approx(-1.5).epsilon(1e-14));        // dV/db_out

  // Zero coefficients wipe the gradient.
  coeff << 0.0;
  CHECK(net.value_param_gradient(X, coeff).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("parameter gradient matches finite differences, learnable bound") {
  Rng rng(64);
  NetConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = {5, 4};
  cfg.skips = {{1, 2}};
  PotentialNet net(cfg, BoundKind::kLearnable, 0.6, 17);
  net.params().head(net.param_count() - 1) *= 2.5;  // keep eta as initialized
  REQUIRE(net.eta_index() == net.param_count() - 1);

  const double step = 1e-6;
  int tested = 0;
  for (int attempt = 0; attempt < 300 && tested < 8; ++attempt) {
    Eigen::MatrixXd X = random_points(rng, 5, 2, 2.0);
    Eigen::VectorXd coeff(5);
    for (int i = 0; i < 5; ++i) coeff[i] = rng.uniform(-1, 1);
    if (!param_stable(net, X, 10 * step)) continue;

    const Eigen::VectorXd g = net.value_param_gradient(X, coeff);
    const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
    PotentialNet probe = net;
    for (int p = 0; p < net.param_count(); ++p) {
      probe.params() = net.params();
      probe.params()[p] += step;
      const double hi = coeff.dot(probe.forward(X));
      probe.params()[p] = net.params()[p] - step;
      const double lo = coeff.dot(probe.forward(X));
      const double fd = (hi - lo) / (2 * step);
      CHECK(std::abs(fd - g[p]) <= 1e-6 * scale);
    }
    ++tested;
  }
  CHECK(tested == 8);
}

TEST_CASE("bound derivative chains through the clip") {
  // Clipped points contribute d f / d eta = -softplus'(eta); unclipped points
  // contribute nothing through eta.
  NetConfig cfg;
  cfg.input_dim = 1;
  cfg.hidden = {1};
  cfg.skips = {};
  PotentialNet net(cfg, BoundKind::kLearnable, 0.5, 0);
  REQUIRE(net.param_count() == 5);
  const double eta = softplus_inverse(0.5);
  net.params() << 1.0, 0.0, 2.0, 0.0, eta;
  CHECK(net.bound() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(net.bound_derivative() == doctest::Approx(sigmoid(eta)).epsilon(1e-12));

  Eigen::MatrixXd X(2, 1);
  X << 5.0, 0.1;  // first clipped (raw 10 > 0.5), second active (raw 0.2)
  Eigen::VectorXd coeff(2);
  coeff << 2.0, 3.0;
  const Eigen::VectorXd g = net.value_param_gradient(X, coeff);
  CHECK(g[4] == doctest::Approx(-2.0 * sigmoid(eta)).epsilon(1e-12));

  // Fixed-bound nets expose no eta.
  const PotentialNet fixed = make_line_net(1, 0, 2, 0, 1.0);
  CHECK(fixed.eta_index() == -1);
  CHECK(fixed.bound_derivative() == 0.0);
}

TEST_CASE("gradient penalty: exact values and flat-region behavior") {
  // All-zero weights: |grad| = 0 everywhere, the constant-1 branch wins and
  // the parameter gradient vanishes identically.
  NetConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = {4, 3};
  cfg.skips = {};
  PotentialNet zero(cfg, BoundKind::kFixed, 1.0, 3);
  zero.params().setZero();
  Rng rng(65);
  const Eigen::MatrixXd X = random_points(rng, 6, 2, 2.0);
  Eigen::VectorXd pg;
  CHECK(zero.gradient_penalty(X, GpAggregation::kMax, &pg) == 1.0);
  CHECK(pg.cwiseAbs().maxCoeff() == 0.0);
  CHECK(zero.gradient_penalty(X, GpAggregation::kMean, nullptr) == 1.0);

  // Hand-wired slope-2 net on its active region: penalty = 2^2 = 4.
  const PotentialNet line = make_line_net(1.0, 0.0, 2.0, 0.0, 1.0);
  Eigen::MatrixXd active(3, 1);
  active << 0.1, 0.2, 0.3;
  CHECK(line.gradient_penalty(active, GpAggregation::kMax, nullptr) == 4.0);
  CHECK(line.gradient_penalty(active, GpAggregation::kMean, nullptr) == 4.0);

  // Mixed active/flat probes: max picks 4; mean averages {4, 4, 1, 1}.
  Eigen::MatrixXd mixed(4, 1);
  mixed << 0.1, 0.3, 2.0, -1.0;
  CHECK(line.gradient_penalty(mixed, GpAggregation::kMax, nullptr) == 4.0);
  CHECK(line.gradient_penalty(mixed, GpAggregation::kMean, nullptr) ==
        doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("gradient penalty parameter gradient matches finite differences") {
  Rng rng(66);
  NetConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden = {6, 5};
  cfg.skips = {{1, 2}};
  PotentialNet net(cfg, BoundKind::kFixed, 5.0, 29);
  net.params() *= 3.0;  // get |grad| above the constant branch

  const double step = 1e-5;
  int tested = 0;
  for (int attempt = 0; attempt < 300 && tested < 6; ++attempt) {
    // Single eval point: the max aggregation is then trivially stable.
    Eigen::MatrixXd X = random_points(rng, 1, 2, 1.5);
    if (!param_stable(net, X, 10 * step)) continue;
    Eigen::VectorXd pg;
    const double value = net.gradient_penalty(X, GpAggregation::kMax, &pg);
    if (value <= 1.02) continue;  // keep clear of the constant-1 kink
    const double scale = std::max(1.0, pg.cwiseAbs().maxCoeff());
    PotentialNet probe = net;
    for (int p = 0; p < net.param_count(); ++p) {
      probe.params() = net.params();
      probe.params()[p] += step;
      const double hi = probe.gradient_penalty(X, GpAggregation::kMax, nullptr);
      probe.params()[p] = net.params()[p] - step;
      const double lo = probe.gradient_penalty(X, GpAggregation::kMax, nullptr);
      const double fd = (hi - lo) / (2 * step);
      CHECK(std::abs(fd - pg[p]) <= 1e-5 * scale);
    }
    ++tested;
  }
  CHECK(tested == 6);
}

TEST_CASE("checkpoints round-trip exactly") {
  Rng rng(67);
  NetConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden = {7, 6, 5};
  cfg.skips = {{1, 3}};
  PotentialNet net(cfg, BoundKind::kLearnable, 0.75, 41);
  net.params() *= 1.7;

  const auto path =
      (std::filesystem::temp_directory_path() / "pwan_potential_ckpt.json")
          .string();
  net.save_checkpoint(path);
  const PotentialNet back = PotentialNet::load_checkpoint(path);
  CHECK(back.param_count() == net.param_count());
  CHECK((back.params() - net.params()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.bound() == net.bound());
  CHECK(back.bound_kind() == BoundKind::kLearnable);

  const Eigen::MatrixXd X = random_points(rng, 20, 3, 2.0);
  CHECK((back.forward(X) - net.forward(X)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.input_gradient(X) - net.input_gradient(X))
            .cwiseAbs()
            .maxCoeff() == 0.0);
  std::filesystem::remove(path);

  // Corrupted blobs are rejected: wrong magic and truncated parameters.
  nlohmann::json j = net.to_json();
  j["format"] = "something-else";
  CHECK_THROWS(PotentialNet::from_json(j));
  nlohmann::json trunc = net.to_json();
  auto params = trunc["params"].get<std::vector<double>>();
  params.pop_back();
  trunc["params"] = params;
  CHECK_THROWS(PotentialNet::from_json(trunc));
}

TEST_CASE("softplus utilities are mutually consistent") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(sigmoid(0.0) == 0.5);
  for (const double x : {-20.0, -3.0, -0.5, 0.0, 0.5, 3.0, 20.0}) {
    CHECK(softplus_inverse(softplus(x)) == doctest::Approx(x).epsilon(1e-9));
    CHECK(softplus(x) >= 0.0);
    // softplus' = sigmoid.
    const double fd = (softplus(x + 1e-6) - softplus(x - 1e-6)) / 2e-6;
    CHECK(fd == doctest::Approx(sigmoid(x)).epsilon(1e-8));
  }
}

}  // TEST_SUITE("potential")
