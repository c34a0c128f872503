#include "pwan/coherence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "pwan/rng.hpp"

namespace pwan {
namespace {

constexpr double kEigenCutoffRel = 1e-10;
constexpr int kRedrawAttempts = 3;

void check_config(const CoherenceConfig& cfg) {
  if (!(cfg.lambda >= 0.0) || !std::isfinite(cfg.lambda)) {
    throw std::invalid_argument("coherence: lambda must be >= 0");
  }
  if (!(cfg.rho > 0.0) || !std::isfinite(cfg.rho)) {
    throw std::invalid_argument("coherence: rho must be > 0");
  }
  if (!(cfg.sigma > 0.0) || !std::isfinite(cfg.sigma)) {
    throw std::invalid_argument("coherence: sigma must be > 0");
  }
}

// k distinct anchor indices via a partial Fisher-Yates shuffle.
std::vector<int> pick_anchors(int r, int k, std::uint64_t seed) {
  std::vector<int> idx(static_cast<std::size_t>(r));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (int i = 0; i < k; ++i) {
    const int j = i + rng.uniform_int(r - i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// One factorization attempt from a fixed anchor set.
NystromFactor factor_from_anchors(const Eigen::MatrixXd& Y, double rho,
                                  std::vector<int> anchors) {
  const int r = static_cast<int>(Y.rows());
  const int k = static_cast<int>(anchors.size());
  Eigen::MatrixXd Ya(k, Y.cols());
  for (int i = 0; i < k; ++i) Ya.row(i) = Y.row(anchors[static_cast<std::size_t>(i)]);

  Eigen::MatrixXd C(r, k);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < k; ++j) {
      C(i, j) = std::exp(-(Y.row(i) - Ya.row(j)).squaredNorm() / rho);
    }
  }
  const Eigen::MatrixXd W = gaussian_kernel(Ya, rho);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(W);
  if (eig.info() != Eigen::Success) {
    throw std::runtime_error("coherence: anchor eigendecomposition failed");
  }
  const Eigen::VectorXd& lam_all = eig.eigenvalues();
  const double cutoff = kEigenCutoffRel * std::max(lam_all.maxCoeff(), 0.0);
  std::vector<int> keep;
  for (int i = 0; i < k; ++i) {
    if (lam_all(i) > cutoff) keep.push_back(i);
  }
  NystromFactor f;
  f.anchors = std::move(anchors);
  const int kept = static_cast<int>(keep.size());
  f.lam.resize(kept);
  Eigen::MatrixXd U(k, kept);
  for (int i = 0; i < kept; ++i) {
    f.lam(i) = lam_all(keep[static_cast<std::size_t>(i)]);
    U.col(i) = eig.eigenvectors().col(keep[static_cast<std::size_t>(i)]);
  }
  // G ~= C W^+ C^T = Q diag(lam) Q^T with Q = C U diag(lam)^{-1}.
  f.Q = C * U * f.lam.cwiseInverse().asDiagonal();
  return f;
}

}  // namespace

Eigen::MatrixXd gaussian_kernel(const Eigen::MatrixXd& Y, double rho) {
  if (!(rho > 0.0) || !std::isfinite(rho)) {
    throw std::invalid_argument("coherence: rho must be > 0");
  }
  const Eigen::Index r = Y.rows();
  Eigen::MatrixXd G(r, r);
  for (Eigen::Index i = 0; i < r; ++i) {
    G(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < r; ++j) {
      const double d2 = (Y.row(i) - Y.row(j)).squaredNorm();
      G(i, j) = G(j, i) = std::exp(-d2 / rho);
    }
  }
  return G;
}

Eigen::MatrixXd NystromFactor::reconstruct() const {
  return Q * lam.asDiagonal() * Q.transpose();
}

NystromFactor nystrom_decompose(const Eigen::MatrixXd& Y, double rho, int k,
                                std::uint64_t seed) {
  const int r = static_cast<int>(Y.rows());
  if (k < 1 || k > r) {
    throw std::invalid_argument("coherence: rank must lie in [1, point count]");
  }
  NystromFactor best;
  int best_rank = -1;
  for (int attempt = 0; attempt < kRedrawAttempts; ++attempt) {
    NystromFactor f = factor_from_anchors(
        Y, rho, pick_anchors(r, k, seed + 0x9e3779b97f4a7c15ull * attempt));
    const int rank = static_cast<int>(f.lam.size());
    if (rank > best_rank) {
      best_rank = rank;
      best = std::move(f);
    }
    if (best_rank == k || k == r) break;  // full rank, or nothing to redraw
  }
  return best;
}

Eigen::MatrixXd coherence_gradient(const Eigen::MatrixXd& V,
                                   const NystromFactor& factor, double sigma,
                                   double lambda) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("coherence: sigma must be > 0");
  }
  if (factor.Q.rows() != V.rows()) {
    throw std::invalid_argument("coherence: factor/displacement row mismatch");
  }
  if (factor.Q.cols() == 0) {
    return 2.0 * lambda / sigma * V;  // kernel approximated by zero
  }
  Eigen::MatrixXd S = (factor.Q.transpose() * factor.Q) / sigma;
  S.diagonal() += factor.lam.cwiseInverse();
  Eigen::LDLT<Eigen::MatrixXd> solver(S);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error(
        "coherence: capacitance system not invertible (eigenvalue cutoff "
        "1e-10 left a degenerate factor)");
  }
  const Eigen::MatrixXd t = solver.solve(factor.Q.transpose() * V) / sigma;
  return 2.0 * lambda / sigma * (V - factor.Q * t);
}

double coherence_energy(const Eigen::MatrixXd& V, const Eigen::MatrixXd& Y,
                        const CoherenceConfig& cfg) {
  return CoherenceRegularizer::dense_energy(Y, V, cfg);
}

CoherenceRegularizer::CoherenceRegularizer(const Eigen::MatrixXd& Y,
                                           const CoherenceConfig& cfg)
    : r_(static_cast<int>(Y.rows())), lambda_(cfg.lambda), sigma_(cfg.sigma) {
  check_config(cfg);
  if (r_ == 0) {
    dense_ = true;
    rank_ = 0;
    return;
  }
  const int k = cfg.rank <= 0 ? 0 : std::min(cfg.rank, r_);
  if (k == 0) {
    dense_ = true;
    rank_ = r_;
    Eigen::MatrixXd A = gaussian_kernel(Y, cfg.rho);
    A.diagonal().array() += sigma_;
    dense_solver_.compute(A);
    if (dense_solver_.info() != Eigen::Success) {
      throw std::runtime_error("coherence: dense factorization failed");
    }
    return;
  }

  dense_ = false;
  const NystromFactor f = nystrom_decompose(Y, cfg.rho, k, cfg.seed);
  rank_ = static_cast<int>(f.lam.size());
  Q_ = f.Q;
  if (rank_ == 0) return;  // kernel ~= 0; inverse is 1/sigma

  Eigen::MatrixXd S = (Q_.transpose() * Q_) / sigma_;
  S.diagonal() += f.lam.cwiseInverse();
  capacitance_.compute(S);
  if (capacitance_.info() != Eigen::Success) {
    throw std::runtime_error(
        "coherence: capacitance system not invertible (eigenvalue cutoff "
        "1e-10 left a degenerate factor)");
  }
}

Eigen::MatrixXd CoherenceRegularizer::apply_inverse(
    const Eigen::MatrixXd& V) const {
  if (dense_) {
    if (r_ == 0) return V;
    return dense_solver_.solve(V);
  }
  if (Q_.cols() == 0) return V / sigma_;
  // (sigma I + Q L Q^T)^{-1} V = (V - Q S^{-1} Q^T V / sigma) / sigma.
  const Eigen::MatrixXd t = capacitance_.solve(Q_.transpose() * V) / sigma_;
  return (V - Q_ * t) / sigma_;
}

double CoherenceRegularizer::energy(const Eigen::MatrixXd& V) const {
  if (V.rows() != r_) {
    throw std::invalid_argument("coherence: displacement row count mismatch");
  }
  if (r_ == 0) return 0.0;
  return lambda_ * V.cwiseProduct(apply_inverse(V)).sum();
}

Eigen::MatrixXd CoherenceRegularizer::gradient(const Eigen::MatrixXd& V) const {
  if (V.rows() != r_) {
    throw std::invalid_argument("coherence: displacement row count mismatch");
  }
  if (r_ == 0) return V;
  return 2.0 * lambda_ * apply_inverse(V);
}

double CoherenceRegularizer::dense_energy(const Eigen::MatrixXd& Y,
                                          const Eigen::MatrixXd& V,
                                          const CoherenceConfig& cfg) {
  check_config(cfg);
  if (Y.rows() != V.rows()) {
    throw std::invalid_argument("coherence: displacement row count mismatch");
  }
  if (Y.rows() == 0) return 0.0;
  Eigen::MatrixXd A = gaussian_kernel(Y, cfg.rho);
  A.diagonal().array() += cfg.sigma;
  return cfg.lambda * V.cwiseProduct(A.ldlt().solve(V)).sum();
}

Eigen::MatrixXd CoherenceRegularizer::dense_gradient(const Eigen::MatrixXd& Y,
                                                     const Eigen::MatrixXd& V,
                                                     const CoherenceConfig& cfg) {
  check_config(cfg);
  if (Y.rows() != V.rows()) {
    throw std::invalid_argument("coherence: displacement row count mismatch");
  }
  if (Y.rows() == 0) return V;
  Eigen::MatrixXd A = gaussian_kernel(Y, cfg.rho);
  A.diagonal().array() += cfg.sigma;
  return 2.0 * cfg.lambda * A.ldlt().solve(V);
}

}  // namespace pwan
