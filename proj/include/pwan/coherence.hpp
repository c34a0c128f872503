#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace pwan {

// Motion-coherence penalty on a displacement field V (one row per source
// point):
//
//   C(V) = lambda * Tr(V^T (sigma I + G)^{-1} V),
//   G(i, j) = exp(-|y_i - y_j|^2 / rho).
//
// The inverse is never formed at scale: a Nystrom factorization
// G ~= Q diag(lam) Q^T from k anchor points turns the gradient into the
// Woodbury form 2 lambda sigma^{-1} (V - sigma^{-1} Q (diag(lam)^{-1} +
// sigma^{-1} Q^T Q)^{-1} Q^T V).
struct CoherenceConfig {
  double lambda = 0.01;  // penalty strength
  double rho = 2.0;      // kernel width (squared-distance scale)
  double sigma = 0.1;    // diagonal stabilizer, must be > 0
  int rank = 0;          // 0 = exact dense kernel; otherwise Nystrom rank
                         // (clamped to the point count)
  std::uint64_t seed = 0;  // anchor subsample seed
};

// Dense Gaussian kernel matrix G(i, j) = exp(-|y_i - y_j|^2 / rho).
Eigen::MatrixXd gaussian_kernel(const Eigen::MatrixXd& Y, double rho);

struct NystromFactor {
  Eigen::MatrixXd Q;        // r x k' factor (k' = kept rank)
  Eigen::VectorXd lam;      // k' positive eigenvalues of the anchor block
  std::vector<int> anchors; // anchor row indices used

  Eigen::MatrixXd reconstruct() const;  // Q diag(lam) Q^T
};

// Low-rank kernel factorization from k uniformly drawn anchors (without
// replacement). Anchor-block eigenvalues at or below 1e-10 * lam_max are
// dropped with their columns; if that loses rank the anchors are redrawn (a
// bounded number of times) before accepting the reduced factor, which is the
// pseudo-inverse treatment. Exact at k = r.
NystromFactor nystrom_decompose(const Eigen::MatrixXd& Y, double rho, int k,
                                std::uint64_t seed);

// Reference energy, always through the dense kernel: for reporting and for
// validating the low-rank path.
double coherence_energy(const Eigen::MatrixXd& V, const Eigen::MatrixXd& Y,
                        const CoherenceConfig& cfg);

// Woodbury-form gradient 2 lambda (sigma I + Q diag(lam) Q^T)^{-1} V through
// the given factorization; matches the dense gradient to 1e-6 relative when
// the factorization is exact (k = r).
Eigen::MatrixXd coherence_gradient(const Eigen::MatrixXd& V,
                                   const NystromFactor& factor, double sigma,
                                   double lambda);

// Precomputed form used inside training loops: factors once, then evaluates
// energies and gradients cheaply. rank == 0 keeps the exact dense kernel.
class CoherenceRegularizer {
 public:
  CoherenceRegularizer(const Eigen::MatrixXd& Y, const CoherenceConfig& cfg);

  int point_count() const { return r_; }
  // Rank actually kept after the eigenvalue cutoff (r when dense).
  int rank() const { return rank_; }

  double energy(const Eigen::MatrixXd& V) const;
  // d C / d V, an r x 3 matrix: 2 lambda (sigma I + G)^{-1} V.
  Eigen::MatrixXd gradient(const Eigen::MatrixXd& V) const;

  // Dense-path references (build the full kernel every call).
  static double dense_energy(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& V,
                             const CoherenceConfig& cfg);
  static Eigen::MatrixXd dense_gradient(const Eigen::MatrixXd& Y,
                                        const Eigen::MatrixXd& V,
                                        const CoherenceConfig& cfg);

 private:
  // Solves (sigma I + G) M = V for M.
  Eigen::MatrixXd apply_inverse(const Eigen::MatrixXd& V) const;

  int r_ = 0;
  int rank_ = 0;
  double lambda_ = 0.0;
  double sigma_ = 1.0;
  bool dense_ = true;
  Eigen::LDLT<Eigen::MatrixXd> dense_solver_;  // factors sigma I + G
  Eigen::MatrixXd Q_;                          // r x k Nystrom factor
  Eigen::LDLT<Eigen::MatrixXd> capacitance_;   // diag(lam)^{-1} + Q^T Q / sigma
};

}  // namespace pwan
