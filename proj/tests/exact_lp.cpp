#include "exact_lp.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

namespace exact_lp {

namespace {

using Row = std::vector<Rational>;
using Mat = std::vector<Row>;

// ----------------------------------------------------------------------------
// Generic exact LP:  min c.x  s.t.  A x <= b,  x >= 0.
// ----------------------------------------------------------------------------

struct InequalityLp {
  Mat A;
  Row b;
  Row c;
};

// Builds the LP shared by both problems: q*r transport variables (row-major
// cell index i*r + j), q row-cap constraints, r column-cap constraints, and
// for the mass kind one extra row encoding  -sum p <= -m.
InequalityLp build_lp(const Eigen::MatrixXd& dist, const Eigen::VectorXd& a,
                      const Eigen::VectorXd& b, double threshold,
                      std::optional<double> mass) {
  const int q = static_cast<int>(dist.rows());
  const int r = static_cast<int>(dist.cols());
  const int n = q * r;
  const int m_rows = q + r + (mass ? 1 : 0);

  InequalityLp lp;
  lp.A.assign(m_rows, Row(n, 0));
  lp.b.assign(m_rows, 0);
  lp.c.assign(n, 0);
  for (int i = 0; i < q; ++i) {
    for (int j = 0; j < r; ++j) {
      lp.c[i * r + j] = Rational(dist(i, j)) - Rational(threshold);
      lp.A[i][i * r + j] = 1;
      lp.A[q + j][i * r + j] = 1;
    }
  }
  for (int i = 0; i < q; ++i) lp.b[i] = Rational(a[i]);
  for (int j = 0; j < r; ++j) lp.b[q + j] = Rational(b[j]);
  if (mass) {
    for (int v = 0; v < n; ++v) lp.A[q + r][v] = -1;
    lp.b[q + r] = -Rational(*mass);
  }
  return lp;
}

// ----------------------------------------------------------------------------
// Route 1: dense two-phase tableau simplex, Bland's rule (no cycling, no
// tolerances). Columns: n structural, m slacks, then artificials for rows
// whose right-hand side started negative.
// ----------------------------------------------------------------------------

class Simplex {
 public:
  explicit Simplex(const InequalityLp& lp)
      : n_(static_cast<int>(lp.c.size())),
        m_(static_cast<int>(lp.A.size())),
        structural_cost_(lp.c) {
    std::vector<int> art_rows;
    Mat rows = lp.A;
    Row rhs = lp.b;
    std::vector<int> slack_sign(m_, 1);
    for (int i = 0; i < m_; ++i) {
      if (rhs[i] < 0) {
        for (auto& v : rows[i]) v = -v;
        rhs[i] = -rhs[i];
        slack_sign[i] = -1;
        art_rows.push_back(i);
      }
    }
    const int n_art = static_cast<int>(art_rows.size());
    total_ = n_ + m_ + n_art;
    real_cols_ = n_ + m_;
    T_.assign(m_, Row(total_ + 1, 0));
    basis_.assign(m_, -1);
    for (int i = 0; i < m_; ++i) {
      for (int j = 0; j < n_; ++j) T_[i][j] = rows[i][j];
      T_[i][n_ + i] = slack_sign[i];
      T_[i][total_] = rhs[i];
      basis_[i] = n_ + i;  // provisional; replaced below for artificial rows
    }
    for (int k = 0; k < n_art; ++k) {
      T_[art_rows[k]][n_ + m_ + k] = 1;
      basis_[art_rows[k]] = n_ + m_ + k;
    }
    has_artificials_ = n_art > 0;
  }

  Rational solve() {
    if (has_artificials_) {
      Row phase1(total_, 0);
      for (int j = real_cols_; j < total_; ++j) phase1[j] = 1;
      const Rational infeas = run(phase1, total_);
      if (infeas != 0) {
        throw std::invalid_argument("exact_lp: infeasible instance");
      }
      purge_artificials();
    }
    Row phase2(total_, 0);
    for (int j = 0; j < n_; ++j) phase2[j] = structural_cost_[j];
    return run(phase2, real_cols_);
  }

 private:
  // One simplex run: Bland's entering rule (lowest-index negative reduced
  // cost among columns < col_limit), ratio test with lowest-variable-index
  // tie-break. Returns the objective value of `cost` at the final basis.
  Rational run(const Row& cost, int col_limit) {
    for (;;) {
      int enter = -1;
      for (int j = 0; j < col_limit && enter < 0; ++j) {
        Rational rc = cost[j];
        for (int i = 0; i < m_; ++i) {
          if (cost[basis_[i]] != 0) rc -= cost[basis_[i]] * T_[i][j];
        }
        if (rc < 0) enter = j;
      }
      if (enter < 0) break;
      int leave = -1;
      Rational best = 0;
      for (int i = 0; i < m_; ++i) {
        if (T_[i][enter] <= 0) continue;
        const Rational ratio = T_[i][total_] / T_[i][enter];
        if (leave < 0 || ratio < best ||
            (ratio == best && basis_[i] < basis_[leave])) {
          leave = i;
          best = ratio;
        }
      }
      if (leave < 0) {
        throw std::runtime_error("exact_lp: unbounded LP");
      }
      pivot(leave, enter);
    }
    Rational value = 0;
    for (int i = 0; i < m_; ++i) {
      if (cost[basis_[i]] != 0) value += cost[basis_[i]] * T_[i][total_];
    }
    return value;
  }

  void pivot(int row, int col) {
    const Rational p = T_[row][col];
    for (auto& v : T_[row]) v /= p;
    for (int i = 0; i < m_; ++i) {
      if (i == row || T_[i][col] == 0) continue;
      const Rational f = T_[i][col];
      for (int j = 0; j <= total_; ++j) T_[i][j] -= f * T_[row][j];
    }
    basis_[row] = col;
  }

  // After phase 1 an artificial may linger in the basis at level zero; pivot
  // it out on any real column (the zero level keeps feasibility), or drop the
  // row as redundant when none exists. Phase 2 then never prices artificials,
  // so no artificial can re-enter or grow.
  void purge_artificials() {
    for (int i = 0; i < m_; ++i) {
      if (basis_[i] < real_cols_) continue;
      int col = -1;
      for (int j = 0; j < real_cols_ && col < 0; ++j) {
        if (T_[i][j] != 0) col = j;
      }
      if (col >= 0) {
        pivot(i, col);
      } else {
        T_.erase(T_.begin() + i);
        basis_.erase(basis_.begin() + i);
        --m_;
        --i;
      }
    }
  }

  int n_ = 0;          // structural variables
  int m_ = 0;          // constraint rows
  int total_ = 0;      // structural + slack + artificial columns
  int real_cols_ = 0;  // structural + slack
  bool has_artificials_ = false;
  Row structural_cost_;
  Mat T_;  // m_ x (total_ + 1); last column is the right-hand side
  std::vector<int> basis_;
};

// ----------------------------------------------------------------------------
// Route 2: exhaustive vertex enumeration. Every vertex of
// {x : A x <= b, x >= 0} solves A_{T,S} x_S = b_T for some equally sized
// choice of nonzero variables S and tight rows T with a nonsingular minor, so
// scanning all such square systems and keeping the feasible ones visits every
// vertex (degenerate vertices several times, which is harmless).
// ----------------------------------------------------------------------------

// Exact solve of a k x k system; returns nullopt when singular.
std::optional<Row> solve_square(Mat M, Row rhs) {
  const int k = static_cast<int>(rhs.size());
  for (int col = 0; col < k; ++col) {
    int p = -1;
    for (int i = col; i < k && p < 0; ++i) {
      if (M[i][col] != 0) p = i;
    }
    if (p < 0) return std::nullopt;
    std::swap(M[p], M[col]);
    std::swap(rhs[p], rhs[col]);
    for (int i = 0; i < k; ++i) {
      if (i == col || M[i][col] == 0) continue;
      const Rational f = M[i][col] / M[col][col];
      for (int j = col; j < k; ++j) M[i][j] -= f * M[col][j];
      rhs[i] -= f * rhs[col];
    }
  }
  Row x(k);
  for (int i = 0; i < k; ++i) x[i] = rhs[i] / M[i][i];
  return x;
}

// All k-subsets of {0..n-1}, lexicographic.
void for_each_subset(int n, int k,
                     const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i;
  if (k == 0) {
    fn(idx);
    return;
  }
  for (;;) {
    fn(idx);
    int pos = k - 1;
    while (pos >= 0 && idx[pos] == n - k + pos) --pos;
    if (pos < 0) break;
    ++idx[pos];
    for (int i = pos + 1; i < k; ++i) idx[i] = idx[i - 1] + 1;
  }
}

Rational enumerate_lp(const InequalityLp& lp) {
  const int n = static_cast<int>(lp.c.size());
  const int m = static_cast<int>(lp.A.size());
  bool found = false;
  Rational best = 0;

  const auto consider = [&](const Row& x) {
    for (int i = 0; i < m; ++i) {
      Rational lhs = 0;
      for (int v = 0; v < n; ++v) {
        if (x[v] != 0) lhs += lp.A[i][v] * x[v];
      }
      if (lhs > lp.b[i]) return;
    }
    Rational obj = 0;
    for (int v = 0; v < n; ++v) {
      if (x[v] != 0) obj += lp.c[v] * x[v];
    }
    if (!found || obj < best) {
      best = obj;
      found = true;
    }
  };

  const int k_max = std::min(n, m);
  Row x(n);
  for (int k = 0; k <= k_max; ++k) {
    for_each_subset(n, k, [&](const std::vector<int>& vars) {
      for_each_subset(m, k, [&](const std::vector<int>& rows) {
        Mat M(k, Row(k));
        Row rhs(k);
        for (int i = 0; i < k; ++i) {
          for (int j = 0; j < k; ++j) M[i][j] = lp.A[rows[i]][vars[j]];
          rhs[i] = lp.b[rows[i]];
        }
        const auto sol = solve_square(std::move(M), std::move(rhs));
        if (!sol) return;
        for (const auto& v : *sol) {
          if (v < 0) return;
        }
        std::fill(x.begin(), x.end(), Rational(0));
        for (int j = 0; j < k; ++j) x[vars[j]] = (*sol)[j];
        consider(x);
      });
    });
  }
  if (!found) throw std::invalid_argument("exact_lp: infeasible instance");
  return best;
}

}  // namespace

double to_double(const Rational& q) { return static_cast<double>(q); }

Rational simplex_partial_mass(const Eigen::MatrixXd& dist,
                              const Eigen::VectorXd& a,
                              const Eigen::VectorXd& b, double m) {
  return Simplex(build_lp(dist, a, b, 0.0, m)).solve();
}

Rational simplex_distance_threshold(const Eigen::MatrixXd& dist,
                                    const Eigen::VectorXd& a,
                                    const Eigen::VectorXd& b, double h) {
  return Simplex(build_lp(dist, a, b, h, std::nullopt)).solve();
}

Rational enumerate_partial_mass(const Eigen::MatrixXd& dist,
                                const Eigen::VectorXd& a,
                                const Eigen::VectorXd& b, double m) {
  return enumerate_lp(build_lp(dist, a, b, 0.0, m));
}

Rational enumerate_distance_threshold(const Eigen::MatrixXd& dist,
                                      const Eigen::VectorXd& a,
                                      const Eigen::VectorXd& b, double h) {
  return enumerate_lp(build_lp(dist, a, b, h, std::nullopt));
}

}  // namespace exact_lp
