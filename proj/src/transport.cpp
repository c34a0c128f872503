#include "pwan/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace pwan {

namespace {

// ----------------------------------------------------------------------------
// Balanced transportation problem: min sum c_ij x_ij subject to fixed row sums
// (supplies) and column sums (demands), with sum(a) == sum(b). Solved with the
// classical spanning-tree (MODI) simplex: greedy least-cost initial basic
// solution, Dantzig pricing with deterministic tie-breaks, and a Bland's-rule
// fallback after a pivot budget so degenerate instances cannot cycle.
// Both partial-matching problems reduce to this form with one dummy row and
// one dummy column absorbing unmatched mass.
// ----------------------------------------------------------------------------

struct BalancedSolution {
  Eigen::MatrixXd flow;
  double primal = 0.0;
  double dual = 0.0;
};

class TransportSimplex {
 public:
  TransportSimplex(const Eigen::MatrixXd& cost, Eigen::VectorXd supply,
                   Eigen::VectorXd demand)
      : c_(cost),
        a_(std::move(supply)),
        b_(std::move(demand)),
        M_(static_cast<int>(cost.rows())),
        N_(static_cast<int>(cost.cols())) {
    const double scale = std::max(1.0, c_.cwiseAbs().maxCoeff());
    tol_ = 1e-11 * scale;
  }

  BalancedSolution solve() {
    build_initial_basis();
    const std::int64_t nodes = M_ + N_;
    const std::int64_t dantzig_budget = 80 * nodes + 5000;
    const std::int64_t hard_cap = 500000 * (nodes / 100 + 1);
    std::int64_t pivots = 0;
    bool bland = false;
    while (true) {
      compute_duals();
      const int entering = bland ? price_bland() : price_dantzig();
      if (entering < 0) break;
      pivot(entering);
      ++pivots;
      if (!bland && pivots > dantzig_budget) bland = true;
      if (pivots > hard_cap) {
        throw std::runtime_error("transport: simplex failed to converge");
      }
    }
    return extract();
  }

 private:
  struct BasisArc {
    int cell = -1;  // i * N + j
    double flow = 0.0;
  };

  int row_of(int cell) const { return cell / N_; }
  int col_of(int cell) const { return cell % N_; }

  void attach(int slot) {
    const int cell = basis_[slot].cell;
    adj_[row_of(cell)].push_back(slot);
    adj_[M_ + col_of(cell)].push_back(slot);
  }

  void detach(int slot) {
    const int cell = basis_[slot].cell;
    for (int node : {row_of(cell), M_ + col_of(cell)}) {
      auto& lst = adj_[node];
      lst.erase(std::find(lst.begin(), lst.end(), slot));
    }
  }

  // Greedy least-cost allocation (a basic feasible solution: every allocation
  // exhausts a row or a column, so the chosen cells form a forest), completed
  // to a spanning tree with zero-flow arcs.
  void build_initial_basis() {
    std::vector<int> order(static_cast<size_t>(M_) * N_);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
      const double cx = c_(row_of(x), col_of(x));
      const double cy = c_(row_of(y), col_of(y));
      return cx < cy || (cx == cy && x < y);
    });

    Eigen::VectorXd rem_a = a_;
    Eigen::VectorXd rem_b = b_;
    std::vector<int> parent(static_cast<size_t>(M_ + N_));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
      while (parent[static_cast<size_t>(x)] != x) {
        parent[static_cast<size_t>(x)] =
            parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
        x = parent[static_cast<size_t>(x)];
      }
      return x;
    };

    basis_.clear();
    double remaining = rem_a.sum();
    for (int cell : order) {
      if (remaining <= 0.0) break;
      const int i = row_of(cell);
      const int j = col_of(cell);
      if (rem_a[i] <= 0.0 || rem_b[j] <= 0.0) continue;
      const double f = std::min(rem_a[i], rem_b[j]);
      rem_a[i] -= f;
      rem_b[j] -= f;
      remaining -= f;
      basis_.push_back({cell, f});
      parent[static_cast<size_t>(find(i))] = find(M_ + j);
    }
    // Connect remaining components with zero-flow arcs (cheapest first).
    for (int cell : order) {
      if (static_cast<int>(basis_.size()) == M_ + N_ - 1) break;
      const int ri = find(row_of(cell));
      const int rj = find(M_ + col_of(cell));
      if (ri == rj) continue;
      parent[static_cast<size_t>(ri)] = rj;
      basis_.push_back({cell, 0.0});
    }
    if (static_cast<int>(basis_.size()) != M_ + N_ - 1) {
      throw std::runtime_error("transport: failed to build initial basis");
    }
    adj_.assign(static_cast<size_t>(M_ + N_), {});
    for (int s = 0; s < static_cast<int>(basis_.size()); ++s) attach(s);
    u_.resize(M_);
    v_.resize(N_);
    in_basis_.assign(static_cast<size_t>(M_) * N_, 0);
    for (const auto& arc : basis_) in_basis_[static_cast<size_t>(arc.cell)] = 1;
  }

  void compute_duals() {
    std::vector<char> seen(static_cast<size_t>(M_ + N_), 0);
    std::deque<int> queue;
    u_[0] = 0.0;
    seen[0] = 1;
    queue.push_back(0);
    while (!queue.empty()) {
      const int node = queue.front();
      queue.pop_front();
      for (int slot : adj_[static_cast<size_t>(node)]) {
        const int cell = basis_[static_cast<size_t>(slot)].cell;
        const int i = row_of(cell);
        const int jn = M_ + col_of(cell);
        const int other = (node == i) ? jn : i;
        if (seen[static_cast<size_t>(other)]) continue;
        seen[static_cast<size_t>(other)] = 1;
        const double cost = c_(i, col_of(cell));
        if (other == jn) {
          v_[col_of(cell)] = cost - u_[i];
        } else {
          u_[i] = cost - v_[col_of(cell)];
        }
        queue.push_back(other);
      }
    }
  }

  int price_dantzig() const {
    double best = -tol_;
    int best_cell = -1;
    for (int j = 0; j < N_; ++j) {
      for (int i = 0; i < M_; ++i) {
        const int cell = i * N_ + j;
        if (in_basis_[static_cast<size_t>(cell)]) continue;
        const double rc = c_(i, j) - u_[i] - v_[j];
        if (rc < best || (rc == best && best_cell >= 0 && cell < best_cell)) {
          best = rc;
          best_cell = cell;
        }
      }
    }
    return best_cell;
  }

  int price_bland() const {
    for (int cell = 0; cell < M_ * N_; ++cell) {
      if (in_basis_[static_cast<size_t>(cell)]) continue;
      if (c_(row_of(cell), col_of(cell)) - u_[row_of(cell)] - v_[col_of(cell)] <
          -tol_) {
        return cell;
      }
    }
    return -1;
  }

  // Tree path from the entering cell's row node to its column node; the cycle
  // alternates +delta (even path positions and the entering arc) / -delta.
  void pivot(int entering) {
    const int src = row_of(entering);
    const int dst = M_ + col_of(entering);
    std::vector<int> parent_arc(static_cast<size_t>(M_ + N_), -1);
    std::vector<int> parent_node(static_cast<size_t>(M_ + N_), -1);
    std::vector<char> seen(static_cast<size_t>(M_ + N_), 0);
    std::deque<int> queue;
    seen[static_cast<size_t>(src)] = 1;
    queue.push_back(src);
    while (!queue.empty() && !seen[static_cast<size_t>(dst)]) {
      const int node = queue.front();
      queue.pop_front();
      for (int slot : adj_[static_cast<size_t>(node)]) {
        const int cell = basis_[static_cast<size_t>(slot)].cell;
        const int i = row_of(cell);
        const int jn = M_ + col_of(cell);
        const int other = (node == i) ? jn : i;
        if (seen[static_cast<size_t>(other)]) continue;
        seen[static_cast<size_t>(other)] = 1;
        parent_arc[static_cast<size_t>(other)] = slot;
        parent_node[static_cast<size_t>(other)] = node;
        queue.push_back(other);
      }
    }
    if (!seen[static_cast<size_t>(dst)]) {
      throw std::runtime_error("transport: basis lost connectivity");
    }
    std::vector<int> path;  // arc slots from src to dst
    for (int node = dst; node != src;
         node = parent_node[static_cast<size_t>(node)]) {
      path.push_back(parent_arc[static_cast<size_t>(node)]);
    }
    std::reverse(path.begin(), path.end());

    double delta = std::numeric_limits<double>::infinity();
    int leaving_pos = -1;
    for (int t = 0; t < static_cast<int>(path.size()); t += 2) {
      const auto& arc = basis_[static_cast<size_t>(path[static_cast<size_t>(t)])];
      if (arc.flow < delta ||
          (arc.flow == delta && leaving_pos >= 0 &&
           arc.cell < basis_[static_cast<size_t>(
                                 path[static_cast<size_t>(leaving_pos)])]
                           .cell)) {
        delta = arc.flow;
        leaving_pos = t;
      }
    }
    for (int t = 0; t < static_cast<int>(path.size()); ++t) {
      auto& arc = basis_[static_cast<size_t>(path[static_cast<size_t>(t)])];
      arc.flow += (t % 2 == 0) ? -delta : delta;
      if (arc.flow < 0.0) arc.flow = 0.0;
    }
    const int leaving_slot = path[static_cast<size_t>(leaving_pos)];
    in_basis_[static_cast<size_t>(basis_[static_cast<size_t>(leaving_slot)]
                                      .cell)] = 0;
    detach(leaving_slot);
    basis_[static_cast<size_t>(leaving_slot)] = {entering, delta};
    in_basis_[static_cast<size_t>(entering)] = 1;
    attach(leaving_slot);
  }

  BalancedSolution extract() const {
    BalancedSolution out;
    out.flow = Eigen::MatrixXd::Zero(M_, N_);
    for (const auto& arc : basis_) {
      out.flow(row_of(arc.cell), col_of(arc.cell)) = arc.flow;
    }
    out.primal = (out.flow.array() * c_.array()).sum();
    out.dual = a_.dot(u_) + b_.dot(v_);
    return out;
  }

  const Eigen::MatrixXd& c_;
  Eigen::VectorXd a_, b_;
  const int M_, N_;
  double tol_ = 0.0;
  std::vector<BasisArc> basis_;
  std::vector<std::vector<int>> adj_;
  std::vector<char> in_basis_;
  Eigen::VectorXd u_, v_;
};

// Augment the real cost matrix with a zero-cost dummy row and column.
Eigen::MatrixXd with_dummies(const Eigen::MatrixXd& real) {
  Eigen::MatrixXd c =
      Eigen::MatrixXd::Zero(real.rows() + 1, real.cols() + 1);
  c.topLeftCorner(real.rows(), real.cols()) = real;
  return c;
}

TransportPlan plan_from_flow(const Eigen::MatrixXd& flow, int q, int r,
                             const Eigen::MatrixXd& objective_cost,
                             double primal, double dual, double mass_scale) {
  TransportPlan plan;
  const double dust = 1e-14 * std::max(1.0, mass_scale);
  double objective = 0.0;
  double transported = 0.0;
  for (int i = 0; i < q; ++i) {
    for (int j = 0; j < r; ++j) {
      const double f = flow(i, j);
      if (f > dust) {
        plan.entries.push_back({i, j, f});
        transported += f;
        objective += f * objective_cost(i, j);
      }
    }
  }
  plan.objective = objective;
  plan.transported = transported;
  plan.duality_gap = std::abs(primal - dual);
  return plan;
}

}  // namespace

double clamp_mass_target(const DiscreteMeasure& alpha,
                         const DiscreteMeasure& beta, double m) {
  const double cap = std::min(alpha.total_mass(), beta.total_mass());
  const double slack = 1e-9 * std::max({1.0, alpha.total_mass(),
                                        beta.total_mass()});
  if (!std::isfinite(m) || m < -slack || m > cap + slack) {
    throw std::invalid_argument(
        "transport: mass target must lie in [0, min(total masses)]");
  }
  return std::clamp(m, 0.0, cap);
}

Eigen::VectorXd TransportPlan::row_mass(int rows) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(rows);
  for (const auto& e : entries) out[e.i] += e.mass;
  return out;
}

Eigen::VectorXd TransportPlan::col_mass(int cols) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(cols);
  for (const auto& e : entries) out[e.j] += e.mass;
  return out;
}

TransportPlan solve_partial_mass(const DiscreteMeasure& alpha,
                                 const DiscreteMeasure& beta, double m) {
  m = clamp_mass_target(alpha, beta, m);
  const int q = alpha.size();
  const int r = beta.size();
  const Eigen::MatrixXd d = cost_matrix(alpha, beta);
  const Eigen::MatrixXd c = with_dummies(d);

  Eigen::VectorXd supply(q + 1);
  supply.head(q) = alpha.weights();
  supply[q] = beta.total_mass() - m;  // fills untransported beta capacity
  Eigen::VectorXd demand(r + 1);
  demand.head(r) = beta.weights();
  demand[r] = alpha.total_mass() - m;  // absorbs untransported alpha mass

  TransportSimplex solver(c, supply, demand);
  const BalancedSolution sol = solver.solve();
  return plan_from_flow(sol.flow, q, r, d, sol.primal, sol.dual,
                        supply.maxCoeff() + demand.maxCoeff());
}

TransportPlan solve_distance_threshold(const DiscreteMeasure& alpha,
                                       const DiscreteMeasure& beta, double h) {
  if (!std::isfinite(h) || h < 0.0) {
    throw std::invalid_argument("transport: threshold must be finite and >= 0");
  }
  const int q = alpha.size();
  const int r = beta.size();
  const Eigen::MatrixXd d = cost_matrix(alpha, beta);
  const Eigen::MatrixXd rewarded = d.array() - h;
  const Eigen::MatrixXd c = with_dummies(rewarded);

  Eigen::VectorXd supply(q + 1);
  supply.head(q) = alpha.weights();
  supply[q] = beta.total_mass();
  Eigen::VectorXd demand(r + 1);
  demand.head(r) = beta.weights();
  demand[r] = alpha.total_mass();

  TransportSimplex solver(c, supply, demand);
  const BalancedSolution sol = solver.solve();
  return plan_from_flow(sol.flow, q, r, rewarded, sol.primal, sol.dual,
                        supply.maxCoeff() + demand.maxCoeff());
}

double wasserstein1(const DiscreteMeasure& alpha, const DiscreteMeasure& beta) {
  const double ma = alpha.total_mass();
  const double mb = beta.total_mass();
  if (std::abs(ma - mb) > 1e-9 * std::max({1.0, ma, mb})) {
    throw std::invalid_argument(
        "wasserstein1: measures must have equal total mass");
  }
  return solve_partial_mass(alpha, beta, std::min(ma, mb)).objective;
}

DualityCertificate duality_certificate(const DiscreteMeasure& alpha,
                                       const DiscreteMeasure& beta, double m,
                                       const std::vector<double>& h_grid) {
  if (h_grid.empty()) {
    throw std::invalid_argument("duality_certificate: empty threshold grid");
  }
  m = clamp_mass_target(alpha, beta, m);
  DualityCertificate cert;
  cert.best_value = -std::numeric_limits<double>::infinity();
  cert.curve.reserve(h_grid.size());
  for (const double h : h_grid) {
    const TransportPlan plan = solve_distance_threshold(alpha, beta, h);
    const double value = plan.objective + m * h;
    cert.curve.emplace_back(h, value);
    if (value > cert.best_value) {
      cert.best_value = value;
      cert.best_h = h;
    }
  }
  return cert;
}

std::vector<double> duality_h_grid(const DiscreteMeasure& alpha,
                                   const DiscreteMeasure& beta, double m,
                                   int total_points) {
  if (total_points < 12) {
    throw std::invalid_argument("duality_h_grid: need at least 12 points");
  }
  m = clamp_mass_target(alpha, beta, m);
  const double diam = joint_diameter(alpha, beta);
  if (diam <= 0.0) {
    return std::vector<double>(static_cast<size_t>(total_points), 0.0);
  }
  const auto value_at = [&](double h) {
    return solve_distance_threshold(alpha, beta, h).objective + m * h;
  };
  const auto linspace = [](double lo, double hi, int n) {
    std::vector<double> out(static_cast<size_t>(n));
    for (int k = 0; k < n; ++k) {
      out[static_cast<size_t>(k)] =
          lo + (hi - lo) * static_cast<double>(k) / (n - 1);
    }
    return out;
  };

  // Three refinement stages. The grid objective is concave in h, so the
  // argmax of a uniform stage lies within one spacing of the true maximizer;
  // each stage narrows the bracket before the final grid is assembled.
  const int n1 = (total_points * 2) / 5;
  const int n2 = (total_points - n1) / 2;
  const int n3 = total_points - n1 - n2;
  std::vector<double> grid;
  grid.reserve(static_cast<size_t>(total_points));
  double lo = 0.0;
  double hi = diam;
  const int sizes[3] = {n1, n2, n3};
  for (int stage = 0; stage < 3; ++stage) {
    const std::vector<double> pts = linspace(lo, hi, sizes[stage]);
    double best_val = -std::numeric_limits<double>::infinity();
    double best_h = pts.front();
    for (const double h : pts) {
      grid.push_back(h);
      const double val = value_at(h);
      if (val > best_val) {
        best_val = val;
        best_h = h;
      }
    }
    const double spacing = (hi - lo) / (sizes[stage] - 1);
    lo = std::max(0.0, best_h - spacing);
    hi = std::min(diam, best_h + spacing);
    if (hi <= lo) hi = std::min(diam, lo + spacing);
  }
  std::sort(grid.begin(), grid.end());
  return grid;
}

std::pair<DiscreteMeasure, DiscreteMeasure> omitted_mass(
    const TransportPlan& plan, const DiscreteMeasure& alpha,
    const DiscreteMeasure& beta) {
  Eigen::VectorXd res_a = alpha.weights() - plan.row_mass(alpha.size());
  Eigen::VectorXd res_b = beta.weights() - plan.col_mass(beta.size());
  const double slack =
      1e-9 * std::max({1.0, alpha.total_mass(), beta.total_mass()});
  if (res_a.minCoeff() < -slack || res_b.minCoeff() < -slack) {
    throw std::invalid_argument(
        "omitted_mass: plan is infeasible for the given marginals");
  }
  res_a = res_a.cwiseMax(0.0);
  res_b = res_b.cwiseMax(0.0);
  return {DiscreteMeasure::residual(alpha.points(), std::move(res_a)),
          DiscreteMeasure::residual(beta.points(), std::move(res_b))};
}

}  // namespace pwan
