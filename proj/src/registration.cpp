#include "pwan/registration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "pwan/transport.hpp"

namespace pwan {
namespace {

constexpr int kBruteForceLimit = 2000;
constexpr int kMaxHalvings = 40;

// Exact nearest-neighbor tree over the rows of a point matrix; axis-median
// splits, small leaves swept linearly.
class KdTree {
 public:
  explicit KdTree(const Eigen::MatrixXd& pts) : pts_(pts) {
    order_.resize(static_cast<std::size_t>(pts_.rows()));
    std::iota(order_.begin(), order_.end(), 0);
    if (!order_.empty()) root_ = build(0, static_cast<int>(order_.size()));
  }

  int nearest(const Eigen::RowVectorXd& q, double* dist_out) const {
    int best = -1;
    double best_sq = std::numeric_limits<double>::infinity();
    search(root_, q, best, best_sq);
    if (dist_out) *dist_out = std::sqrt(best_sq);
    return best;
  }

 private:
  struct Node {
    int axis = -1;          // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range in order_
  };

  int build(int begin, int end) {
    Node node;
    if (end - begin <= 8) {
      node.begin = begin;
      node.end = end;
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size()) - 1;
    }
    // Split the widest axis at its median.
    int axis = 0;
    double widest = -1.0;
    for (int a = 0; a < pts_.cols(); ++a) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (int i = begin; i < end; ++i) {
        const double v = pts_(order_[static_cast<std::size_t>(i)], a);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > widest) {
        widest = hi - lo;
        axis = a;
      }
    }
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](int a, int b) {
                       const double va = pts_(a, axis), vb = pts_(b, axis);
                       if (va != vb) return va < vb;
                       return a < b;
                     });
    node.axis = axis;
    node.split = pts_(order_[static_cast<std::size_t>(mid)], axis);
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[static_cast<std::size_t>(self)].left = left;
    nodes_[static_cast<std::size_t>(self)].right = right;
    return self;
  }

  void search(int id, const Eigen::RowVectorXd& q, int& best,
              double& best_sq) const {
    if (id < 0) return;
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int row = order_[static_cast<std::size_t>(i)];
        const double d = (pts_.row(row) - q).squaredNorm();
        if (d < best_sq || (d == best_sq && row < best)) {
          best_sq = d;
          best = row;
        }
      }
      return;
    }
    const double delta = q(node.axis) - node.split;
    const int near = delta <= 0.0 ? node.left : node.right;
    const int far = delta <= 0.0 ? node.right : node.left;
    search(near, q, best, best_sq);
    if (delta * delta <= best_sq) search(far, q, best, best_sq);
  }

  const Eigen::MatrixXd& pts_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

std::vector<int> nearest_brute(const Eigen::MatrixXd& queries,
                               const Eigen::MatrixXd& targets,
                               std::vector<double>* dists) {
  std::vector<int> out(static_cast<std::size_t>(queries.rows()));
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    int best = 0;
    double best_sq = (targets.row(0) - queries.row(i)).squaredNorm();
    for (Eigen::Index j = 1; j < targets.rows(); ++j) {
      const double d = (targets.row(j) - queries.row(i)).squaredNorm();
      if (d < best_sq) {
        best_sq = d;
        best = static_cast<int>(j);
      }
    }
    out[static_cast<std::size_t>(i)] = best;
    if (dists) (*dists)[static_cast<std::size_t>(i)] = std::sqrt(best_sq);
  }
  return out;
}

std::vector<int> nearest_all(const Eigen::MatrixXd& queries,
                             const Eigen::MatrixXd& targets,
                             std::vector<double>* dists) {
  if (targets.rows() == 0) {
    throw std::invalid_argument("registration: empty target set");
  }
  if (queries.cols() != targets.cols()) {
    throw std::invalid_argument("registration: dimension mismatch");
  }
  if (dists) dists->resize(static_cast<std::size_t>(queries.rows()));
  if (targets.rows() < kBruteForceLimit) {
    return nearest_brute(queries, targets, dists);
  }
  KdTree tree(targets);
  std::vector<int> out(static_cast<std::size_t>(queries.rows()));
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    double d = 0.0;
    out[static_cast<std::size_t>(i)] = tree.nearest(queries.row(i), &d);
    if (dists) (*dists)[static_cast<std::size_t>(i)] = d;
  }
  return out;
}

}  // namespace

std::vector<int> nearest_neighbors(const Eigen::MatrixXd& queries,
                                   const Eigen::MatrixXd& targets) {
  return nearest_all(queries, targets, nullptr);
}

double mse(const Eigen::MatrixXd& aligned, const Eigen::MatrixXd& target) {
  if (aligned.rows() != target.rows() || aligned.cols() != target.cols()) {
    throw std::invalid_argument("mse: shape mismatch");
  }
  if (aligned.rows() == 0) {
    throw std::invalid_argument("mse: empty point set");
  }
  return (aligned - target).rowwise().squaredNorm().mean();
}

double mse(const Eigen::MatrixXd& aligned, const Eigen::MatrixXd& target,
           const std::vector<int>& correspondence) {
  if (static_cast<Eigen::Index>(correspondence.size()) != aligned.rows()) {
    throw std::invalid_argument("mse: correspondence length mismatch");
  }
  double acc = 0.0;
  int n = 0;
  for (Eigen::Index i = 0; i < aligned.rows(); ++i) {
    const int j = correspondence[static_cast<std::size_t>(i)];
    if (j == -1) continue;
    if (j < 0 || j >= target.rows()) {
      throw std::invalid_argument("mse: correspondence index out of range");
    }
    acc += (aligned.row(i) - target.row(j)).squaredNorm();
    ++n;
  }
  if (n == 0) {
    throw std::invalid_argument("mse: correspondence selects no pairs");
  }
  return acc / n;
}

double rotation_error_deg(const Eigen::Matrix3d& A, const Eigen::Matrix3d& B) {
  const double c = ((A * B.transpose()).trace() - 1.0) / 2.0;
  return 180.0 / std::numbers::pi * std::acos(std::clamp(c, -1.0, 1.0));
}

DiscreteMeasure voxel_downsample(const DiscreteMeasure& m, double cell) {
  if (!(cell > 0.0) || !std::isfinite(cell)) {
    throw std::invalid_argument("voxel_downsample: cell size must be > 0");
  }
  using Key = std::vector<std::int64_t>;
  std::map<Key, int> slot;  // cell -> output index
  std::vector<Eigen::RowVectorXd> sums;
  std::vector<int> counts;
  Key key(static_cast<std::size_t>(m.dim()));
  for (int i = 0; i < m.size(); ++i) {
    for (int a = 0; a < m.dim(); ++a) {
      key[static_cast<std::size_t>(a)] =
          static_cast<std::int64_t>(std::floor(m.points()(i, a) / cell));
    }
    auto [it, inserted] = slot.try_emplace(key, static_cast<int>(sums.size()));
    if (inserted) {
      sums.push_back(m.points().row(i));
      counts.push_back(1);
    } else {
      sums[static_cast<std::size_t>(it->second)] += m.points().row(i);
      ++counts[static_cast<std::size_t>(it->second)];
    }
  }
  Eigen::MatrixXd pts(static_cast<Eigen::Index>(sums.size()), m.dim());
  for (std::size_t i = 0; i < sums.size(); ++i) {
    pts.row(static_cast<Eigen::Index>(i)) = sums[i] / counts[i];
  }
  return DiscreteMeasure::uniform(std::move(pts));
}

FineTuneOutcome fine_tune(TransformModel& transform,
                          const DiscreteMeasure& reference,
                          const DiscreteMeasure& source, DivergenceKind kind,
                          double mass_or_threshold, const FineTuneConfig& cfg,
                          const CoherenceRegularizer* coherence) {
  if (reference.dim() != source.dim()) {
    throw std::invalid_argument("fine_tune: dimension mismatch");
  }
  if (cfg.max_iterations < 0 || !(cfg.step > 0.0) || !(cfg.tolerance >= 0.0)) {
    throw std::invalid_argument("fine_tune: bad configuration");
  }
  double threshold = 0.0, mass = 0.0;
  if (kind == DivergenceKind::kDistance) {
    if (!(mass_or_threshold >= 0.0) || !std::isfinite(mass_or_threshold)) {
      throw std::invalid_argument("fine_tune: threshold must be >= 0");
    }
    threshold = mass_or_threshold;
  } else {
    mass = clamp_mass_target(source, source, mass_or_threshold);
    if (!(mass > 0.0)) {
      throw std::invalid_argument("fine_tune: mass target must be positive");
    }
  }
  const auto* nonrigid = dynamic_cast<const NonRigidTransform*>(&transform);
  if (coherence && !nonrigid) {
    throw std::invalid_argument(
        "fine_tune: coherence term requires a non-rigid transform");
  }

  FineTuneOutcome out;
  double step = cfg.step;
  const Eigen::MatrixXd& Y = source.points();
  const Eigen::MatrixXd& X = reference.points();
  std::vector<double> dist;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    const Eigen::MatrixXd ty = transform.apply(Y);
    const std::vector<int> nn = nearest_all(ty, X, &dist);

    std::vector<int> selected;
    if (kind == DivergenceKind::kDistance) {
      for (int j = 0; j < source.size(); ++j) {
        if (dist[static_cast<std::size_t>(j)] <= threshold) selected.push_back(j);
      }
    } else {
      std::vector<int> order(static_cast<std::size_t>(source.size()));
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double da = dist[static_cast<std::size_t>(a)];
        const double db = dist[static_cast<std::size_t>(b)];
        if (da != db) return da < db;
        return a < b;
      });
      double acc = 0.0;
      for (int j : order) {
        selected.push_back(j);
        acc += source.weights()(j);
        if (acc >= mass) break;
      }
    }
    if (selected.empty()) {
      out.degenerate = true;
      break;
    }

    const int n_sel = static_cast<int>(selected.size());
    Eigen::MatrixXd Ysel(n_sel, 3), Xnn(n_sel, 3);
    for (int s = 0; s < n_sel; ++s) {
      Ysel.row(s) = Y.row(selected[static_cast<std::size_t>(s)]);
      Xnn.row(s) = X.row(nn[static_cast<std::size_t>(
          selected[static_cast<std::size_t>(s)])]);
    }

    const auto evaluate = [&]() {
      const Eigen::MatrixXd moved = transform.apply(Ysel, selected);
      double value = (moved - Xnn).rowwise().norm().sum();
      if (coherence) value += coherence->energy(nonrigid->displacement());
      return value;
    };
    const double before = evaluate();

    // Subgradient of sum of norms (zero residual pinned to zero direction).
    Eigen::MatrixXd moved = transform.apply(Ysel, selected);
    Eigen::MatrixXd U = moved - Xnn;
    for (int s = 0; s < n_sel; ++s) {
      const double norm = U.row(s).norm();
      if (norm > 0.0) {
        U.row(s) /= norm;
      } else {
        U.row(s).setZero();
      }
    }
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(transform.param_count());
    transform.accumulate_param_gradient(Ysel, U, selected, grad);
    if (coherence) {
      const Eigen::MatrixXd gV = coherence->gradient(nonrigid->displacement());
      Eigen::Map<Eigen::MatrixXd>(grad.data() + nonrigid->displacement_offset(),
                                  gV.rows(), 3) += gV;
    }
    if (grad.norm() == 0.0) {
      out.objective = before;
      out.converged = true;
      break;
    }

    // Step-halving line search; the fixed-selection objective never increases
    // across accepted steps.
    const Eigen::VectorXd saved = transform.params();
    double after = before;
    bool accepted = false;
    double eta = step;
    for (int h = 0; h < kMaxHalvings; ++h) {
      transform.params() = saved - eta * grad;
      after = evaluate();
      if (after <= before) {
        accepted = true;
        step = eta * 2.0;
        break;
      }
      eta /= 2.0;
    }
    if (!accepted) {
      transform.params() = saved;
      out.objective = before;
      out.converged = true;
      break;
    }
    out.iterations = iter + 1;
    out.objective = after;
    if (before - after < cfg.tolerance * std::max(1.0, std::abs(before))) {
      out.converged = true;
      break;
    }
  }
  return out;
}

RegistrationConfig default_registration_config(TransformKind mode) {
  RegistrationConfig cfg;
  cfg.mode = mode;
  cfg.pwan.outer_steps = 2000;
  cfg.pwan.potential_updates = mode == TransformKind::kRigid ? 25 : 20;
  cfg.pwan.batch_size = 0;  // sample all points in the sets each iteration
  cfg.pwan.potential_lr = 1e-4;
  cfg.pwan.theta_lr = 1e-4;
  // Transform gradients read the potential at the data points themselves, so
  // penalising there is enough; skipping interpolates halves the penalty cost.
  cfg.pwan.gp_interpolates = false;
  cfg.pwan.plateau_window = 200;
  cfg.pwan.plateau_tol = 1e-4;
  return cfg;
}

RegistrationResult register_point_sets(const DiscreteMeasure& source,
                                       const DiscreteMeasure& reference,
                                       const RegistrationConfig& cfg,
                                       const Eigen::MatrixXd* gt_moved) {
  if (source.dim() != 3 || reference.dim() != 3) {
    throw std::invalid_argument("register: point sets must be 3-d");
  }
  // Masses are point counts: unit weight per point.
  const DiscreteMeasure ref = DiscreteMeasure::uniform(reference.points());
  const DiscreteMeasure src = DiscreteMeasure::uniform(source.points());

  PwanConfig pwan_cfg = cfg.pwan;
  if (pwan_cfg.kind == DivergenceKind::kMass && !(pwan_cfg.mass > 0.0)) {
    pwan_cfg.mass = std::min(ref.total_mass(), src.total_mass());
  }

  RegistrationResult result;
  if (cfg.mode == TransformKind::kRigid) {
    result.transform = std::make_unique<RigidTransform>();
  } else {
    result.transform = std::make_unique<NonRigidTransform>(src.size());
  }

  std::unique_ptr<CoherenceRegularizer> coherence;
  ThetaRegularizer regularizer;
  if (cfg.mode == TransformKind::kNonRigid && cfg.coherence.lambda > 0.0) {
    coherence =
        std::make_unique<CoherenceRegularizer>(src.points(), cfg.coherence);
    regularizer = [&coherence](const TransformModel& t, Eigen::VectorXd& g) {
      const auto& nr = static_cast<const NonRigidTransform&>(t);
      const Eigen::MatrixXd V = nr.displacement();
      const Eigen::MatrixXd gV = coherence->gradient(V);
      Eigen::Map<Eigen::MatrixXd>(g.data() + nr.displacement_offset(), gV.rows(),
                                  3) += gV;
      return coherence->energy(V);
    };
  }

  PotentialNet net = make_potential(pwan_cfg, ref, src);
  const auto pwan_start = std::chrono::steady_clock::now();
  PwanResult fit = pwan_fit(ref, src, net, *result.transform, pwan_cfg,
                            regularizer);
  result.report.pwan_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    pwan_start)
          .count();
  result.report.trace = std::move(fit.trace);
  result.report.pwan_steps = fit.steps_run;

  if (cfg.fine_tune.max_iterations > 0) {
    const double mass_or_threshold = pwan_cfg.kind == DivergenceKind::kMass
                                         ? pwan_cfg.mass
                                         : net.bound();
    const auto ft_start = std::chrono::steady_clock::now();
    result.report.fine_tune =
        fine_tune(*result.transform, ref, src, pwan_cfg.kind, mass_or_threshold,
                  cfg.fine_tune, coherence.get());
    result.report.fine_tune_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      ft_start)
            .count();
  }

  result.moved = result.transform->apply(src.points());

  // Final full-batch divergence estimate with the post-fine-tune transform.
  const LossBreakdown parts =
      potential_loss(net, ref.points(), ref.weights(), result.moved,
                     src.weights(), pwan_cfg, src.total_mass());
  result.report.divergence =
      pwan_cfg.kind == DivergenceKind::kMass
          ? parts.data + parts.bound_term
          : parts.data - net.bound() * src.total_mass();
  result.report.bound = net.bound();
  result.potential = std::make_unique<PotentialNet>(std::move(net));

  if (gt_moved) {
    result.report.mse = mse(result.moved, *gt_moved);
  }
  return result;
}

}  // namespace pwan
