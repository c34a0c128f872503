#include "pwan/discrepancy.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "pwan/measure.hpp"
#include "pwan/rng.hpp"
#include "pwan/transport.hpp"

namespace pwan {

namespace {

void check_sets(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  if (X.rows() == 0 || Y.rows() == 0) {
    throw std::invalid_argument("discrepancy: point sets must be nonempty");
  }
  if (X.cols() != Y.cols()) {
    throw std::invalid_argument("discrepancy: point sets differ in dimension");
  }
}

// log of the isotropic normal density for a squared distance.
double log_density_sq(double sq_dist, double variance, int dim) {
  return -0.5 * (dim * std::log(2.0 * std::numbers::pi * variance) +
                 sq_dist / variance);
}

double density_sq(double sq_dist, double variance, int dim) {
  return std::exp(log_density_sq(sq_dist, variance, dim));
}

}  // namespace

double gaussian_density(const Eigen::RowVectorXd& point,
                        const Eigen::RowVectorXd& mean, double variance) {
  if (variance <= 0.0) {
    throw std::invalid_argument("gaussian_density: variance must be positive");
  }
  if (point.size() != mean.size()) {
    throw std::invalid_argument("gaussian_density: dimension mismatch");
  }
  return density_sq((point - mean).squaredNorm(), variance,
                    static_cast<int>(point.size()));
}

double l2_distance(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                   double sigma) {
  check_sets(X, Y);
  if (sigma <= 0.0) {
    throw std::invalid_argument("l2_distance: sigma must be positive");
  }
  const int dim = static_cast<int>(X.cols());
  const double var = 2.0 * sigma;  // KDE overlap integrals add the variances
  const auto pair_sum = [&](const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      for (Eigen::Index j = 0; j < B.rows(); ++j) {
        total += density_sq((A.row(i) - B.row(j)).squaredNorm(), var, dim);
      }
    }
    return total;
  };
  const double nx = static_cast<double>(X.rows());
  const double ny = static_cast<double>(Y.rows());
  return pair_sum(X, X) / (nx * nx) + pair_sum(Y, Y) / (ny * ny) -
         2.0 / (nx * ny) * pair_sum(X, Y);
}

double kl_divergence(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                     double sigma, double omega) {
  check_sets(X, Y);
  if (sigma <= 0.0) {
    throw std::invalid_argument("kl_divergence: sigma must be positive");
  }
  if (omega < 0.0 || omega >= 1.0) {
    throw std::invalid_argument("kl_divergence: omega must lie in [0, 1)");
  }
  const int dim = static_cast<int>(X.cols());
  const double q = static_cast<double>(Y.rows());
  const double r = static_cast<double>(X.rows());
  double total = 0.0;
  for (Eigen::Index j = 0; j < Y.rows(); ++j) {
    double mixture = omega / q;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      mixture += (1.0 - omega) / r *
                 density_sq((Y.row(j) - X.row(i)).squaredNorm(), sigma, dim);
    }
    total += std::log(mixture);
  }
  return -total / q;
}

namespace {

DiscreteMeasure column_measure(const Eigen::VectorXd& values) {
  Eigen::MatrixXd pts(values.size(), 1);
  pts.col(0) = values;
  return DiscreteMeasure::uniform(std::move(pts));
}

}  // namespace

SweepTable fig5_sweep(const Fig5Config& cfg) {
  if (cfg.outliers < 0) {
    throw std::invalid_argument("fig5_sweep: outlier count must be >= 0");
  }
  if (!(cfg.t_step > 0.0) || cfg.t_max < cfg.t_min) {
    throw std::invalid_argument("fig5_sweep: invalid t grid");
  }
  constexpr int kDataPoints = 10;
  Eigen::VectorXd data =
      Eigen::VectorXd::LinSpaced(kDataPoints, 0.0, 3.0);

  Rng rng(cfg.seed);
  Eigen::VectorXd x_vals(kDataPoints + cfg.outliers);
  x_vals.head(kDataPoints) = data;
  for (int i = 0; i < cfg.outliers; ++i) {
    x_vals(kDataPoints + i) = rng.uniform(7.8, 8.2);
  }
  const DiscreteMeasure X = column_measure(x_vals);
  const Eigen::MatrixXd x_pts = X.points();

  const int steps =
      static_cast<int>(std::floor((cfg.t_max - cfg.t_min) / cfg.t_step + 0.5));
  SweepTable table;
  table.columns = {"t", "kl", "l2", "lm", "ld"};
  table.values.resize(steps + 1, 5);
  for (int k = 0; k <= steps; ++k) {
    const double t = cfg.t_min + cfg.t_step * k;
    const DiscreteMeasure Y = column_measure(data.array() + t);
    table.values(k, 0) = t;
    table.values(k, 1) =
        kl_divergence(x_pts, Y.points(), cfg.toy.sigma, cfg.toy.omega);
    table.values(k, 2) = l2_distance(x_pts, Y.points(), cfg.toy.sigma);
    table.values(k, 3) = solve_partial_mass(X, Y, cfg.mass).objective;
    table.values(k, 4) = solve_distance_threshold(X, Y, cfg.threshold).objective;
  }
  return table;
}

SweepTable fig12_sweep(const Fig12Config& cfg) {
  if (!(cfg.step > 0.0) || cfg.hi < cfg.lo) {
    throw std::invalid_argument("fig12_sweep: invalid grid");
  }
  Eigen::VectorXd x_vals(2);
  x_vals << -2.0, 2.0;
  const DiscreteMeasure X = column_measure(x_vals);
  const Eigen::MatrixXd x_pts = X.points();

  const int steps =
      static_cast<int>(std::floor((cfg.hi - cfg.lo) / cfg.step + 0.5));
  SweepTable table;
  table.columns = {"x", "y", "kl", "l2", "w1"};
  table.values.resize((steps + 1) * (steps + 1), 5);
  Eigen::Index row = 0;
  for (int i = 0; i <= steps; ++i) {
    const double x = cfg.lo + cfg.step * i;
    for (int j = 0; j <= steps; ++j) {
      const double y = cfg.lo + cfg.step * j;
      Eigen::VectorXd y_vals(2);
      y_vals << x, y;
      const DiscreteMeasure Y = column_measure(y_vals);
      table.values(row, 0) = x;
      table.values(row, 1) = y;
      table.values(row, 2) =
          kl_divergence(x_pts, Y.points(), cfg.toy.sigma, cfg.toy.omega);
      table.values(row, 3) = l2_distance(x_pts, Y.points(), cfg.toy.sigma);
      table.values(row, 4) = wasserstein1(X, Y);
      ++row;
    }
  }
  return table;
}

}  // namespace pwan
