#include "pwan/measure.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace pwan {

namespace {

void validate(const Eigen::MatrixXd& points, const Eigen::VectorXd& weights,
              bool allow_zero_total) {
  if (points.rows() != weights.size()) {
    throw std::invalid_argument("measure: point/weight count mismatch");
  }
  if (points.rows() == 0 && !allow_zero_total) {
    throw std::invalid_argument("measure: empty point set");
  }
  if (!points.allFinite()) {
    throw std::invalid_argument("measure: non-finite coordinate");
  }
  if (!weights.allFinite() || (weights.array() < 0.0).any()) {
    throw std::invalid_argument("measure: weights must be finite and >= 0");
  }
  if (!allow_zero_total && weights.sum() <= 0.0) {
    throw std::invalid_argument("measure: total mass must be positive");
  }
}

}  // namespace

DiscreteMeasure::DiscreteMeasure(Eigen::MatrixXd points,
                                 Eigen::VectorXd weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  validate(points_, weights_, /*allow_zero_total=*/false);
  total_mass_ = weights_.sum();
}

DiscreteMeasure DiscreteMeasure::uniform(Eigen::MatrixXd points) {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(points.rows());
  return DiscreteMeasure(std::move(points), std::move(w));
}

DiscreteMeasure DiscreteMeasure::residual(Eigen::MatrixXd points,
                                          Eigen::VectorXd weights) {
  validate(points, weights, /*allow_zero_total=*/true);
  DiscreteMeasure m;
  m.points_ = std::move(points);
  m.weights_ = std::move(weights);
  m.total_mass_ = m.weights_.sum();
  return m;
}

DiscreteMeasure DiscreteMeasure::empirical_batch(int n, Rng& rng) const {
  if (n <= 0) {
    throw std::invalid_argument("empirical_batch: n must be positive");
  }
  // Inverse-CDF sampling over the cumulative weights (deterministic given the
  // rng stream; avoids std::discrete_distribution's unspecified algorithm).
  std::vector<double> cum(static_cast<size_t>(size()));
  double acc = 0.0;
  for (int i = 0; i < size(); ++i) {
    acc += weights_[i];
    cum[static_cast<size_t>(i)] = acc;
  }
  Eigen::MatrixXd pts(n, dim());
  for (int k = 0; k < n; ++k) {
    const double u = rng.uniform() * acc;
    const auto it = std::upper_bound(cum.begin(), cum.end(), u);
    int idx = static_cast<int>(it - cum.begin());
    if (idx >= size()) idx = size() - 1;
    pts.row(k) = points_.row(idx);
  }
  Eigen::VectorXd w =
      Eigen::VectorXd::Constant(n, total_mass_ / static_cast<double>(n));
  return DiscreteMeasure(std::move(pts), std::move(w));
}

Eigen::MatrixXd cost_matrix(const DiscreteMeasure& a,
                            const DiscreteMeasure& b) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("cost_matrix: dimension mismatch");
  }
  const int q = a.size();
  const int r = b.size();
  Eigen::MatrixXd c(q, r);
  for (int j = 0; j < r; ++j) {
    c.col(j) =
        (a.points().rowwise() - b.points().row(j)).rowwise().norm();
  }
  return c;
}

double diameter(const Eigen::MatrixXd& points) {
  const int n = static_cast<int>(points.rows());
  double best = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      best = std::max(best, (points.row(i) - points.row(j)).norm());
    }
  }
  return best;
}

double joint_diameter(const DiscreteMeasure& a, const DiscreteMeasure& b) {
  Eigen::MatrixXd all(a.size() + b.size(), a.dim());
  all.topRows(a.size()) = a.points();
  all.bottomRows(b.size()) = b.points();
  return diameter(all);
}

DiscreteMeasure load_points(const std::string& path, int dim_hint) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_points: cannot open " + path);
  }
  int dim_from_header = -1;
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      // Recognize an optional "# dim: D" header comment.
      std::istringstream cs(line.substr(hash + 1));
      std::string word;
      if (cs >> word && (word == "dim:" || word == "dim")) {
        std::string rest;
        cs >> rest;
        if (rest == ":") cs >> rest;
        try {
          dim_from_header = std::stoi(rest);
        } catch (...) {
        }
      }
      line.erase(hash);
    }
    std::istringstream ls(line);
    std::vector<double> vals;
    double v = 0.0;
    while (ls >> v) vals.push_back(v);
    if (!ls.eof()) {
      throw std::runtime_error("load_points: bad token at " + path + ":" +
                               std::to_string(line_no));
    }
    if (!vals.empty()) rows.push_back(std::move(vals));
  }
  if (rows.empty()) {
    throw std::runtime_error("load_points: no data rows in " + path);
  }
  const int cols = static_cast<int>(rows.front().size());
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != cols) {
      throw std::runtime_error("load_points: ragged rows in " + path);
    }
  }
  int dim = cols;  // default: every column is a coordinate, weight 1
  const int pinned = dim_from_header > 0 ? dim_from_header : dim_hint;
  if (pinned > 0) {
    if (cols == pinned + 1) {
      dim = pinned;  // final column is the weight
    } else if (cols == pinned) {
      dim = pinned;
    } else {
      throw std::runtime_error("load_points: " + path + " has " +
                               std::to_string(cols) +
                               " columns, expected dim " +
                               std::to_string(pinned) + " (+1 for weights)");
    }
  }
  const bool has_weights = cols == dim + 1;
  const int n = static_cast<int>(rows.size());
  Eigen::MatrixXd pts(n, dim);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) {
      pts(i, d) = rows[static_cast<size_t>(i)][static_cast<size_t>(d)];
    }
    if (has_weights) {
      w[i] = rows[static_cast<size_t>(i)][static_cast<size_t>(dim)];
    }
  }
  return DiscreteMeasure(std::move(pts), std::move(w));
}

void save_points(const std::string& path, const DiscreteMeasure& m,
                 bool write_weights) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("save_points: cannot open " + path);
  }
  out << "# dim: " << m.dim() << "\n";
  char buf[40];
  for (int i = 0; i < m.size(); ++i) {
    for (int d = 0; d < m.dim(); ++d) {
      std::snprintf(buf, sizeof(buf), "%.17g", m.points()(i, d));
      out << (d ? " " : "") << buf;
    }
    if (write_weights) {
      std::snprintf(buf, sizeof(buf), "%.17g", m.weights()[i]);
      out << ' ' << buf;
    }
    out << '\n';
  }
  if (!out) {
    throw std::runtime_error("save_points: write failed for " + path);
  }
}

}  // namespace pwan
