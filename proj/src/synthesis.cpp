#include "pwan/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "pwan/rng.hpp"
#include "pwan/transforms.hpp"

namespace pwan {
namespace {

Eigen::RowVector3d random_unit(Rng& rng) {
  while (true) {
    Eigen::RowVector3d v(rng.normal(), rng.normal(), rng.normal());
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

Eigen::MatrixXd sample_shape(const SynthesisConfig& cfg, Rng& rng) {
  if (!cfg.shape_file.empty()) {
    const DiscreteMeasure loaded = load_points(cfg.shape_file, 3);
    return loaded.points();
  }
  if (cfg.points < 2) {
    throw std::invalid_argument("synthesize: need at least 2 points");
  }
  Eigen::MatrixXd pts(cfg.points, 3);
  switch (cfg.shape) {
    case ShapeKind::kSphere: {
      for (int i = 0; i < cfg.points; ++i) pts.row(i) = random_unit(rng);
      break;
    }
    case ShapeKind::kSphereSection: {
      // Unit sphere restricted to azimuth in [0, 270] degrees and z > -0.5.
      for (int i = 0; i < cfg.points; ++i) {
        while (true) {
          const Eigen::RowVector3d p = random_unit(rng);
          double az = std::atan2(p(1), p(0));
          if (az < 0.0) az += 2.0 * std::numbers::pi;
          if (az <= 1.5 * std::numbers::pi && p(2) > -0.5) {
            pts.row(i) = p;
            break;
          }
        }
      }
      break;
    }
    case ShapeKind::kHelix: {
      // Two turns of a unit-radius helix spanning z in [-1, 1].
      for (int i = 0; i < cfg.points; ++i) {
        const double u = rng.uniform(0.0, 4.0 * std::numbers::pi);
        pts.row(i) = Eigen::RowVector3d(
            std::cos(u), std::sin(u), u / (2.0 * std::numbers::pi) - 1.0);
      }
      break;
    }
  }
  return pts;
}

Eigen::MatrixXd add_noise(Eigen::MatrixXd pts, double sigma, Rng& rng) {
  if (sigma > 0.0) {
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      for (Eigen::Index j = 0; j < pts.cols(); ++j) {
        pts(i, j) += sigma * rng.normal();
      }
    }
  }
  return pts;
}

}  // namespace

void normalize_cloud(Eigen::MatrixXd& points) {
  if (points.rows() < 2) {
    throw std::invalid_argument("synthesize: need at least 2 points");
  }
  const Eigen::RowVectorXd centroid = points.colwise().mean();
  points.rowwise() -= centroid;
  const double variance = points.rowwise().squaredNorm().mean();
  if (!(variance > 0.0)) {
    throw std::invalid_argument("synthesize: degenerate (coincident) cloud");
  }
  points /= std::sqrt(variance);
}

SyntheticCase synthesize_case(const SynthesisConfig& cfg) {
  if (!(cfg.crop_retain > 0.0) || cfg.crop_retain > 1.0) {
    throw std::invalid_argument("synthesize: crop_retain must lie in (0, 1]");
  }
  if (cfg.outliers < 0 || cfg.noise_sigma < 0.0 || cfg.rbf_centers < 0 ||
      cfg.deform_magnitude < 0.0) {
    throw std::invalid_argument("synthesize: negative corruption parameter");
  }
  Rng rng(cfg.seed);

  Eigen::MatrixXd base = sample_shape(cfg, rng);
  normalize_cloud(base);
  const int n = static_cast<int>(base.rows());
  const double diam = diameter(base);

  // Ground-truth motion.
  const Eigen::RowVector3d axis = random_unit(rng);
  const double half = 0.5 * cfg.rotation_deg * std::numbers::pi / 180.0;
  Eigen::Vector4d q(std::cos(half), std::sin(half) * axis(0),
                    std::sin(half) * axis(1), std::sin(half) * axis(2));
  const Eigen::Matrix3d gt_linear = quaternion_rotation(q);
  const Eigen::RowVector3d gt_translation = cfg.translation * random_unit(rng);

  // Smooth displacement field (evaluated on pre-motion coordinates).
  Eigen::MatrixXd centers;
  Eigen::MatrixXd center_vectors;
  double bandwidth = 0.0;
  if (cfg.rbf_centers > 0 && cfg.deform_magnitude > 0.0) {
    bandwidth = 0.3 * diam;
    centers.resize(cfg.rbf_centers, 3);
    center_vectors.resize(cfg.rbf_centers, 3);
    for (int c = 0; c < cfg.rbf_centers; ++c) {
      centers.row(c) = base.row(rng.uniform_int(n));
      center_vectors.row(c) = Eigen::RowVector3d(rng.normal(), rng.normal(),
                                                 rng.normal());
    }
    // Scale the field so the mean displacement over the base hits the target.
    double mean_disp = 0.0;
    for (int i = 0; i < n; ++i) {
      Eigen::RowVector3d d = Eigen::RowVector3d::Zero();
      for (int c = 0; c < cfg.rbf_centers; ++c) {
        d += center_vectors.row(c) *
             std::exp(-(base.row(i) - centers.row(c)).squaredNorm() /
                      (bandwidth * bandwidth));
      }
      mean_disp += d.norm();
    }
    mean_disp /= n;
    if (mean_disp > 0.0) {
      center_vectors *= cfg.deform_magnitude / mean_disp;
    }
  }
  const auto motion = [&](const Eigen::MatrixXd& pts) {
    Eigen::MatrixXd moved = pts * gt_linear;
    moved.rowwise() += gt_translation;
    if (centers.rows() > 0) {
      for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        for (Eigen::Index c = 0; c < centers.rows(); ++c) {
          moved.row(i) += center_vectors.row(c) *
                          std::exp(-(pts.row(i) - centers.row(c)).squaredNorm() /
                                   (bandwidth * bandwidth));
        }
      }
    }
    return moved;
  };

  // Crop: material projections, source keeps the lower quantile band, the
  // reference the upper one.
  std::vector<int> source_rows(static_cast<std::size_t>(n));
  std::vector<int> reference_rows(static_cast<std::size_t>(n));
  std::iota(source_rows.begin(), source_rows.end(), 0);
  std::iota(reference_rows.begin(), reference_rows.end(), 0);
  double lower_cut = std::numeric_limits<double>::infinity();
  Eigen::VectorXd proj;
  if (cfg.crop_retain < 1.0) {
    const Eigen::RowVector3d dir = random_unit(rng);
    proj = base * dir.transpose();
    std::vector<double> sorted(proj.data(), proj.data() + n);
    std::sort(sorted.begin(), sorted.end());
    const int keep = std::max(1, static_cast<int>(std::ceil(cfg.crop_retain * n)));
    const double upper_cut = sorted[static_cast<std::size_t>(keep - 1)];
    lower_cut = sorted[static_cast<std::size_t>(n - keep)];
    source_rows.clear();
    reference_rows.clear();
    for (int i = 0; i < n; ++i) {
      if (proj(i) <= upper_cut) source_rows.push_back(i);
      if (proj(i) >= lower_cut) reference_rows.push_back(i);
    }
    if (source_rows.empty() || reference_rows.empty()) {
      throw std::runtime_error("synthesize: crop removed every point");
    }
  }

  Eigen::MatrixXd src_pts(static_cast<Eigen::Index>(source_rows.size()), 3);
  for (std::size_t i = 0; i < source_rows.size(); ++i) {
    src_pts.row(static_cast<Eigen::Index>(i)) =
        base.row(source_rows[i]);
  }
  const Eigen::MatrixXd reference_clean = motion(base);
  Eigen::MatrixXd ref_pts(static_cast<Eigen::Index>(reference_rows.size()), 3);
  for (std::size_t i = 0; i < reference_rows.size(); ++i) {
    ref_pts.row(static_cast<Eigen::Index>(i)) =
        reference_clean.row(reference_rows[i]);
  }

  // Noise: source first, then reference (one stream, fixed order).
  src_pts = add_noise(std::move(src_pts), cfg.noise_sigma, rng);
  ref_pts = add_noise(std::move(ref_pts), cfg.noise_sigma, rng);

  // Outliers appended to the reference, uniform in its bounding box.
  std::vector<char> reference_is_outlier(
      static_cast<std::size_t>(ref_pts.rows() + cfg.outliers), 0);
  if (cfg.outliers > 0) {
    const Eigen::RowVector3d lo = ref_pts.colwise().minCoeff();
    const Eigen::RowVector3d hi = ref_pts.colwise().maxCoeff();
    Eigen::MatrixXd with_outliers(ref_pts.rows() + cfg.outliers, 3);
    with_outliers.topRows(ref_pts.rows()) = ref_pts;
    for (int i = 0; i < cfg.outliers; ++i) {
      for (int j = 0; j < 3; ++j) {
        with_outliers(ref_pts.rows() + i, j) = rng.uniform(lo(j), hi(j));
      }
      reference_is_outlier[static_cast<std::size_t>(ref_pts.rows() + i)] = 1;
    }
    ref_pts = std::move(with_outliers);
  }

  Eigen::MatrixXd gt_moved = motion(src_pts);
  std::vector<char> source_in_overlap(source_rows.size(), 1);
  if (cfg.crop_retain < 1.0) {
    for (std::size_t i = 0; i < source_rows.size(); ++i) {
      source_in_overlap[i] = proj(source_rows[i]) >= lower_cut ? 1 : 0;
    }
  }

  return SyntheticCase{DiscreteMeasure::uniform(std::move(src_pts)),
                       DiscreteMeasure::uniform(std::move(ref_pts)),
                       gt_linear,
                       gt_translation,
                       std::move(gt_moved),
                       std::move(source_in_overlap),
                       std::move(reference_is_outlier),
                       diam};
}

}  // namespace pwan
