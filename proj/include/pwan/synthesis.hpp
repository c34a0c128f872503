#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "pwan/measure.hpp"

namespace pwan {

enum class ShapeKind { kSphere, kSphereSection, kHelix };

// Reproducible registration test case. Construction order (one seeded
// stream, draws in this order):
//   1. sample the base shape (or load shape_file), then normalize it to
//      mean 0 and total variance 1
//   2. draw the ground-truth motion: rotation about a random axis, a
//      translation along a random direction, and (when rbf_centers > 0) a
//      Gaussian-RBF displacement field with bandwidth 0.3 x diameter whose
//      per-center 3-vectors are scaled to the target mean displacement
//   3. source = base points; reference = motion applied to every base point
//   4. crop (crop_retain < 1): one random material direction; the source
//      keeps its lower crop_retain quantile, the reference its upper one, so
//      each set retains fraction s with minimal overlap (2s-1)/s
//   5. add iid Gaussian noise (source first, then reference)
//   6. append `outliers` uniform points inside the reference bounding box to
//      the reference set
// Both sets carry unit weights. gt_moved maps each final source row through
// the ground-truth motion; source_in_overlap marks rows whose image lies on
// the reference's retained side of the crop.
struct SynthesisConfig {
  ShapeKind shape = ShapeKind::kSphere;
  std::string shape_file;  // when nonempty, points are loaded instead
  int points = 500;

  double rotation_deg = 0.0;
  double translation = 0.0;      // magnitude, in normalized-shape units
  int rbf_centers = 0;           // smooth-deformation centers; 0 = rigid only
  double deform_magnitude = 0.0; // target mean displacement of the field

  int outliers = 0;
  double noise_sigma = 0.0;
  double crop_retain = 1.0;      // in (0, 1]; 1 disables cropping

  std::uint64_t seed = 0;
};

struct SyntheticCase {
  DiscreteMeasure source;      // Y, the moving set
  DiscreteMeasure reference;   // X, the target set (holds any outliers)
  Eigen::Matrix3d gt_linear = Eigen::Matrix3d::Identity();
  Eigen::RowVector3d gt_translation = Eigen::RowVector3d::Zero();
  Eigen::MatrixXd gt_moved;             // ground-truth image of each source row
  std::vector<char> source_in_overlap;  // per source row (all 1 without crop)
  std::vector<char> reference_is_outlier;  // per reference row
  double diameter = 0.0;                // of the normalized clean shape
};

SyntheticCase synthesize_case(const SynthesisConfig& cfg);

// Centers the rows on their mean and scales so the total variance
// (mean squared distance from the centroid) is 1. Degenerate inputs (all
// points coincident) throw.
void normalize_cloud(Eigen::MatrixXd& points);

}  // namespace pwan
