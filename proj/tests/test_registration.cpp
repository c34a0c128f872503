#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "pwan/measure.hpp"
#include "pwan/registration.hpp"
#include "pwan/rng.hpp"
#include "pwan/synthesis.hpp"

using namespace pwan;

namespace {

Eigen::MatrixXd uniform_cloud(Rng& rng, int n, double spread) {
  Eigen::MatrixXd P(n, 3);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) P(i, k) = rng.uniform(-spread, spread);
  return P;
}

}  // namespace

TEST_SUITE("registration") {

TEST_CASE("fine_tune is a no-op when the sets already coincide") {
  Rng rng(3);
  const Eigen::MatrixXd P = uniform_cloud(rng, 25, 1.0);
  const DiscreteMeasure ref = DiscreteMeasure::uniform(P);
  const DiscreteMeasure src = DiscreteMeasure::uniform(P);
  RigidTransform tr;
  const Eigen::VectorXd before = tr.params();
  FineTuneConfig cfg;
  const FineTuneOutcome out = fine_tune(tr, ref, src, DivergenceKind::kMass,
                                        src.total_mass(), cfg);
  // Zero residuals give a zero subgradient: converged without moving.
  CHECK(out.converged);
  CHECK(!out.degenerate);
  CHECK(out.objective == 0.0);
  CHECK((tr.params() - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fine_tune flags a threshold below every residual as degenerate") {
  Rng rng(5);
  const Eigen::MatrixXd P = uniform_cloud(rng, 20, 1.0);
  Eigen::MatrixXd Q = P;
  Q.rowwise() += Eigen::RowVector3d(2.0, 0.0, 0.0);
  const DiscreteMeasure ref = DiscreteMeasure::uniform(P);
  const DiscreteMeasure src = DiscreteMeasure::uniform(Q);
  RigidTransform tr;
  FineTuneConfig cfg;
  const FineTuneOutcome out =
      fine_tune(tr, ref, src, DivergenceKind::kDistance, 1e-6, cfg);
  CHECK(out.degenerate);
  CHECK(out.iterations == 0);
}

TEST_CASE("fine_tune recovers a pure translation") {
  Rng rng(11);
  const Eigen::MatrixXd Y = uniform_cloud(rng, 30, 1.0);
  const Eigen::RowVector3d shift(0.25, -0.1, 0.15);
  Eigen::MatrixXd X = Y;
  X.rowwise() += shift;
  const DiscreteMeasure ref = DiscreteMeasure::uniform(X);
  const DiscreteMeasure src = DiscreteMeasure::uniform(Y);
  RigidTransform tr;
  FineTuneConfig cfg;
  cfg.max_iterations = 400;
  const FineTuneOutcome out = fine_tune(tr, ref, src, DivergenceKind::kMass,
                                        src.total_mass(), cfg);
  CHECK(!out.degenerate);
  CHECK(out.iterations >= 1);
  CHECK((tr.translation() - shift).norm() <= 1e-3);
  CHECK(rotation_error_deg(tr.rotation(), Eigen::Matrix3d::Identity()) <= 0.5);
  // The selection objective it reports matches the final residual sum.
  const Eigen::MatrixXd moved = tr.apply(Y);
  double resid = 0.0;
  for (int j = 0; j < 30; ++j) {
    double best = (X.row(0) - moved.row(j)).norm();
    for (int i = 1; i < 30; ++i)
      best = std::min(best, (X.row(i) - moved.row(j)).norm());
    resid += best;
  }
  CHECK(std::abs(out.objective - resid) <= 1e-9 * std::max(1.0, resid));
}

TEST_CASE("fine_tune never increases its fixed-selection objective") {
  Rng rng(17);
  const Eigen::MatrixXd Y = uniform_cloud(rng, 40, 1.0);
  Eigen::MatrixXd X = uniform_cloud(rng, 45, 1.1);
  const DiscreteMeasure ref = DiscreteMeasure::uniform(X);
  const DiscreteMeasure src = DiscreteMeasure::uniform(Y);

  // Initial objective: every point selected, distances to nearest neighbors.
  RigidTransform tr;
  const std::vector<int> nn0 = nearest_neighbors(Y, X);
  double initial = 0.0;
  for (int j = 0; j < 40; ++j)
    initial += (X.row(nn0[static_cast<std::size_t>(j)]) - Y.row(j)).norm();

  FineTuneConfig cfg;
  cfg.max_iterations = 60;
  const FineTuneOutcome out = fine_tune(tr, ref, src, DivergenceKind::kMass,
                                        src.total_mass(), cfg);
  CHECK(!out.degenerate);
  CHECK(out.objective <= initial + 1e-12);
}

TEST_CASE("fine_tune validates its inputs") {
  const Eigen::MatrixXd P = Eigen::MatrixXd::Identity(3, 3);
  const DiscreteMeasure m = DiscreteMeasure::uniform(P);
  RigidTransform tr;
  FineTuneConfig cfg;
  cfg.step = 0.0;
  CHECK_THROWS_AS(fine_tune(tr, m, m, DivergenceKind::kMass, 1.0, cfg),
                  std::invalid_argument);
  cfg = FineTuneConfig{};
  CHECK_THROWS_AS(fine_tune(tr, m, m, DivergenceKind::kDistance, -1.0, cfg),
                  std::invalid_argument);
  CHECK_THROWS_AS(fine_tune(tr, m, m, DivergenceKind::kMass, 0.0, cfg),
                  std::invalid_argument);
  // The coherence term only applies to displacement fields.
  const CoherenceRegularizer reg(P, CoherenceConfig{});
  CHECK_THROWS_AS(
      fine_tune(tr, m, m, DivergenceKind::kMass, 1.0, cfg, &reg),
      std::invalid_argument);
}

TEST_CASE("synthetic cases carry an exact ground-truth motion") {
  SynthesisConfig cfg;
  cfg.points = 200;
  cfg.rotation_deg = 30.0;
  cfg.translation = 0.2;
  cfg.seed = 9;
  const SyntheticCase c = synthesize_case(cfg);

  CHECK(c.source.size() == 200);
  CHECK(c.reference.size() == 200);
  CHECK((c.source.weights().array() == 1.0).all());
  CHECK((c.reference.weights().array() == 1.0).all());
  CHECK(c.diameter > 0.0);

  // The linear part is a rotation by exactly the requested angle.
  const Eigen::Matrix3d R = c.gt_linear;
  CHECK((R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff()
        <= 1e-12);
  CHECK(std::abs(R.determinant() - 1.0) <= 1e-12);
  CHECK(std::abs(rotation_error_deg(R, Eigen::Matrix3d::Identity()) - 30.0) <=
        1e-9);
  CHECK(std::abs(c.gt_translation.norm() - 0.2) <= 1e-12);

  // gt_moved is the rigid motion applied to each source row; with no noise,
  // crop, or outliers it coincides with the reference row by row.
  Eigen::MatrixXd expected = c.source.points() * R;
  expected.rowwise() += c.gt_translation;
  CHECK((c.gt_moved - expected).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((c.reference.points() - c.gt_moved).cwiseAbs().maxCoeff() <= 1e-12);

  // The clean shape is normalized: zero mean, unit total variance.
  CHECK(c.source.points().colwise().mean().norm() <= 1e-9);
  CHECK(std::abs(c.source.points().rowwise().squaredNorm().mean() - 1.0) <=
        1e-9);

  // No corruption: every source row overlaps, no reference row is an outlier.
  CHECK(std::accumulate(c.source_in_overlap.begin(), c.source_in_overlap.end(),
                        0) == 200);
  CHECK(std::accumulate(c.reference_is_outlier.begin(),
                        c.reference_is_outlier.end(), 0) == 0);
}

TEST_CASE("an identity motion with no corruption reproduces the input") {
  SynthesisConfig cfg;
  cfg.points = 60;
  cfg.seed = 21;
  const SyntheticCase c = synthesize_case(cfg);
  CHECK((c.gt_linear - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK(c.gt_translation.norm() == 0.0);
  CHECK((c.source.points() - c.reference.points()).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK((c.gt_moved - c.source.points()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cropping keeps complementary quantile bands") {
  SynthesisConfig cfg;
  cfg.points = 500;
  cfg.rotation_deg = 20.0;
  cfg.translation = 0.1;
  cfg.crop_retain = 0.7;
  cfg.seed = 33;
  const SyntheticCase c = synthesize_case(cfg);

  // ceil(0.7 * 500) = 350 rows on each side; the overlap band holds
  // 2*350 - 500 = 200 source rows, fraction (2s-1)/s = 4/7.
  CHECK(c.source.size() == 350);
  CHECK(c.reference.size() == 350);
  const int overlap = std::accumulate(c.source_in_overlap.begin(),
                                      c.source_in_overlap.end(), 0);
  CHECK(overlap == 200);

  // Rows marked as overlapping have their ground-truth image among the
  // reference rows (clean case: exact row matches).
  const Eigen::MatrixXd& refp = c.reference.points();
  int matched = 0;
  for (int i = 0; i < c.source.size(); ++i) {
    if (!c.source_in_overlap[static_cast<std::size_t>(i)]) continue;
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < c.reference.size(); ++j) {
      best = std::min(best, (refp.row(j) - c.gt_moved.row(i)).norm());
    }
    if (best <= 1e-9) ++matched;
  }
  CHECK(matched == overlap);
}

TEST_CASE("outliers are appended inside the reference bounding box") {
  SynthesisConfig cfg;
  cfg.points = 500;
  cfg.rotation_deg = 15.0;
  cfg.translation = 0.3;
  cfg.noise_sigma = 0.01;
  cfg.outliers = 100;
  cfg.seed = 41;
  const SyntheticCase c = synthesize_case(cfg);

  CHECK(c.source.size() == 500);
  CHECK(c.reference.size() == 600);
  CHECK(std::accumulate(c.reference_is_outlier.begin(),
                        c.reference_is_outlier.end(), 0) == 100);
  // Outlier flags sit on the appended tail.
  for (int i = 0; i < 500; ++i)
    CHECK(!c.reference_is_outlier[static_cast<std::size_t>(i)]);
  for (int i = 500; i < 600; ++i)
    CHECK(c.reference_is_outlier[static_cast<std::size_t>(i)]);

  const Eigen::MatrixXd clean = c.reference.points().topRows(500);
  const Eigen::RowVector3d lo = clean.colwise().minCoeff();
  const Eigen::RowVector3d hi = clean.colwise().maxCoeff();
  for (int i = 500; i < 600; ++i) {
    for (int k = 0; k < 3; ++k) {
      CHECK(c.reference.points()(i, k) >= lo(k));
      CHECK(c.reference.points()(i, k) <= hi(k));
    }
  }
}

TEST_CASE("the smooth deformation field hits its target mean displacement") {
  SynthesisConfig cfg;
  cfg.shape = ShapeKind::kHelix;
  cfg.points = 300;
  cfg.rbf_centers = 5;
  cfg.deform_magnitude = 0.3;
  cfg.seed = 55;
  const SyntheticCase c = synthesize_case(cfg);
  // Identity rigid part: the motion is the displacement field alone, and the
  // field is scaled so its mean norm over the clean shape is the target.
  const double mean_disp =
      (c.gt_moved - c.source.points()).rowwise().norm().mean();
  CHECK(std::abs(mean_disp - 0.3) <= 1e-9);
}

TEST_CASE("synthesis is reproducible and validated") {
  SynthesisConfig cfg;
  cfg.points = 80;
  cfg.shape = ShapeKind::kSphereSection;
  cfg.rotation_deg = 45.0;
  cfg.translation = 0.2;
  cfg.noise_sigma = 0.02;
  cfg.outliers = 10;
  cfg.crop_retain = 0.8;
  cfg.seed = 77;
  const SyntheticCase a = synthesize_case(cfg);
  const SyntheticCase b = synthesize_case(cfg);
  CHECK((a.source.points().array() == b.source.points().array()).all());
  CHECK((a.reference.points().array() == b.reference.points().array()).all());
  CHECK((a.gt_moved.array() == b.gt_moved.array()).all());

  cfg.seed = 78;
  const SyntheticCase d = synthesize_case(cfg);
  CHECK((a.source.points() - d.source.points()).cwiseAbs().maxCoeff() > 1e-6);

  SynthesisConfig bad = cfg;
  bad.crop_retain = 0.0;
  CHECK_THROWS_AS(synthesize_case(bad), std::invalid_argument);
  bad = cfg;
  bad.crop_retain = 1.5;
  CHECK_THROWS_AS(synthesize_case(bad), std::invalid_argument);
  bad = cfg;
  bad.outliers = -1;
  CHECK_THROWS_AS(synthesize_case(bad), std::invalid_argument);
  bad = cfg;
  bad.noise_sigma = -0.1;
  CHECK_THROWS_AS(synthesize_case(bad), std::invalid_argument);
  bad = cfg;
  bad.points = 1;
  CHECK_THROWS_AS(synthesize_case(bad), std::invalid_argument);
}

TEST_CASE("normalize_cloud centers and scales to unit total variance") {
  Rng rng(83);
  Eigen::MatrixXd P = uniform_cloud(rng, 50, 4.0);
  P.rowwise() += Eigen::RowVector3d(10.0, -3.0, 2.0);
  normalize_cloud(P);
  CHECK(P.colwise().mean().norm() <= 1e-12);
  CHECK(std::abs(P.rowwise().squaredNorm().mean() - 1.0) <= 1e-12);

  Eigen::MatrixXd degenerate = Eigen::MatrixXd::Ones(5, 3);
  CHECK_THROWS_AS(normalize_cloud(degenerate), std::invalid_argument);
  Eigen::MatrixXd single = Eigen::MatrixXd::Zero(1, 3);
  CHECK_THROWS_AS(normalize_cloud(single), std::invalid_argument);
}

TEST_CASE("mse measures mean squared point error") {
  Rng rng(91);
  const Eigen::MatrixXd A = uniform_cloud(rng, 15, 1.0);
  CHECK(mse(A, A) == 0.0);

  Eigen::MatrixXd B = A;
  const Eigen::RowVector3d off(0.3, -0.4, 1.2);
  B.rowwise() += off;
  CHECK(std::abs(mse(A, B) - off.squaredNorm()) <= 1e-12);

  const Eigen::MatrixXd C = uniform_cloud(rng, 15, 1.0);
  double brute = 0.0;
  for (int i = 0; i < 15; ++i) brute += (A.row(i) - C.row(i)).squaredNorm();
  brute /= 15.0;
  CHECK(std::abs(mse(A, C) - brute) <= 1e-12);

  CHECK_THROWS_AS(mse(A, C.topRows(10)), std::invalid_argument);
  CHECK_THROWS_AS(mse(Eigen::MatrixXd(0, 3), Eigen::MatrixXd(0, 3)),
                  std::invalid_argument);
}

TEST_CASE("mse with correspondences skips unmatched rows") {
  Eigen::MatrixXd A(3, 3), T(4, 3);
  A << 0, 0, 0, 1, 0, 0, 0, 2, 0;
  T << 0, 0, 1, 9, 9, 9, 1, 0, 0, 0, 2, 2;
  // Row 0 -> target 0 (distance^2 = 1), row 1 unmatched, row 2 -> target 3
  // (distance^2 = 4): mean over the 2 matched rows = 2.5.
  const std::vector<int> corr = {0, -1, 3};
  CHECK(std::abs(mse(A, T, corr) - 2.5) <= 1e-15);

  CHECK_THROWS_AS(mse(A, T, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(mse(A, T, {0, 1, 4}), std::invalid_argument);
  CHECK_THROWS_AS(mse(A, T, {0, 1, -2}), std::invalid_argument);
  CHECK_THROWS_AS(mse(A, T, {-1, -1, -1}), std::invalid_argument);
}

TEST_CASE("rotation_error_deg is the geodesic angle") {
  const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
  CHECK(rotation_error_deg(I, I) == 0.0);

  const auto rot_z = [](double deg) {
    const double a = deg * std::numbers::pi / 180.0;
    Eigen::Matrix3d R;
    R << std::cos(a), std::sin(a), 0, -std::sin(a), std::cos(a), 0, 0, 0, 1;
    return R;
  };
  CHECK(std::abs(rotation_error_deg(rot_z(30.0), I) - 30.0) <= 1e-12);
  CHECK(std::abs(rotation_error_deg(rot_z(170.0), I) - 170.0) <= 1e-12);
  // Relative angle between two rotations about the same axis.
  CHECK(std::abs(rotation_error_deg(rot_z(40.0), rot_z(15.0)) - 25.0) <=
        1e-12);
  // Half turn is the antipode and must not produce a NaN from acos rounding.
  CHECK(std::abs(rotation_error_deg(rot_z(180.0), I) - 180.0) <= 1e-12);
}

TEST_CASE("nearest_neighbors matches brute force on both code paths") {
  Rng rng(97);

  SUBCASE("small target sets use the linear sweep") {
    const Eigen::MatrixXd Q = uniform_cloud(rng, 64, 1.0);
    const Eigen::MatrixXd T = uniform_cloud(rng, 99, 1.0);
    const std::vector<int> got = nearest_neighbors(Q, T);
    for (int i = 0; i < 64; ++i) {
      int best = 0;
      double best_d = (T.row(0) - Q.row(i)).squaredNorm();
      for (int j = 1; j < 99; ++j) {
        const double d = (T.row(j) - Q.row(i)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      CHECK(got[static_cast<std::size_t>(i)] == best);
    }
  }

  SUBCASE("large target sets go through the tree") {
    const Eigen::MatrixXd Q = uniform_cloud(rng, 50, 1.0);
    const Eigen::MatrixXd T = uniform_cloud(rng, 2500, 1.0);
    const std::vector<int> got = nearest_neighbors(Q, T);
    for (int i = 0; i < 50; ++i) {
      int best = 0;
      double best_d = (T.row(0) - Q.row(i)).squaredNorm();
      for (int j = 1; j < 2500; ++j) {
        const double d = (T.row(j) - Q.row(i)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      // Exact tree: same index, or an exact tie at the same distance.
      const int g = got[static_cast<std::size_t>(i)];
      CHECK((T.row(g) - Q.row(i)).squaredNorm() == best_d);
      CHECK(g == best);
    }
  }

  SUBCASE("ties break to the lowest target index") {
    Eigen::MatrixXd T(4, 3);
    T << 1, 0, 0, -1, 0, 0, 1, 0, 0, 0, 5, 0;  // rows 0 and 2 coincide
    Eigen::MatrixXd Q(2, 3);
    Q << 0, 0, 0, 1, 0.1, 0;
    const std::vector<int> got = nearest_neighbors(Q, T);
    CHECK(got[0] == 0);  // equidistant from rows 0, 1, 2
    CHECK(got[1] == 0);  // duplicate rows 0 and 2: keep the first
  }

  SUBCASE("empty targets and dimension mismatches are rejected") {
    const Eigen::MatrixXd Q = uniform_cloud(rng, 3, 1.0);
    CHECK_THROWS_AS(nearest_neighbors(Q, Eigen::MatrixXd(0, 3)),
                    std::invalid_argument);
    CHECK_THROWS_AS(nearest_neighbors(Q, Eigen::MatrixXd::Zero(5, 2)),
                    std::invalid_argument);
  }
}

TEST_CASE("voxel_downsample keeps one centroid per occupied cell") {
  Eigen::MatrixXd P(5, 3);
  P << 0.1, 0.1, 0.1,  // cell (0,0,0)
       0.9, 0.2, 0.3,  // cell (0,0,0)
       1.2, 0.0, 0.0,  // cell (1,0,0)
      -0.3, 0.0, 0.0,  // cell (-1,0,0)
       0.4, 0.6, 0.2;  // cell (0,0,0)
  DiscreteMeasure m(P, Eigen::VectorXd::Constant(5, 2.0));
  const DiscreteMeasure out = voxel_downsample(m, 1.0);

  REQUIRE(out.size() == 3);
  // First-occurrence order: cell of row 0, then row 2's, then row 3's.
  const Eigen::RowVector3d c0 =
      (P.row(0) + P.row(1) + P.row(4)) / 3.0;
  CHECK((out.points().row(0) - c0).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((out.points().row(1) - P.row(2)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.points().row(2) - P.row(3)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.weights().array() == 1.0).all());

  CHECK_THROWS_AS(voxel_downsample(m, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(voxel_downsample(m, -1.0), std::invalid_argument);

  // A cell big enough to hold everything produces a single centroid (cells
  // anchor at the origin, so move the cloud into one octant first).
  Eigen::MatrixXd shifted = P;
  shifted.array() += 50.0;
  const DiscreteMeasure one =
      voxel_downsample(DiscreteMeasure::uniform(shifted), 100.0);
  REQUIRE(one.size() == 1);
  CHECK((one.points().row(0) - shifted.colwise().mean())
            .cwiseAbs()
            .maxCoeff() <= 1e-12);
}

TEST_CASE("the full pipeline runs both phases and reports their products") {
  SynthesisConfig scfg;
  scfg.points = 40;
  scfg.rotation_deg = 5.0;
  scfg.translation = 0.05;
  scfg.seed = 13;
  const SyntheticCase c = synthesize_case(scfg);

  RegistrationConfig cfg = default_registration_config(TransformKind::kRigid);
  cfg.pwan.kind = DivergenceKind::kMass;
  cfg.pwan.net.hidden = {16, 16};
  cfg.pwan.net.skips.clear();
  cfg.pwan.outer_steps = 40;
  cfg.pwan.potential_updates = 5;
  cfg.pwan.seed = 2;
  cfg.pwan.theta_lr = 1e-3;
  cfg.fine_tune.max_iterations = 50;

  const RegistrationResult res =
      register_point_sets(c.source, c.reference, cfg, &c.gt_moved);

  CHECK(res.transform->param_count() == 7);
  CHECK(res.moved.rows() == 40);
  CHECK(res.report.pwan_steps == 40);
  CHECK(res.report.trace.size() == 40);
  CHECK(std::isfinite(res.report.divergence));
  CHECK(res.report.bound > 0.0);
  CHECK(std::isfinite(res.report.mse));
  CHECK(res.report.pwan_seconds > 0.0);
  CHECK(res.report.fine_tune_seconds >= 0.0);
  CHECK((res.moved - res.transform->apply(c.source.points()))
            .cwiseAbs()
            .maxCoeff() == 0.0);
  // Fine-tuning with every point kept pulls the sets closer than they start.
  CHECK(res.report.mse < mse(c.source.points(), c.gt_moved));

  SUBCASE("non-rigid mode carries a displacement field per source point") {
    RegistrationConfig ncfg =
        default_registration_config(TransformKind::kNonRigid);
    ncfg.pwan.kind = DivergenceKind::kMass;
    ncfg.pwan.net.hidden = {16, 16};
    ncfg.pwan.net.skips.clear();
    ncfg.pwan.outer_steps = 15;
    ncfg.pwan.potential_updates = 4;
    ncfg.pwan.seed = 3;
    ncfg.coherence.rank = 10;
    ncfg.fine_tune.max_iterations = 10;
    const RegistrationResult nres =
        register_point_sets(c.source, c.reference, ncfg);
    CHECK(nres.transform->param_count() == 12 + 3 * 40);
    CHECK(nres.moved.rows() == 40);
    CHECK(std::isnan(nres.report.mse));
  }

  SUBCASE("planar inputs are rejected") {
    Eigen::MatrixXd flat = Eigen::MatrixXd::Zero(4, 2);
    const DiscreteMeasure two_d = DiscreteMeasure::uniform(flat);
    CHECK_THROWS_AS(register_point_sets(two_d, two_d, cfg),
                    std::invalid_argument);
  }
}

}  // TEST_SUITE
