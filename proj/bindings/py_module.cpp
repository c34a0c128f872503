// Python bindings for the toolkit's main operations: exact partial-transport
// solves, neural divergence estimation, toy discrepancies and sweeps,
// synthetic case generation, and point-set registration. Arrays cross the
// boundary as numpy <-> Eigen copies; all functions are stateless.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pwan/discrepancy.hpp"
#include "pwan/io_util.hpp"
#include "pwan/measure.hpp"
#include "pwan/pwan.hpp"
#include "pwan/registration.hpp"
#include "pwan/synthesis.hpp"
#include "pwan/transforms.hpp"
#include "pwan/transport.hpp"

namespace py = pybind11;
using namespace pwan;

namespace {

DiscreteMeasure make_measure(const Eigen::MatrixXd& points,
                             const std::optional<Eigen::VectorXd>& weights) {
  if (weights) {
    return DiscreteMeasure(points, *weights);
  }
  return DiscreteMeasure::uniform(points);
}

py::dict plan_dict(const TransportPlan& plan) {
  Eigen::MatrixXd entries(static_cast<Eigen::Index>(plan.entries.size()), 3);
  for (std::size_t e = 0; e < plan.entries.size(); ++e) {
    entries(static_cast<Eigen::Index>(e), 0) = plan.entries[e].i;
    entries(static_cast<Eigen::Index>(e), 1) = plan.entries[e].j;
    entries(static_cast<Eigen::Index>(e), 2) = plan.entries[e].mass;
  }
  py::dict out;
  out["objective"] = plan.objective;
  out["transported"] = plan.transported;
  out["duality_gap"] = plan.duality_gap;
  out["plan"] = entries;
  return out;
}

DivergenceKind parse_kind(const std::string& kind) {
  if (kind == "mass") return DivergenceKind::kMass;
  if (kind == "distance") return DivergenceKind::kDistance;
  throw std::invalid_argument("kind must be 'mass' or 'distance'");
}

PwanConfig build_config(const std::string& kind, double mass, double threshold,
                        int steps, int updates, int batch,
                        const std::vector<int>& hidden, double lr,
                        double gp_coeff, int plateau_window,
                        double plateau_tol, std::uint64_t seed) {
  PwanConfig pc;
  pc.kind = parse_kind(kind);
  if (mass >= 0.0) pc.mass = mass;
  if (threshold >= 0.0) pc.threshold = threshold;
  pc.outer_steps = steps;
  pc.potential_updates = updates;
  pc.batch_size = batch;
  if (!hidden.empty()) {
    pc.net.hidden = hidden;
    pc.net.skips.clear();
  }
  pc.potential_lr = lr;
  pc.gp_coefficient = gp_coeff;
  pc.plateau_window = plateau_window;
  pc.plateau_tol = plateau_tol;
  pc.seed = seed;
  return pc;
}

Eigen::MatrixXd trace_matrix(const std::vector<TraceEntry>& trace) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(trace.size()), 5);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const TraceEntry& e = trace[i];
    out(static_cast<Eigen::Index>(i), 0) = e.step;
    out(static_cast<Eigen::Index>(i), 1) = e.loss;
    out(static_cast<Eigen::Index>(i), 2) = e.gp;
    out(static_cast<Eigen::Index>(i), 3) = e.bound;
    out(static_cast<Eigen::Index>(i), 4) = e.divergence;
  }
  return out;
}

py::dict sweep_dict(const SweepTable& table) {
  py::dict out;
  out["columns"] = table.columns;
  out["values"] = table.values;
  return out;
}

std::vector<int> mask_vector(const std::vector<char>& flags) {
  std::vector<int> out(flags.size());
  for (std::size_t i = 0; i < flags.size(); ++i) out[i] = flags[i];
  return out;
}

}  // namespace

PYBIND11_MODULE(pwan, m) {
  m.doc() =
      "Partial-transport toolkit: exact partial-Wasserstein oracles, neural "
      "divergence estimation, and point-set registration.";
  m.attr("__version__") = kToolkitVersion;

  m.def(
      "solve_partial_mass",
      [](const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& beta, double mass,
         const std::optional<Eigen::VectorXd>& alpha_weights,
         const std::optional<Eigen::VectorXd>& beta_weights) {
        return plan_dict(solve_partial_mass(make_measure(alpha, alpha_weights),
                                            make_measure(beta, beta_weights),
                                            mass));
      },
      py::arg("alpha"), py::arg("beta"), py::arg("mass"),
      py::arg("alpha_weights") = std::nullopt,
      py::arg("beta_weights") = std::nullopt,
      "Least transport cost over partial plans moving at least `mass`.");

  m.def(
      "solve_distance_threshold",
      [](const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& beta,
         double threshold, const std::optional<Eigen::VectorXd>& alpha_weights,
         const std::optional<Eigen::VectorXd>& beta_weights) {
        return plan_dict(solve_distance_threshold(
            make_measure(alpha, alpha_weights),
            make_measure(beta, beta_weights), threshold));
      },
      py::arg("alpha"), py::arg("beta"), py::arg("threshold"),
      py::arg("alpha_weights") = std::nullopt,
      py::arg("beta_weights") = std::nullopt,
      "Least (cost - threshold * mass) over partial plans.");

  m.def(
      "wasserstein1",
      [](const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& beta,
         const std::optional<Eigen::VectorXd>& alpha_weights,
         const std::optional<Eigen::VectorXd>& beta_weights) {
        return wasserstein1(make_measure(alpha, alpha_weights),
                            make_measure(beta, beta_weights));
      },
      py::arg("alpha"), py::arg("beta"), py::arg("alpha_weights") = std::nullopt,
      py::arg("beta_weights") = std::nullopt,
      "Balanced Wasserstein-1 (equal total masses required).");

  m.def(
      "duality_certificate",
      [](const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& beta, double mass,
         int grid_points, const std::optional<Eigen::VectorXd>& alpha_weights,
         const std::optional<Eigen::VectorXd>& beta_weights) {
        const DiscreteMeasure a = make_measure(alpha, alpha_weights);
        const DiscreteMeasure b = make_measure(beta, beta_weights);
        const std::vector<double> grid = duality_h_grid(a, b, mass, grid_points);
        const DualityCertificate cert = duality_certificate(a, b, mass, grid);
        py::dict out;
        out["best_value"] = cert.best_value;
        out["best_h"] = cert.best_h;
        return out;
      },
      py::arg("alpha"), py::arg("beta"), py::arg("mass"),
      py::arg("grid_points") = 200, py::arg("alpha_weights") = std::nullopt,
      py::arg("beta_weights") = std::nullopt,
      "Max over an h grid of (threshold objective + mass * h); a lower bound "
      "on the mass-constrained optimum that is tight on a fine grid.");

  m.def(
      "estimate_divergence",
      [](const Eigen::MatrixXd& alpha, const Eigen::MatrixXd& beta,
         const std::string& kind, double mass, double threshold, int steps,
         int updates, int batch, const std::vector<int>& hidden, double lr,
         double gp_coeff, int plateau_window, double plateau_tol,
         std::uint64_t seed,
         const std::optional<Eigen::VectorXd>& alpha_weights,
         const std::optional<Eigen::VectorXd>& beta_weights) {
        const DiscreteMeasure a = make_measure(alpha, alpha_weights);
        const DiscreteMeasure b = make_measure(beta, beta_weights);
        PwanConfig pc =
            build_config(kind, mass, threshold, steps, updates, batch, hidden,
                         lr, gp_coeff, plateau_window, plateau_tol, seed);
        if (pc.kind == DivergenceKind::kMass && mass < 0.0) {
          pc.mass = std::min(a.total_mass(), b.total_mass());
        }
        const DivergenceEstimate est = estimate_divergence(a, b, pc);
        py::dict out;
        out["value"] = est.value;
        out["bound"] = est.bound;
        out["trace"] = trace_matrix(est.trace);
        return out;
      },
      py::arg("alpha"), py::arg("beta"), py::arg("kind") = "mass",
      py::arg("mass") = -1.0, py::arg("threshold") = -1.0,
      py::arg("steps") = 2000, py::arg("updates") = 10, py::arg("batch") = 0,
      py::arg("hidden") = std::vector<int>{}, py::arg("lr") = 1e-4,
      py::arg("gp_coeff") = 1.0, py::arg("plateau_window") = 0,
      py::arg("plateau_tol") = 1e-4, py::arg("seed") = 0,
      py::arg("alpha_weights") = std::nullopt,
      py::arg("beta_weights") = std::nullopt,
      "Adversarial Kantorovich-dual estimate of the chosen divergence. Trace "
      "columns: step, loss, gp, h, divergence.");

  m.def(
      "l2_distance",
      [](const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double sigma) {
        return l2_distance(X, Y, sigma);
      },
      py::arg("X"), py::arg("Y"), py::arg("sigma") = 1.0,
      "Squared L2 distance between Gaussian KDEs (variance parameter).");

  m.def(
      "kl_divergence",
      [](const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double sigma,
         double omega) { return kl_divergence(X, Y, sigma, omega); },
      py::arg("X"), py::arg("Y"), py::arg("sigma") = 1.0,
      py::arg("omega") = 0.2,
      "Negative average mixture log-likelihood of Y under a KDE on X.");

  m.def(
      "fig5_sweep",
      [](int outliers, double sigma, double omega, double mass,
         double threshold, std::uint64_t seed) {
        Fig5Config fc;
        fc.outliers = outliers;
        fc.toy.sigma = sigma;
        fc.toy.omega = omega;
        fc.mass = mass;
        fc.threshold = threshold;
        fc.seed = seed;
        return sweep_dict(fig5_sweep(fc));
      },
      py::arg("outliers") = 1000, py::arg("sigma") = 1.0,
      py::arg("omega") = 0.2, py::arg("mass") = 10.0,
      py::arg("threshold") = 2.0, py::arg("seed") = 0,
      "Outlier-robustness sweep; columns t, kl, l2, lm, ld.");

  m.def(
      "fig12_sweep",
      [](double lo, double hi, double step, double sigma) {
        Fig12Config fc;
        fc.lo = lo;
        fc.hi = hi;
        fc.step = step;
        fc.toy.sigma = sigma;
        return sweep_dict(fig12_sweep(fc));
      },
      py::arg("lo") = -4.0, py::arg("hi") = 4.0, py::arg("step") = 0.1,
      py::arg("sigma") = 1.0,
      "Two-point smoothness sweep; columns x, y, kl, l2, w1.");

  m.def(
      "synthesize",
      [](const std::string& shape, int n, double rotation_deg,
         double translation, int rbf_centers, double deform, int outliers,
         double noise, double crop_retain, std::uint64_t seed,
         const std::string& shape_file) {
        SynthesisConfig sc;
        if (shape == "sphere") {
          sc.shape = ShapeKind::kSphere;
        } else if (shape == "sphere-section" || shape == "sphere_section") {
          sc.shape = ShapeKind::kSphereSection;
        } else if (shape == "helix") {
          sc.shape = ShapeKind::kHelix;
        } else {
          throw std::invalid_argument("unknown shape " + shape);
        }
        sc.shape_file = shape_file;
        sc.points = n;
        sc.rotation_deg = rotation_deg;
        sc.translation = translation;
        sc.rbf_centers = rbf_centers;
        sc.deform_magnitude = deform;
        sc.outliers = outliers;
        sc.noise_sigma = noise;
        sc.crop_retain = crop_retain;
        sc.seed = seed;
        SyntheticCase cse = synthesize_case(sc);
        py::dict out;
        out["source"] = cse.source.points();
        out["reference"] = cse.reference.points();
        out["gt_linear"] = Eigen::MatrixXd(cse.gt_linear);
        out["gt_translation"] = Eigen::VectorXd(cse.gt_translation.transpose());
        out["gt_moved"] = cse.gt_moved;
        out["source_in_overlap"] = mask_vector(cse.source_in_overlap);
        out["reference_is_outlier"] = mask_vector(cse.reference_is_outlier);
        out["diameter"] = cse.diameter;
        return out;
      },
      py::arg("shape") = "sphere", py::arg("n") = 500,
      py::arg("rotation_deg") = 0.0, py::arg("translation") = 0.0,
      py::arg("rbf_centers") = 0, py::arg("deform") = 0.0,
      py::arg("outliers") = 0, py::arg("noise") = 0.0,
      py::arg("crop_retain") = 1.0, py::arg("seed") = 0,
      py::arg("shape_file") = std::string(),
      "Reproducible registration test case (see gen subcommand).");

  m.def(
      "register_points",
      [](const Eigen::MatrixXd& source, const Eigen::MatrixXd& reference,
         const std::string& mode, const std::string& kind, double mass,
         double threshold, int steps, int updates,
         const std::vector<int>& hidden, double lr, double gp_coeff,
         double coherence_lambda, int rank, int ft_iters, int plateau_window,
         std::uint64_t seed, const std::optional<Eigen::MatrixXd>& gt_moved) {
        TransformKind tk;
        if (mode == "rigid") {
          tk = TransformKind::kRigid;
        } else if (mode == "nonrigid" || mode == "non-rigid") {
          tk = TransformKind::kNonRigid;
        } else {
          throw std::invalid_argument("mode must be 'rigid' or 'nonrigid'");
        }
        RegistrationConfig rc = default_registration_config(tk);
        const int default_updates = rc.pwan.potential_updates;
        const int default_plateau = rc.pwan.plateau_window;
        rc.pwan.kind = parse_kind(kind);
        if (mass >= 0.0) rc.pwan.mass = mass;
        if (threshold >= 0.0) rc.pwan.threshold = threshold;
        rc.pwan.outer_steps = steps;
        rc.pwan.potential_updates =
            updates >= 1 ? updates : default_updates;
        rc.pwan.plateau_window =
            plateau_window >= 0 ? plateau_window : default_plateau;
        if (!hidden.empty()) {
          rc.pwan.net.hidden = hidden;
          rc.pwan.net.skips.clear();
        }
        rc.pwan.potential_lr = lr;
        rc.pwan.gp_coefficient = gp_coeff;
        rc.pwan.seed = seed;
        if (coherence_lambda >= 0.0) rc.coherence.lambda = coherence_lambda;
        if (rank >= 0) rc.coherence.rank = rank;
        rc.coherence.seed = seed;
        if (ft_iters >= 0) rc.fine_tune.max_iterations = ft_iters;

        const DiscreteMeasure src = DiscreteMeasure::uniform(source);
        const DiscreteMeasure ref = DiscreteMeasure::uniform(reference);
        RegistrationResult result = register_point_sets(
            src, ref, rc, gt_moved ? &*gt_moved : nullptr);

        py::dict out;
        out["moved"] = result.moved;
        out["params"] = Eigen::VectorXd(result.transform->params());
        out["divergence"] = result.report.divergence;
        out["bound"] = result.report.bound;
        out["pwan_steps"] = result.report.pwan_steps;
        out["fine_tune_iterations"] = result.report.fine_tune.iterations;
        out["mse"] = result.report.mse;
        if (tk == TransformKind::kRigid) {
          const auto& rigid =
              dynamic_cast<const RigidTransform&>(*result.transform);
          out["rotation"] = Eigen::MatrixXd(rigid.rotation());
        }
        return out;
      },
      py::arg("source"), py::arg("reference"), py::arg("mode") = "rigid",
      py::arg("kind") = "mass", py::arg("mass") = -1.0,
      py::arg("threshold") = -1.0, py::arg("steps") = 2000,
      py::arg("updates") = -1, py::arg("hidden") = std::vector<int>{},
      py::arg("lr") = 1e-4, py::arg("gp_coeff") = 1.0,
      py::arg("coherence_lambda") = -1.0, py::arg("rank") = -1,
      py::arg("ft_iters") = -1, py::arg("plateau_window") = -1,
      py::arg("seed") = 0, py::arg("gt_moved") = std::nullopt,
      "Two-phase registration (adversarial alignment + trimmed refinement). "
      "Unit weights; mass defaults to the smaller point count.");
}
