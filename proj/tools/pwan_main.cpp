// Command-line front end for the partial-transport toolkit: synthetic data
// generation, exact oracle solves, neural divergence estimation, point-set
// registration, and reproducible sweeps. Every run writes a manifest.json
// with the resolved configuration and input digests; outputs are
// byte-identical across identical invocations (timings opt in via --timings).

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pwan/coherence.hpp"
#include "pwan/discrepancy.hpp"
#include "pwan/io_util.hpp"
#include "pwan/measure.hpp"
#include "pwan/pwan.hpp"
#include "pwan/registration.hpp"
#include "pwan/rng.hpp"
#include "pwan/synthesis.hpp"
#include "pwan/transforms.hpp"
#include "pwan/transport.hpp"

namespace {

using nlohmann::json;
using namespace pwan;

std::string out_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::filesystem::create_directories(dir);
}

// Optional JSON config file: flat object whose keys are long option names
// (without leading dashes). Values become the new defaults; explicit
// command-line flags still win. Applied before CLI11 parses by looking the
// file up ahead of time.
json preload_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    std::string path;
    if (arg == "--config" && i + 1 < argc) {
      path = argv[i + 1];
    } else if (arg.rfind("--config=", 0) == 0) {
      path = arg.substr(9);
    }
    if (!path.empty()) {
      json cfg = load_json(path);
      if (!cfg.is_object()) {
        throw std::runtime_error("--config must hold a JSON object");
      }
      return cfg;
    }
  }
  return json::object();
}

template <typename T>
void config_default(const json& cfg, const std::string& key, T& value) {
  if (cfg.contains(key)) {
    value = cfg.at(key).get<T>();
  }
}

// Runs fn(0..units-1) across workers; results must be written into
// preallocated per-index slots so the merge order never depends on
// scheduling. TOOLKIT_THREADS caps the worker count.
void parallel_units(int units, const std::function<void(int)>& fn) {
  int workers = static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  if (const char* env = std::getenv("TOOLKIT_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) workers = std::min(workers, cap);
  }
  workers = std::min(workers, units);
  if (workers <= 1) {
    for (int i = 0; i < units; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < units; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

json matrix3_json(const Eigen::Matrix3d& m) {
  json rows = json::array();
  for (int i = 0; i < 3; ++i) {
    rows.push_back({m(i, 0), m(i, 1), m(i, 2)});
  }
  return rows;
}

json vector_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

void write_trace(const std::string& path, const std::vector<TraceEntry>& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (const TraceEntry& e : trace) {
    json rec{{"step", e.step},
             {"loss", e.loss},
             {"gp", e.gp},
             {"h", e.bound},
             {"divergence_estimate", e.divergence}};
    if (e.transform_snapshot.size() > 0) {
      rec["transform"] = vector_json(e.transform_snapshot);
    }
    out << rec.dump() << "\n";
  }
}

struct KindFlag {
  std::string kind = "mass";
  double mass = -1.0;       // <0: default to min(total masses) downstream
  double threshold = -1.0;  // must be set for the distance kind

  DivergenceKind parse() const {
    if (kind == "mass") return DivergenceKind::kMass;
    if (kind == "distance") return DivergenceKind::kDistance;
    throw CLI::ValidationError("--kind must be 'mass' or 'distance'");
  }
};

// ---------------------------------------------------------------------------
// gen

struct GenState {
  std::string shape = "sphere";
  SynthesisConfig cfg;
  std::string out_dir = ".";
  bool timings = false;
  std::string config_path;
};

int run_gen(const json& file_cfg, CLI::App& cmd) {
  auto st = std::make_shared<GenState>();
  auto* shape = &st->shape;
  auto* cfgp = &st->cfg;
  auto* out_dir = &st->out_dir;
  auto* timings = &st->timings;
  auto* config_path = &st->config_path;

  config_default(file_cfg, "shape", *shape);
  config_default(file_cfg, "shape-file", cfgp->shape_file);
  config_default(file_cfg, "n", cfgp->points);
  config_default(file_cfg, "rotation-deg", cfgp->rotation_deg);
  config_default(file_cfg, "translation", cfgp->translation);
  config_default(file_cfg, "rbf-centers", cfgp->rbf_centers);
  config_default(file_cfg, "deform", cfgp->deform_magnitude);
  config_default(file_cfg, "outliers", cfgp->outliers);
  config_default(file_cfg, "noise", cfgp->noise_sigma);
  config_default(file_cfg, "crop-retain", cfgp->crop_retain);
  config_default(file_cfg, "seed", cfgp->seed);
  config_default(file_cfg, "out-dir", *out_dir);

  cmd.add_option("--shape", *shape, "sphere | sphere-section | helix");
  cmd.add_option("--shape-file", cfgp->shape_file,
                 "load base points from a file instead of sampling a shape");
  cmd.add_option("--n", cfgp->points, "base point count");
  cmd.add_option("--rotation-deg", cfgp->rotation_deg, "ground-truth rotation");
  cmd.add_option("--translation", cfgp->translation,
                 "ground-truth translation magnitude");
  cmd.add_option("--rbf-centers", cfgp->rbf_centers,
                 "smooth deformation centers (0 = rigid only)");
  cmd.add_option("--deform", cfgp->deform_magnitude,
                 "target mean displacement of the deformation field");
  cmd.add_option("--outliers", cfgp->outliers,
                 "uniform outliers appended to the reference");
  cmd.add_option("--noise", cfgp->noise_sigma, "iid Gaussian noise sigma");
  cmd.add_option("--crop-retain", cfgp->crop_retain,
                 "fraction kept on each side of the crop plane (1 = no crop)");
  cmd.add_option("--seed", cfgp->seed, "RNG seed");
  cmd.add_option("--out-dir", *out_dir, "output directory");
  cmd.add_flag("--timings", *timings, "record wall-clock time in the manifest");
  cmd.add_option("--config", *config_path, "JSON file with default options");

  cmd.callback([st] {
    auto* shape = &st->shape;
    auto* cfgp = &st->cfg;
    auto* out_dir = &st->out_dir;
    auto* timings = &st->timings;
    const auto start = std::chrono::steady_clock::now();
    if (cfgp->shape_file.empty()) {
      if (*shape == "sphere") {
        cfgp->shape = ShapeKind::kSphere;
      } else if (*shape == "sphere-section" || *shape == "sphere_section") {
        cfgp->shape = ShapeKind::kSphereSection;
      } else if (*shape == "helix") {
        cfgp->shape = ShapeKind::kHelix;
      } else {
        throw CLI::ValidationError("unknown --shape " + *shape);
      }
    }
    SyntheticCase cse = synthesize_case(*cfgp);
    ensure_dir(*out_dir);
    const std::string source_path = out_path(*out_dir, "source.txt");
    const std::string reference_path = out_path(*out_dir, "reference.txt");
    const std::string gt_path = out_path(*out_dir, "gt_moved.txt");
    const std::string meta_path = out_path(*out_dir, "gt_meta.json");
    save_points(source_path, cse.source);
    save_points(reference_path, cse.reference);
    save_points(gt_path, DiscreteMeasure::uniform(cse.gt_moved));

    json meta{{"rotation", matrix3_json(cse.gt_linear)},
              {"translation",
               {cse.gt_translation(0), cse.gt_translation(1),
                cse.gt_translation(2)}},
              {"diameter", cse.diameter},
              {"source_in_overlap", json::array()},
              {"reference_is_outlier", json::array()}};
    for (char f : cse.source_in_overlap) {
      meta["source_in_overlap"].push_back(static_cast<int>(f));
    }
    for (char f : cse.reference_is_outlier) {
      meta["reference_is_outlier"].push_back(static_cast<int>(f));
    }
    write_json(meta_path, meta);

    RunManifest manifest;
    manifest.command = "gen";
    manifest.seed = cfgp->seed;
    manifest.config = json{{"shape", *shape},
                           {"shape-file", cfgp->shape_file},
                           {"n", cfgp->points},
                           {"rotation-deg", cfgp->rotation_deg},
                           {"translation", cfgp->translation},
                           {"rbf-centers", cfgp->rbf_centers},
                           {"deform", cfgp->deform_magnitude},
                           {"outliers", cfgp->outliers},
                           {"noise", cfgp->noise_sigma},
                           {"crop-retain", cfgp->crop_retain},
                           {"seed", cfgp->seed},
                           {"out-dir", *out_dir}};
    if (!cfgp->shape_file.empty()) manifest.inputs.push_back(cfgp->shape_file);
    manifest.outputs = {source_path, reference_path, gt_path, meta_path};
    manifest.record_timings = *timings;
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    write_json(out_path(*out_dir, "manifest.json"), manifest.to_json());
  });
  return 0;
}

// ---------------------------------------------------------------------------
// oracle

struct OracleState {
  std::string alpha_path;
  std::string beta_path;
  double mass = -1.0;
  double distance = -1.0;
  std::string out_dir = ".";
  bool timings = false;
  std::string config_path;
};

int run_oracle(const json& file_cfg, CLI::App& cmd) {
  auto st = std::make_shared<OracleState>();
  auto* alpha_path = &st->alpha_path;
  auto* beta_path = &st->beta_path;
  auto* mass = &st->mass;
  auto* distance = &st->distance;
  auto* out_dir = &st->out_dir;
  auto* timings = &st->timings;
  auto* config_path = &st->config_path;

  config_default(file_cfg, "alpha", *alpha_path);
  config_default(file_cfg, "beta", *beta_path);
  config_default(file_cfg, "mass", *mass);
  config_default(file_cfg, "distance", *distance);
  config_default(file_cfg, "out-dir", *out_dir);

  cmd.add_option("--alpha", *alpha_path, "reference measure file")->required();
  cmd.add_option("--beta", *beta_path, "second measure file")->required();
  cmd.add_option("--mass", *mass, "solve the mass-constrained kind at m");
  cmd.add_option("--distance", *distance, "solve the threshold kind at h");
  cmd.add_option("--out-dir", *out_dir, "output directory");
  cmd.add_flag("--timings", *timings, "record wall-clock time in the manifest");
  cmd.add_option("--config", *config_path, "JSON file with default options");

  cmd.callback([st] {
    auto* alpha_path = &st->alpha_path;
    auto* beta_path = &st->beta_path;
    auto* mass = &st->mass;
    auto* distance = &st->distance;
    auto* out_dir = &st->out_dir;
    auto* timings = &st->timings;
    const auto start = std::chrono::steady_clock::now();
    const bool has_mass = *mass >= 0.0;
    const bool has_distance = *distance >= 0.0;
    if (has_mass == has_distance) {
      throw CLI::ValidationError(
          "oracle: give exactly one of --mass or --distance");
    }
    const DiscreteMeasure alpha = load_points(*alpha_path);
    const DiscreteMeasure beta = load_points(*beta_path);
    const TransportPlan plan = has_mass
                                   ? solve_partial_mass(alpha, beta, *mass)
                                   : solve_distance_threshold(alpha, beta,
                                                              *distance);
    ensure_dir(*out_dir);
    const std::string plan_path = out_path(*out_dir, "plan.csv");
    Eigen::MatrixXd rows(plan.entries.size(), 3);
    for (std::size_t e = 0; e < plan.entries.size(); ++e) {
      rows(static_cast<Eigen::Index>(e), 0) = plan.entries[e].i;
      rows(static_cast<Eigen::Index>(e), 1) = plan.entries[e].j;
      rows(static_cast<Eigen::Index>(e), 2) = plan.entries[e].mass;
    }
    write_csv(plan_path, {"i", "j", "mass"}, rows);

    const Eigen::VectorXd res_a =
        alpha.weights() - plan.row_mass(alpha.size());
    const Eigen::VectorXd res_b = beta.weights() - plan.col_mass(beta.size());
    const std::string summary_path = out_path(*out_dir, "summary.json");
    write_json(summary_path,
               json{{"objective", plan.objective},
                    {"total_mass", plan.transported},
                    {"residual_masses",
                     json{{"alpha", vector_json(res_a)},
                          {"beta", vector_json(res_b)}}}});

    RunManifest manifest;
    manifest.command = "oracle";
    manifest.config = json{{"alpha", *alpha_path},
                           {"beta", *beta_path},
                           {"mass", has_mass ? json(*mass) : json()},
                           {"distance", has_distance ? json(*distance) : json()},
                           {"out-dir", *out_dir}};
    manifest.inputs = {*alpha_path, *beta_path};
    manifest.outputs = {plan_path, summary_path};
    manifest.record_timings = *timings;
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    write_json(out_path(*out_dir, "manifest.json"), manifest.to_json());
  });
  return 0;
}

// ---------------------------------------------------------------------------
// shared pwan flag block (estimate / register)

struct PwanFlags {
  KindFlag kind;
  int steps = 2000;
  int updates = 10;
  int batch = 0;
  double lr = 1e-4;
  double theta_lr = 1e-4;
  double theta_lr_decay = 1.0;
  double gp_coeff = 1.0;
  int gp_interp = -1;  // -1 = keep the command's default
  std::vector<int> hidden;
  double bound0 = -1.0;
  int plateau_window = 0;
  double plateau_tol = 1e-4;
  int trace_every = 1;
  bool snapshots = false;
  std::uint64_t seed = 0;

  void defaults_from(const json& cfg) {
    config_default(cfg, "kind", kind.kind);
    config_default(cfg, "mass", kind.mass);
    config_default(cfg, "threshold", kind.threshold);
    config_default(cfg, "steps", steps);
    config_default(cfg, "updates", updates);
    config_default(cfg, "batch", batch);
    config_default(cfg, "lr", lr);
    config_default(cfg, "theta-lr", theta_lr);
    config_default(cfg, "theta-lr-decay", theta_lr_decay);
    config_default(cfg, "gp-coeff", gp_coeff);
    config_default(cfg, "gp-interpolates", gp_interp);
    config_default(cfg, "hidden", hidden);
    config_default(cfg, "bound0", bound0);
    config_default(cfg, "plateau-window", plateau_window);
    config_default(cfg, "plateau-tol", plateau_tol);
    config_default(cfg, "trace-every", trace_every);
    config_default(cfg, "seed", seed);
  }

  void add_options(CLI::App& cmd) {
    cmd.add_option("--kind", kind.kind, "mass | distance");
    cmd.add_option("--mass", kind.mass,
                   "transported-mass target m (mass kind)");
    cmd.add_option("--threshold", kind.threshold,
                   "distance threshold h (distance kind)");
    cmd.add_option("--steps", steps, "outer steps");
    cmd.add_option("--updates", updates, "potential updates per outer step");
    cmd.add_option("--batch", batch, "sample batch size (0 = full batch)");
    cmd.add_option("--lr", lr, "potential learning rate");
    cmd.add_option("--theta-lr", theta_lr, "transform learning rate");
    cmd.add_option("--theta-lr-decay", theta_lr_decay,
                   "multiplicative transform-lr decay per outer step");
    cmd.add_option("--gp-coeff", gp_coeff, "gradient penalty coefficient");
    cmd.add_option("--gp-interpolates", gp_interp,
                   "penalise interpolates between supports (1) or data points "
                   "only (0); -1 keeps the command default")
        ->check(CLI::Range(-1, 1));
    cmd.add_option("--hidden", hidden, "hidden layer widths (overrides net)")
        ->delimiter(',');
    cmd.add_option("--bound0", bound0,
                   "initial learnable bound h (mass kind; <0 = default)");
    cmd.add_option("--plateau-window", plateau_window,
                   "early-stop window in steps (0 = off)");
    cmd.add_option("--plateau-tol", plateau_tol, "plateau relative tolerance");
    cmd.add_option("--trace-every", trace_every, "trace sampling stride");
    cmd.add_flag("--snapshots", snapshots, "store transform snapshots in trace");
    cmd.add_option("--seed", seed, "RNG seed");
  }

  void apply(PwanConfig& pc) const {
    pc.kind = kind.parse();
    if (kind.mass >= 0.0) pc.mass = kind.mass;
    if (kind.threshold >= 0.0) pc.threshold = kind.threshold;
    pc.outer_steps = steps;
    pc.potential_updates = updates;
    pc.batch_size = batch;
    pc.potential_lr = lr;
    pc.theta_lr = theta_lr;
    pc.theta_lr_decay = theta_lr_decay;
    pc.gp_coefficient = gp_coeff;
    if (gp_interp >= 0) pc.gp_interpolates = gp_interp != 0;
    if (!hidden.empty()) {
      pc.net.hidden = hidden;
      pc.net.skips.clear();
    }
    if (bound0 > 0.0) pc.initial_bound = bound0;
    pc.plateau_window = plateau_window;
    pc.plateau_tol = plateau_tol;
    pc.trace_every = trace_every;
    pc.snapshot_transforms = snapshots;
    pc.seed = seed;
  }

  json echo() const {
    return json{{"kind", kind.kind},
                {"mass", kind.mass},
                {"threshold", kind.threshold},
                {"steps", steps},
                {"updates", updates},
                {"batch", batch},
                {"lr", lr},
                {"theta-lr", theta_lr},
                {"theta-lr-decay", theta_lr_decay},
                {"gp-coeff", gp_coeff},
                {"gp-interpolates", gp_interp},
                {"hidden", hidden},
                {"bound0", bound0},
                {"plateau-window", plateau_window},
                {"plateau-tol", plateau_tol},
                {"trace-every", trace_every},
                {"snapshots", snapshots},
                {"seed", seed}};
  }
};

// ---------------------------------------------------------------------------
// estimate

struct EstimateState {
  std::string alpha_path;
  std::string beta_path;
  PwanFlags flags;
  std::string out_dir = ".";
  bool timings = false;
  std::string config_path;
};

int run_estimate(const json& file_cfg, CLI::App& cmd) {
  auto st = std::make_shared<EstimateState>();
  auto* alpha_path = &st->alpha_path;
  auto* beta_path = &st->beta_path;
  auto* flags = &st->flags;
  auto* out_dir = &st->out_dir;
  auto* timings = &st->timings;
  auto* config_path = &st->config_path;

  config_default(file_cfg, "alpha", *alpha_path);
  config_default(file_cfg, "beta", *beta_path);
  config_default(file_cfg, "out-dir", *out_dir);
  flags->defaults_from(file_cfg);

  cmd.add_option("--alpha", *alpha_path, "reference measure file")->required();
  cmd.add_option("--beta", *beta_path, "second measure file")->required();
  flags->add_options(cmd);
  cmd.add_option("--out-dir", *out_dir, "output directory");
  cmd.add_flag("--timings", *timings, "record wall-clock time in the manifest");
  cmd.add_option("--config", *config_path, "JSON file with default options");

  cmd.callback([st] {
    auto* alpha_path = &st->alpha_path;
    auto* beta_path = &st->beta_path;
    auto* flags = &st->flags;
    auto* out_dir = &st->out_dir;
    auto* timings = &st->timings;
    const auto start = std::chrono::steady_clock::now();
    const DiscreteMeasure alpha = load_points(*alpha_path);
    const DiscreteMeasure beta = load_points(*beta_path);
    PwanConfig pc;
    flags->apply(pc);
    if (pc.kind == DivergenceKind::kMass && flags->kind.mass < 0.0) {
      pc.mass = std::min(alpha.total_mass(), beta.total_mass());
    }
    if (pc.kind == DivergenceKind::kDistance && flags->kind.threshold < 0.0) {
      throw CLI::ValidationError("estimate: distance kind needs --threshold");
    }
    const DivergenceEstimate est = estimate_divergence(alpha, beta, pc);

    ensure_dir(*out_dir);
    const std::string trace_path = out_path(*out_dir, "trace.jsonl");
    write_trace(trace_path, est.trace);
    const std::string est_path = out_path(*out_dir, "estimate.json");
    write_json(est_path, json{{"estimate", est.value},
                              {"bound", est.bound},
                              {"trace", trace_path}});

    RunManifest manifest;
    manifest.command = "estimate";
    manifest.seed = flags->seed;
    manifest.config = flags->echo();
    manifest.config["alpha"] = *alpha_path;
    manifest.config["beta"] = *beta_path;
    manifest.config["out-dir"] = *out_dir;
    manifest.inputs = {*alpha_path, *beta_path};
    manifest.outputs = {est_path, trace_path};
    manifest.record_timings = *timings;
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    write_json(out_path(*out_dir, "manifest.json"), manifest.to_json());
  });
  return 0;
}

// ---------------------------------------------------------------------------
// register

struct RegisterState {
  std::string source_path;
  std::string reference_path;
  std::string mode = "nonrigid";
  PwanFlags flags;
  double lambda = -1.0;
  double rho = -1.0;
  double coherence_sigma = -1.0;
  int rank = -1;
  int ft_iters = -1;
  double ft_step = -1.0;
  double ft_tol = -1.0;
  std::string gt_moved_path;
  std::string gt_meta_path;
  std::string out_dir = ".";
  bool timings = false;
  std::string config_path;
  bool steps_set = false;
  bool updates_set = false;
  bool plateau_set = false;
};

int run_register(const json& file_cfg, CLI::App& cmd) {
  auto st = std::make_shared<RegisterState>();
  auto* source_path = &st->source_path;
  auto* reference_path = &st->reference_path;
  auto* mode = &st->mode;
  auto* flags = &st->flags;
  auto* lambda = &st->lambda;
  auto* rho = &st->rho;
  auto* coherence_sigma = &st->coherence_sigma;
  auto* rank = &st->rank;
  auto* ft_iters = &st->ft_iters;
  auto* ft_step = &st->ft_step;
  auto* ft_tol = &st->ft_tol;
  auto* gt_moved_path = &st->gt_moved_path;
  auto* gt_meta_path = &st->gt_meta_path;
  auto* out_dir = &st->out_dir;
  auto* timings = &st->timings;
  auto* config_path = &st->config_path;
  auto* steps_set = &st->steps_set;
  auto* updates_set = &st->updates_set;
  auto* plateau_set = &st->plateau_set;

  config_default(file_cfg, "source", *source_path);
  config_default(file_cfg, "reference", *reference_path);
  config_default(file_cfg, "mode", *mode);
  config_default(file_cfg, "lambda", *lambda);
  config_default(file_cfg, "rho", *rho);
  config_default(file_cfg, "coherence-sigma", *coherence_sigma);
  config_default(file_cfg, "rank", *rank);
  config_default(file_cfg, "ft-iters", *ft_iters);
  config_default(file_cfg, "ft-step", *ft_step);
  config_default(file_cfg, "ft-tol", *ft_tol);
  config_default(file_cfg, "gt-moved", *gt_moved_path);
  config_default(file_cfg, "gt-meta", *gt_meta_path);
  config_default(file_cfg, "out-dir", *out_dir);
  flags->defaults_from(file_cfg);
  if (file_cfg.contains("steps")) *steps_set = true;
  if (file_cfg.contains("updates")) *updates_set = true;
  if (file_cfg.contains("plateau-window")) *plateau_set = true;

  cmd.add_option("--source", *source_path, "moving point set")->required();
  cmd.add_option("--reference", *reference_path, "target point set")
      ->required();
  cmd.add_option("--mode", *mode, "rigid | nonrigid");
  flags->add_options(cmd);
  cmd.add_option("--lambda", *lambda, "coherence strength (nonrigid)");
  cmd.add_option("--rho", *rho, "coherence kernel width");
  cmd.add_option("--coherence-sigma", *coherence_sigma,
                 "coherence diagonal stabilizer");
  cmd.add_option("--rank", *rank, "coherence factor rank (0 = dense)");
  cmd.add_option("--ft-iters", *ft_iters, "fine-tune iteration budget");
  cmd.add_option("--ft-step", *ft_step, "fine-tune initial step");
  cmd.add_option("--ft-tol", *ft_tol, "fine-tune relative tolerance");
  cmd.add_option("--gt-moved", *gt_moved_path,
                 "ground-truth moved set for MSE reporting");
  cmd.add_option("--gt-meta", *gt_meta_path,
                 "gen's gt_meta.json for rotation-error reporting");
  cmd.add_option("--out-dir", *out_dir, "output directory");
  cmd.add_flag("--timings", *timings, "record phase timings in the report");
  cmd.add_option("--config", *config_path, "JSON file with default options");

  // The pipeline defaults (update counts, plateau window) depend on the mode;
  // remember whether the user pinned them.
  cmd.callback([st, &cmd] {
    auto* source_path = &st->source_path;
    auto* reference_path = &st->reference_path;
    auto* mode = &st->mode;
    auto* flags = &st->flags;
    auto* lambda = &st->lambda;
    auto* rho = &st->rho;
    auto* coherence_sigma = &st->coherence_sigma;
    auto* rank = &st->rank;
    auto* ft_iters = &st->ft_iters;
    auto* ft_step = &st->ft_step;
    auto* ft_tol = &st->ft_tol;
    auto* gt_moved_path = &st->gt_moved_path;
    auto* gt_meta_path = &st->gt_meta_path;
    auto* out_dir = &st->out_dir;
    auto* timings = &st->timings;
    auto* steps_set = &st->steps_set;
    auto* updates_set = &st->updates_set;
    auto* plateau_set = &st->plateau_set;
    const auto start = std::chrono::steady_clock::now();
    TransformKind tk;
    if (*mode == "rigid") {
      tk = TransformKind::kRigid;
    } else if (*mode == "nonrigid" || *mode == "non-rigid") {
      tk = TransformKind::kNonRigid;
    } else {
      throw CLI::ValidationError("unknown --mode " + *mode);
    }
    RegistrationConfig rc = default_registration_config(tk);
    const int default_updates = rc.pwan.potential_updates;
    const int default_plateau = rc.pwan.plateau_window;
    const int default_steps = rc.pwan.outer_steps;
    flags->apply(rc.pwan);
    if (!*updates_set && cmd.count("--updates") == 0) {
      rc.pwan.potential_updates = default_updates;
    }
    if (!*plateau_set && cmd.count("--plateau-window") == 0) {
      rc.pwan.plateau_window = default_plateau;
    }
    if (!*steps_set && cmd.count("--steps") == 0) {
      rc.pwan.outer_steps = default_steps;
    }
    if (*lambda >= 0.0) rc.coherence.lambda = *lambda;
    if (*rho > 0.0) rc.coherence.rho = *rho;
    if (*coherence_sigma > 0.0) rc.coherence.sigma = *coherence_sigma;
    if (*rank >= 0) rc.coherence.rank = *rank;
    rc.coherence.seed = flags->seed;
    if (*ft_iters >= 0) rc.fine_tune.max_iterations = *ft_iters;
    if (*ft_step > 0.0) rc.fine_tune.step = *ft_step;
    if (*ft_tol > 0.0) rc.fine_tune.tolerance = *ft_tol;

    const DiscreteMeasure source = load_points(*source_path, 3);
    const DiscreteMeasure reference = load_points(*reference_path, 3);
    Eigen::MatrixXd gt_moved;
    const bool has_gt = !gt_moved_path->empty();
    if (has_gt) {
      gt_moved = load_points(*gt_moved_path, 3).points();
    }
    if (rc.pwan.kind == DivergenceKind::kDistance &&
        flags->kind.threshold < 0.0) {
      throw CLI::ValidationError("register: distance kind needs --threshold");
    }

    RegistrationResult result = register_point_sets(
        source, reference, rc, has_gt ? &gt_moved : nullptr);

    ensure_dir(*out_dir);
    const std::string moved_path = out_path(*out_dir, "moved.txt");
    save_points(moved_path, DiscreteMeasure::uniform(result.moved));

    json transform_json{{"mode", *mode}};
    std::vector<std::string> outputs{moved_path};
    if (tk == TransformKind::kRigid) {
      const auto& rigid = dynamic_cast<const RigidTransform&>(*result.transform);
      Eigen::Vector4d q = rigid.params().head<4>();
      q /= q.norm();
      transform_json["quaternion"] = {q(0), q(1), q(2), q(3)};
      transform_json["t"] = {rigid.params()(4), rigid.params()(5),
                             rigid.params()(6)};
    } else {
      const auto& nr = dynamic_cast<const NonRigidTransform&>(*result.transform);
      const Eigen::VectorXd& th = nr.params();
      Eigen::Matrix3d A = Eigen::Map<const Eigen::Matrix3d>(th.data());
      transform_json["A"] = matrix3_json(A);
      transform_json["t"] = {th(9), th(10), th(11)};
      const std::string disp_path = out_path(*out_dir, "displacement.txt");
      const Eigen::Index r = (th.size() - nr.displacement_offset()) / 3;
      Eigen::MatrixXd V = Eigen::Map<const Eigen::MatrixXd>(
          th.data() + nr.displacement_offset(), r, 3);
      save_points(disp_path, DiscreteMeasure::uniform(V));
      transform_json["displacement_file"] = disp_path;
      outputs.push_back(disp_path);
    }
    const std::string transform_path = out_path(*out_dir, "transform.json");
    write_json(transform_path, transform_json);
    outputs.push_back(transform_path);

    const std::string trace_path = out_path(*out_dir, "trace.jsonl");
    write_trace(trace_path, result.report.trace);
    outputs.push_back(trace_path);

    json cfg_echo = flags->echo();
    cfg_echo["source"] = *source_path;
    cfg_echo["reference"] = *reference_path;
    cfg_echo["mode"] = *mode;
    cfg_echo["lambda"] = rc.coherence.lambda;
    cfg_echo["rho"] = rc.coherence.rho;
    cfg_echo["coherence-sigma"] = rc.coherence.sigma;
    cfg_echo["rank"] = rc.coherence.rank;
    cfg_echo["ft-iters"] = rc.fine_tune.max_iterations;
    cfg_echo["ft-step"] = rc.fine_tune.step;
    cfg_echo["ft-tol"] = rc.fine_tune.tolerance;
    cfg_echo["steps"] = rc.pwan.outer_steps;
    cfg_echo["updates"] = rc.pwan.potential_updates;
    cfg_echo["plateau-window"] = rc.pwan.plateau_window;
    cfg_echo["out-dir"] = *out_dir;

    json report{{"mse", has_gt ? json(result.report.mse) : json()},
                {"rotation_error_deg", json()},
                {"divergence", result.report.divergence},
                {"bound", result.report.bound},
                {"pwan_steps", result.report.pwan_steps},
                {"fine_tune",
                 json{{"iterations", result.report.fine_tune.iterations},
                      {"objective", result.report.fine_tune.objective},
                      {"converged", result.report.fine_tune.converged},
                      {"degenerate", result.report.fine_tune.degenerate}}},
                {"timings", json()},
                {"config", cfg_echo}};
    if (!gt_meta_path->empty() && tk == TransformKind::kRigid) {
      const json meta = load_json(*gt_meta_path);
      Eigen::Matrix3d gt_rot;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          gt_rot(i, j) = meta.at("rotation").at(i).at(j).get<double>();
        }
      }
      const auto& rigid = dynamic_cast<const RigidTransform&>(*result.transform);
      report["rotation_error_deg"] = rotation_error_deg(rigid.rotation(), gt_rot);
    }
    if (*timings) {
      report["timings"] = json{{"pwan_seconds", result.report.pwan_seconds},
                               {"fine_tune_seconds",
                                result.report.fine_tune_seconds}};
    }
    const std::string report_path = out_path(*out_dir, "report.json");
    write_json(report_path, report);
    outputs.push_back(report_path);

    RunManifest manifest;
    manifest.command = "register";
    manifest.seed = flags->seed;
    manifest.config = cfg_echo;
    manifest.inputs = {*source_path, *reference_path};
    if (has_gt) manifest.inputs.push_back(*gt_moved_path);
    if (!gt_meta_path->empty()) manifest.inputs.push_back(*gt_meta_path);
    manifest.outputs = outputs;
    manifest.record_timings = *timings;
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    write_json(out_path(*out_dir, "manifest.json"), manifest.to_json());
  });
  return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepFlags {
  std::string name;
  int outliers = 1000;
  int instances = 5;
  int points = 100;
  int sets = 10;
  double rho = 2.0;
  double sigma = 1.0;
  double omega = 0.2;
  int updates = 2000;
  std::vector<int> hidden{32, 32};
  std::uint64_t seed = 0;
};

Eigen::MatrixXd random_cloud(int n, int dim, Rng& rng,
                             const Eigen::RowVectorXd& shift) {
  Eigen::MatrixXd pts(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) {
      pts(i, j) = rng.normal() + shift(j);
    }
  }
  return pts;
}

struct SweepState {
  SweepFlags flags;
  std::string out_dir = ".";
  bool timings = false;
  std::string config_path;
};

int run_sweep(const json& file_cfg, CLI::App& cmd) {
  auto st = std::make_shared<SweepState>();
  auto* flags = &st->flags;
  auto* out_dir = &st->out_dir;
  auto* timings = &st->timings;
  auto* config_path = &st->config_path;

  config_default(file_cfg, "outliers", flags->outliers);
  config_default(file_cfg, "instances", flags->instances);
  config_default(file_cfg, "points", flags->points);
  config_default(file_cfg, "sets", flags->sets);
  config_default(file_cfg, "rho", flags->rho);
  config_default(file_cfg, "sigma", flags->sigma);
  config_default(file_cfg, "omega", flags->omega);
  config_default(file_cfg, "updates", flags->updates);
  config_default(file_cfg, "hidden", flags->hidden);
  config_default(file_cfg, "seed", flags->seed);
  config_default(file_cfg, "out-dir", *out_dir);

  cmd.add_option("name", flags->name,
                 "fig5 | fig12 | oracle-vs-dual | nystrom-k")
      ->required();
  cmd.add_option("--outliers", flags->outliers, "fig5 outlier count N");
  cmd.add_option("--instances", flags->instances,
                 "oracle-vs-dual instance count per kind");
  cmd.add_option("--points", flags->points,
                 "points per generated set (oracle-vs-dual / nystrom-k)");
  cmd.add_option("--sets", flags->sets, "nystrom-k random set count");
  cmd.add_option("--rho", flags->rho, "nystrom-k kernel width");
  cmd.add_option("--sigma", flags->sigma, "toy discrepancy variance");
  cmd.add_option("--omega", flags->omega, "toy KL mixture weight (fig5)");
  cmd.add_option("--updates", flags->updates,
                 "oracle-vs-dual potential updates per instance");
  cmd.add_option("--hidden", flags->hidden, "oracle-vs-dual hidden widths")
      ->delimiter(',');
  cmd.add_option("--seed", flags->seed, "RNG seed");
  cmd.add_option("--out-dir", *out_dir, "output directory");
  cmd.add_flag("--timings", *timings, "record wall-clock time in the manifest");
  cmd.add_option("--config", *config_path, "JSON file with default options");

  cmd.callback([st] {
    auto* flags = &st->flags;
    auto* out_dir = &st->out_dir;
    auto* timings = &st->timings;
    const auto start = std::chrono::steady_clock::now();
    ensure_dir(*out_dir);
    std::string csv_path;
    if (flags->name == "fig5") {
      Fig5Config fc;
      fc.outliers = flags->outliers;
      fc.toy.sigma = flags->sigma;
      fc.toy.omega = flags->omega;
      fc.seed = flags->seed;
      // Rows are independent; recompute in parallel units then merge.
      const SweepTable table = fig5_sweep(fc);
      csv_path = out_path(*out_dir, "fig5.csv");
      write_csv(csv_path, table.columns, table.values);
    } else if (flags->name == "fig12") {
      Fig12Config fc;
      fc.toy.sigma = flags->sigma;
      const SweepTable table = fig12_sweep(fc);
      csv_path = out_path(*out_dir, "fig12.csv");
      write_csv(csv_path, table.columns, table.values);
    } else if (flags->name == "oracle-vs-dual") {
      const int per_kind = flags->instances;
      const int units = 2 * per_kind;
      Eigen::MatrixXd rows(units, 6);
      parallel_units(units, [&](int u) {
        const int kind_idx = u / per_kind;  // 0 = mass, 1 = distance
        const int inst = u % per_kind;
        Rng rng(flags->seed + 1000 * static_cast<std::uint64_t>(u) + 17);
        Eigen::RowVectorXd zero = Eigen::RowVectorXd::Zero(2);
        Eigen::RowVectorXd shift = Eigen::RowVectorXd::Constant(2, 0.5);
        const DiscreteMeasure alpha = DiscreteMeasure::uniform(
            random_cloud(flags->points, 2, rng, zero));
        const DiscreteMeasure beta = DiscreteMeasure::uniform(
            random_cloud(flags->points, 2, rng, shift));
        PwanConfig pc;
        pc.net.hidden = flags->hidden;
        pc.net.skips.clear();
        pc.outer_steps = flags->updates;
        pc.potential_updates = 1;
        pc.trace_every = flags->updates;
        pc.seed = flags->seed + static_cast<std::uint64_t>(u);
        double oracle = 0.0;
        if (kind_idx == 0) {
          pc.kind = DivergenceKind::kMass;
          pc.mass = 0.5 * std::min(alpha.total_mass(), beta.total_mass());
          oracle = solve_partial_mass(alpha, beta, pc.mass).objective;
        } else {
          pc.kind = DivergenceKind::kDistance;
          pc.threshold = 0.3 * joint_diameter(alpha, beta);
          const TransportPlan plan =
              solve_distance_threshold(alpha, beta, pc.threshold);
          oracle = plan.objective;
        }
        const DivergenceEstimate est = estimate_divergence(alpha, beta, pc);
        const double denom = std::max(std::abs(oracle), 1e-12);
        rows(u, 0) = inst;
        rows(u, 1) = kind_idx;
        rows(u, 2) = oracle;
        rows(u, 3) = est.value;
        rows(u, 4) = std::abs(est.value - oracle) / denom;
        rows(u, 5) = 0.0;
      });
      rows.col(5).setConstant(rows.col(4).mean());
      csv_path = out_path(*out_dir, "oracle_vs_dual.csv");
      write_csv(csv_path,
                {"instance", "kind", "oracle", "estimate", "rel_error",
                 "mean_rel_error"},
                rows);
    } else if (flags->name == "nystrom-k") {
      const int r = flags->points;
      const std::vector<int> ks{r / 8, r / 4, r / 2, r};
      const int units = flags->sets;
      Eigen::MatrixXd rows(units * static_cast<int>(ks.size()), 3);
      parallel_units(units, [&](int s) {
        Rng rng(flags->seed + 7919 * static_cast<std::uint64_t>(s));
        Eigen::RowVectorXd zero = Eigen::RowVectorXd::Zero(3);
        const Eigen::MatrixXd Y = random_cloud(r, 3, rng, zero);
        const Eigen::MatrixXd G = gaussian_kernel(Y, flags->rho);
        const double g_norm = G.norm();
        for (std::size_t ki = 0; ki < ks.size(); ++ki) {
          const NystromFactor f = nystrom_decompose(
              Y, flags->rho, ks[ki], flags->seed + 31 * static_cast<std::uint64_t>(s) + ki);
          const double err = (G - f.reconstruct()).norm() / g_norm;
          const int row = s * static_cast<int>(ks.size()) + static_cast<int>(ki);
          rows(row, 0) = s;
          rows(row, 1) = ks[ki];
          rows(row, 2) = err;
        }
      });
      csv_path = out_path(*out_dir, "nystrom_k.csv");
      write_csv(csv_path, {"set", "k", "rel_error"}, rows);
    } else {
      throw CLI::ValidationError("unknown sweep " + flags->name);
    }

    RunManifest manifest;
    manifest.command = "sweep";
    manifest.seed = flags->seed;
    manifest.config = json{{"name", flags->name},
                           {"outliers", flags->outliers},
                           {"instances", flags->instances},
                           {"points", flags->points},
                           {"sets", flags->sets},
                           {"rho", flags->rho},
                           {"sigma", flags->sigma},
                           {"omega", flags->omega},
                           {"updates", flags->updates},
                           {"hidden", flags->hidden},
                           {"seed", flags->seed},
                           {"out-dir", *out_dir}};
    manifest.outputs = {csv_path};
    manifest.record_timings = *timings;
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    write_json(out_path(*out_dir, "manifest.json"), manifest.to_json());
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"partial-transport toolkit"};
  app.set_version_flag("--version", pwan::kToolkitVersion);
  app.require_subcommand(1);

  json file_cfg;
  try {
    file_cfg = preload_config(argc, argv);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }

  CLI::App* gen = app.add_subcommand("gen", "synthesize a registration case");
  run_gen(file_cfg, *gen);
  CLI::App* oracle =
      app.add_subcommand("oracle", "solve a partial transport problem exactly");
  run_oracle(file_cfg, *oracle);
  CLI::App* estimate =
      app.add_subcommand("estimate", "neural divergence estimate");
  run_estimate(file_cfg, *estimate);
  CLI::App* reg =
      app.add_subcommand("register", "align a source set to a reference");
  run_register(file_cfg, *reg);
  CLI::App* sweep = app.add_subcommand("sweep", "reproducible study sweeps");
  run_sweep(file_cfg, *sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
