#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace pwan {

inline constexpr const char* kToolkitVersion = "0.1.0";

// Fixed 17-significant-digit decimal text (printf %.17g): round-trips every
// finite double exactly and is byte-stable across runs. All numeric text the
// toolkit emits (CSV cells, point files) goes through this.
std::string format_double(double value);

// FNV-1a 64-bit digest of a file's bytes, as 16 lowercase hex characters.
// Throws std::runtime_error when the file cannot be read.
std::string file_digest(const std::string& path);

// Writes a CSV: header row from `columns`, then one row per matrix row with
// cells through format_double. Column count must match. Throws on I/O errors.
void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const Eigen::MatrixXd& values);

// Serializes with 2-space indentation and a trailing newline (keys sorted by
// the JSON library), creating or replacing `path`.
void write_json(const std::string& path, const nlohmann::json& value);

nlohmann::json load_json(const std::string& path);

// Audit record emitted once per CLI run. Timings stay null unless explicitly
// requested so reruns of the same invocation are byte-identical.
struct RunManifest {
  std::string command;               // subcommand name
  nlohmann::json config;             // fully resolved configuration echo
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;   // paths; digests computed on write
  std::vector<std::string> outputs;  // paths written by the run
  bool record_timings = false;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;    // digests inputs as a side effect
};

}  // namespace pwan
