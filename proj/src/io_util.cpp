#include "pwan/io_util.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace pwan {

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("file_digest: cannot read " + path);
  }
  std::uint64_t hash = 0xcbf29ce484222325ull;
  char chunk[4096];
  while (in.read(chunk, sizeof(chunk)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      hash ^= static_cast<unsigned char>(chunk[i]);
      hash *= 0x100000001b3ull;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash));
  return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& columns,
               const Eigen::MatrixXd& values) {
  if (static_cast<Eigen::Index>(columns.size()) != values.cols()) {
    throw std::invalid_argument("write_csv: header/column count mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("write_csv: cannot open " + path);
  }
  for (std::size_t c = 0; c < columns.size(); ++c) {
    out << (c ? "," : "") << columns[c];
  }
  out << "\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      out << (c ? "," : "") << format_double(values(r, c));
    }
    out << "\n";
  }
  if (!out) {
    throw std::runtime_error("write_csv: write failed for " + path);
  }
}

void write_json(const std::string& path, const nlohmann::json& value) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("write_json: cannot open " + path);
  }
  out << value.dump(2) << "\n";
  if (!out) {
    throw std::runtime_error("write_json: write failed for " + path);
  }
}

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_json: cannot read " + path);
  }
  return nlohmann::json::parse(in);
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json digests = nlohmann::json::object();
  for (const std::string& path : inputs) {
    digests[path] = file_digest(path);
  }
  return nlohmann::json{{"command", command},
                        {"config", config},
                        {"seed", seed},
                        {"input_digests", digests},
                        {"outputs", outputs},
                        {"timings", record_timings
                                        ? nlohmann::json{{"wall_seconds", wall_seconds}}
                                        : nlohmann::json()},
                        {"toolkit_version", kToolkitVersion}};
}

}  // namespace pwan
