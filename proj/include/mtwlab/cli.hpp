#pragma once

#include "mtwlab/estimates.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mtwlab {

// Exit codes of the mtwlab tool.
inline constexpr int kExitPass = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitCheckFailed = 2;
inline constexpr int kExitSolverError = 3;
inline constexpr int kExitConfigError = 64;
inline constexpr int kExitMissingInput = 66;

struct RunConfig {
  std::string cost = "neglog";  // zoo key or path to a polynomial cost JSON
  int n = 2;
  int grid = 0;  // 0: per-command default
  double lambda = 1.0, Lambda = 2.0;
  std::uint64_t seed = 1;
  double tol = 1e-6;
  std::string out = "mtwlab-out";
  std::string constants_file;  // empty: the bundled data/constants.json
  std::string boxes = "default";
  std::string instance = "density-jump";
  int sections = 50;
  std::string from;
  bool solve_inline = false;

  // Throws ConfigError: n in {2, 3}; grid a power of two in [16, 256]
  // (n = 2) or [8, 32] (n = 3); tol > 0; 0 < lambda <= Lambda.
  void validate() const;
};

struct SuiteReport {
  std::string command;
  std::vector<EstimateReport> checks;
  std::uint64_t seed = 0;
  std::string version;
  std::string constants_hash;  // FNV-1a of the constants file, empty if unused

  // Fails iff a member fails; skipped members do not count.
  bool pass() const;
  std::string json() const;
};

// 64-bit FNV-1a, hex.
std::string fnv1a_hex(const std::string& bytes);

// Parses argv and runs one subcommand; returns the exit code.
int run_cli(int argc, char** argv);

}  // namespace mtwlab
