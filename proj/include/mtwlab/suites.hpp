#pragma once

#include "mtwlab/estimates.hpp"
#include "mtwlab/regularity.hpp"
#include "mtwlab/transport.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mtwlab {

// The A3w zoo keys the estimate suites run on.
std::vector<std::string> a3w_keys();

// A small-box instance of a zoo cost with a smooth mountain potential and a
// section height sized so that diam Q stays below eps'_c.
struct LocalModel {
  CostPtr cost;
  std::shared_ptr<SmoothPotential> u;
  Vec x_bar, y_bar;
  double tau = 0.0;
  CostConstants constants;
};

// Boxes of half-width `half_width` about the default box centres offset by
// up to 0.3 per axis; u = -c(x, y0) + (x - x0)^T A (x - x0) / 2 with
// A = s (0.2 B B^T + 0.3 I), B Gaussian, s the smallest singular value of
// D2xy c(x0, y0). Draws whose map leaves V within 0.3 half_width of x_bar
// are redrawn.
LocalModel make_local_model(const std::string& key, int n, Rng& rng, double half_width = 0.05);

struct SweepOptions {
  int sections = 50;
  int grid = 0;  // 0: section default
  std::vector<double> t_values{0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};  // t > 1/(2n)
  int upper_directions = 8;
  std::vector<double> rhos{0.25, 0.5, 0.75};
  bool cone = true;  // n = 2 only
  double delta = 1.0;
  int density_stride = 4;
  int target_grid = 5;  // for gamma~
  bool estimates = true;  // off: level-set defect only
};

struct SectionRecord {
  std::string cost;
  std::uint64_t seed = 0;
  int index = 0;
  int members = 0;
  double tau = 0.0;
  double defect = 0.0;
  EstimateReport lower, inf, upper, cone;  // upper: worst over t and directions
  std::vector<EstimateReport> dual;        // one per rho

  std::string json_line() const;
};

// All per-section checks; constants scaled by K.safety. `stream` seeds the
// boundary directions and the cone vertex.
SectionRecord check_section(const SectionData& S, const CostConstants& k, const FittedConstants& K,
                            const SweepOptions& opt, std::uint64_t stream);

// One local model per section.
std::vector<SectionRecord> section_sweep(const std::string& key, int n, std::uint64_t seed,
                                         const FittedConstants& K, const SweepOptions& opt = {});

// |u~(q_t)|^n against its bound along the directions and t values of the
// upper check, for plotting.
struct DecayRow {
  int direction = 0;
  double t = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
};
std::vector<DecayRow> boundary_decay(const SectionData& S, const FittedConstants& K,
                                     const SweepOptions& opt, std::uint64_t stream);

struct LipschitzSweep {
  std::string cost;
  int triples = 0;
  int skipped = 0;  // direction check not applicable (y = y~)
  int failures1 = 0, failures2 = 0;
  double worst1 = 0.0, worst2 = 0.0;  // max lhs / rhs
  double eps_c = 0.0;
};

// q, q~ images of uniform points of U in the chart at a uniform y~ in V,
// y uniform in V.
LipschitzSweep lipschitz_sweep(const std::string& key, int n, int triples, std::uint64_t seed);

struct PipelineConfig {
  std::string cost = "neglog";
  int n = 2;
  int source_grid = 32;
  int target_grid = 64;     // grid of the target ball, finer than the sources
  double density_ratio = 2.0;  // f+ = ratio on x_0 < centre, 1 elsewhere
  double tau0 = 5e-4;
  std::vector<double> tau_fractions{0.1, 0.25, 0.5, 1.0};
  int pair_budget = 100000;
  std::uint64_t seed = 0;
};

struct PipelineResult {
  PipelineConfig config;
  KantorovichSolution solution;
  TransportMap map;
  double solve_seconds = 0.0;
  InjectivityReport injectivity;
  MixingReport mixing;
  EngulfingReport engulfing;
  HolderReport holder;
  int gain_pairs = 0;
  int gain_failures = 0;

  std::string json() const;
};

// Ball target inscribed in V, box source U; piecewise-constant source
// density with the given ratio.
ProblemSpec pipeline_spec(const PipelineConfig& cfg);
PipelineResult run_pipeline(const PipelineConfig& cfg);

struct QuadraticPipeline {
  EngulfingReport engulfing;
  EngulfingReport renormalized;  // same sections after an affine change of x
  HolderReport holder;           // G = x on a grid
  ShrinkResult shrink;

  std::string json() const;
};

QuadraticPipeline quadratic_pipeline(std::uint64_t seed = 1);

}  // namespace mtwlab
