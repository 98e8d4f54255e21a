#pragma once

#include "mtwlab/estimates.hpp"
#include "mtwlab/transport.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mtwlab {

struct ShrinkResult {
  double rho0 = 0.0;  // smallest rho with Q_{tau/2} inside rho Q_tau about the John centre
  EstimateReport report;
};

// Both sections share the window of Q_tau; pass iff rho0 <= 1 - h / r with
// h the cell width and r the inradius of Q_tau about its John centre.
ShrinkResult section_shrink(PotentialPtr u, const Vec& x_bar, const Vec& y_bar, double tau,
                            const SectionOptions& opt = {});

struct EngulfingOptions {
  int directions = 16;              // rays per base point in the q-chart
  std::vector<double> fractions{0.5, 0.8, 1.0};  // points along each ray
  double separation = 4.0;          // dist(x, x_bar) * separation <= depth of x_bar in U_lambda
  double k_tol = 1e-3;              // relative bisection tolerance on k
  DomainBox U_lambda;               // empty: the source box
};

struct EngulfingSample {
  Vec x_bar, x;
  double tau = 0.0;
  double k = 0.0;  // upper bracket of the minimal k
};

struct EngulfingReport {
  int pairs = 0;
  std::vector<double> taus;
  std::vector<double> K_by_tau;  // max over pairs at each height (0 if none)
  double K_emp = 1.0;
  double spread = 0.0;  // (max - min) / min of K_by_tau over heights with pairs
  std::vector<EngulfingSample> samples;

  std::string json() const;
};

// For each base point and height: points x of S(x_bar, y_bar, tau) on rays
// in the q-chart; the minimal k with x_bar in S(x, y, k tau) by bisection.
// Throws NoAdmissiblePairs.
EngulfingReport engulfing_constant(PotentialPtr u, const std::vector<Vec>& bases,
                                   const std::vector<double>& tau_grid, const EngulfingOptions& opt = {});
// Base points drawn (seeded) from the sources of a solved instance; the
// potential is interpolated_potential(sol).
EngulfingReport engulfing_constant(const KantorovichSolution& sol, int pair_budget,
                                   const std::vector<double>& tau_grid, const EngulfingOptions& opt,
                                   std::uint64_t seed);

// (1+K)/K [u(x) - u(x_bar) - c(x_bar,y_bar) + c(x,y_bar)]
//   <= c(x_bar,y) - c(x,y) - c(x_bar,y_bar) + c(x,y_bar), slack 1e-8 scale.
EstimateReport monotonicity_gain(const CPotential& u, const Vec& x, const Vec& x_bar, double K);

struct InjectivityReport {
  int interior = 0;
  double min_separation = kInf;
  double threshold = 0.0;  // half the target spacing
  std::vector<std::pair<int, int>> violations;
};

// Distinct sources deeper than `margin` in U_lambda.
InjectivityReport injectivity_check(const TransportMap& map, const Mat& sources,
                                    const DomainBox& U_lambda, double target_spacing, double margin);

struct HolderOptions {
  int bins = 8;               // distance strata between 2 h and diam / 8
  int pairs_per_bin = 400;
  double interior_cells = 2;  // sources closer to the boundary are skipped
  std::uint64_t seed = 0;
};

struct HolderReport {
  double alpha_emp = 0.0;
  double alpha_theory = 0.0;  // 1 / K
  double r2 = 0.0;
  double exponent = 0.0;      // 1 + 1/K
  double C2 = 0.0;            // max of lhs / |d|^exponent over the top stratum
  int pairs = 0;
  int modulus_failures = 0;   // lhs > 2 C2 |d|^exponent
  double pass_rate = 0.0;
  std::vector<double> bin_distance;  // geometric bin centres
  std::vector<double> bin_modulus;   // max |G(x0) - G(x1)| per bin

  std::string json() const;
};

// Sources on a tensor grid over box (g per axis, axis 0 fastest) with map
// values G and potential values u. Throws InsufficientScales.
HolderReport holder_fit(const Mat& G, const Vec& u, const CostModel& cost, const DomainBox& box, int g,
                        double K, const HolderOptions& opt = {});
HolderReport holder_fit(const TransportMap& map, const KantorovichSolution& sol, double K,
                        const HolderOptions& opt = {});

// Layout of tensor-grid sources: order[f] is the source at flat grid index
// f (axis 0 fastest). Throws ConfigError for other layouts.
struct SourceGrid {
  DomainBox box;  // first to last node per axis
  int g = 0;
  std::vector<int> order;
};
SourceGrid source_grid(const KantorovichSolution& sol);

// C^1 interpolant of the duals u_i over the source grid. The discrete
// c-transform jumps between target atoms, which at small heights swamps
// the section geometry; the interpolant matches recover_map's difference
// quotients instead.
std::shared_ptr<CubicGridPotential> interpolated_potential(const KantorovichSolution& sol);

// u*(x) = k u(Lx x + bx), c*-convex for the matching affine cost.
std::shared_ptr<SmoothPotential> affine_pullback(std::shared_ptr<const SmoothPotential> u, CostPtr affine_cost,
                                                 const Mat& Lx, const Vec& bx, double k, const Vec& y_guess);

}  // namespace mtwlab
