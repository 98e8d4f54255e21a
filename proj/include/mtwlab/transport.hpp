#pragma once

#include "mtwlab/cost_model.hpp"
#include "mtwlab/potential.hpp"

#include <string>
#include <utility>
#include <vector>

namespace mtwlab {

// Atoms in columns of `support`.
struct DiscreteMeasure {
  Mat support;
  Vec weights;

  int size() const { return int(weights.size()); }
  int dim() const { return int(support.rows()); }
  Vec point(int i) const { return support.col(i); }
  // Throws ConfigError on negative weights, mass != 1 or repeated atoms.
  void validate() const;
  static DiscreteMeasure uniform(Mat support);
};

// Weights proportional to density at the g^n cell centres of box.
DiscreteMeasure cell_centered_measure(const DomainBox& box, int g,
                                      const std::function<double(const Vec&)>& density = {});
// Cell centres of the g^n grid over the bounding box that fall in the ball.
DiscreteMeasure ball_measure(const Vec& center, double radius, int g,
                             const std::function<double(const Vec&)>& density = {});

// Box or ball holding a measure's atoms; depth() is the distance to the
// boundary, negative outside.
struct Region {
  enum class Kind { Box, Ball };
  Kind kind = Kind::Box;
  DomainBox box;
  Vec center;
  double radius = 0.0;

  static Region of_box(DomainBox b) { return {Kind::Box, std::move(b), {}, 0.0}; }
  static Region ball(Vec c, double r) { return {Kind::Ball, {}, std::move(c), r}; }
  double depth(const Vec& y) const;
};

struct ProblemSpec {
  CostPtr cost;
  DiscreteMeasure mu_plus;
  DiscreteMeasure mu_minus;
  double lambda = 1.0;
  double Lambda = 1.0;
  DomainBox U_lambda;
};

struct PlanEntry {
  int i = 0;
  int j = 0;
  double mass = 0.0;
};

struct KantorovichSolution {
  CostPtr cost;
  Mat sources;
  Mat targets;
  Vec a;
  Vec b;
  std::vector<PlanEntry> plan;
  // u = v^c and v = u^{c*} after tightening; u_i + v_j + c_ij >= 0.
  Vec u;
  Vec v;
  double total_cost = 0.0;
  double dual_value = 0.0;
  // primal - dual
  double gap = 0.0;
  // max |c_ij| over the instance, the unit for gap tolerances
  double scale = 1.0;
  long pivots = 0;

  double slack(int i, int j) const;
  // Largest marginal error of the plan.
  double marginal_error() const;
  // Smallest u_i + v_j + c_ij (should be >= -1e-9 scale).
  double min_slack() const;
  std::shared_ptr<DiscretePotential> potential() const;
};

struct SolverOptions {
  long max_pivots = 0;  // 0: 200 (N + M)^1.5 + 10^5
};

// Exact network simplex on the complete bipartite graph, then one
// c-transform pass each way. Throws Infeasible or SolverStalled.
KantorovichSolution solve_kantorovich(const ProblemSpec& spec, const SolverOptions& opt = {});

struct CTransform {
  Vec values;
  std::vector<int> argmax;  // lowest index among maximizers
  std::vector<char> tied;   // another index attains the same value
};

// u(x_i) = max_j -c(x_i, y_j) - v_j.
CTransform c_transform(const CostModel& cost, const Mat& targets, const Vec& v, const Mat& sources);
// v(y_j) = max_i -c(x_i, y_j) - u_i.
CTransform c_star_transform(const CostModel& cost, const Mat& sources, const Vec& u,
                            const Mat& targets);

// Targets with slack <= tol at source i, always including plan partners.
std::vector<int> c_subdifferential(const KantorovichSolution& sol, int i, double tol);

struct CellDensity {
  DomainBox cell;
  int sources = 0;
  int targets = 0;
  // Target-space volume of the hull of the image, built in the p-chart at
  // the cell centre.
  double image_volume = 0.0;
  // image_volume over the hull volume of the sources in the cell.
  double density = 0.0;
  bool degenerate = false;
};

// Regular partition of `region` into cells_per_axis^n boxes.
std::vector<CellDensity> cma_measure(const KantorovichSolution& sol, const DomainBox& region,
                                     int cells_per_axis, double tol);

// det(D2u + D2xx c(x, G)) / |det D2xy c(x, G)| with G from the subgradient.
double ma_density_pde(const SmoothPotential& u, const Vec& x);

enum class Stencil { Centered, OneSided };

struct TransportMap {
  Mat G;
  Vec residual;
  std::vector<char> newton_failed;  // fell back to the plan partner
  std::vector<std::vector<Stencil>> stencil;
};

// Sources must form a full tensor grid; Du from difference quotients of u.
// Throws ConfigError otherwise.
TransportMap recover_map(const KantorovichSolution& sol);

struct DasmResult {
  // max_t f(t) - max(f(0), f(1))
  double violation = 0.0;
  // max over t of -(f(t-h) - 2 f(t) + f(t+h)), 0 when convex
  double concavity = 0.0;
  // max_t |f(t)|
  double scale = 0.0;
};

// f(t) = -c(x, y(t)) + c(x_bar, y(t)) along the c-segment from y0 to y1
// seen from x_bar. Throws SegmentEscapesDomain.
DasmResult dasm_check(const CostModel& cost, const Vec& x, const Vec& x_bar, const Vec& y0,
                      const Vec& y1, int samples);

struct MixingReport {
  int interior_sources = 0;
  std::vector<std::pair<int, int>> violations;
};

// Sources deeper than 2 source cells in U must only reach targets deeper
// than one target cell in V.
MixingReport boundary_mixing_check(const KantorovichSolution& sol, const Region& U,
                                   double source_cell, const Region& V, double target_cell,
                                   double tol);

// JSON instance files and solution dumps.
ProblemSpec read_instance(const std::string& json_text);
std::string write_instance(const ProblemSpec& spec);
std::string plan_csv(const KantorovichSolution& sol);
std::string potentials_json(const KantorovichSolution& sol);

}  // namespace mtwlab
