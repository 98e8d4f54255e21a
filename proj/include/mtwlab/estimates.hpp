#pragma once

#include "mtwlab/charts.hpp"
#include "mtwlab/convex_geometry.hpp"
#include "mtwlab/cost_model.hpp"
#include "mtwlab/potential.hpp"

#include <string>
#include <vector>

namespace mtwlab {

struct SectionOptions {
  int grid = 0;             // points per axis; 0 picks 128 (n <= 2) or 16 (n = 3)
  DomainBox U_lambda;       // empty: the source box of the cost
  int rays = 0;             // boundary probes that place the window; 0: 64 (n = 2), 128 (n = 3)
  double margin_cells = 2;  // required clearance from the boundary of U_lambda
};

// S(x_bar, y_bar, tau) seen in the q-chart at y_bar, normalized so that
// w = u~ - u~(q_bar) - tau vanishes on the boundary and the section is
// {w <= 0}.
struct SectionData {
  ChartPtr chart;
  PotentialPtr u;
  Vec x_bar, y_bar, q_bar;
  double tau = 0.0;
  double base = 0.0;  // u(x_bar) + c(x_bar, y_bar)
  DomainBox window;
  int g = 0;
  std::vector<double> w;  // NaN where the node is outside the chart
  std::vector<char> mask;
  int members = 0;
  ConvexBody hull;
  Ellipsoid john;
  double inf_value = 0.0;    // min of w, i.e. min(u~) - tau
  double mask_volume = 0.0;  // members times the cell volume
  DomainBox U_lambda;
  Mat jac_inv;  // (dq/dx)^-1 at x_bar, the chart-inverse predictor
  Mat x_nodes;  // x(q) per node (columns), NaN outside the chart

  int dim() const { return int(x_bar.size()); }
  int node_count() const { return int(w.size()); }
  Vec node(int idx) const;
  std::vector<int> node_index(int idx) const;
  int flat_index(const std::vector<int>& k) const;
  Vec cell() const { return window.width() / double(g - 1); }
  double cell_width() const { return cell().maxCoeff(); }

  Vec x_of(const Vec& q) const;
  // Exact w(q) through the chart inverse.
  double value(const Vec& q) const;
  double value_at_x(const Vec& x) const;
  // Distance from `from` (inside) along unit `dir` to {w = 0} by bisection;
  // throws ShrinkTau when the ray leaves the chart first.
  double boundary_distance(const Vec& from, const Vec& dir) const;
};

SectionData section(PotentialPtr u, const Vec& x_bar, const Vec& y_bar, double tau,
                    const SectionOptions& opt = {});
// Same section on a caller-supplied chart (based at y_bar) and, optionally,
// a fixed window (no enlargement).
SectionData section(PotentialPtr u, ChartPtr chart, const Vec& x_bar, double tau,
                    const SectionOptions& opt, const DomainBox* window = nullptr);

// Section frame without the grid: enough for value() and
// boundary_distance().
SectionData section_frame(PotentialPtr u, ChartPtr chart, const Vec& x_bar, double tau,
                          const DomainBox& U_lambda);

// 1 - members / (grid nodes inside the hull of the members): the lattice
// form of (vol(hull) - vol(mask)) / vol(hull). Zero for convex sections.
double levelset_defect(const SectionData& S);

enum class Outcome { Pass, Fail, Skipped };
const char* to_string(Outcome o);

struct EstimateReport {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
  double constant = 0.0;
  std::string constant_used;  // "closed form" or "fitted"
  Outcome verdict = Outcome::Skipped;
  std::string detail;

  std::string json_line() const;
};

// verdict = pass iff lhs <= rhs (1 + tol).
EstimateReport make_report(std::string name, double lhs, double rhs, double constant,
                           std::string constant_used, double tol = 1e-9);

// Dimensional constants calibrated on the quadratic model, per dimension.
struct FittedConstants {
  double lower[4] = {0, 0, 0, 0};      // Alexandrov lower
  double upper_inf[4] = {0, 0, 0, 0};  // |inf u~|^n / |Q|^2
  double profile[4] = {0, 0, 0, 0};    // boundary decay
  double cone[4] = {0, 0, 0, 0};       // c~-cone mass, n = 2 only
  double safety = 2.0;
  std::string source;

  static FittedConstants load(const std::string& path);
  static FittedConstants parse(const std::string& json_text);
  std::string dump() const;
};

// Closed-form values of the model constants; calibration reproduces them.
FittedConstants model_constants();

// Density of |d^c~ u~| in the q-chart at q for a smooth potential:
// det(D2u + D2xx c(x, G)) / |det D2xy c(x, G)| / |det D2xy c(x, y_bar)|.
// Throws PreconditionUnverifiable for non-smooth potentials.
double q_density(const SectionData& S, const Vec& q);

struct DensityRange {
  double min = kInf;
  double max = 0.0;
  int samples = 0;
};
// Over mask nodes (every `stride`-th per axis), optionally restricted to an
// ellipsoid.
DensityRange density_range(const SectionData& S, const Ellipsoid* region, int stride);

struct JacobianBounds {
  double gamma_plus = 0.0;   // sup |det D2qy c~|
  double gamma_minus = 0.0;  // sup |det D2qy c~|^-1
};
// Over the hull vertices and q_bar, against a target_grid^n sample of V.
JacobianBounds gamma_tilde(const SectionData& S, int target_grid);

// |Q|^2 <= C gamma^- / (delta^{2n} lambda) |inf u~|^n. delta must satisfy
// delta <= min(1, eps_c / (4 diam E)).
EstimateReport alexandrov_lower(const SectionData& S, const CostConstants& k, double lambda,
                                double delta, double gamma_minus, double C);

// |u~(q_t)|^n <= C gamma^+ / lambda (1 - t)^{1/2^{n-1}} |Q|^2 for q_t on the
// t-dilated boundary (about the John centre); lambda is the reciprocal of
// the density upper bound. Throws PointNotOnDilatedBoundary.
EstimateReport alexandrov_upper(const SectionData& S, const Vec& q_t, double t, double lambda,
                                double gamma_plus, double C_profile);
// |inf u~|^n / |Q|^2 <= C gamma^+ / lambda.
EstimateReport alexandrov_inf(const SectionData& S, double lambda, double gamma_plus, double C);

// Point on the t-dilated boundary of the section along unit dir from the
// John centre.
Vec dilated_boundary_point(const SectionData& S, const Vec& dir, double t);

struct CConeData {
  Vec q_tilde;
  double height = 0.0;  // u~(q_tilde) < 0
  ConvexBody body;      // Q, the hull of the section
  Mat active;           // boundary targets of the admissible set (columns)
  Mat gradients;        // their p-chart images at q_tilde
  ConvexBody subgradient_hull;
  double mass = 0.0;    // |dh|({q_tilde}), volume of subgradient_hull
  std::vector<double> h;  // cone values on the section nodes, NaN off the mask
  double min_minus_height = 0.0;  // min over Q of h - h(q_tilde)
  double boundary_max = 0.0;      // max |h| on the boundary of Q
  double scale = 0.0;             // |height|

  // Solver state reused by cone_value.
  Vec x_tilde;
  Mat jt;           // (dq/dx)^T at x_tilde
  Vec px_bar;       // -D_x c(x_tilde, y_bar)
  Mat vertex_x;     // x of the hull vertices
  Vec vertex_cbar;  // c(vertex_x, y_bar)
  Vec active_ct;    // c~(q_tilde, y) of the active targets
  std::vector<double> theta;
};

// The c~-cone of the section hull with vertex q_tilde (n = 2). With
// `properties` off, h, min_minus_height and boundary_max are not evaluated. Throws
// ConstraintInfeasible, ConfigError for a vertex that is not interior.
CConeData c_cone(const SectionData& S, const Vec& q_tilde, int directions = 512,
                 bool properties = true);
// Cone value at q; `refine` polishes the sup over the admissible set.
double cone_value(const SectionData& S, const CConeData& cone, const Vec& q, bool refine);

// Worst of |h(q~)|^2 <= C min dist(q~, Pi^+-) / l_Pi |dh|({q~}) |Q| over the
// edge-normal directions of Q. Throws HullDegenerate.
EstimateReport cone_mass_bound(const CConeData& cone, double C);
// The same for one direction (unit normal of the planes).
EstimateReport cone_mass_bound(const CConeData& cone, const Vec& normal, double C);

// Largest share, relative to |height|, by which a cone target fails to be a
// c~-subgradient of u~ somewhere in Q.
double cone_inclusion_slack(const SectionData& S, const CConeData& cone);

// C*(n, rho) = 8n / (1 - rho)^2.
double dual_norm_constant(int n, double rho);
// max over q in rho K, y in d^c~ u~(q) of ||-D_q c~(q, y)||*_K against
// C*(n, rho) |inf u~|, K = Q recentred at its John centre. Throws
// DiameterTooLarge when diam Q > eps_c / 4.
EstimateReport dual_norm_gradient_bound(const SectionData& S, double rho, double eps_c,
                                        int max_samples = 400);

struct LipschitzCheck {
  double lhs1 = 0.0, rhs1 = 0.0;
  double lhs2 = 0.0, rhs2 = 0.0;
  bool direction_skipped = false;  // a gradient vanishes (y = y~)
  bool pass(double tol = 1e-9) const;
};

LipschitzCheck gradient_direction_lipschitz(const ExpChart& chart, const Vec& q, const Vec& q_tilde,
                                            const Vec& y, double eps_c);

// Bilinear cost with u = |x|^2 / 2, so u~(q) = |q|^2 / 2 in the chart at 0.
std::shared_ptr<SmoothPotential> quadratic_model(int n);
// Measures the dimensional constants on quadratic-model sections.
FittedConstants calibrate_constants(int grid2 = 128, int grid3 = 48);

// eps'_c = eps_c / (16 n).
inline double eps_prime(double eps_c, int n) { return eps_c / (16.0 * n); }

}  // namespace mtwlab
