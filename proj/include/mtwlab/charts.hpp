#pragma once

#include "mtwlab/convex_geometry.hpp"
#include "mtwlab/cost_model.hpp"
#include "mtwlab/potential.hpp"

#include <memory>
#include <string>
#include <vector>

namespace mtwlab {

// q -> A q + b.
struct AffineMap {
  Mat A;
  Vec b;

  static AffineMap identity(int n) { return {Mat::Identity(n, n), Vec::Zero(n)}; }
  Vec operator()(const Vec& q) const { return A * q + b; }
  Vec inverse(const Vec& r) const { return A.partialPivLu().solve(r - b); }
  // (this o inner)(q) = this(inner(q)).
  AffineMap after(const AffineMap& inner) const { return {A * inner.A, A * inner.b + b}; }
};

// Cost-exponential coordinates q = -D_y c(x, base) at a fixed target point.
class ExpChart {
 public:
  // domain_grid = 0 picks 33 (n<=2) or 13 (n=3) samples per axis of U.
  ExpChart(CostPtr cost, Vec base, double newton_tol = 1e-12, int domain_grid = 0);

  int dim() const { return cost_->dim(); }
  const CostModel& cost() const { return *cost_; }
  const CostPtr& cost_ptr() const { return cost_; }
  const Vec& base() const { return base_; }
  double newton_tol() const { return tol_; }

  Vec to_q(const Vec& x) const;
  // dq/dx = -(D2xy c(x, base))^T.
  Mat jacobian(const Vec& x) const;
  NewtonResult solve(const Vec& q, const Vec& guess) const;
  // Newton from the centre of U (or the given guess); throws NewtonDiverged
  // or SolutionOutsideU.
  Vec from_q(const Vec& q) const;
  Vec from_q(const Vec& q, const Vec& guess) const;

  // c~(q, y) = c(x(q), y) - c(x(q), base).
  double modified_cost(const Vec& q, const Vec& y) const;
  double modified_cost_at(const Vec& x, const Vec& y) const;
  // D_q c~ = J^{-T} (D_x c(x, y) - D_x c(x, base)).
  Vec modified_grad_at(const Vec& x, const Vec& y) const;
  Vec modified_grad(const Vec& q, const Vec& y) const { return modified_grad_at(from_q(q), y); }
  // D2_qy c~ = J^{-T} D2xy c(x, y).
  Mat modified_cross_at(const Vec& x, const Vec& y) const;

  // Hull of the image of the U grid.
  const ConvexBody& domain() const { return domain_; }
  const DomainBox& bounding_box() const { return bbox_; }
  // Spacing of the image grid, the membership tolerance.
  double cell() const { return cell_; }
  bool in_domain(const Vec& q, double tol) const { return domain_.violation(q) <= tol; }

 private:
  CostPtr cost_;
  Vec base_;
  double tol_;
  ConvexBody domain_;
  DomainBox bbox_;
  double cell_ = 0.0;
};

using ChartPtr = std::shared_ptr<const ExpChart>;

struct CellMass {
  double mass = 0.0;  // Lebesgue measure of the target image
  int targets = 0;    // distinct active targets
  bool degenerate = false;
};

// Volume of the hull of p-chart points divided by |det| of the mixed
// derivative at the centroid, i.e. the target-space volume of the hull.
// `p` holds p-chart images (columns), `jac` the mixed derivative.
CellMass target_hull_volume(const Mat& p, const Mat& jac);

// u~(q) = k u~0(L q) with u~0(r) = u(x(r)) + c(x(r), base), sampled on a
// g^n grid (axis 0 fastest) over a window in r coordinates. Renormalizing
// composes L and scales k; the matching cost is k c~(L q, A^T y).
class TransformedPotential {
 public:
  TransformedPotential(ChartPtr chart, PotentialPtr u, DomainBox window, int g);
  // Window = bounding box of the chart domain.
  static TransformedPotential over_domain(ChartPtr chart, PotentialPtr u, int g);

  int dim() const { return chart_->dim(); }
  const ExpChart& chart() const { return *chart_; }
  const ChartPtr& chart_ptr() const { return chart_; }
  const CPotential& potential() const { return *u_; }
  double scale() const { return k_; }
  const AffineMap& map() const { return L_; }
  const DomainBox& window() const { return window_; }
  int points_per_axis() const { return g_; }
  int node_count() const { return int(values_->size()); }

  // Multilinear interpolant; NaN when a corner lies outside the chart.
  double value(const Vec& q) const;
  // Direct evaluation through the chart inverse.
  double exact(const Vec& q) const;
  double modified_cost(const Vec& q, const Vec& y) const;
  Vec modified_grad(const Vec& q, const Vec& y) const;
  Mat modified_cross(const Vec& q, const Vec& y) const;
  // Coordinates of an original target under the renormalization, A^{-T} y.
  Vec map_target(const Vec& y) const;

  Vec node(int idx) const;
  double node_value(int idx) const { return k_ * (*values_)[idx]; }
  bool node_inside(int idx) const { return (*inside_)[idx] != 0; }
  // Inside node with an outside neighbour along some axis.
  bool node_boundary_adjacent(int idx) const;
  std::vector<int> node_index(int idx) const;
  int flat_index(const std::vector<int>& k) const;

  // Throws SingularAffineMap.
  TransformedPotential renormalize(const AffineMap& L) const;

  // c~-Monge-Ampere mass of the set sampled by qs: hull of the active
  // targets in the p-chart at the centroid. Needs a DiscretePotential.
  CellMass cell_mass(const std::vector<Vec>& qs, double tol) const;

  std::string csv() const;
  std::string header_json() const;

 private:
  TransformedPotential() = default;

  ChartPtr chart_;
  PotentialPtr u_;
  DomainBox window_;
  int g_ = 0;
  std::shared_ptr<const std::vector<double>> values_;
  std::shared_ptr<const std::vector<char>> inside_;
  double k_ = 1.0;
  AffineMap L_;
};

}  // namespace mtwlab
