#pragma once

#include "mtwlab/common.hpp"

#include <vector>

namespace mtwlab {

template <class S>
using VecT = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// Half-space normal . x <= offset; verts index columns of the point cloud.
template <class S>
struct FacetT {
  VecT<S> normal;
  S offset;
  std::vector<int> verts;
};

template <class S>
struct ConvexBodyT {
  int n = 0;
  MatT<S> points;               // generating cloud, one point per column
  std::vector<int> vertex_ids;  // hull vertices
  std::vector<FacetT<S>> facets;
  S volume = 0;
  bool degenerate = true;

  MatT<S> vertices() const;
  bool contains(const VecT<S>& x, S tol = S(1e-9)) const;
  // Largest signed facet violation; <= 0 inside.
  S violation(const VecT<S>& x) const;
};

// E = {center + shape * v : |v| <= 1}.
template <class S>
struct EllipsoidT {
  VecT<S> center;
  MatT<S> shape;
  // |shape^{-1}(x - center)|; <= 1 inside.
  S gauge(const VecT<S>& x) const;
  S volume() const;
};

template <class S>
ConvexBodyT<S> make_body(const MatT<S>& points);
template <class S>
ConvexBodyT<S> make_body(const std::vector<VecT<S>>& points);

// Khachiyan iteration (with away steps) on the hull vertices, inflated so
// every vertex is enclosed exactly.
template <class S>
EllipsoidT<S> mvee(const ConvexBodyT<S>& Q, S tol = S(1e-7));
// MVEE shrunk by n about its center, so that E c Q c n E.
template <class S>
EllipsoidT<S> john_ellipsoid(const ConvexBodyT<S>& Q);
// Largest violation of E c Q and Q c n E (both <= tol when well centred).
template <class S>
S john_violation(const ConvexBodyT<S>& Q, const EllipsoidT<S>& E);

template <class S>
ConvexBodyT<S> dilate_about(const ConvexBodyT<S>& Q, const VecT<S>& center, S t);
template <class S>
ConvexBodyT<S> dilate(const ConvexBodyT<S>& Q, S t);
template <class S>
ConvexBodyT<S> translate(const ConvexBodyT<S>& Q, const VecT<S>& shift);

// sup_{w in K} w . v over the hull vertices.
template <class S>
S dual_norm(const VecT<S>& v, const ConvexBodyT<S>& K);
template <class S>
S diameter(const ConvexBodyT<S>& K);
// Distance from the origin to the boundary along the unit direction u;
// the origin must be interior.
template <class S>
S radial(const ConvexBodyT<S>& K, const VecT<S>& u);

double supporting_constant(int n, double s0);

struct SupportingWitness {
  Vec direction;  // unit vector spanning the line
  double plane_offset = 0.0;  // plane {x : direction . x = plane_offset} supports Q
  double lhs = 0.0;           // dist(y, plane)
  double chord = 0.0;         // diam(line n Q)
  double rhs = 0.0;           // c(n,s0) s^{1/2^{n-1}} chord
  int candidates = 0;
};

// Q must be well centred about the origin. Candidate lines: facet normals,
// vertex directions and 64 random directions. Throws NoWitnessFound.
SupportingWitness supporting_distance(const ConvexBodyT<double>& Qt, const Vec& y, double s,
                                      double s0, std::uint64_t seed = 0);

struct SliceProjection {
  double volume = 0.0;
  double slice_measure = 0.0;
  double projection_measure = 0.0;
  double ratio = 0.0;
};

// Slice through anchor along the first n1 axes, projection onto the last n-n1.
SliceProjection slice_projection_bound(const ConvexBodyT<double>& Q, int n1, const Vec& anchor);

// Smallest R with every boundary sample touched from outside by an
// enclosing ball of radius R; +inf when a flat facet is detected.
double strong_convexity_radius(const Mat& boundary_cloud);

using ConvexBody = ConvexBodyT<double>;
using Ellipsoid = EllipsoidT<double>;
using Facet = FacetT<double>;

extern template struct ConvexBodyT<double>;
extern template struct EllipsoidT<double>;
extern template ConvexBodyT<double> make_body(const MatT<double>&);
extern template ConvexBodyT<double> make_body(const std::vector<VecT<double>>&);
extern template EllipsoidT<double> mvee(const ConvexBodyT<double>&, double);
extern template EllipsoidT<double> john_ellipsoid(const ConvexBodyT<double>&);
extern template double john_violation(const ConvexBodyT<double>&, const EllipsoidT<double>&);
extern template ConvexBodyT<double> dilate_about(const ConvexBodyT<double>&, const VecT<double>&,
                                                 double);
extern template ConvexBodyT<double> dilate(const ConvexBodyT<double>&, double);
extern template ConvexBodyT<double> translate(const ConvexBodyT<double>&, const VecT<double>&);
extern template double dual_norm(const VecT<double>&, const ConvexBodyT<double>&);
extern template double diameter(const ConvexBodyT<double>&);
extern template double radial(const ConvexBodyT<double>&, const VecT<double>&);

}  // namespace mtwlab
