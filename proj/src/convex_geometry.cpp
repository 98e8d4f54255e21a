#include "mtwlab/convex_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <functional>
#include <set>
#include <utility>

namespace mtwlab {

template <class S>
MatT<S> ConvexBodyT<S>::vertices() const {
  MatT<S> v(n, vertex_ids.size());
  for (size_t j = 0; j < vertex_ids.size(); ++j) v.col(j) = points.col(vertex_ids[j]);
  return v;
}

template <class S>
S ConvexBodyT<S>::violation(const VecT<S>& x) const {
  S worst = -std::numeric_limits<S>::infinity();
  for (const auto& f : facets) worst = std::max(worst, S(f.normal.dot(x) - f.offset));
  return worst;
}

template <class S>
bool ConvexBodyT<S>::contains(const VecT<S>& x, S tol) const {
  for (const auto& f : facets)
    if (f.normal.dot(x) - f.offset > tol) return false;
  return true;
}

template <class S>
S EllipsoidT<S>::gauge(const VecT<S>& x) const {
  return shape.partialPivLu().solve(x - center).norm();
}

template <class S>
S EllipsoidT<S>::volume() const {
  int n = int(center.size());
  S unit = n == 1 ? S(2) : n == 2 ? S(M_PI) : S(4.0 * M_PI / 3.0);
  return unit * std::abs(shape.determinant());
}

namespace {

template <class S>
void hull_1d(ConvexBodyT<S>& b) {
  int lo = 0, hi = 0;
  for (int j = 1; j < b.points.cols(); ++j) {
    if (b.points(0, j) < b.points(0, lo)) lo = j;
    if (b.points(0, j) > b.points(0, hi)) hi = j;
  }
  b.vertex_ids = {lo, hi};
  VecT<S> up(1), down(1);
  up << S(1);
  down << S(-1);
  b.facets = {{up, b.points(0, hi), {hi}}, {down, -b.points(0, lo), {lo}}};
  b.volume = b.points(0, hi) - b.points(0, lo);
}

template <class S>
S cross2(const VecT<S>& o, const VecT<S>& a, const VecT<S>& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

template <class S>
void hull_2d(ConvexBodyT<S>& b, S eps) {
  int m = int(b.points.cols());
  std::vector<int> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int i, int j) {
    if (b.points(0, i) != b.points(0, j)) return b.points(0, i) < b.points(0, j);
    return b.points(1, i) < b.points(1, j);
  });
  std::vector<int> h(2 * m);
  int k = 0;
  auto P = [&](int i) -> VecT<S> { return b.points.col(i); };
  for (int i = 0; i < m; ++i) {
    while (k >= 2 && cross2<S>(P(h[k - 2]), P(h[k - 1]), P(idx[i])) <= eps) --k;
    h[k++] = idx[i];
  }
  for (int i = m - 2, t = k + 1; i >= 0; --i) {
    while (k >= t && cross2<S>(P(h[k - 2]), P(h[k - 1]), P(idx[i])) <= eps) --k;
    h[k++] = idx[i];
  }
  h.resize(std::max(0, k - 1));
  b.vertex_ids = h;
  b.facets.clear();
  S area = 0;
  int nv = int(h.size());
  if (nv < 3) return;
  for (int i = 0; i < nv; ++i) {
    VecT<S> a = P(h[i]), c = P(h[(i + 1) % nv]);
    VecT<S> nrm(2);
    nrm << c[1] - a[1], a[0] - c[0];
    nrm.normalize();
    b.facets.push_back({nrm, nrm.dot(a), {h[i], h[(i + 1) % nv]}});
    area += a[0] * c[1] - a[1] * c[0];
  }
  b.volume = area / 2;
}

template <class S>
void hull_3d(ConvexBodyT<S>& b, S eps) {
  using V3 = Eigen::Matrix<S, 3, 1>;
  int m = int(b.points.cols());
  auto P = [&](int i) -> V3 { return b.points.col(i).template head<3>(); };
  if (m < 4) return;
  int i0 = 0;
  for (int j = 1; j < m; ++j)
    if (b.points(0, j) < b.points(0, i0)) i0 = j;
  int i1 = i0;
  S best = 0;
  for (int j = 0; j < m; ++j)
    if (S d = (P(j) - P(i0)).norm(); d > best) best = d, i1 = j;
  if (best <= eps) return;
  int i2 = i0;
  best = 0;
  V3 dir = (P(i1) - P(i0)).normalized();
  for (int j = 0; j < m; ++j) {
    V3 w = P(j) - P(i0);
    if (S d = (w - w.dot(dir) * dir).norm(); d > best) best = d, i2 = j;
  }
  if (best <= eps) return;
  V3 pn = (P(i1) - P(i0)).cross(P(i2) - P(i0)).normalized();
  int i3 = i0;
  best = 0;
  for (int j = 0; j < m; ++j)
    if (S d = std::abs(pn.dot(P(j) - P(i0))); d > best) best = d, i3 = j;
  if (best <= eps) return;

  struct Face {
    int a, b, c;
    V3 nrm;
    S off;
    bool alive;
  };
  std::vector<Face> faces;
  V3 inner = (P(i0) + P(i1) + P(i2) + P(i3)) / S(4);
  auto add = [&](int a, int c1, int c2) {
    V3 nrm = (P(c1) - P(a)).cross(P(c2) - P(a));
    S len = nrm.norm();
    nrm /= len;
    if (nrm.dot(inner - P(a)) > 0) {
      std::swap(c1, c2);
      nrm = -nrm;
    }
    faces.push_back({a, c1, c2, nrm, nrm.dot(P(a)), true});
  };
  add(i0, i1, i2);
  add(i0, i1, i3);
  add(i0, i2, i3);
  add(i1, i2, i3);

  std::vector<int> order;
  for (int j = 0; j < m; ++j)
    if (j != i0 && j != i1 && j != i2 && j != i3) order.push_back(j);
  Rng rng(0x5eedULL);
  for (int j = int(order.size()) - 1; j > 0; --j) std::swap(order[j], order[rng() % (j + 1)]);

  std::vector<int> visible;
  std::set<std::pair<int, int>> edges;
  for (int p : order) {
    V3 x = P(p);
    visible.clear();
    for (int f = 0; f < int(faces.size()); ++f)
      if (faces[f].alive && faces[f].nrm.dot(x) - faces[f].off > eps) visible.push_back(f);
    if (visible.empty()) continue;
    edges.clear();
    for (int f : visible) {
      const Face& F = faces[f];
      edges.insert({F.a, F.b});
      edges.insert({F.b, F.c});
      edges.insert({F.c, F.a});
    }
    for (int f : visible) faces[f].alive = false;
    for (const auto& e : edges) {
      if (edges.count({e.second, e.first})) continue;
      V3 nrm = (P(e.second) - P(e.first)).cross(x - P(e.first));
      S len = nrm.norm();
      if (len <= S(0)) continue;
      nrm /= len;
      faces.push_back({e.first, e.second, p, nrm, nrm.dot(P(e.first)), true});
    }
  }

  std::set<int> verts;
  b.facets.clear();
  S vol = 0;
  for (const auto& F : faces) {
    if (!F.alive) continue;
    verts.insert({F.a, F.b, F.c});
    VecT<S> nrm = F.nrm;
    b.facets.push_back({nrm, F.off, {F.a, F.b, F.c}});
  }
  b.vertex_ids.assign(verts.begin(), verts.end());
  V3 o = V3::Zero();
  for (int v : b.vertex_ids) o += P(v);
  o /= S(b.vertex_ids.size());
  for (const auto& F : faces) {
    if (!F.alive) continue;
    Eigen::Matrix<S, 3, 3> T;
    T << P(F.a) - o, P(F.b) - o, P(F.c) - o;
    vol += T.determinant() / S(6);
  }
  b.volume = vol;
}

}  // namespace

template <class S>
ConvexBodyT<S> make_body(const MatT<S>& points) {
  ConvexBodyT<S> b;
  b.n = int(points.rows());
  b.points = points;
  if (points.cols() == 0) return b;
  if (b.n < 1 || b.n > 3) throw Error(ErrorCode::DegenerateBody, "dimension must be 1..3");
  VecT<S> lo = points.rowwise().minCoeff(), hi = points.rowwise().maxCoeff();
  S scale = std::max(S(1e-300), (hi - lo).maxCoeff());
  if (b.n == 1)
    hull_1d(b);
  else if (b.n == 2)
    hull_2d(b, S(1e-12) * scale * scale);
  else
    hull_3d(b, S(1e-10) * scale);
  S ref = std::pow(scale, S(b.n));
  b.degenerate = !(b.volume > S(1e-12) * ref) || b.facets.empty();
  return b;
}

template <class S>
ConvexBodyT<S> make_body(const std::vector<VecT<S>>& points) {
  if (points.empty()) return ConvexBodyT<S>{};
  MatT<S> m(points[0].size(), points.size());
  for (size_t j = 0; j < points.size(); ++j) m.col(j) = points[j];
  return make_body<S>(m);
}

template <class S>
EllipsoidT<S> mvee(const ConvexBodyT<S>& Q, S tol) {
  if (Q.degenerate) throw Error(ErrorCode::DegenerateBody, "MVEE of a degenerate body");
  MatT<S> V = Q.vertices();
  int n = int(V.rows()), m = int(V.cols());
  MatT<S> L(n + 1, m);
  L.topRows(n) = V;
  L.row(n).setOnes();
  // Khachiyan iteration with Todd-Yildirim away steps; stops once every
  // lifted vertex has M_j <= (1+tol) d and every support vertex M_j >= (1-tol) d.
  const S d = S(n + 1);
  VecT<S> u = VecT<S>::Constant(m, S(1) / S(m));
  for (int it = 0; it < 1000000; ++it) {
    MatT<S> X = L * u.asDiagonal() * L.transpose();
    Eigen::LDLT<MatT<S>> ldlt(X);
    VecT<S> M = (L.array() * ldlt.solve(L).array()).colwise().sum().transpose();
    int up = 0, down = -1;
    for (int j = 0; j < m; ++j) {
      if (M[j] > M[up]) up = j;
      if (u[j] > S(0) && (down < 0 || M[j] < M[down])) down = j;
    }
    S eps_up = M[up] / d - S(1), eps_down = S(1) - M[down] / d;
    if (std::max(eps_up, eps_down) <= tol) break;
    if (eps_up >= eps_down) {
      S step = (M[up] - d) / (d * (M[up] - S(1)));
      u *= S(1) - step;
      u[up] += step;
    } else {
      S step = std::min((d - M[down]) / (d * (M[down] - S(1))), u[down] / (S(1) - u[down]));
      u *= S(1) + step;
      u[down] -= step;
      if (u[down] < S(0)) u[down] = S(0);
    }
  }
  VecT<S> c = V * u;
  MatT<S> cov = V * u.asDiagonal() * V.transpose() - c * c.transpose();
  MatT<S> A = cov.inverse() / S(n);
  S g = 0;
  for (int j = 0; j < m; ++j) g = std::max(g, S((V.col(j) - c).dot(A * (V.col(j) - c))));
  if (g > S(1)) A /= g;
  Eigen::SelfAdjointEigenSolver<MatT<S>> es(A);
  EllipsoidT<S> E;
  E.center = c;
  E.shape = es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
            es.eigenvectors().transpose();
  return E;
}

template <class S>
EllipsoidT<S> john_ellipsoid(const ConvexBodyT<S>& Q) {
  EllipsoidT<S> E = mvee(Q);
  E.shape /= S(Q.n);
  return E;
}

template <class S>
S john_violation(const ConvexBodyT<S>& Q, const EllipsoidT<S>& E) {
  S worst = -std::numeric_limits<S>::infinity();
  MatT<S> V = Q.vertices();
  for (int j = 0; j < V.cols(); ++j) worst = std::max(worst, E.gauge(V.col(j)) / S(Q.n) - S(1));
  S d = diameter(Q);
  for (const auto& f : Q.facets) {
    S reach = f.normal.dot(E.center) + (E.shape.transpose() * f.normal).norm();
    worst = std::max(worst, (reach - f.offset) / d);
  }
  return worst;
}

template <class S>
ConvexBodyT<S> dilate_about(const ConvexBodyT<S>& Q, const VecT<S>& center, S t) {
  ConvexBodyT<S> out = Q;
  out.points = (t * (Q.points.colwise() - center)).colwise() + center;
  for (auto& f : out.facets) {
    S base = f.normal.dot(center);
    f.offset = base + t * (f.offset - base);
  }
  out.volume = Q.volume * std::pow(t, S(Q.n));
  return out;
}

template <class S>
ConvexBodyT<S> dilate(const ConvexBodyT<S>& Q, S t) {
  return dilate_about(Q, john_ellipsoid(Q).center, t);
}

template <class S>
ConvexBodyT<S> translate(const ConvexBodyT<S>& Q, const VecT<S>& shift) {
  ConvexBodyT<S> out = Q;
  out.points = Q.points.colwise() + shift;
  for (auto& f : out.facets) f.offset += f.normal.dot(shift);
  return out;
}

template <class S>
S dual_norm(const VecT<S>& v, const ConvexBodyT<S>& K) {
  S best = -std::numeric_limits<S>::infinity();
  for (int id : K.vertex_ids) best = std::max(best, S(K.points.col(id).dot(v)));
  return best;
}

template <class S>
S diameter(const ConvexBodyT<S>& K) {
  S best = 0;
  for (size_t i = 0; i < K.vertex_ids.size(); ++i)
    for (size_t j = i + 1; j < K.vertex_ids.size(); ++j)
      best = std::max(best, S((K.points.col(K.vertex_ids[i]) - K.points.col(K.vertex_ids[j])).norm()));
  return best;
}

template <class S>
S radial(const ConvexBodyT<S>& K, const VecT<S>& u) {
  S best = std::numeric_limits<S>::infinity();
  for (const auto& f : K.facets) {
    S a = f.normal.dot(u);
    if (a > S(0)) best = std::min(best, f.offset / a);
  }
  return best;
}

double supporting_constant(int n, double s0) {
  double r = std::pow(s0, 1.0 / std::pow(2.0, n));
  return std::pow(n, 1.5) * (n - 0.5) * std::pow((1.0 + r) / (1.0 - r), n - 1);
}

SupportingWitness supporting_distance(const ConvexBody& Qt, const Vec& y, double s, double s0,
                                      std::uint64_t seed) {
  if (!(s >= 0.0 && s <= s0 && s0 < 1.0))
    throw Error(ErrorCode::ConfigError, "need 0 <= s <= s0 < 1");
  const int n = Qt.n;
  double d = diameter(Qt);
  Ellipsoid E = john_ellipsoid(Qt);
  E.center.setZero();
  if (john_violation(Qt, E) > 1e-6)
    throw Error(ErrorCode::NotWellCentered, "E c Q c nE fails for E centred at the origin");
  if (s < 1.0 && std::abs(Qt.violation(y / (1.0 - s))) > 1e-9 * d)
    throw Error(ErrorCode::ConfigError, "y is not on (1-s) dQ");

  std::vector<Vec> dirs;
  for (const auto& f : Qt.facets) dirs.push_back(f.normal);
  for (int id : Qt.vertex_ids) dirs.push_back(Qt.points.col(id).normalized());
  Rng rng(seed);
  for (int k = 0; k < 64; ++k) dirs.push_back(random_unit(rng, n));

  double c = supporting_constant(n, s0);
  double factor = c * std::pow(s, 1.0 / std::pow(2.0, n - 1));
  SupportingWitness best;
  double best_ratio = kInf;
  for (const Vec& u : dirs) {
    double chord = radial(Qt, u) + radial(Qt, Vec(-u));
    for (double sign : {1.0, -1.0}) {
      Vec w = sign * u;
      double h = dual_norm(w, Qt);
      double lhs = h - w.dot(y);
      if (lhs / chord < best_ratio) {
        best_ratio = lhs / chord;
        best.direction = w;
        best.plane_offset = h;
        best.lhs = lhs;
        best.chord = chord;
        best.rhs = factor * chord;
      }
    }
  }
  best.candidates = int(dirs.size());
  if (best.lhs > best.rhs + 1e-12 * d)
    throw Error(ErrorCode::NoWitnessFound, "dist " + std::to_string(best.lhs) + " > bound " +
                                               std::to_string(best.rhs));
  return best;
}

namespace {

double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
  double a = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - p.y() * q.x();
  }
  return std::abs(a) / 2.0;
}

// Sutherland-Hodgman clip against a . z <= b.
std::vector<Eigen::Vector2d> clip(const std::vector<Eigen::Vector2d>& poly,
                                  const Eigen::Vector2d& a, double b) {
  std::vector<Eigen::Vector2d> out;
  for (size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    double fp = a.dot(p) - b, fq = a.dot(q) - b;
    if (fp <= 0) out.push_back(p);
    if ((fp < 0 && fq > 0) || (fp > 0 && fq < 0)) out.push_back(p + (fp / (fp - fq)) * (q - p));
  }
  return out;
}

}  // namespace

SliceProjection slice_projection_bound(const ConvexBody& Q, int n1, const Vec& anchor) {
  const int n = Q.n, n2 = n - n1;
  if (n1 < 1 || n2 < 1) throw Error(ErrorCode::ConfigError, "split must have both parts >= 1");
  SliceProjection r;
  r.volume = Q.volume;
  if (n1 == 1) {
    double lo = -kInf, hi = kInf;
    for (const auto& f : Q.facets) {
      double a = f.normal[0];
      double b = f.offset - f.normal.tail(n2).dot(anchor.tail(n2));
      if (a > 1e-15)
        hi = std::min(hi, b / a);
      else if (a < -1e-15)
        lo = std::max(lo, b / a);
      else if (b < 0)
        hi = lo = 0.0;
    }
    r.slice_measure = std::max(0.0, hi - lo);
  } else {
    Mat V = Q.vertices();
    Eigen::Vector2d lo = V.topRows(2).rowwise().minCoeff(), hi = V.topRows(2).rowwise().maxCoeff();
    Eigen::Vector2d pad = Eigen::Vector2d::Constant((hi - lo).maxCoeff());
    lo -= pad;
    hi += pad;
    std::vector<Eigen::Vector2d> poly = {lo, {hi.x(), lo.y()}, hi, {lo.x(), hi.y()}};
    for (const auto& f : Q.facets) {
      Eigen::Vector2d a = f.normal.head(2);
      double b = f.offset - f.normal.tail(n2).dot(anchor.tail(n2));
      if (a.norm() < 1e-15) {
        if (b < 0) poly.clear();
        continue;
      }
      poly = clip(poly, a, b);
      if (poly.empty()) break;
    }
    r.slice_measure = poly.size() >= 3 ? polygon_area(poly) : 0.0;
  }
  if (!(r.slice_measure > 0.0)) throw Error(ErrorCode::EmptySlice, "slice through anchor is empty");
  ConvexBody proj = make_body<double>(Mat(Q.vertices().bottomRows(n2)));
  r.projection_measure = proj.volume;
  r.ratio = r.slice_measure * r.projection_measure / r.volume;
  return r;
}

double strong_convexity_radius(const Mat& cloud) {
  ConvexBody Q = make_body<double>(cloud);
  if (Q.degenerate) throw Error(ErrorCode::DegenerateBody, "boundary cloud has empty interior");
  const int n = Q.n;
  double d = diameter(Q);
  double tol = 1e-9 * d;
  std::vector<char> is_vertex(cloud.cols(), 0);
  for (int id : Q.vertex_ids) is_vertex[id] = 1;
  // A sample lying inside a facet (not at one of its corners) means the
  // boundary is flat there.
  for (const auto& f : Q.facets) {
    Mat E(n, n - 1);
    for (int k = 1; k < n; ++k) E.col(k - 1) = cloud.col(f.verts[k]) - cloud.col(f.verts[0]);
    Eigen::ColPivHouseholderQR<Mat> qr(E);
    for (int j = 0; j < cloud.cols(); ++j) {
      if (std::abs(f.normal.dot(cloud.col(j)) - f.offset) > tol) continue;
      if (std::find(f.verts.begin(), f.verts.end(), j) != f.verts.end()) continue;
      Vec w = qr.solve(Vec(cloud.col(j) - cloud.col(f.verts[0])));
      if (w.minCoeff() >= -1e-9 && w.sum() <= 1.0 + 1e-9) return kInf;
    }
  }
  // Per vertex b: the enclosing ball touching at b has centre b - w and
  // contains p iff (b-p).w >= |b-p|^2/2, so R_b is the minimum-norm w in a
  // polyhedron. Solved by constraint generation on a small working set.
  double R = 0.0;
  for (int b : Q.vertex_ids) {
    std::vector<Vec> A;
    std::vector<double> r;
    for (int p : Q.vertex_ids)
      if (p != b) {
        A.push_back(cloud.col(b) - cloud.col(p));
        r.push_back(0.5 * A.back().squaredNorm());
      }
    std::vector<int> work;
    Vec w = Vec::Zero(n);
    for (int round = 0; round < 200; ++round) {
      int worst = -1;
      double gap = 1e-12 * d * d;
      for (int i = 0; i < int(A.size()); ++i)
        if (double g = r[i] - A[i].dot(w); g > gap) gap = g, worst = i;
      if (worst < 0) break;
      work.push_back(worst);
      double best = kInf;
      Vec best_w = w;
      int k = int(work.size());
      // enumerate active subsets of size <= n; the KKT point is the optimum
      std::vector<int> S;
      std::function<void(int)> visit = [&](int from) {
        if (!S.empty()) {
          Mat As(S.size(), n);
          Vec rs(S.size());
          for (size_t t = 0; t < S.size(); ++t) As.row(t) = A[S[t]].transpose(), rs[t] = r[S[t]];
          Eigen::FullPivLU<Mat> lu(As * As.transpose());
          if (lu.rank() == int(S.size())) {
            Vec lam = lu.solve(rs);
            Vec cand = As.transpose() * lam;
            bool ok = lam.minCoeff() >= 0.0;
            for (int i : work)
              if (ok && r[i] - A[i].dot(cand) > 1e-12 * d * d) ok = false;
            if (ok && cand.norm() < best) best = cand.norm(), best_w = cand;
          }
        }
        if (int(S.size()) == n) return;
        for (int t = from; t < k; ++t) {
          S.push_back(work[t]);
          visit(t + 1);
          S.pop_back();
        }
      };
      visit(0);
      if (!std::isfinite(best)) return kInf;
      w = best_w;
      if (w.norm() > 1e12 * d) return kInf;
    }
    R = std::max(R, w.norm());
  }
  return R;
}

template struct ConvexBodyT<double>;
template struct EllipsoidT<double>;
template ConvexBodyT<double> make_body(const MatT<double>&);
template ConvexBodyT<double> make_body(const std::vector<VecT<double>>&);
template EllipsoidT<double> mvee(const ConvexBodyT<double>&, double);
template EllipsoidT<double> john_ellipsoid(const ConvexBodyT<double>&);
template double john_violation(const ConvexBodyT<double>&, const EllipsoidT<double>&);
template ConvexBodyT<double> dilate_about(const ConvexBodyT<double>&, const VecT<double>&, double);
template ConvexBodyT<double> dilate(const ConvexBodyT<double>&, double);
template ConvexBodyT<double> translate(const ConvexBodyT<double>&, const VecT<double>&);
template double dual_norm(const VecT<double>&, const ConvexBodyT<double>&);
template double diameter(const ConvexBodyT<double>&);
template double radial(const ConvexBodyT<double>&, const VecT<double>&);

}  // namespace mtwlab
