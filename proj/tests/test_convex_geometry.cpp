#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mtwlab/convex_geometry.hpp"

#include <cmath>

using namespace mtwlab;

namespace {

Mat circle(int m, double a = 1.0, double b = 1.0) {
  Mat p(2, m);
  for (int k = 0; k < m; ++k) {
    double t = 2.0 * M_PI * k / m;
    p.col(k) << a * std::cos(t), b * std::sin(t);
  }
  return p;
}

Mat sphere(int rings, int segs) {
  std::vector<Vec> pts;
  pts.push_back(Vec::Unit(3, 2));
  pts.push_back(-Vec::Unit(3, 2));
  for (int r = 1; r < rings; ++r) {
    double th = M_PI * r / rings;
    for (int s = 0; s < segs; ++s) {
      double ph = 2.0 * M_PI * s / segs;
      Vec v(3);
      v << std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th);
      pts.push_back(v);
    }
  }
  Mat m(3, pts.size());
  for (size_t j = 0; j < pts.size(); ++j) m.col(j) = pts[j];
  return m;
}

Mat box_points(const Vec& lo, const Vec& hi) {
  int n = int(lo.size());
  Mat p(n, 1 << n);
  for (int mask = 0; mask < (1 << n); ++mask)
    for (int i = 0; i < n; ++i) p(i, mask) = (mask >> i & 1) ? hi[i] : lo[i];
  return p;
}

Mat random_cloud(Rng& rng, int n, int m) {
  Mat p(n, m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < n; ++i) p(i, j) = uniform(rng, -1.0, 1.0) * (1.0 + i);
  return p;
}

}  // namespace

TEST_CASE("hull volumes of boxes and simplices") {
  Vec lo(3), hi(3);
  lo << -1, 0, 2;
  hi << 1, 3, 2.5;
  ConvexBody b = make_body<double>(box_points(lo, hi));
  CHECK(!b.degenerate);
  CHECK(b.volume == doctest::Approx(2 * 3 * 0.5).epsilon(1e-12));
  CHECK(b.vertex_ids.size() == 8);

  Mat tri(2, 4);
  tri << 0, 1, 0, 0.2, 0, 0, 1, 0.2;  // last point interior
  ConvexBody t = make_body<double>(tri);
  CHECK(t.volume == doctest::Approx(0.5));
  CHECK(t.vertex_ids.size() == 3);

  Mat flat(3, 4);
  flat << 0, 1, 0, 1, 0, 0, 1, 1, 0, 0, 0, 0;
  CHECK(make_body<double>(flat).degenerate);
}

TEST_CASE("hull contains its generating cloud") {
  Rng rng(3);
  for (int n : {2, 3})
    for (int t = 0; t < 20; ++t) {
      Mat p = random_cloud(rng, n, 40);
      ConvexBody b = make_body<double>(p);
      for (int j = 0; j < p.cols(); ++j) CHECK(b.violation(p.col(j)) < 1e-9);
    }
}

TEST_CASE("MVEE of the square is the circumscribed disk") {
  Vec lo = Vec::Constant(2, -1.0), hi = Vec::Constant(2, 1.0);
  ConvexBody sq = make_body<double>(box_points(lo, hi));
  Ellipsoid E = mvee(sq);
  CHECK(E.center.norm() < 1e-9);
  CHECK((E.shape - std::sqrt(2.0) * Mat::Identity(2, 2)).norm() < 1e-6);
  Ellipsoid J = john_ellipsoid(sq);
  CHECK((J.shape - std::sqrt(2.0) / 2 * Mat::Identity(2, 2)).norm() < 1e-6);
  CHECK(john_violation(sq, J) < 1e-6);
}

TEST_CASE("MVEE of a sampled ball is the ball, so the John ellipsoid is B_{1/n}") {
  ConvexBody disk = make_body<double>(circle(360));
  CHECK((mvee(disk).shape - Mat::Identity(2, 2)).norm() < 1e-6);
  CHECK((john_ellipsoid(disk).shape - 0.5 * Mat::Identity(2, 2)).norm() < 1e-6);

  ConvexBody ball = make_body<double>(sphere(24, 48));
  CHECK((mvee(ball).shape - Mat::Identity(3, 3)).norm() < 1e-4);
}

TEST_CASE("John sandwich on 100 random polytopes") {
  Rng rng(11);
  double worst = -kInf;
  for (int t = 0; t < 100; ++t) {
    int n = 2 + t % 2;
    ConvexBody Q = make_body<double>(random_cloud(rng, n, 8 + t % 17));
    Ellipsoid E = john_ellipsoid(Q);
    worst = std::max(worst, john_violation(Q, E));
    // independent check: sampled boundary of E inside Q
    for (int k = 0; k < 50; ++k) {
      Vec e = E.center + E.shape * random_unit(rng, n);
      CHECK(Q.violation(e) < 1e-6 * diameter(Q));
    }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("dilation: identity, halving, nesting and volume scaling") {
  Vec lo = Vec::Constant(2, -1.0), hi = Vec::Constant(2, 1.0);
  ConvexBody sq = make_body<double>(box_points(lo, hi));
  ConvexBody same = dilate(sq, 1.0);
  for (size_t f = 0; f < sq.facets.size(); ++f)
    CHECK(std::abs(same.facets[f].offset - sq.facets[f].offset) < 1e-9);
  ConvexBody half = dilate(sq, 0.5);
  CHECK(half.volume == doctest::Approx(1.0));
  for (const auto& f : half.facets) CHECK(f.offset == doctest::Approx(0.5).epsilon(1e-8));

  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    int n = 2 + t % 2;
    ConvexBody Q = make_body<double>(random_cloud(rng, n, 15));
    double s = uniform(rng, 0.2, 0.9), u = uniform(rng, s, 1.5);
    ConvexBody A = dilate(Q, s), B = dilate(Q, u);
    for (int j = 0; j < A.points.cols(); ++j) CHECK(B.violation(A.points.col(j)) < 1e-9);
    // recompute the hull from the scaled cloud rather than trusting the transform
    ConvexBody Bh = make_body<double>(B.points);
    CHECK(std::abs(Bh.volume - std::pow(u, n) * Q.volume) < 1e-9 * std::max(1.0, Q.volume));
  }
}

TEST_CASE("dual norm: ball, box, diameter bound and sublinearity") {
  ConvexBody disk = make_body<double>(circle(3600));
  Vec v(2);
  v << 0.3, -0.7;
  CHECK(dual_norm(v, disk) == doctest::Approx(v.norm()).epsilon(1e-6));

  Vec a = Vec::Constant(3, 0.7);
  ConvexBody box = make_body<double>(box_points(Vec(-a), a));
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    Vec w(3);
    for (int i = 0; i < 3; ++i) w[i] = uniform(rng, -2, 2);
    CHECK(dual_norm(w, box) == doctest::Approx(0.7 * w.cwiseAbs().sum()).epsilon(1e-12));
  }
  for (int t = 0; t < 50; ++t) {
    int n = 2 + t % 2;
    ConvexBody K = make_body<double>(random_cloud(rng, n, 12));
    // diameter bound needs 0 in K; centre the body at a vertex-average first
    Vec c = K.vertices().rowwise().mean();
    K = translate(K, Vec(-c));
    Vec x = random_unit(rng, n) * uniform(rng, 0.1, 3), y = random_unit(rng, n);
    CHECK(dual_norm(x, K) <= diameter(K) * x.norm() + 1e-12);
    CHECK(dual_norm(Vec(x + y), K) <= dual_norm(x, K) + dual_norm(y, K) + 1e-12);
    CHECK(dual_norm(Vec(2.5 * x), K) == doctest::Approx(2.5 * dual_norm(x, K)));
  }
}

TEST_CASE("supporting constant at n=2, s0=1/2") {
  double r = std::sqrt(std::sqrt(0.5));
  double expect = 2.0 * std::sqrt(2.0) * 1.5 * (1.0 + r) / (1.0 - r);
  CHECK(supporting_constant(2, 0.5) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(std::abs(supporting_constant(2, 0.5) - 49.08) < 0.01);
}

TEST_CASE("supporting distance on the ball") {
  ConvexBody disk = make_body<double>(circle(720));
  for (double s : {0.0, 0.1, 0.5}) {
    Vec y = (1 - s) * Vec::Unit(2, 0);
    SupportingWitness w = supporting_distance(disk, y, s, 0.5);
    CHECK(w.lhs <= w.rhs + 1e-12);
    CHECK(w.lhs <= s + 1e-4);
  }
}

TEST_CASE("supporting distance finds a witness on 1000 random bodies") {
  Rng rng(21);
  int found = 0;
  for (int t = 0; t < 1000; ++t) {
    int n = 2 + t % 2;
    ConvexBody Q = make_body<double>(random_cloud(rng, n, 6 + t % 11));
    Ellipsoid E = john_ellipsoid(Q);
    ConvexBody Qt = translate(Q, Vec(-E.center));
    double s = uniform(rng, 0.0, 0.5);
    Vec u = random_unit(rng, n);
    Vec y = (1 - s) * radial(Qt, u) * u;
    SupportingWitness w = supporting_distance(Qt, y, s, 0.5, t);
    if (w.lhs <= w.rhs + 1e-12 * diameter(Qt)) ++found;
  }
  CHECK(found == 1000);
}

TEST_CASE("off-centre body is rejected") {
  Vec lo = Vec::Constant(2, 0.0), hi = Vec::Constant(2, 1.0);
  ConvexBody sq = make_body<double>(box_points(lo, hi));
  Vec y(2);
  y << 0.9, 0.5;
  CHECK_THROWS_AS(supporting_distance(sq, y, 0.1, 0.5), Error);
}

TEST_CASE("slice times projection over volume") {
  for (int n : {2, 3}) {
    ConvexBody cube = make_body<double>(box_points(Vec::Zero(n), Vec::Ones(n)));
    for (int n1 = 1; n1 < n; ++n1) {
      SliceProjection r = slice_projection_bound(cube, n1, Vec::Constant(n, 0.5));
      CHECK(r.ratio == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  // triangle (0,0),(1,0),(0,1), vertical slice at x-coordinate tail a: the
  // horizontal chord has length 1-a, projection 1, area 1/2
  Mat tri(2, 3);
  tri << 0, 1, 0, 0, 0, 1;
  ConvexBody T = make_body<double>(tri);
  Vec anchor(2);
  anchor << 0.0, 0.25;
  SliceProjection r = slice_projection_bound(T, 1, anchor);
  CHECK(r.slice_measure == doctest::Approx(0.75));
  CHECK(r.ratio == doctest::Approx(1.5));
  anchor << 0.0, 2.0;
  CHECK_THROWS_AS(slice_projection_bound(T, 1, anchor), Error);
}

TEST_CASE("strong convexity radius") {
  CHECK(strong_convexity_radius(circle(720)) == doctest::Approx(1.0).epsilon(1e-3));
  double R = strong_convexity_radius(circle(2000, 2.0, 1.0));
  CHECK(std::abs(R - 4.0) < 0.08);
  Mat box(2, 8);
  box << -1, 0, 1, 1, 1, 0, -1, -1, -1, -1, -1, 0, 1, 1, 1, 0;
  CHECK(std::isinf(strong_convexity_radius(box)));
  CHECK(strong_convexity_radius(sphere(30, 60)) == doctest::Approx(1.0).epsilon(2e-3));
}
