#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mtwlab/regularity.hpp"
#include "mtwlab/suites.hpp"

#include <cmath>

using namespace mtwlab;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

std::vector<Vec> quadratic_bases() {
  Rng rng(1);
  std::vector<Vec> bases;
  for (int i = 0; i < 6; ++i) bases.push_back(v2(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3)));
  return bases;
}

}  // namespace

TEST_CASE("quadratic sections engulf with K = 1") {
  // |x - x_bar|^2 / 2 <= tau is symmetric in x and x_bar.
  EngulfingReport r = engulfing_constant(quadratic_model(2), quadratic_bases(), {0.001, 0.004});
  CHECK(r.pairs > 100);
  CHECK(std::abs(r.K_emp - 1.0) <= 1e-3);
  CHECK(r.spread <= 1e-3);
  CHECK(r.taus.size() == 2);
}

TEST_CASE("engulfing is unchanged by an affine change of x") {
  auto q = quadratic_model(2);
  Mat L(2, 2);
  L << 2.0, 0.5, 0.0, 0.5;
  Vec b = v2(0.1, -0.05);
  CostPtr ac = make_affine_cost(q->cost_ptr(), L, b, L.inverse().transpose(), Vec::Zero(2), 1.0);
  auto qa = affine_pullback(q, ac, L, b, 1.0, ac->target().center());
  std::vector<Vec> pre;
  for (const auto& x : quadratic_bases()) pre.push_back(L.inverse() * (x - b));
  for (const auto& x : pre) CHECK(qa->value(x) == doctest::Approx(q->value(L * x + b)).epsilon(1e-14));
  EngulfingReport a = engulfing_constant(q, quadratic_bases(), {0.002});
  EngulfingReport r = engulfing_constant(qa, pre, {0.002});
  CHECK(r.K_emp == doctest::Approx(a.K_emp).epsilon(0.05));
}

TEST_CASE("bases without separated pairs are rejected") {
  auto q = quadratic_model(2);
  const DomainBox& U = q->cost().source();
  std::vector<Vec> edge{U.lower + Vec::Constant(2, 1e-4)};
  CHECK_THROWS_AS(engulfing_constant(q, edge, {0.01}), Error);
}

TEST_CASE("half-height section shrinks by 1/sqrt(2)") {
  ShrinkResult s = section_shrink(quadratic_model(2), Vec::Zero(2), Vec::Zero(2), 0.01);
  CHECK(s.rho0 >= 1 / std::sqrt(2.0) - 1e-3);
  CHECK(s.rho0 <= 1 / std::sqrt(2.0) + 0.02);
  CHECK(s.report.verdict == Outcome::Pass);
}

TEST_CASE("monotonicity gain is an identity for the quadratic model") {
  // Bilinear cost and u = |x|^2/2: both sides equal |x - x_bar|^2 when K = 1.
  auto q = quadratic_model(2);
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    Vec x = v2(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
    Vec xb = v2(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
    EstimateReport r = monotonicity_gain(*q, x, xb, 1.0);
    CHECK(r.lhs == doctest::Approx(r.rhs).epsilon(1e-9));
    CHECK(r.rhs == doctest::Approx((x - xb).squaredNorm()).epsilon(1e-9));
    CHECK(r.verdict == Outcome::Pass);
    CHECK(monotonicity_gain(*q, x, xb, 0.5).verdict == ((x - xb).norm() > 1e-6 ? Outcome::Fail : Outcome::Pass));
  }
}

TEST_CASE("injectivity of identity and doubling maps") {
  const DomainBox U = DomainBox::cube(2, -1.0, 1.0);
  const int g = 11;
  const double h = 2.0 / (g - 1);
  auto nodes = U.grid(g);
  Mat X(2, int(nodes.size()));
  for (size_t i = 0; i < nodes.size(); ++i) X.col(int(i)) = nodes[i];
  TransportMap id;
  id.G = X;
  InjectivityReport a = injectivity_check(id, X, U, h, 1.5 * h);  // off the lattice
  CHECK(a.violations.empty());
  CHECK(a.min_separation == doctest::Approx(h));
  CHECK(a.interior == 49);
  TransportMap twice;
  twice.G = 2 * X;
  CHECK(injectivity_check(twice, X, U, h, 2 * h).min_separation == doctest::Approx(2 * h));
  // Folding two columns onto one another.
  TransportMap fold = id;
  for (int i = 0; i < fold.G.cols(); ++i) fold.G(0, i) = std::abs(fold.G(0, i));
  CHECK(!injectivity_check(fold, X, U, h, 2 * h).violations.empty());
}

TEST_CASE("Holder fit on linear maps") {
  auto bil = make_cost("bilinear", 2);
  const DomainBox& box = bil->source();
  const int g = 64;
  auto nodes = box.grid(g);
  Mat G(2, int(nodes.size()));
  Vec u(int(nodes.size()));
  for (size_t i = 0; i < nodes.size(); ++i) {
    G.col(int(i)) = 2 * nodes[i];
    u[int(i)] = nodes[i].squaredNorm();
  }
  HolderReport r = holder_fit(G, u, *bil, box, g, 1.0);
  CHECK(r.alpha_emp == doctest::Approx(1.0).epsilon(0.02));
  CHECK(r.exponent == 2.0);
  CHECK(r.pass_rate == 1.0);
  // u = |x|^2 / 2 with G = x: the potential modulus is |x - x_bar|^2 / 2.
  for (size_t i = 0; i < nodes.size(); ++i) {
    G.col(int(i)) = nodes[i];
    u[int(i)] = 0.5 * nodes[i].squaredNorm();
  }
  HolderReport h = holder_fit(G, u, *bil, box, g, 1.0);
  CHECK(h.C2 == doctest::Approx(0.5).epsilon(0.01));
  CHECK(h.modulus_failures == 0);
  CHECK_THROWS_AS(holder_fit(G, u, *bil, box, 4, 1.0), Error);
}

TEST_CASE("cubic grid interpolant reproduces quadratics") {
  auto bil = make_cost("bilinear", 2);
  const DomainBox box = DomainBox::cube(2, -0.5, 0.5);
  const int g = 12;
  auto f = [](const Vec& x) { return 0.7 * x[0] * x[0] - 0.2 * x[0] * x[1] + 0.4 * x[1] * x[1] + 0.1 * x[0]; };
  std::vector<double> vals;
  for (const auto& x : box.grid(g)) vals.push_back(f(x));
  CubicGridPotential u(bil, box, g, vals, Vec::Zero(2));
  Rng rng(2);
  for (int k = 0; k < 50; ++k) {
    // Away from the first and last cell the stencil is exact on quadratics.
    Vec x = v2(uniform(rng, -0.35, 0.35), uniform(rng, -0.35, 0.35));
    CHECK(u.value(x) == doctest::Approx(f(x)).epsilon(1e-12));
    Vec grad = u.gradient(x);
    CHECK(grad[0] == doctest::Approx(1.4 * x[0] - 0.2 * x[1] + 0.1).epsilon(1e-10));
    CHECK(grad[1] == doctest::Approx(-0.2 * x[0] + 0.8 * x[1]).epsilon(1e-10));
    Mat H = u.hessian(x);
    CHECK(H(0, 1) == doctest::Approx(-0.2).epsilon(1e-9));
    // Bilinear cost: the subgradient is the gradient.
    CHECK((u.subgradient(x) - grad).norm() < 1e-10);
  }
  CHECK_THROWS_AS(u.value(v2(0.6, 0.0)), Error);
}

TEST_CASE("solved instance: grid layout and interpolated potential") {
  auto c = make_cost("sqdist", 2);
  ProblemSpec spec;
  spec.cost = c;
  spec.mu_plus = cell_centered_measure(c->source(), 8);
  spec.mu_minus = cell_centered_measure(c->target(), 8);
  KantorovichSolution sol = solve_kantorovich(spec);
  SourceGrid grid = source_grid(sol);
  CHECK(grid.g == 8);
  for (size_t f = 0; f < grid.order.size(); ++f) {
    int i = int(f % 8), j = int(f / 8);
    Vec expect = grid.box.lower + Vec(v2(i, j).array() * grid.box.width().array() / 7.0);
    CHECK((sol.sources.col(grid.order[f]) - expect).norm() < 1e-12);
  }
  auto u = interpolated_potential(sol);
  for (size_t f = 0; f < grid.order.size(); ++f)
    CHECK(u->value(sol.sources.col(grid.order[f])) == doctest::Approx(sol.u[grid.order[f]]).epsilon(1e-12));
}

TEST_CASE("quadratic pipeline") {
  QuadraticPipeline p = quadratic_pipeline();
  CHECK(std::abs(p.engulfing.K_emp - 1.0) <= 1e-3);
  CHECK(p.renormalized.K_emp == doctest::Approx(p.engulfing.K_emp).epsilon(0.05));
  CHECK(p.holder.alpha_emp == doctest::Approx(1.0).epsilon(0.02));
  CHECK(p.holder.pass_rate >= 0.99);
}

TEST_CASE("solved neglog instance with a density jump") {
  PipelineConfig cfg;
  cfg.source_grid = 24;
  cfg.target_grid = 48;
  cfg.pair_budget = 20000;
  PipelineResult r = run_pipeline(cfg);
  CHECK(std::abs(r.solution.gap) <= 1e-9 * r.solution.scale);
  CHECK(r.injectivity.violations.empty());
  CHECK(r.mixing.interior_sources > 0);
  CHECK(r.mixing.violations.empty());
  CHECK(std::isfinite(r.engulfing.K_emp));
  CHECK(r.engulfing.K_emp >= 1.0);
  CHECK(r.holder.alpha_emp > 0.0);
  CHECK(r.holder.alpha_emp <= 1.0 + 0.02);
  CHECK(r.holder.pass_rate >= 0.99);
}
