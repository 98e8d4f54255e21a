#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mtwlab/transport.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace mtwlab;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

Vec random_in(Rng& rng, const DomainBox& box) {
  Vec x(box.dim());
  for (int i = 0; i < box.dim(); ++i) x[i] = uniform(rng, box.lower[i], box.upper[i]);
  return x;
}

DiscreteMeasure random_measure(Rng& rng, const DomainBox& box, int count, bool uniform_weights) {
  DiscreteMeasure m;
  m.support.resize(box.dim(), count);
  m.weights.resize(count);
  for (int i = 0; i < count; ++i) {
    m.support.col(i) = random_in(rng, box);
    m.weights[i] = uniform_weights ? 1.0 : 0.1 + uniform01(rng);
  }
  m.weights /= m.weights.sum();
  return m;
}

ProblemSpec make_spec(CostPtr c, DiscreteMeasure a, DiscreteMeasure b) {
  ProblemSpec s;
  s.U_lambda = c->source();
  s.cost = std::move(c);
  s.mu_plus = std::move(a);
  s.mu_minus = std::move(b);
  return s;
}

// Quantile instance: 64 uniform atoms on [0,1] and on [0,2].
ProblemSpec quantile_spec() {
  auto c = make_cost("sqdist", DomainBox(v1(0), v1(1)), DomainBox(v1(0), v1(2)));
  return make_spec(c, cell_centered_measure(c->source(), 64), cell_centered_measure(c->target(), 64));
}

void check_certificate(const KantorovichSolution& sol) {
  CHECK(sol.marginal_error() < 1e-9);
  CHECK(sol.min_slack() >= -1e-9 * sol.scale);
  CHECK(std::abs(sol.gap) <= 1e-9 * sol.scale);
  for (const PlanEntry& e : sol.plan) CHECK(std::abs(sol.slack(e.i, e.j)) <= 1e-9 * sol.scale);
}

}  // namespace

TEST_CASE("identity instance") {
  auto c = make_cost("sqdist", DomainBox::cube(2, 0, 1), DomainBox::cube(2, 0, 1));
  DiscreteMeasure m = cell_centered_measure(c->source(), 12);
  KantorovichSolution sol = solve_kantorovich(make_spec(c, m, m));
  CHECK(std::abs(sol.total_cost) <= 1e-15);
  REQUIRE(sol.plan.size() == 144);
  for (const PlanEntry& e : sol.plan) CHECK(e.i == e.j);
  check_certificate(sol);
  for (int i = 0; i < m.size(); ++i) {
    std::vector<int> sd = c_subdifferential(sol, i, 1e-12);
    CHECK(sd == std::vector<int>{i});
  }
}

TEST_CASE("quantile instance matches sorted matching") {
  ProblemSpec s = quantile_spec();
  KantorovichSolution sol = solve_kantorovich(s);
  check_certificate(sol);
  // 1-D optimal transport pairs the k-th atoms in sorted order.
  double expected = 0.0;
  for (int k = 0; k < 64; ++k) {
    double x = (k + 0.5) / 64, y = (k + 0.5) / 32;
    expected += 0.5 * (x - y) * (x - y) / 64;
  }
  CHECK(sol.total_cost == doctest::Approx(expected).epsilon(1e-12));
  for (const PlanEntry& e : sol.plan) CHECK(e.i == e.j);

  TransportMap tm = recover_map(sol);
  int close = 0;
  for (int i = 0; i < 64; ++i) {
    double x = sol.sources(0, i);
    CHECK(std::abs(tm.G(0, i) - 2 * x) <= 2.0 / 64 + 1e-12);
    if (std::abs(tm.G(0, i) - sol.targets(0, i)) < 2.0 / 64) ++close;
    bool edge = i == 0 || i == 63;
    CHECK((tm.stencil[i][0] == Stencil::OneSided) == edge);
  }
  CHECK(close >= 0.95 * 64);
  for (int i = 2; i < 62; ++i)
    for (int j : c_subdifferential(sol, i, 1e-12))
      CHECK(std::abs(sol.targets(0, j) - 2 * sol.sources(0, i)) <= 2.0 / 64 + 1e-12);
}

TEST_CASE("5x5 instances match the permutation oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    std::string key = zoo_keys()[trial % zoo_keys().size()];
    auto c = make_cost(key, 2);
    ProblemSpec s = make_spec(c, random_measure(rng, c->source(), 5, true),
                              random_measure(rng, c->target(), 5, true));
    KantorovichSolution sol = solve_kantorovich(s);
    // Uniform 5x5 plans: the optimum sits at a vertex of the Birkhoff
    // polytope, i.e. a permutation matrix scaled by 1/5.
    std::vector<int> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    double best = kInf;
    do {
      double t = 0.0;
      for (int i = 0; i < 5; ++i)
        t += c->value(s.mu_plus.support.col(i), s.mu_minus.support.col(perm[i])) / 5;
      best = std::min(best, t);
    } while (std::next_permutation(perm.begin(), perm.end()));
    INFO(key);
    CHECK(std::abs(sol.total_cost - best) <= 1e-9);
    check_certificate(sol);
  }
}

TEST_CASE("random weighted instances carry an optimality certificate") {
  Rng rng(99);
  for (const std::string& key : zoo_keys())
    for (int n : {1, 2, 3}) {
      auto c = make_cost(key, n);
      ProblemSpec s = make_spec(c, random_measure(rng, c->source(), 60, false),
                                random_measure(rng, c->target(), 45, false));
      KantorovichSolution sol = solve_kantorovich(s);
      INFO(key << " n=" << n);
      check_certificate(sol);
      CHECK(sol.plan.size() <= 60 + 45 - 1);
    }
}

TEST_CASE("larger instance stays exact") {
  Rng rng(5);
  auto c = make_cost("neglog", 2);
  ProblemSpec s = make_spec(c, random_measure(rng, c->source(), 400, false),
                            random_measure(rng, c->target(), 400, false));
  KantorovichSolution sol = solve_kantorovich(s);
  check_certificate(sol);
}

TEST_CASE("solver errors") {
  auto c = make_cost("sqdist", 2);
  Rng rng(1);
  DiscreteMeasure a = random_measure(rng, c->source(), 4, true);
  DiscreteMeasure b = random_measure(rng, c->target(), 4, true);
  b.weights[0] += 1e-6;
  CHECK_THROWS_AS(solve_kantorovich(make_spec(c, a, b)), Error);
  try {
    solve_kantorovich(make_spec(c, a, b));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Infeasible);
  }
  b.weights[0] -= 1e-6;
  SolverOptions tiny;
  tiny.max_pivots = 1;
  CHECK_THROWS_AS(solve_kantorovich(make_spec(c, a, b), tiny), Error);
}

TEST_CASE("c-transform") {
  auto bil = make_cost("bilinear", DomainBox::cube(2, -1, 1), DomainBox::cube(2, -1, 1));
  Mat ys(2, 4);
  ys << 1, 1, -1, -1, 1, -1, 1, -1;
  Rng rng(3);
  Mat xs(2, 50);
  for (int i = 0; i < 50; ++i) xs.col(i) = random_in(rng, bil->source());
  CTransform u = c_transform(*bil, ys, Vec::Zero(4), xs);
  for (int i = 0; i < 50; ++i)
    CHECK(u.values[i] == doctest::Approx(std::abs(xs(0, i)) + std::abs(xs(1, i))).epsilon(1e-15));
  // x = 0 ties all four targets; lowest index wins
  CTransform at0 = c_transform(*bil, ys, Vec::Zero(4), Mat::Zero(2, 1));
  CHECK(at0.argmax[0] == 0);
  CHECK(at0.tied[0]);

  auto nl = make_cost("neglog", 2);
  Mat yt(2, 30), xt(2, 40);
  Vec v(30);
  for (int j = 0; j < 30; ++j) yt.col(j) = random_in(rng, nl->target()), v[j] = uniform(rng, -1, 1);
  for (int i = 0; i < 40; ++i) xt.col(i) = random_in(rng, nl->source());
  CTransform ut = c_transform(*nl, yt, v, xt);
  for (int i = 0; i < 40; ++i) {
    double best = -kInf;
    int arg = -1;
    for (int j = 0; j < 30; ++j) {
      double m = -nl->value(xt.col(i), yt.col(j)) - v[j];
      if (m > best) best = m, arg = j;
    }
    CHECK(ut.values[i] == best);
    CHECK(ut.argmax[i] == arg);
  }

  // Order reversal and idempotence, up to rounding of -c - w.
  CTransform v1t = c_star_transform(*nl, xt, ut.values, yt);
  for (int j = 0; j < 30; ++j) CHECK(v1t.values[j] <= v[j] + 1e-15);
  CTransform u2 = c_transform(*nl, yt, v1t.values, xt);
  for (int i = 0; i < 40; ++i) CHECK(std::abs(u2.values[i] - ut.values[i]) <= 1e-14 * (1 + std::abs(ut.values[i])));
  CTransform v2t = c_star_transform(*nl, xt, u2.values, yt);
  for (int j = 0; j < 30; ++j) CHECK(std::abs(v2t.values[j] - v1t.values[j]) <= 1e-14 * (1 + std::abs(v1t.values[j])));
  Vec rough(40);
  for (int i = 0; i < 40; ++i) rough[i] = uniform(rng, -1, 1);
  CTransform vr = c_star_transform(*nl, xt, rough, yt);
  CTransform ur = c_transform(*nl, yt, vr.values, xt);
  for (int i = 0; i < 40; ++i) CHECK(ur.values[i] <= rough[i] + 1e-15);
}

TEST_CASE("c-subdifferential on a symmetric tie") {
  auto c = make_cost("sqdist", DomainBox(v1(-1), v1(1)), DomainBox(v1(-1), v1(1)));
  DiscreteMeasure a = DiscreteMeasure::uniform(Mat::Zero(1, 1));
  Mat ys(1, 2);
  ys << -1, 1;
  DiscreteMeasure b = DiscreteMeasure::uniform(ys);
  KantorovichSolution sol = solve_kantorovich(make_spec(c, a, b));
  std::vector<int> sd = c_subdifferential(sol, 0, 1e-12);
  CHECK(sd == std::vector<int>{0, 1});
  for (int j : sd) CHECK(std::abs(sol.slack(0, j)) <= 1e-12);
}

TEST_CASE("c-Monge-Ampere cell densities") {
  auto c = make_cost("sqdist", DomainBox::cube(2, 0, 1), DomainBox::cube(2, 0, 1));
  DiscreteMeasure m = cell_centered_measure(c->source(), 24);
  KantorovichSolution sol = solve_kantorovich(make_spec(c, m, m));
  auto cells = cma_measure(sol, c->source(), 6, 1e-12);
  double total = 0.0;
  for (const CellDensity& cd : cells) {
    REQUIRE(!cd.degenerate);
    CHECK(cd.density == doctest::Approx(1.0).epsilon(1e-9));
    total += cd.density * cd.cell.volume();
  }
  CHECK(total == doctest::Approx(c->target().volume()).epsilon(0.05));

  KantorovichSolution q = solve_kantorovich(quantile_spec());
  auto qc = cma_measure(q, q.cost->source(), 8, 1e-12);
  double qt = 0.0;
  for (const CellDensity& cd : qc) {
    CHECK(cd.density == doctest::Approx(2.0).epsilon(0.05));
    qt += cd.density * cd.cell.volume();
  }
  CHECK(qt == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("Monge-Ampere density of closed-form potentials") {
  auto sq1 = make_cost("sqdist", DomainBox(v1(-1), v1(1)), DomainBox(v1(-3), v1(3)));
  SmoothPotential zero(
      sq1, [](const Vec&) { return 0.0; }, [](const Vec& x) -> Vec { return Vec::Zero(x.size()); },
      [](const Vec& x) -> Mat { return Mat::Zero(x.size(), x.size()); }, Vec::Zero(1));
  CHECK(ma_density_pde(zero, v1(0.3)) == doctest::Approx(1.0).epsilon(1e-12));
  // u = x^2/2 gives D_x c(x, G) = x - G = -x, so G = 2x and density 1 + 1.
  SmoothPotential half(
      sq1, [](const Vec& x) { return 0.5 * x.squaredNorm(); }, [](const Vec& x) -> Vec { return x; },
      [](const Vec& x) -> Mat { return Mat::Identity(x.size(), x.size()); }, Vec::Zero(1));
  CHECK(half.subgradient(v1(0.4))[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(ma_density_pde(half, v1(0.4)) == doctest::Approx(2.0).epsilon(1e-12));

  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    Mat B(2, 2);
    for (int i = 0; i < 4; ++i) B(i / 2, i % 2) = uniform(rng, -0.5, 0.5);
    Mat A = 0.5 * (B + B.transpose());
    Mat I = Mat::Identity(2, 2);
    auto c = make_cost("sqdist", DomainBox::cube(2, 0, 1), DomainBox::cube(2, -3, 4));
    SmoothPotential u(
        c, [A](const Vec& x) { return 0.5 * x.dot(A * x); }, [A](const Vec& x) -> Vec { return A * x; },
        [A](const Vec&) -> Mat { return A; }, Vec::Zero(2));
    double pde = ma_density_pde(u, v2(0.5, 0.5));
    CHECK(pde == doctest::Approx((A + I).determinant()).epsilon(1e-10));
    // Discrete instance pushed forward by G = (I + A) x.
    DiscreteMeasure src = cell_centered_measure(c->source(), 16);
    DiscreteMeasure tgt = src;
    tgt.support = (I + A) * src.support;
    KantorovichSolution sol = solve_kantorovich(make_spec(c, src, tgt));
    check_certificate(sol);
    for (const CellDensity& cd : cma_measure(sol, c->source(), 4, 1e-12))
      CHECK(cd.density == doctest::Approx(pde).epsilon(0.05));
  }
}

TEST_CASE("recover_map on the identity instance") {
  auto c = make_cost("sqdist", DomainBox::cube(2, 0, 1), DomainBox::cube(2, 0, 1));
  DiscreteMeasure m = cell_centered_measure(c->source(), 10);
  KantorovichSolution sol = solve_kantorovich(make_spec(c, m, m));
  TransportMap tm = recover_map(sol);
  double h = 0.1;
  for (int i = 0; i < m.size(); ++i) {
    CHECK((tm.G.col(i) - m.support.col(i)).norm() < h);
    CHECK(!tm.newton_failed[i]);
  }
  Mat scattered = m.support;
  scattered(0, 3) += 1e-3;
  KantorovichSolution bad = sol;
  bad.sources = scattered;
  CHECK_THROWS_AS(recover_map(bad), Error);
}

TEST_CASE("DASM sampling") {
  auto bil = make_cost("bilinear", 2);
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    Vec x = random_in(rng, bil->source()), xb = random_in(rng, bil->source());
    Vec y0 = random_in(rng, bil->target()), y1 = random_in(rng, bil->target());
    DasmResult r = dasm_check(*bil, x, xb, y0, y1, 17);
    CHECK(r.violation <= 1e-12 * std::max(1.0, r.scale));
    CHECK(r.concavity <= 1e-12 * std::max(1.0, r.scale));
  }
  auto nl = make_cost("neglog", 2);
  double worst = 0.0;
  int valid = 0;
  while (valid < 10000) {
    Vec x = random_in(rng, nl->source()), xb = random_in(rng, nl->source());
    Vec y0 = random_in(rng, nl->target()), y1 = random_in(rng, nl->target());
    try {
      DasmResult r = dasm_check(*nl, x, xb, y0, y1, 17);
      worst = std::max(worst, r.violation / std::max(r.scale, 1e-300));
      ++valid;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SegmentEscapesDomain) throw;
    }
  }
  CHECK(worst <= 1e-6);

  auto q4 = make_cost("quartic", 2);
  double found = 0.0;
  for (int t = 0; t < 4000 && found <= 1e-3; ++t) {
    Vec x = random_in(rng, q4->source()), xb = random_in(rng, q4->source());
    Vec y0 = random_in(rng, q4->target()), y1 = random_in(rng, q4->target());
    try {
      DasmResult r = dasm_check(*q4, x, xb, y0, y1, 33);
      found = std::max(found, r.violation / std::max(r.scale, 1e-300));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SegmentEscapesDomain) throw;
    }
  }
  CHECK(found > 1e-3);
}

TEST_CASE("boundary mixing") {
  auto c = make_cost("sqdist", DomainBox::cube(2, -1, 1), DomainBox::cube(2, -1, 1));
  Vec o = Vec::Zero(2);
  DiscreteMeasure ball = ball_measure(o, 1.0, 24);
  double h = 2.0 / 24;
  KantorovichSolution id = solve_kantorovich(make_spec(c, ball, ball));
  MixingReport r = boundary_mixing_check(id, Region::ball(o, 1.0), h, Region::ball(o, 1.0), h, 1e-12);
  CHECK(r.interior_sources > 100);
  CHECK(r.violations.empty());

  // G = 2x with 2U compactly inside the target ball.
  auto c2 = make_cost("sqdist", DomainBox::cube(2, -1, 1), DomainBox::cube(2, -3, 3));
  DiscreteMeasure small = ball_measure(o, 0.5, 16);
  DiscreteMeasure big = small;
  big.support *= 2.0;
  KantorovichSolution dil = solve_kantorovich(make_spec(c2, small, big));
  MixingReport r2 =
      boundary_mixing_check(dil, Region::ball(o, 0.5), 1.0 / 16, Region::ball(o, 2.5), 2.0 / 16, 1e-12);
  CHECK(r2.interior_sources > 50);
  CHECK(r2.violations.empty());

  // A heavy atom on the boundary of V attracts interior mass.
  DiscreteMeasure heavy = ball;
  heavy.support.conservativeResize(2, ball.size() + 1);
  heavy.support.col(ball.size()) = v2(0.999, 0.0);
  heavy.weights.conservativeResize(ball.size() + 1);
  heavy.weights *= 0.6;
  heavy.weights[ball.size()] = 0.4;
  KantorovichSolution pile = solve_kantorovich(make_spec(c, ball, heavy));
  MixingReport r3 = boundary_mixing_check(pile, Region::ball(o, 1.0), h, Region::ball(o, 1.0), h, 1e-12);
  CHECK(!r3.violations.empty());
}

TEST_CASE("instance JSON roundtrip and dumps") {
  ProblemSpec s = quantile_spec();
  s.lambda = 0.5;
  s.Lambda = 2.0;
  ProblemSpec back = read_instance(write_instance(s));
  CHECK(back.cost->key() == "sqdist");
  CHECK((back.mu_plus.support - s.mu_plus.support).norm() == 0.0);
  CHECK((back.mu_minus.weights - s.mu_minus.weights).norm() == 0.0);
  CHECK(back.Lambda == 2.0);
  CHECK((back.cost->target().upper - s.cost->target().upper).norm() == 0.0);
  KantorovichSolution sol = solve_kantorovich(back);
  std::string csv = plan_csv(sol);
  CHECK(csv.rfind("i,j,mass\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == int(sol.plan.size()) + 1);
  CHECK(potentials_json(sol).find("\"gap\"") != std::string::npos);
  CHECK_THROWS_AS(read_instance("{\"cost\": \"sqdist\"}"), Error);
  CHECK_THROWS_AS(read_instance("not json"), Error);
}
