#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mtwlab/estimates.hpp"
#include "mtwlab/suites.hpp"

#include <cmath>
#include <numbers>

using namespace mtwlab;

namespace {

constexpr double kPi = std::numbers::pi;

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// Quadratic model: u~(q) = |q|^2 / 2 in the chart at 0, so S(0, 0, tau) is
// the disc of radius sqrt(2 tau).
SectionData disc(double tau, int grid = 128) {
  SectionOptions opt;
  opt.grid = grid;
  return section(quadratic_model(2), Vec::Zero(2), Vec::Zero(2), tau, opt);
}

}  // namespace

TEST_CASE("quadratic section is the disc of radius sqrt(2 tau)") {
  const double tau = 0.02, r = std::sqrt(2 * tau);
  SectionData S = disc(tau);
  CHECK(S.inf_value == doctest::Approx(-tau).epsilon(1e-12));
  CHECK(S.mask_volume == doctest::Approx(kPi * r * r).epsilon(0.01));
  for (int k = 0; k < 8; ++k) {
    Vec dir = v2(std::cos(0.7 * k), std::sin(0.7 * k));
    CHECK(S.boundary_distance(Vec::Zero(2), dir) == doctest::Approx(r).epsilon(1e-8));
  }
  CHECK(levelset_defect(S) == 0.0);
  CHECK((S.john.center).norm() < 0.01 * r);
}

TEST_CASE("section volume scales like tau^(n/2)") {
  SectionData a = disc(0.02), b = disc(0.005);
  CHECK(a.mask_volume / b.mask_volume == doctest::Approx(4.0).epsilon(0.01));
  // Same window: mask grows with tau.
  SectionOptions opt;
  opt.grid = 64;
  auto u = quadratic_model(2);
  auto ch = std::make_shared<ExpChart>(u->cost_ptr(), Vec::Zero(2));
  SectionData big = section(u, ch, Vec::Zero(2), 0.02, opt);
  int prev = 0;
  for (double tau : {0.002, 0.005, 0.01, 0.02}) {
    SectionData s = section(u, ch, Vec::Zero(2), tau, opt, &big.window);
    CHECK(s.members >= prev);
    prev = s.members;
  }
}

TEST_CASE("level-set defect flags a dented section") {
  // |x|^2/2 plus a bump that punches a hole of area about 0.0095 into the
  // disc of area 0.126.
  auto bil = make_cost("bilinear", 2);
  const Vec c = v2(0.1, 0.0);
  const double a = 0.05, s2 = 0.05 * 0.05;
  auto fn = [=](const Vec& x) { return 0.5 * x.squaredNorm() + a * std::exp(-(x - c).squaredNorm() / s2); };
  auto grad = [=](const Vec& x) -> Vec {
    return x - (2 * a / s2) * std::exp(-(x - c).squaredNorm() / s2) * (x - c);
  };
  auto hess = [](const Vec&) -> Mat { return Mat::Identity(2, 2); };
  auto u = std::make_shared<SmoothPotential>(bil, fn, grad, hess, Vec::Zero(2));
  SectionOptions opt;
  opt.grid = 128;
  SectionData S = section(u, Vec::Zero(2), Vec::Zero(2), 0.02 - a * std::exp(-0.01 / s2), opt);
  CHECK(levelset_defect(S) > 0.05);
}

TEST_CASE("Alexandrov bounds on the quadratic model") {
  const double tau = 0.02;
  SectionData S = disc(tau);
  CostConstants k = compute_constants(S.u->cost(), 9);
  DensityRange dr = density_range(S, nullptr, 4);
  CHECK(dr.min == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(dr.max == doctest::Approx(1.0).epsilon(1e-6));
  JacobianBounds gb = gamma_tilde(S, 5);
  CHECK(gb.gamma_plus == doctest::Approx(1.0));
  CHECK(gb.gamma_minus == doctest::Approx(1.0));

  // |Q|^2 = (2 pi tau)^2 = 4 pi^2 |inf u~|^2.
  EstimateReport lo = alexandrov_lower(S, k, 1.0, 1.0, 1.0, 4 * kPi * kPi);
  CHECK(lo.ratio == doctest::Approx(1.0).epsilon(0.02));
  EstimateReport in = alexandrov_inf(S, 1.0, 1.0, 1.0 / (4 * kPi * kPi));
  CHECK(in.ratio == doctest::Approx(1.0).epsilon(0.02));
  CHECK_THROWS_AS(alexandrov_lower(S, k, 1.0, 1.5, 1.0, 1.0), Error);

  // On the t-dilated circle u~ = t^2 tau - tau.
  for (double t : {0.3, 0.6, 0.9}) {
    Vec q = dilated_boundary_point(S, v2(0.6, 0.8), t);
    CHECK(q.norm() == doctest::Approx(t * std::sqrt(2 * tau)).epsilon(0.01));
    EstimateReport up = alexandrov_upper(S, q, t, 1.0, 1.0, 1.0);
    CHECK(up.lhs == doctest::Approx(std::pow(tau * (1 - t * t), 2)).epsilon(0.02));
  }
  CHECK_THROWS_AS(alexandrov_upper(S, dilated_boundary_point(S, v2(1, 0), 0.2), 0.2, 1, 1, 1), Error);
}

TEST_CASE("calibration reproduces the closed-form constants") {
  FittedConstants fit = calibrate_constants();
  FittedConstants closed = model_constants();
  for (int n = 2; n <= 3; ++n) {
    CAPTURE(n);
    CHECK(fit.lower[n] == doctest::Approx(closed.lower[n]).epsilon(0.02));
    CHECK(fit.upper_inf[n] == doctest::Approx(closed.upper_inf[n]).epsilon(0.02));
    CHECK(fit.profile[n] == doctest::Approx(closed.profile[n]).epsilon(0.02));
  }
  CHECK(fit.cone[2] == doctest::Approx(closed.cone[2]).epsilon(0.02));
  CHECK(closed.lower[2] == doctest::Approx(4 * kPi * kPi).epsilon(1e-15));

  FittedConstants back = FittedConstants::parse(fit.dump());
  for (int n = 1; n <= 3; ++n) CHECK(back.lower[n] == fit.lower[n]);
  CHECK(back.safety == fit.safety);
  CHECK_THROWS_AS(FittedConstants::parse("{\"safety\": 2}"), Error);
}

TEST_CASE("disc cone with a centred vertex") {
  const double tau = 0.02, r = std::sqrt(2 * tau);
  SectionData S = disc(tau);
  CConeData cone = c_cone(S, Vec::Zero(2));
  const double a = tau;
  CHECK(cone.height == doctest::Approx(-a).epsilon(1e-9));
  // |dh|({0}) is the disc of slopes of radius a / r.
  CHECK(cone.mass == doctest::Approx(kPi * a * a / (r * r)).epsilon(0.02));
  for (double rad : {0.25, 0.5, 0.75}) {
    Vec q = rad * r * v2(0.8, -0.6);
    CHECK(cone_value(S, cone, q, true) == doctest::Approx(a * (rad - 1)).epsilon(0.02));
  }
  CHECK(cone.min_minus_height >= -1e-9 * a);
  CHECK(cone.boundary_max <= 0.02 * a);
  CHECK(cone_inclusion_slack(S, cone) <= 1e-9);
}

TEST_CASE("disc cone with an offset vertex") {
  // Slopes form a times the polar of the disc seen from the vertex: an
  // ellipse of area pi a^2 / (r^2 (1 - s^2)^{3/2}).
  const double tau = 0.02, r = std::sqrt(2 * tau);
  SectionData S = disc(tau);
  for (double s : {0.3, 0.5}) {
    CConeData cone = c_cone(S, v2(s * r, 0.0), 512, false);
    const double a = tau * (1 - s * s);
    CHECK(-cone.height == doctest::Approx(a).epsilon(1e-6));
    CHECK(cone.mass == doctest::Approx(kPi * a * a / (r * r * std::pow(1 - s * s, 1.5))).epsilon(0.02));
  }
  CHECK_THROWS_AS(c_cone(S, v2(2 * r, 0.0)), Error);
}

TEST_CASE("dual-norm constant and bound") {
  CHECK(dual_norm_constant(2, 0.5) == 64.0);
  CHECK(dual_norm_constant(3, 0.0) == 24.0);
  SectionData S = disc(0.02);
  // The gradient at q is q and ||v||*_K = r |v| on the disc, so the max
  // over rho K is rho r^2 = 2 rho tau.
  EstimateReport d = dual_norm_gradient_bound(S, 0.5, kInf);
  CHECK(d.verdict == Outcome::Pass);
  CHECK(d.lhs == doctest::Approx(0.02).epsilon(0.02));
  CHECK(d.rhs == doctest::Approx(64 * 0.02).epsilon(1e-9));
  CHECK_THROWS_AS(dual_norm_gradient_bound(S, 0.5, 0.01), Error);
}

TEST_CASE("gradient-direction Lipschitz") {
  LipschitzSweep bil = lipschitz_sweep("bilinear", 2, 200, 1);
  CHECK(bil.failures1 == 0);
  CHECK(bil.failures2 == 0);
  CHECK(bil.worst1 == 0.0);
  LipschitzSweep nl = lipschitz_sweep("neglog", 2, 300, 2);
  CHECK(std::isfinite(nl.eps_c));
  CHECK(nl.failures1 == 0);
  CHECK(nl.failures2 == 0);

  auto c = make_cost("neglog", 2);
  ExpChart ch(c, c->target().center());
  Vec q = ch.to_q(c->source().center());
  LipschitzCheck same = gradient_direction_lipschitz(ch, q, q, c->target().center(), 1.0);
  CHECK(same.direction_skipped);
}

TEST_CASE("report verdicts and eps prime") {
  CHECK(make_report("x", 1.0, 1.0, 1.0, "closed form").verdict == Outcome::Pass);
  CHECK(make_report("x", 1.1, 1.0, 1.0, "closed form").verdict == Outcome::Fail);
  CHECK(std::string(to_string(Outcome::Skipped)) == "skipped");
  CHECK(eps_prime(32.0, 2) == 1.0);
}

TEST_CASE("local-model sweep passes with the calibrated constants") {
  FittedConstants K = model_constants();
  SweepOptions opt;
  opt.sections = 4;
  for (const auto& key : a3w_keys()) {
    for (const SectionRecord& r : section_sweep(key, 2, 3, K, opt)) {
      CAPTURE(r.json_line());
      CHECK(r.defect < 0.01);
      CHECK(r.lower.verdict == Outcome::Pass);
      CHECK(r.inf.verdict == Outcome::Pass);
      CHECK(r.upper.verdict == Outcome::Pass);
      CHECK(r.cone.verdict == Outcome::Pass);
      for (const auto& d : r.dual) CHECK(d.verdict == Outcome::Pass);
    }
  }
}
