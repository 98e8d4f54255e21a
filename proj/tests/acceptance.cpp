// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include "mtwlab/charts.hpp"
#include "mtwlab/convex_geometry.hpp"
#include "mtwlab/suites.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

using namespace mtwlab;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

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

struct Criterion {
  bool pass = true;
  std::ostringstream why;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      why << " [" << what << "]";
    }
  }
};

int failures = 0;

void report(int id, const std::string& title, const std::function<void(Criterion&)>& body) {
  Criterion v;
  auto t0 = Clock::now();
  try {
    body(v);
  } catch (const std::exception& e) {
    v.require(false, std::string("exception: ") + e.what());
  }
  if (!v.pass) ++failures;
  std::printf("%s [%d] %s (%.1f s)%s\n", v.pass ? "PASS" : "FAIL", id, title.c_str(), seconds_since(t0),
              v.why.str().c_str());
  std::fflush(stdout);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

DiscreteMeasure random_uniform_measure(Rng& rng, const DomainBox& box, int count) {
  Mat s(box.dim(), count);
  for (int i = 0; i < count; ++i) s.col(i) = random_in(rng, box);
  return DiscreteMeasure::uniform(s);
}

Mat random_cloud(Rng& rng, int n, int m) {
  Mat p(n, m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < n; ++i) p(i, j) = uniform(rng, -1.0, 1.0) * (1.0 + i);
  return p;
}

// Sweeps shared by the level-set, closed-form constant and Alexandrov criteria.
std::vector<std::vector<SectionRecord>> sweeps;  // [seed][cost] flattened
std::vector<std::string> sweep_cost;
std::vector<std::uint64_t> sweep_seed;

}  // namespace

int main() {
  const auto start = Clock::now();
  std::printf("threads: %d\n", thread_count());

  report(1, "curvature classification", [](Criterion& v) {
    auto t0 = Clock::now();
    for (std::string key : {"sqdist", "bilinear"}) {
      CurvatureReport r = classify_cost(*make_cost(key, 2), 100, 1e-6, 1);
      v.require(r.attempted >= 100, key + " sampled " + std::to_string(r.attempted));
      v.require(r.max_abs < 1e-8, key + " max |tensor| " + fmt(r.max_abs));
    }
    CurvatureReport nl = classify_cost(*make_cost("neglog", 2, BoxPreset::Separated), 100, 1e-6, 1);
    v.require(nl.null_count > 0 && nl.min_null_constrained > 0.0,
              "neglog min null-constrained " + fmt(nl.min_null_constrained));
    CurvatureReport q4 = classify_cost(*make_cost("quartic", 2, BoxPreset::Separated), 100, 1e-6, 1);
    v.require(std::min(q4.min_null_constrained, q4.min_unconstrained) < 0.0, "quartic has no negative sample");
    v.require(seconds_since(t0) < 30.0, "runtime " + fmt(seconds_since(t0)));
  });

  report(2, "DASM", [](Criterion& v) {
    auto t0 = Clock::now();
    Rng rng(7);
    // Uniform quadruples, redrawn when the c-segment leaves the target box.
    auto sweep = [&](const CostModel& c, int count, int samples, double& viol, double& conc) {
      viol = 0.0;
      conc = 0.0;
      for (int valid = 0, tries = 0; valid < count; ++tries) {
        if (tries > 50 * count) throw Error(ErrorCode::SegmentEscapesDomain, c.key() + ": too many escapes");
        Vec x = random_in(rng, c.source()), xb = random_in(rng, c.source());
        Vec y0 = random_in(rng, c.target()), y1 = random_in(rng, c.target());
        try {
          DasmResult r = dasm_check(c, x, xb, y0, y1, samples);
          const double s = std::max(r.scale, 1e-300);
          viol = std::max(viol, r.violation / s);
          conc = std::max(conc, r.concavity / s);
          ++valid;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::SegmentEscapesDomain) throw;
        }
      }
    };
    for (const auto& key : a3w_keys()) {
      auto c = make_cost(key, 2);
      double viol, conc;
      sweep(*c, 10000, 17, viol, conc);
      v.require(viol <= 1e-6, key + " violation " + fmt(viol));
      if (classify_cost(*c, 100, 1e-6, 1).verdict == Verdict::B4Pass)
        v.require(conc <= 1e-6, key + " second difference " + fmt(-conc));
    }
    double viol, conc;
    sweep(*make_cost("quartic", 2), 10000, 33, viol, conc);
    v.require(viol > 1e-3, "quartic violation " + fmt(viol));
    v.require(seconds_since(t0) < 60.0, "runtime " + fmt(seconds_since(t0)));
  });

  report(3, "duality", [](Criterion& v) {
    Rng rng(2024);
    int worse = 0;
    double worst_gap = 0.0, worst_diff = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      const std::string key = zoo_keys()[size_t(trial) % zoo_keys().size()];
      auto c = make_cost(key, 2);
      ProblemSpec s;
      s.cost = c;
      s.U_lambda = c->source();
      s.mu_plus = random_uniform_measure(rng, c->source(), 5);
      s.mu_minus = random_uniform_measure(rng, c->target(), 5);
      KantorovichSolution sol = solve_kantorovich(s);
      // Brute-force LP oracle: with uniform 5x5 marginals the optimum is a
      // vertex of the Birkhoff polytope, so enumerate the 120 permutations.
      std::vector<int> perm(5);
      std::iota(perm.begin(), perm.end(), 0);
      double best = kInf;
      do {
        double t = 0.0;
        for (int i = 0; i < 5; ++i) t += c->value(s.mu_plus.point(i), s.mu_minus.point(perm[size_t(i)])) / 5;
        best = std::min(best, t);
      } while (std::next_permutation(perm.begin(), perm.end()));
      const double diff = std::abs(sol.total_cost - best);
      worst_diff = std::max(worst_diff, diff / std::max(1.0, std::abs(best)));
      if (diff > 1e-12 * std::max(1.0, std::abs(best))) ++worse;
      worst_gap = std::max(worst_gap, std::abs(sol.gap) / sol.scale);
    }
    v.require(worse == 0, std::to_string(worse) + " instances off the oracle, worst " + fmt(worst_diff));
    v.require(worst_gap <= 1e-9, "gap " + fmt(worst_gap));
    // Larger solved instances: the pipeline instance and a random weighted one.
    PipelineConfig pc;
    pc.source_grid = 16;
    pc.target_grid = 32;
    KantorovichSolution big = solve_kantorovich(pipeline_spec(pc));
    v.require(std::abs(big.gap) <= 1e-9 * big.scale, "pipeline gap " + fmt(big.gap / big.scale));
    v.require(big.marginal_error() < 1e-9, "pipeline marginals");
  });

  // Sweeps for criteria 4 to 6: 50 sections per A3w cost and seed at 128^2.
  const FittedConstants K = FittedConstants::load(MTWLAB_CONSTANTS);
  {
    auto t0 = Clock::now();
    for (std::uint64_t seed = 1; seed <= 5; ++seed)
      for (const auto& key : a3w_keys()) {
        sweeps.push_back(section_sweep(key, 2, seed, K, SweepOptions{}));
        sweep_cost.push_back(key);
        sweep_seed.push_back(seed);
      }
    std::printf("section sweeps: %zu x 50 sections (%.1f s)\n", sweeps.size(), seconds_since(t0));
  }

  report(4, "level-set convexity", [](Criterion& v) {
    // Seed 1 sweeps: 50 sections per cost.
    for (size_t s = 0; s < sweeps.size(); ++s) {
      if (sweep_seed[s] != 1) continue;
      double worst = 0.0;
      for (const auto& r : sweeps[s]) worst = std::max(worst, r.defect);
      v.require(sweeps[s].size() == 50, sweep_cost[s] + " sections");
      v.require(worst < 0.01, sweep_cost[s] + " defect " + fmt(worst));
    }
  });

  report(5, "closed-form constant inequalities", [](Criterion& v) {
    // Dual-norm bound: 50 sections x 3 rho per cost (seed 1).
    for (size_t s = 0; s < sweeps.size(); ++s) {
      if (sweep_seed[s] != 1) continue;
      int checked = 0, failed = 0;
      for (const auto& r : sweeps[s])
        for (const auto& d : r.dual) {
          ++checked;
          if (d.verdict != Outcome::Pass) ++failed;
        }
      v.require(checked == 150, sweep_cost[s] + " dual-norm checks " + std::to_string(checked));
      v.require(failed == 0, sweep_cost[s] + " dual-norm failures " + std::to_string(failed));
    }
    // Supporting distance on random well-centred bodies, n = 2 and 3.
    Rng rng(21);
    int misses = 0;
    for (int t = 0; t < 1000; ++t) {
      const int n = 2 + t % 2;
      ConvexBody Q = make_body<double>(random_cloud(rng, n, 6 + t % 11));
      Ellipsoid E = john_ellipsoid(Q);
      ConvexBody Qt = translate(Q, Vec(-E.center));
      const double s = uniform(rng, 0.0, 0.5);
      Vec u = random_unit(rng, n);
      Vec y = (1 - s) * radial(Qt, u) * u;
      SupportingWitness w = supporting_distance(Qt, y, s, 0.5, std::uint64_t(t));
      if (!(w.lhs <= w.rhs + 1e-12 * diameter(Qt))) ++misses;
    }
    v.require(misses == 0, "supporting distance failures " + std::to_string(misses));
    // Gradient-direction Lipschitz with the closed-form eps_c.
    for (const auto& key : a3w_keys()) {
      LipschitzSweep l = lipschitz_sweep(key, 2, 1000, 3);
      v.require(l.triples == 1000 && l.failures1 == 0 && l.failures2 == 0,
                key + " Lipschitz failures " + std::to_string(l.failures1 + l.failures2));
    }
  });

  report(6, "calibrated Alexandrov suite", [&K](Criterion& v) {
    v.require(K.safety == 2.0, "safety " + fmt(K.safety));
    FittedConstants closed = model_constants();
    v.require(std::abs(K.lower[2] / closed.lower[2] - 1) < 0.02, "lower constant off the 4 pi^2 baseline");
    for (size_t s = 0; s < sweeps.size(); ++s) {
      int failed = 0;
      for (const auto& r : sweeps[s])
        for (const EstimateReport* e : {&r.lower, &r.inf, &r.upper, &r.cone})
          if (e->verdict != Outcome::Pass) ++failed;
      v.require(failed == 0, sweep_cost[s] + " seed " + std::to_string(sweep_seed[s]) + ": " +
                                 std::to_string(failed) + " failures");
    }
  });

  QuadraticPipeline quad;
  report(7, "regularity pipeline", [&quad](Criterion& v) {
    quad = quadratic_pipeline(1);
    v.require(std::abs(quad.engulfing.K_emp - 1.0) <= 1e-3, "quadratic K_emp " + fmt(quad.engulfing.K_emp));
    v.require(std::abs(quad.holder.alpha_emp - 1.0) <= 0.02, "quadratic alpha " + fmt(quad.holder.alpha_emp));
    PipelineResult r = run_pipeline(PipelineConfig{});
    std::string by_tau;
    for (double k : r.engulfing.K_by_tau) by_tau += " " + fmt(k);
    v.require(std::isfinite(r.engulfing.K_emp), "K_emp not finite");
    v.require(r.engulfing.spread < 0.2,
              "neglog spread " + fmt(r.engulfing.spread) + " over the decade, K by height" + by_tau);
    v.require(r.injectivity.interior > 0 && r.injectivity.violations.empty(),
              "injectivity violations " + std::to_string(r.injectivity.violations.size()));
    v.require(r.mixing.interior_sources > 0 && r.mixing.violations.empty(),
              "mixing violations " + std::to_string(r.mixing.violations.size()));
    v.require(r.holder.exponent == 1.0 + 1.0 / r.engulfing.K_emp, "modulus exponent");
    v.require(r.holder.pass_rate >= 0.99, "modulus pass rate " + fmt(r.holder.pass_rate));
    v.require(std::abs(r.solution.gap) <= 1e-9 * r.solution.scale, "gap");
  });

  report(8, "invariance", [&quad](Criterion& v) {
    auto nl = make_cost("neglog", 2);
    Rng rng(12);
    std::vector<Vec> xs;
    for (int k = 0; k < 150; ++k) xs.push_back(random_in(rng, nl->source()));
    auto u = discretize(*make_mountain_potential(nl, Vec::Zero(2), v2(2.0, 0.0), 0.3 * Mat::Identity(2, 2)), xs);
    auto ch = std::make_shared<ExpChart>(nl, v2(2.0, 0.0));
    auto tp = TransformedPotential::over_domain(ch, u, 9);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      Mat A(2, 2);
      do {
        for (int i = 0; i < 4; ++i) A(i / 2, i % 2) = uniform(rng, -1.5, 1.5);
      } while (std::abs(A.determinant()) < 0.3);
      AffineMap L{A, v2(uniform(rng, -0.02, 0.02), uniform(rng, -0.02, 0.02))};
      auto ts = tp.renormalize(L);
      // A cell of q-points about the centre of U and its preimage under L.
      Vec xc = nl->source().center();
      std::vector<Vec> cell, pre;
      for (int k = 0; k < 25; ++k) {
        Vec q = ch->to_q(xc + v2(0.18 * (k % 5 - 2), 0.18 * (k / 5 - 2)));
        cell.push_back(q);
        pre.push_back(L.inverse(q));
      }
      CellMass a = tp.cell_mass(cell, 1e-12), b = ts.cell_mass(pre, 1e-12);
      v.require(!a.degenerate && a.targets == b.targets, "cell " + std::to_string(t) + " targets differ");
      worst = std::max(worst, std::abs(b.mass / a.mass * std::abs(A.determinant()) - 1.0));
    }
    v.require(worst < 1e-6, "cell mass factor off by " + fmt(worst));
    const double rel = std::abs(quad.renormalized.K_emp - quad.engulfing.K_emp) / quad.engulfing.K_emp;
    v.require(quad.engulfing.pairs > 0 && rel <= 0.05, "renormalized K_emp differs by " + fmt(rel));
  });

  report(9, "full suite wall clock", [&start](Criterion& v) {
    const double t = seconds_since(start);
    v.require(t < 600.0, "took " + fmt(t) + " s");
  });

  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
