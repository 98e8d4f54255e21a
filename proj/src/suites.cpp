#include "mtwlab/suites.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace mtwlab {

namespace {

Vec random_in(Rng& rng, const DomainBox& box) {
  Vec x(box.dim());
  for (int i = 0; i < box.dim(); ++i) x[i] = uniform(rng, box.lower[i], box.upper[i]);
  return x;
}

EstimateReport failed(std::string name, const std::exception& e) {
  EstimateReport r;
  r.name = std::move(name);
  r.verdict = Outcome::Fail;
  r.detail = e.what();
  return r;
}

nlohmann::json report_json(const EstimateReport& r) { return nlohmann::json::parse(r.json_line()); }

}  // namespace

std::vector<std::string> a3w_keys() { return {"bilinear", "sqdist", "neglog", "sqrt1p"}; }

namespace {

// G stays in V on a box about x_bar the size of the section window.
bool map_stays_in_target(const LocalModel& m, double reach) {
  const int n = m.cost->dim();
  for (int i = 0; i < n; ++i)
    for (double sgn : {-1.0, 1.0}) {
      Vec x = m.x_bar;
      x[i] += sgn * reach;
      try {
        if (!m.cost->target().contains(m.u->subgradient(x))) return false;
      } catch (const Error&) {
        return false;
      }
    }
  return true;
}

}  // namespace

LocalModel make_local_model(const std::string& key, int n, Rng& rng, double half_width) {
  CostPtr def = make_cost(key, n);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Vec x0 = def->source().center(), y0 = def->target().center();
    for (int i = 0; i < n; ++i) {
      x0[i] += uniform(rng, -0.3, 0.3);
      y0[i] += uniform(rng, -0.3, 0.3);
    }
    LocalModel m;
    m.cost = make_cost(key, DomainBox(x0.array() - half_width, x0.array() + half_width),
                       DomainBox(y0.array() - half_width, y0.array() + half_width));
    m.constants = compute_constants(*m.cost, 9);
    Mat B(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) B(i, j) = gaussian(rng);
    // DG is about D2xy c^-1 A, so A carries the smallest singular value of
    // the cross derivative to keep the map Lipschitz constant O(1).
    const double sigma = Eigen::JacobiSVD<Mat>(m.cost->cross_derivative(x0, y0)).singularValues().minCoeff();
    Mat A = sigma * (0.2 * B * B.transpose() + 0.3 * Mat::Identity(n, n));
    m.u = make_mountain_potential(m.cost, x0, y0, A);
    m.x_bar = x0;
    for (int i = 0; i < n; ++i) m.x_bar[i] += uniform(rng, -0.1, 0.1) * half_width;
    if (!map_stays_in_target(m, 0.3 * half_width)) continue;
    m.y_bar = m.u->subgradient(m.x_bar);
    // Height from the q-chart Hessian of u~ at x_bar, so that diam Q is about
    // d; bilinear and sqdist have eps_c = inf and fall back to the box.
    ExpChart chart(m.cost, m.y_bar);
    Mat Jinv = chart.jacobian(m.x_bar).inverse();
    Mat Hq = Jinv.transpose() * (m.u->hessian(m.x_bar) + m.cost->hess_xx(m.x_bar, m.y_bar)) * Jinv;
    double lmin = Eigen::SelfAdjointEigenSolver<Mat>(Hq).eigenvalues()[0];
    double d = std::min(0.5 * eps_prime(m.constants.eps_c, n), 0.3 * half_width);
    m.tau = lmin * (0.5 * d) * (0.5 * d) / 2.0;
    return m;
  }
  throw Error(ErrorCode::ConfigError, key + ": no local model keeps the map inside V");
}

std::string SectionRecord::json_line() const {
  nlohmann::json j;
  j["cost"] = cost;
  j["seed"] = seed;
  j["index"] = index;
  j["members"] = members;
  j["tau"] = tau;
  j["defect"] = defect;
  j["lower"] = report_json(lower);
  j["inf"] = report_json(inf);
  j["upper"] = report_json(upper);
  j["cone"] = report_json(cone);
  auto& d = j["dual"] = nlohmann::json::array();
  for (const auto& r : dual) d.push_back(report_json(r));
  return j.dump();
}

SectionRecord check_section(const SectionData& S, const CostConstants& k, const FittedConstants& K,
                            const SweepOptions& opt, std::uint64_t stream) {
  const int n = S.u->cost().dim();
  const double s = K.safety;
  SectionRecord r;
  r.members = S.members;
  r.defect = levelset_defect(S);
  if (!opt.estimates) return r;
  DensityRange dr = density_range(S, nullptr, opt.density_stride);
  JacobianBounds gb = gamma_tilde(S, opt.target_grid);
  try {
    r.lower = alexandrov_lower(S, k, dr.min, opt.delta, gb.gamma_minus, s * K.lower[n]);
  } catch (const std::exception& e) {
    r.lower = failed("alexandrov_lower", e);
  }
  r.inf = alexandrov_inf(S, 1.0 / dr.max, gb.gamma_plus, s * K.upper_inf[n]);
  // Worst case of the dilated-boundary bound over a fan of directions.
  r.upper.name = "alexandrov_upper";
  r.upper.verdict = Outcome::Pass;
  r.upper.ratio = -1.0;
  Rng dir_rng(stream * 1000003u);
  bool failed_once = false;
  for (int d = 0; d < opt.upper_directions && !failed_once; ++d) {
    Vec dir = random_unit(dir_rng, n);
    for (double t : opt.t_values) {
      try {
        EstimateReport e = alexandrov_upper(S, dilated_boundary_point(S, dir, t), t, 1.0 / dr.max,
                                            gb.gamma_plus, s * K.profile[n]);
        if (e.verdict == Outcome::Fail) failed_once = true;
        if (failed_once || e.ratio > r.upper.ratio) r.upper = e;
      } catch (const std::exception& e) {
        r.upper = failed("alexandrov_upper", e);
        failed_once = true;
      }
      if (failed_once) break;
    }
  }
  if (opt.cone && n == 2) {
    try {
      Rng cone_rng(stream * 7919u);
      const Mat& V = S.hull.vertices();
      Vec towards = V.col(int(cone_rng() % std::uint64_t(V.cols()))) - S.john.center;
      Vec qt = S.john.center + uniform(cone_rng, 0.0, 0.5) * towards;
      CConeData cone = c_cone(S, qt, 512, false);
      r.cone = cone_mass_bound(cone, s * K.cone[n]);
    } catch (const std::exception& e) {
      r.cone = failed("cone_mass", e);
    }
  } else {
    r.cone.name = "cone_mass";
    r.cone.verdict = Outcome::Skipped;
    r.cone.detail = "cone construction is two-dimensional";
  }
  for (double rho : opt.rhos) {
    try {
      r.dual.push_back(dual_norm_gradient_bound(S, rho, k.eps_c));
    } catch (const std::exception& e) {
      r.dual.push_back(failed("dual_norm", e));
    }
  }
  return r;
}

std::vector<SectionRecord> section_sweep(const std::string& key, int n, std::uint64_t seed,
                                         const FittedConstants& K, const SweepOptions& opt) {
  Rng rng(seed);
  std::vector<LocalModel> models;
  for (int i = 0; i < opt.sections; ++i) models.push_back(make_local_model(key, n, rng));
  std::vector<SectionRecord> out(models.size());
  parallel_for(int(models.size()), [&](int i) {
    const LocalModel& m = models[size_t(i)];
    SectionRecord& r = out[size_t(i)];
    SectionOptions so;
    so.grid = opt.grid;
    try {
      SectionData S = section(m.u, m.x_bar, m.y_bar, m.tau, so);
      r = check_section(S, m.constants, K, opt, seed + std::uint64_t(i));
    } catch (const std::exception& e) {
      r.lower = failed("alexandrov_lower", e);
      r.inf = failed("alexandrov_inf", e);
      r.upper = failed("alexandrov_upper", e);
      r.cone = failed("cone_mass", e);
      r.defect = 1.0;
    }
    r.cost = key;
    r.seed = seed;
    r.index = i;
    r.tau = m.tau;
  });
  return out;
}

std::vector<DecayRow> boundary_decay(const SectionData& S, const FittedConstants& K,
                                     const SweepOptions& opt, std::uint64_t stream) {
  const int n = S.u->cost().dim();
  DensityRange dr = density_range(S, nullptr, opt.density_stride);
  JacobianBounds gb = gamma_tilde(S, opt.target_grid);
  Rng dir_rng(stream * 1000003u);
  std::vector<DecayRow> rows;
  for (int d = 0; d < opt.upper_directions; ++d) {
    Vec dir = random_unit(dir_rng, n);
    for (double t : opt.t_values) {
      EstimateReport e = alexandrov_upper(S, dilated_boundary_point(S, dir, t), t, 1.0 / dr.max,
                                          gb.gamma_plus, K.safety * K.profile[n]);
      rows.push_back({d, t, e.lhs, e.rhs});
    }
  }
  return rows;
}

LipschitzSweep lipschitz_sweep(const std::string& key, int n, int triples, std::uint64_t seed) {
  CostPtr c = make_cost(key, n);
  LipschitzSweep r;
  r.cost = key;
  r.eps_c = compute_constants(*c, 9).eps_c;
  Rng rng(seed);
  // A handful of charts, many pairs per chart.
  const int per_chart = 100;
  for (int done = 0; done < triples;) {
    auto chart = std::make_shared<ExpChart>(c, random_in(rng, c->target()));
    for (int k = 0; k < per_chart && done < triples; ++k, ++done) {
      Vec q = chart->to_q(random_in(rng, c->source()));
      Vec qt = chart->to_q(random_in(rng, c->source()));
      Vec y = random_in(rng, c->target());
      LipschitzCheck l = gradient_direction_lipschitz(*chart, q, qt, y, r.eps_c);
      ++r.triples;
      double tol = 1e-9 * std::max(1.0, l.rhs1);
      if (l.lhs1 > l.rhs1 + tol) ++r.failures1;
      if (l.rhs1 > 0) r.worst1 = std::max(r.worst1, l.lhs1 / l.rhs1);
      if (l.direction_skipped) {
        ++r.skipped;
        continue;
      }
      if (l.lhs2 > l.rhs2 + 1e-9) ++r.failures2;
      if (l.rhs2 > 0) r.worst2 = std::max(r.worst2, l.lhs2 / l.rhs2);
    }
  }
  return r;
}

std::string PipelineResult::json() const {
  nlohmann::json j;
  j["cost"] = config.cost;
  j["source_grid"] = config.source_grid;
  j["target_grid"] = config.target_grid;
  j["density_ratio"] = config.density_ratio;
  j["tau0"] = config.tau0;
  j["gap"] = solution.gap;
  j["injectivity"] = {{"interior", injectivity.interior},
                      {"min_separation", injectivity.min_separation},
                      {"threshold", injectivity.threshold},
                      {"violations", injectivity.violations.size()}};
  j["mixing"] = {{"interior_sources", mixing.interior_sources}, {"violations", mixing.violations.size()}};
  j["engulfing"] = nlohmann::json::parse(engulfing.json());
  j["holder"] = nlohmann::json::parse(holder.json());
  j["gain"] = {{"pairs", gain_pairs}, {"failures", gain_failures}};
  return j.dump();
}

ProblemSpec pipeline_spec(const PipelineConfig& cfg) {
  CostPtr c = make_cost(cfg.cost, cfg.n);
  const DomainBox& U = c->source();
  const DomainBox& V = c->target();
  const double split = U.center()[0], ratio = cfg.density_ratio;
  ProblemSpec spec;
  spec.cost = c;
  spec.mu_plus = cell_centered_measure(U, cfg.source_grid,
                                       [split, ratio](const Vec& x) { return x[0] < split ? ratio : 1.0; });
  spec.mu_minus = ball_measure(V.center(), V.min_halfwidth(), cfg.target_grid);
  spec.lambda = std::min(1.0, ratio);
  spec.Lambda = std::max(1.0, ratio);
  spec.U_lambda = U;
  return spec;
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  PipelineResult r;
  r.config = cfg;
  ProblemSpec spec = pipeline_spec(cfg);
  const DomainBox& U = spec.cost->source();
  const Vec yc = spec.cost->target().center();
  const double radius = spec.cost->target().min_halfwidth();

  auto t0 = std::chrono::steady_clock::now();
  r.solution = solve_kantorovich(spec);
  r.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.map = recover_map(r.solution);

  const double hs = U.width().maxCoeff() / cfg.source_grid;
  const double ht = 2.0 * radius / cfg.target_grid;
  r.injectivity = injectivity_check(r.map, r.solution.sources, U, ht, 2.0 * hs);
  r.mixing = boundary_mixing_check(r.solution, Region::of_box(U), hs, Region::ball(yc, radius), ht,
                                   1e-9 * r.solution.scale);

  std::vector<double> taus;
  for (double f : cfg.tau_fractions) taus.push_back(f * cfg.tau0);
  EngulfingOptions eo;
  eo.U_lambda = U;
  r.engulfing = engulfing_constant(r.solution, cfg.pair_budget, taus, eo, cfg.seed);

  auto u = interpolated_potential(r.solution);
  for (const auto& s : r.engulfing.samples) {
    ++r.gain_pairs;
    if (monotonicity_gain(*u, s.x, s.x_bar, r.engulfing.K_emp).verdict != Outcome::Pass) ++r.gain_failures;
  }
  HolderOptions ho;
  ho.seed = cfg.seed;
  r.holder = holder_fit(r.map, r.solution, r.engulfing.K_emp, ho);
  return r;
}

std::string QuadraticPipeline::json() const {
  nlohmann::json j;
  j["engulfing"] = nlohmann::json::parse(engulfing.json());
  j["renormalized"] = nlohmann::json::parse(renormalized.json());
  j["holder"] = nlohmann::json::parse(holder.json());
  j["shrink"] = {{"rho0", shrink.rho0}, {"report", report_json(shrink.report)}};
  return j.dump();
}

QuadraticPipeline quadratic_pipeline(std::uint64_t seed) {
  QuadraticPipeline r;
  auto q = quadratic_model(2);
  Rng rng(seed);
  std::vector<Vec> bases;
  for (int i = 0; i < 10; ++i) {
    Vec x(2);
    x << uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3);
    bases.push_back(x);
  }
  const std::vector<double> taus{0.001, 0.002, 0.004};
  r.engulfing = engulfing_constant(q, bases, taus);

  Mat L(2, 2);
  L << 2.0, 0.5, 0.0, 0.5;
  Vec b(2);
  b << 0.1, -0.05;
  CostPtr ac = make_affine_cost(q->cost_ptr(), L, b, L.inverse().transpose(), Vec::Zero(2), 1.0);
  auto qa = affine_pullback(q, ac, L, b, 1.0, ac->target().center());
  std::vector<Vec> pre;
  for (const auto& x : bases) pre.push_back(L.inverse() * (x - b));
  r.renormalized = engulfing_constant(qa, pre, taus);

  // G = x and u = |x|^2 / 2 on a grid over the source box.
  const DomainBox& box = q->cost().source();
  const int g = 64;
  const auto nodes = box.grid(g);
  Mat G(2, int(nodes.size()));
  Vec u(int(nodes.size()));
  for (size_t i = 0; i < nodes.size(); ++i) {
    G.col(int(i)) = nodes[i];
    u[int(i)] = 0.5 * nodes[i].squaredNorm();
  }
  HolderOptions ho;
  ho.seed = seed;
  r.holder = holder_fit(G, u, q->cost(), box, g, r.engulfing.K_emp, ho);
  r.shrink = section_shrink(q, Vec::Zero(2), Vec::Zero(2), 0.01);
  return r;
}

}  // namespace mtwlab
