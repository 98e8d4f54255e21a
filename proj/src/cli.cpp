#include "mtwlab/cli.hpp"

#include "mtwlab/suites.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef MTWLAB_VERSION
#define MTWLAB_VERSION "0.0.0"
#endif
#ifndef MTWLAB_DEFAULT_CONSTANTS
#define MTWLAB_DEFAULT_CONSTANTS "data/constants.json"
#endif

namespace mtwlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Inputs a command needs but cannot find (exit 66).
struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool power_of_two(int g) { return g > 0 && (g & (g - 1)) == 0; }

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingInput("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::ConfigError, "cannot write " + p.string());
  out << text;
}

EstimateReport flag(std::string name, bool ok, std::string detail) {
  EstimateReport r;
  r.name = std::move(name);
  r.lhs = ok ? 0.0 : 1.0;
  r.verdict = ok ? Outcome::Pass : Outcome::Fail;
  r.detail = std::move(detail);
  return r;
}

EstimateReport bound(std::string name, double lhs, double rhs, std::string detail = {}) {
  EstimateReport r = make_report(std::move(name), lhs, rhs, 0.0, "none", 0.0);
  r.detail = std::move(detail);
  return r;
}

EstimateReport failed(std::string name, const std::exception& e) { return flag(std::move(name), false, e.what()); }

// Worst member by ratio, failing if any member fails.
EstimateReport aggregate(const std::string& name, const std::vector<EstimateReport>& members) {
  EstimateReport worst;
  worst.name = name;
  int fails = 0, passes = 0;
  const EstimateReport* pick = nullptr;
  for (const auto& m : members) {
    if (m.verdict == Outcome::Fail) {
      if (fails++ == 0) pick = &m;
    } else if (m.verdict == Outcome::Pass) {
      ++passes;
      if (fails == 0 && (!pick || m.ratio > pick->ratio)) pick = &m;
    }
  }
  if (pick) worst = *pick;
  worst.name = name;
  worst.verdict = fails ? Outcome::Fail : passes ? Outcome::Pass : Outcome::Skipped;
  std::string d = std::to_string(fails) + "/" + std::to_string(members.size()) + " failed";
  worst.detail = pick && !pick->detail.empty() ? d + "; " + pick->detail : d;
  return worst;
}

void prefix(std::vector<EstimateReport>& checks, const std::string& p) {
  for (auto& c : checks) c.name = p + "/" + c.name;
}

struct Loaded {
  FittedConstants K;
  std::string hash;
};

Loaded load_constants(const RunConfig& cfg) {
  const std::string path = cfg.constants_file.empty() ? MTWLAB_DEFAULT_CONSTANTS : cfg.constants_file;
  std::string text = read_file(path);
  return {FittedConstants::parse(text), fnv1a_hex(text)};
}

int default_grid(const RunConfig& cfg, int n2, int n3) {
  return cfg.grid > 0 ? cfg.grid : cfg.n == 2 ? n2 : n3;
}

std::vector<std::string> sweep_keys(const RunConfig& cfg) {
  if (cfg.cost.empty() || cfg.cost == "a3w") return a3w_keys();
  return {cfg.cost};
}

BoxPreset preset(const std::string& boxes) {
  if (boxes == "default") return BoxPreset::Default;
  if (boxes == "separated") return BoxPreset::Separated;
  throw Error(ErrorCode::ConfigError, "--boxes must be default or separated");
}

CostPtr resolve_cost(const RunConfig& cfg, BoxPreset boxes) {
  if (cfg.cost.empty()) throw Error(ErrorCode::ConfigError, "--cost is required");
  if (fs::path(cfg.cost).extension() == ".json") {
    CostPtr c = load_polynomial_cost(read_file(cfg.cost));
    if (c->dim() != cfg.n) throw Error(ErrorCode::ConfigError, "cost file dimension differs from --n");
    return c;
  }
  return make_cost(cfg.cost, cfg.n, boxes);
}

json constants_json(const CostConstants& k) {
  auto fin = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  return {{"beta_plus", k.beta_plus}, {"beta_minus", k.beta_minus}, {"gamma_plus", k.gamma_plus},
          {"gamma_minus", k.gamma_minus}, {"M_c", k.M_c}, {"eps_c", fin(k.eps_c)},
          {"sup_dx", k.sup_dx}, {"sup_dxx", k.sup_dxx}, {"sup_dxxy", k.sup_dxxy}};
}

json curvature_json(const CurvatureReport& c) {
  auto fin = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  return {{"verdict", to_string(c.verdict)}, {"min_null_constrained", fin(c.min_null_constrained)},
          {"min_unconstrained", fin(c.min_unconstrained)}, {"max_abs", c.max_abs},
          {"scale", c.scale}, {"tol", c.tol}, {"null_count", c.null_count},
          {"attempted", c.attempted}, {"skipped", c.skipped}};
}

// ---- check-cost

SuiteReport cmd_check_cost(const RunConfig& cfg, const fs::path& out) {
  SuiteReport rep;
  CostPtr c = resolve_cost(cfg, preset(cfg.boxes));
  CurvatureReport cr = classify_cost(*c, 100, cfg.tol, cfg.seed);
  CostConstants k = compute_constants(*c, 9);
  json j = {{"cost", c->key()}, {"n", cfg.n}, {"boxes", cfg.boxes},
            {"curvature", curvature_json(cr)}, {"constants", constants_json(k)}};
  write_file(out / "check_cost.json", j.dump(2) + "\n");
  rep.checks.push_back(flag("classification", passes_a3w(cr.verdict), to_string(cr.verdict)));
  return rep;
}

// ---- solve

struct Instance {
  ProblemSpec spec;
  Region U, V;
  double hs = 0.0, ht = 0.0;
  json run;  // enough to rebuild the instance
};

Instance make_instance(const RunConfig& cfg) {
  const int n = cfg.n;
  Instance in;
  const std::string& kind = cfg.instance;
  in.run = {{"instance", kind}, {"n", n}, {"seed", cfg.seed}, {"lambda", cfg.lambda}, {"Lambda", cfg.Lambda}};
  if (kind == "density-jump") {
    PipelineConfig pc;
    pc.cost = cfg.cost.empty() ? "neglog" : cfg.cost;
    pc.n = n;
    pc.source_grid = default_grid(cfg, 32, 8);
    pc.target_grid = 2 * pc.source_grid;
    pc.density_ratio = cfg.Lambda / cfg.lambda;
    pc.seed = cfg.seed;
    in.spec = pipeline_spec(pc);
    const DomainBox& U = in.spec.cost->source();
    const DomainBox& V = in.spec.cost->target();
    in.U = Region::of_box(U);
    in.V = Region::ball(V.center(), V.min_halfwidth());
    in.hs = U.width().maxCoeff() / pc.source_grid;
    in.ht = 2.0 * V.min_halfwidth() / pc.target_grid;
    in.run["cost"] = pc.cost;
    in.run["source_grid"] = pc.source_grid;
    in.run["target_grid"] = pc.target_grid;
    in.run["density_ratio"] = pc.density_ratio;
    return in;
  }
  const int g = default_grid(cfg, 16, 8);
  const DomainBox cube = DomainBox::cube(n, -1.0, 1.0);
  in.run["cost"] = "sqdist";
  in.run["source_grid"] = g;
  in.spec.cost = make_cost("sqdist", n);
  in.spec.U_lambda = cube;
  in.U = Region::of_box(cube);
  in.hs = 2.0 / g;
  if (kind == "identity") {
    in.spec.mu_plus = cell_centered_measure(cube, g);
    in.spec.mu_minus = cell_centered_measure(cube, g);
    in.V = Region::of_box(cube);
    in.ht = in.hs;
  } else if (kind == "quantile") {
    // Uniform on [-1/2, 1/2]^n to uniform on [-1, 1]^n: G(x) = 2x.
    const DomainBox half = DomainBox::cube(n, -0.5, 0.5);
    in.spec.mu_plus = cell_centered_measure(half, g);
    in.spec.mu_minus = cell_centered_measure(cube, g);
    in.spec.U_lambda = half;
    in.U = Region::of_box(half);
    in.hs = 1.0 / g;
    in.V = Region::of_box(cube);
    in.ht = 2.0 / g;
  } else if (kind == "boundary") {
    // Target mass only on the outer ring of a ball: interior sources have
    // nowhere to go but the boundary layer.
    const double radius = 0.9;
    const int gt = 2 * g;
    in.V = Region::ball(Vec::Zero(n), radius);
    in.ht = 2.0 * radius / gt;
    DiscreteMeasure ball = ball_measure(Vec::Zero(n), radius, gt);
    std::vector<int> keep;
    for (int j = 0; j < ball.size(); ++j)
      if (in.V.depth(ball.point(j)) < in.ht) keep.push_back(j);
    Mat ring(n, int(keep.size()));
    for (size_t j = 0; j < keep.size(); ++j) ring.col(int(j)) = ball.point(keep[j]);
    in.spec.mu_plus = cell_centered_measure(cube, g);
    in.spec.mu_minus = DiscreteMeasure::uniform(ring);
  } else if (fs::path(kind).extension() == ".json") {
    in.spec = read_instance(read_file(kind));
    const DomainBox& U = in.spec.cost->source();
    const DomainBox& V = in.spec.cost->target();
    in.U = Region::of_box(U);
    in.V = Region::of_box(V);
    const double side = std::round(std::pow(double(in.spec.mu_plus.size()), 1.0 / n));
    in.hs = U.width().maxCoeff() / side;
    in.ht = V.width().maxCoeff() / std::round(std::pow(double(in.spec.mu_minus.size()), 1.0 / n));
    in.run["cost"] = in.spec.cost->key();
    in.run.erase("source_grid");
  } else {
    throw Error(ErrorCode::ConfigError,
                "--instance must be identity, quantile, density-jump, boundary or a .json file");
  }
  return in;
}

std::string map_csv(const KantorovichSolution& sol, const TransportMap& map) {
  const int n = int(sol.sources.rows());
  std::string s;
  for (int k = 0; k < n; ++k) s += "x" + std::to_string(k) + ",";
  for (int k = 0; k < n; ++k) s += "G" + std::to_string(k) + ",";
  s += "residual,newton_failed\n";
  for (int i = 0; i < sol.sources.cols(); ++i) {
    for (int k = 0; k < n; ++k) s += num(sol.sources(k, i)) + ",";
    for (int k = 0; k < n; ++k) s += num(map.G(k, i)) + ",";
    s += num(map.residual[i]) + "," + std::to_string(int(map.newton_failed[size_t(i)])) + "\n";
  }
  return s;
}

json box_json(const DomainBox& b) {
  return {{"lower", std::vector<double>(b.lower.data(), b.lower.data() + b.dim())},
          {"upper", std::vector<double>(b.upper.data(), b.upper.data() + b.dim())}};
}

SuiteReport cmd_solve(const RunConfig& cfg, const fs::path& out) {
  SuiteReport rep;
  Instance in = make_instance(cfg);
  KantorovichSolution sol = solve_kantorovich(in.spec);
  write_file(out / "instance.json", write_instance(in.spec));
  write_file(out / "plan.csv", plan_csv(sol));
  write_file(out / "potentials.json", potentials_json(sol));
  json sj = {{"total_cost", sol.total_cost}, {"dual_value", sol.dual_value}, {"gap", sol.gap},
             {"scale", sol.scale}, {"pivots", sol.pivots}, {"marginal_error", sol.marginal_error()},
             {"sources", sol.sources.cols()}, {"targets", sol.targets.cols()}};
  write_file(out / "solution.json", sj.dump(2) + "\n");
  rep.checks.push_back(bound("duality_gap", std::abs(sol.gap), 1e-9 * sol.scale));
  rep.checks.push_back(bound("marginals", sol.marginal_error(), 1e-9));

  try {
    TransportMap map = recover_map(sol);
    write_file(out / "map.csv", map_csv(sol, map));
  } catch (const Error& e) {
    rep.checks.push_back(failed("map", e));
  }

  const DomainBox Ubox = in.spec.U_lambda.dim() ? in.spec.U_lambda : in.spec.cost->source();
  json cells = json::array();
  try {
    for (const CellDensity& d : cma_measure(sol, Ubox, 4, 1e-9 * sol.scale))
      cells.push_back({{"cell", box_json(d.cell)}, {"sources", d.sources}, {"targets", d.targets},
                       {"image_volume", d.image_volume}, {"density", d.density},
                       {"degenerate", d.degenerate}});
  } catch (const Error& e) {
    rep.checks.push_back(failed("density", e));
  }
  write_file(out / "density.json", cells.dump(2) + "\n");

  MixingReport mix = boundary_mixing_check(sol, in.U, in.hs, in.V, in.ht, 1e-9 * sol.scale);
  json viol = json::array();
  for (auto [i, j] : mix.violations) viol.push_back({i, j});
  json mj = {{"interior_sources", mix.interior_sources}, {"violations", viol}};
  write_file(out / "mixing.json", mj.dump(2) + "\n");
  rep.checks.push_back(bound("mixing", double(mix.violations.size()), 0.0,
                             std::to_string(mix.interior_sources) + " interior sources"));
  write_file(out / "run.json", in.run.dump(2) + "\n");
  return rep;
}

// ---- sections and estimates

SuiteReport cmd_sections(const RunConfig& cfg, const fs::path& out) {
  SuiteReport rep;
  SweepOptions opt;
  opt.sections = cfg.sections;
  opt.grid = default_grid(cfg, 128, 16);
  opt.estimates = false;
  std::string lines;
  for (const auto& key : sweep_keys(cfg)) {
    double worst = 0.0;
    for (const SectionRecord& r : section_sweep(key, cfg.n, cfg.seed, model_constants(), opt)) {
      json j = {{"cost", r.cost}, {"seed", r.seed}, {"index", r.index}, {"members", r.members},
                {"tau", r.tau}, {"defect", r.defect}};
      lines += j.dump() + "\n";
      worst = std::max(worst, r.defect);
    }
    rep.checks.push_back(bound(key + "/levelset_defect", worst, 0.01,
                               std::to_string(opt.sections) + " sections"));
  }
  write_file(out / "sections.jsonl", lines);
  return rep;
}

std::vector<EstimateReport> record_checks(const std::vector<SectionRecord>& recs) {
  std::vector<EstimateReport> lower, inf, upper, cone, dual;
  double defect = 0.0;
  for (const auto& r : recs) {
    defect = std::max(defect, r.defect);
    lower.push_back(r.lower);
    inf.push_back(r.inf);
    upper.push_back(r.upper);
    cone.push_back(r.cone);
    dual.insert(dual.end(), r.dual.begin(), r.dual.end());
  }
  return {bound("levelset_defect", defect, 0.01, std::to_string(recs.size()) + " sections"),
          aggregate("alexandrov_lower", lower), aggregate("alexandrov_inf", inf),
          aggregate("alexandrov_upper", upper), aggregate("cone_mass", cone),
          aggregate("dual_norm", dual)};
}

EstimateReport lipschitz_check(const LipschitzSweep& l) {
  EstimateReport r = bound("gradient_lipschitz", double(l.failures1 + l.failures2), 0.0,
                           std::to_string(l.triples) + " triples, worst ratios " + num(l.worst1) +
                               " / " + num(l.worst2));
  return r;
}

std::string decay_rows(const std::string& cost, const std::vector<DecayRow>& rows) {
  std::string s;
  for (const auto& d : rows)
    s += cost + "," + std::to_string(d.direction) + "," + num(d.t) + "," + num(d.lhs) + "," + num(d.rhs) + "\n";
  return s;
}

SuiteReport cmd_estimates(const RunConfig& cfg, const fs::path& out) {
  SuiteReport rep;
  Loaded L = load_constants(cfg);
  rep.constants_hash = L.hash;
  SweepOptions opt;
  opt.sections = cfg.sections;
  opt.grid = default_grid(cfg, 128, 16);
  std::string lines, decay = "cost,direction,t,lhs,rhs\n";
  json lip = json::array();

  if (cfg.cost == "quadratic") {
    auto u = quadratic_model(cfg.n);
    CostConstants k = compute_constants(u->cost(), 9);
    SectionOptions so;
    so.grid = opt.grid;
    std::vector<SectionRecord> recs;
    const std::vector<double> taus{0.005, 0.01, 0.02};
    for (size_t i = 0; i < taus.size(); ++i) {
      SectionData S = section(u, Vec::Zero(cfg.n), Vec::Zero(cfg.n), taus[i], so);
      SectionRecord r = check_section(S, k, L.K, opt, cfg.seed + i);
      r.cost = "quadratic";
      r.seed = cfg.seed;
      r.index = int(i);
      r.tau = taus[i];
      lines += r.json_line() + "\n";
      recs.push_back(r);
      if (i == 0) decay += decay_rows("quadratic", boundary_decay(S, L.K, opt, cfg.seed));
    }
    auto checks = record_checks(recs);
    prefix(checks, "quadratic");
    rep.checks = checks;
    LipschitzSweep l = lipschitz_sweep("bilinear", cfg.n, 1000, cfg.seed);
    rep.checks.push_back(lipschitz_check(l));
    rep.checks.back().name = "quadratic/" + rep.checks.back().name;
    lip.push_back({{"cost", "bilinear"}, {"triples", l.triples}, {"failures", l.failures1 + l.failures2}});
  } else {
    for (const auto& key : sweep_keys(cfg)) {
      auto recs = section_sweep(key, cfg.n, cfg.seed, L.K, opt);
      for (const auto& r : recs) lines += r.json_line() + "\n";
      auto checks = record_checks(recs);
      LipschitzSweep l = lipschitz_sweep(key, cfg.n, 1000, cfg.seed);
      checks.push_back(lipschitz_check(l));
      prefix(checks, key);
      rep.checks.insert(rep.checks.end(), checks.begin(), checks.end());
      auto fin = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
      lip.push_back({{"cost", key}, {"triples", l.triples}, {"skipped", l.skipped},
                     {"failures1", l.failures1}, {"failures2", l.failures2}, {"worst1", l.worst1},
                     {"worst2", l.worst2}, {"eps_c", fin(l.eps_c)}});
      // Decay profile of the first section of the sweep.
      Rng rng(cfg.seed);
      LocalModel m = make_local_model(key, cfg.n, rng);
      SectionOptions so;
      so.grid = opt.grid;
      try {
        SectionData S = section(m.u, m.x_bar, m.y_bar, m.tau, so);
        decay += decay_rows(key, boundary_decay(S, L.K, opt, cfg.seed));
      } catch (const Error&) {
        // The sweep already reports the failing section.
      }
    }
  }
  write_file(out / "estimates.jsonl", lines);
  write_file(out / "lipschitz.json", lip.dump(2) + "\n");
  write_file(out / "boundary_decay.csv", decay);
  return rep;
}

// ---- regularity

PipelineConfig pipeline_from(const RunConfig& cfg) {
  PipelineConfig pc;
  if (!cfg.from.empty()) {
    const fs::path dir(cfg.from);
    if (!fs::exists(dir / "potentials.json")) throw MissingInput("no solve artifacts in " + cfg.from);
    json run;
    try {
      run = json::parse(read_file(dir / "run.json"));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigError, std::string("run.json: ") + e.what());
    }
    if (run.value("instance", "") != "density-jump")
      throw Error(ErrorCode::ConfigError, "regularity needs a density-jump solve");
    pc.cost = run.at("cost").get<std::string>();
    pc.n = run.at("n").get<int>();
    pc.source_grid = run.at("source_grid").get<int>();
    pc.target_grid = run.at("target_grid").get<int>();
    pc.density_ratio = run.at("density_ratio").get<double>();
    pc.seed = run.at("seed").get<std::uint64_t>();
  } else if (cfg.solve_inline) {
    pc.cost = cfg.cost.empty() ? "neglog" : cfg.cost;
    pc.n = cfg.n;
    pc.source_grid = default_grid(cfg, 32, 8);
    pc.target_grid = 2 * pc.source_grid;
    pc.density_ratio = cfg.Lambda / cfg.lambda;
    pc.seed = cfg.seed;
  } else {
    throw MissingInput("regularity needs --from DIR (a solve output) or --solve-inline");
  }
  if (pc.n != 2) throw Error(ErrorCode::ConfigError, "the regularity pipeline is two-dimensional");
  return pc;
}

SuiteReport cmd_regularity(const RunConfig& cfg, const fs::path& out) {
  SuiteReport rep;
  if (cfg.cost == "quadratic") {
    QuadraticPipeline p = quadratic_pipeline(cfg.seed);
    write_file(out / "regularity.json", p.json() + "\n");
    const double K = p.engulfing.K_emp;
    rep.checks.push_back(bound("engulfing_K", std::abs(K - 1.0), 1e-3, "K_emp " + num(K)));
    rep.checks.push_back(bound("holder_alpha", std::abs(p.holder.alpha_emp - 1.0), 0.02,
                               "alpha_emp " + num(p.holder.alpha_emp)));
    rep.checks.push_back(bound("renormalized_K", std::abs(p.renormalized.K_emp - K) / K, 0.05,
                               "K_emp " + num(p.renormalized.K_emp)));
    rep.checks.push_back(p.shrink.report);
    rep.checks.back().name = "section_shrink";
    prefix(rep.checks, "quadratic");
    return rep;
  }
  PipelineConfig pc = pipeline_from(cfg);
  PipelineResult r = run_pipeline(pc);
  write_file(out / "regularity.json", r.json() + "\n");
  const std::string& key = pc.cost;
  rep.checks.push_back(bound("duality_gap", std::abs(r.solution.gap), 1e-9 * r.solution.scale));
  rep.checks.push_back(flag("engulfing_finite", std::isfinite(r.engulfing.K_emp),
                            "K_emp " + num(r.engulfing.K_emp)));
  std::string by_tau;
  for (size_t i = 0; i < r.engulfing.taus.size(); ++i)
    by_tau += (i ? " " : "") + num(r.engulfing.K_by_tau[i]);
  rep.checks.push_back(bound("engulfing_spread", r.engulfing.spread, 0.2, "K by height " + by_tau));
  rep.checks.push_back(bound("injectivity", double(r.injectivity.violations.size()), 0.0,
                             std::to_string(r.injectivity.interior) + " interior sources"));
  rep.checks.push_back(bound("mixing", double(r.mixing.violations.size()), 0.0,
                             std::to_string(r.mixing.interior_sources) + " interior sources"));
  rep.checks.push_back(bound("potential_modulus", 1.0 - r.holder.pass_rate, 0.01,
                             "exponent " + num(r.holder.exponent)));
  prefix(rep.checks, key);

  // Plot data: exponents against the density ratio on a coarser grid.
  std::string csv = "density_ratio,K_emp,spread,alpha_emp,alpha_theory,pass_rate\n";
  for (double ratio : {1.0, 1.5, 2.0, 3.0, 4.0}) {
    PipelineConfig q = pc;
    q.source_grid = 24;
    q.target_grid = 48;
    q.pair_budget = 20000;
    q.density_ratio = ratio;
    PipelineResult s = run_pipeline(q);
    csv += num(ratio) + "," + num(s.engulfing.K_emp) + "," + num(s.engulfing.spread) + "," +
           num(s.holder.alpha_emp) + "," + num(s.holder.alpha_theory) + "," + num(s.holder.pass_rate) + "\n";
  }
  write_file(out / "alpha_vs_lambda.csv", csv);
  return rep;
}

// ---- all and calibrate

SuiteReport cmd_all(const RunConfig& cfg, const fs::path& out) {
  SuiteReport rep;
  // Classification on the separated boxes; quartic is the negative control.
  json cls = json::array();
  for (const auto& key : zoo_keys()) {
    CurvatureReport cr = classify_cost(*make_cost(key, cfg.n, BoxPreset::Separated), 100, cfg.tol, cfg.seed);
    cls.push_back({{"cost", key}, {"curvature", curvature_json(cr)}});
    const bool expect_pass = key != "quartic";
    rep.checks.push_back(flag(key + "/classification", passes_a3w(cr.verdict) == expect_pass,
                              std::string(to_string(cr.verdict)) + (expect_pass ? "" : ", expected fail")));
  }
  write_file(out / "check-cost" / "classification.json", cls.dump(2) + "\n");

  RunConfig est = cfg;
  est.cost = "a3w";
  SuiteReport e = cmd_estimates(est, out / "estimates");
  rep.constants_hash = e.constants_hash;
  rep.checks.insert(rep.checks.end(), e.checks.begin(), e.checks.end());

  if (cfg.n == 2) {
    RunConfig q = cfg;
    q.cost = "quadratic";
    SuiteReport rq = cmd_regularity(q, out / "regularity-quadratic");
    rep.checks.insert(rep.checks.end(), rq.checks.begin(), rq.checks.end());
    RunConfig s = cfg;
    s.cost = "neglog";
    s.solve_inline = true;
    s.from.clear();
    SuiteReport rs = cmd_regularity(s, out / "regularity-neglog");
    rep.checks.insert(rep.checks.end(), rs.checks.begin(), rs.checks.end());
  }
  return rep;
}

SuiteReport cmd_calibrate(const RunConfig&, const fs::path& out) {
  SuiteReport rep;
  FittedConstants fit = calibrate_constants();
  FittedConstants closed = model_constants();
  for (int n = 2; n <= 3; ++n) {
    const std::string d = "n" + std::to_string(n);
    auto rel = [](double a, double b) { return std::abs(a - b) / b; };
    rep.checks.push_back(bound("lower_" + d, rel(fit.lower[n], closed.lower[n]), 0.02));
    rep.checks.push_back(bound("upper_inf_" + d, rel(fit.upper_inf[n], closed.upper_inf[n]), 0.02));
    rep.checks.push_back(bound("profile_" + d, rel(fit.profile[n], closed.profile[n]), 0.02));
  }
  rep.checks.push_back(bound("cone_n2", std::abs(fit.cone[2] - closed.cone[2]) / closed.cone[2], 0.02));
  std::string text = fit.dump();
  write_file(out / "constants.json", text);
  rep.constants_hash = fnv1a_hex(text);
  return rep;
}

void print(const SuiteReport& rep) {
  for (const auto& c : rep.checks) {
    std::cout << (c.verdict == Outcome::Pass ? "PASS " : c.verdict == Outcome::Fail ? "FAIL " : "SKIP ")
              << c.name;
    if (!c.detail.empty()) std::cout << "  (" << c.detail << ")";
    std::cout << "\n";
  }
  std::cout << rep.command << ": " << (rep.pass() ? "pass" : "fail") << "\n";
}

}  // namespace

void RunConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::ConfigError, m); };
  if (n != 2 && n != 3) bad("--n must be 2 or 3");
  if (grid != 0) {
    const int lo = n == 2 ? 16 : 8, hi = n == 2 ? 256 : 32;
    if (!power_of_two(grid) || grid < lo || grid > hi)
      bad("--grid must be a power of two in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  if (!(tol > 0)) bad("--tol must be positive");
  if (!(lambda > 0) || !(Lambda >= lambda) || !std::isfinite(Lambda)) bad("need 0 < lambda <= Lambda");
  if (sections < 1) bad("--sections must be positive");
  if (out.empty()) bad("--out must not be empty");
}

bool SuiteReport::pass() const {
  return std::none_of(checks.begin(), checks.end(), [](const EstimateReport& c) { return c.verdict == Outcome::Fail; });
}

std::string SuiteReport::json() const {
  nlohmann::json j;
  j["command"] = command;
  j["pass"] = pass();
  j["fingerprint"] = {{"seed", seed}, {"version", version}, {"constants_hash", constants_hash}};
  auto& cs = j["checks"] = nlohmann::json::array();
  for (const auto& c : checks) cs.push_back(nlohmann::json::parse(c.json_line()));
  return j.dump(2) + "\n";
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int run_cli(int argc, char** argv) {
  RunConfig cfg;
  cfg.cost.clear();
  CLI::App app{"mtwlab: cost curvature, discrete transport and section estimates"};
  app.require_subcommand(1);
  auto common = [&](CLI::App* s) {
    s->add_option("--cost", cfg.cost, "zoo key, a3w, quadratic, or a polynomial cost .json");
    s->add_option("--n", cfg.n, "dimension (2 or 3)");
    s->add_option("--grid", cfg.grid, "grid points per axis");
    s->add_option("--lambda", cfg.lambda, "density lower bound");
    s->add_option("--Lambda", cfg.Lambda, "density upper bound");
    s->add_option("--seed", cfg.seed, "random seed");
    s->add_option("--tol", cfg.tol, "classification tolerance");
    s->add_option("--out", cfg.out, "output directory");
    s->add_option("--constants-file", cfg.constants_file, "fitted constants JSON");
  };
  struct Cmd {
    const char* name;
    const char* help;
    SuiteReport (*run)(const RunConfig&, const fs::path&);
  };
  const Cmd cmds[] = {
      {"check-cost", "classify a cost and compute its constants", cmd_check_cost},
      {"solve", "solve a discrete transport instance", cmd_solve},
      {"sections", "level-set convexity of random sections", cmd_sections},
      {"estimates", "Alexandrov, cone, dual-norm and Lipschitz checks", cmd_estimates},
      {"regularity", "engulfing, injectivity, mixing and Holder checks", cmd_regularity},
      {"all", "every suite", cmd_all},
      {"calibrate", "fit the dimensional constants on the quadratic model", cmd_calibrate},
  };
  std::vector<CLI::App*> subs;
  for (const Cmd& c : cmds) {
    CLI::App* s = app.add_subcommand(c.name, c.help);
    common(s);
    subs.push_back(s);
  }
  subs[0]->add_option("--boxes", cfg.boxes, "default or separated");
  subs[1]->add_option("--instance", cfg.instance, "identity, quantile, density-jump, boundary or .json");
  subs[2]->add_option("--sections", cfg.sections, "sections per cost");
  subs[3]->add_option("--sections", cfg.sections, "sections per cost");
  subs[4]->add_option("--from", cfg.from, "directory written by solve");
  subs[4]->add_flag("--solve-inline", cfg.solve_inline, "solve the density-jump instance first");
  subs[5]->add_option("--sections", cfg.sections, "sections per cost");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitPass : kExitConfigError;
  }

  for (size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      cfg.validate();
      const fs::path out(cfg.out);
      SuiteReport rep = cmds[i].run(cfg, out);
      rep.command = cmds[i].name;
      rep.seed = cfg.seed;
      rep.version = MTWLAB_VERSION;
      write_file(out / "suite.json", rep.json());
      print(rep);
      return rep.pass() ? kExitPass : kExitCheckFailed;
    } catch (const MissingInput& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitMissingInput;
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      if (e.code() == ErrorCode::ConfigError) return kExitConfigError;
      if (e.code() == ErrorCode::Infeasible || e.code() == ErrorCode::SolverStalled) return kExitSolverError;
      return kExitError;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitError;
    }
  }
  return kExitConfigError;
}

}  // namespace mtwlab
