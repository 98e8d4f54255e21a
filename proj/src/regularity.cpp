#include "mtwlab/regularity.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>

namespace mtwlab {

ShrinkResult section_shrink(PotentialPtr u, const Vec& x_bar, const Vec& y_bar, double tau,
                            const SectionOptions& opt) {
  SectionData S1 = section(u, x_bar, y_bar, tau, opt);
  SectionData S2 = section(u, S1.chart, x_bar, 0.5 * tau, opt, &S1.window);
  const Vec& c = S1.john.center;
  double r_in = kInf;
  for (const Facet& f : S1.hull.facets) r_in = std::min(r_in, (f.offset - f.normal.dot(c)) / f.normal.norm());
  if (!(r_in > 0.0)) throw Error(ErrorCode::NotWellCentered, "John centre on the boundary of Q_tau");
  Mat V = S2.hull.vertices();
  double rho = 0.0;
  for (int k = 0; k < V.cols(); ++k)
    for (const Facet& f : S1.hull.facets)
      rho = std::max(rho, f.normal.dot(V.col(k) - c) / (f.offset - f.normal.dot(c)));
  ShrinkResult r;
  r.rho0 = rho;
  double bound = 1.0 - S1.cell_width() / r_in;
  r.report = make_report("section_shrink", rho, bound, 0.0, "none", 0.0);
  r.report.verdict = rho < bound ? Outcome::Pass : Outcome::Fail;
  r.report.detail = "inradius=" + std::to_string(r_in) + " cell=" + std::to_string(S1.cell_width());
  return r;
}

namespace {

Vec ray_direction(int k, int count, int n, Rng& rng) {
  if (n == 2) {
    double a = 2.0 * 3.141592653589793 * k / count;
    Vec d(2);
    d << std::cos(a), std::sin(a);
    return d;
  }
  return random_unit(rng, n);
}

}  // namespace

std::string EngulfingReport::json() const {
  nlohmann::json j;
  j["pairs"] = pairs;
  j["taus"] = taus;
  j["K_by_tau"] = K_by_tau;
  j["K_emp"] = K_emp;
  j["spread"] = spread;
  return j.dump();
}

EngulfingReport engulfing_constant(PotentialPtr u, const std::vector<Vec>& bases,
                                   const std::vector<double>& tau_grid, const EngulfingOptions& opt) {
  if (tau_grid.empty()) throw Error(ErrorCode::ConfigError, "empty tau grid");
  const CostModel& c = u->cost();
  const DomainBox U = opt.U_lambda.dim() == c.dim() ? opt.U_lambda : c.source();
  const int T = int(tau_grid.size());
  std::vector<std::vector<EngulfingSample>> per_base(bases.size());

  parallel_for(int(bases.size()), [&](int b) {
    const Vec& xb = bases[b];
    if (!U.contains(xb)) return;
    Vec yb;
    ChartPtr chart;
    try {
      yb = u->subgradient(xb);
      chart = std::make_shared<const ExpChart>(u->cost_ptr(), yb);
    } catch (const Error&) {
      return;
    }
    const double depth = U.depth(xb);
    const double ub = u->value(xb);
    Rng rng(0x9e3779b97f4a7c15ULL ^ std::uint64_t(b));
    for (int t = 0; t < T; ++t) {
      const double tau = tau_grid[t];
      SectionData S = section_frame(u, chart, xb, tau, U);
      for (int d = 0; d < opt.directions; ++d) {
        Vec dir = ray_direction(d, opt.directions, c.dim(), rng);
        double R;
        try {
          R = S.boundary_distance(S.q_bar, dir);
        } catch (const Error&) {
          continue;
        }
        for (double f : opt.fractions) {
          Vec x, y;
          try {
            x = S.x_of(S.q_bar + f * R * dir);
            y = u->subgradient(x);
          } catch (const Error&) {
            continue;
          }
          if ((x - xb).norm() * opt.separation > depth) continue;
          const double base = u->value(x) - c.value(xb, y) + c.value(x, y);
          auto member = [&](double k) { return ub <= base + k * tau; };
          double lo = 0.0, hi = 1.0;
          if (member(0.0)) {
            hi = 0.0;
          } else {
            int it = 0;
            while (!member(hi) && ++it < 200) {
              lo = hi;
              hi *= 2.0;
            }
            while (hi - lo > opt.k_tol * hi) {
              double mid = 0.5 * (lo + hi);
              (member(mid) ? hi : lo) = mid;
            }
          }
          per_base[b].push_back({xb, x, tau, hi});
        }
      }
    }
  });

  EngulfingReport r;
  r.taus = tau_grid;
  r.K_by_tau.assign(T, 0.0);
  std::map<double, int> slot;
  for (int t = 0; t < T; ++t) slot[tau_grid[t]] = t;
  for (auto& v : per_base)
    for (auto& s : v) {
      int t = slot[s.tau];
      r.K_by_tau[t] = std::max(r.K_by_tau[t], s.k);
      r.K_emp = std::max(r.K_emp, s.k);
      r.samples.push_back(std::move(s));
    }
  r.pairs = int(r.samples.size());
  if (r.pairs == 0) throw Error(ErrorCode::NoAdmissiblePairs, "no pair passes the separation rule");
  double lo = kInf, hi = 0.0;
  for (int t = 0; t < T; ++t) {
    bool any = false;
    for (const auto& s : r.samples) any = any || s.tau == tau_grid[t];
    if (!any) continue;
    double k = std::max(1.0, r.K_by_tau[t]);
    lo = std::min(lo, k);
    hi = std::max(hi, k);
  }
  r.spread = (hi - lo) / lo;
  return r;
}

EngulfingReport engulfing_constant(const KantorovichSolution& sol, int pair_budget,
                                   const std::vector<double>& tau_grid, const EngulfingOptions& opt,
                                   std::uint64_t seed) {
  const CostModel& c = *sol.cost;
  const DomainBox U = opt.U_lambda.dim() == c.dim() ? opt.U_lambda : c.source();
  std::vector<int> cand;
  double best = 0.0;
  for (int i = 0; i < sol.sources.cols(); ++i) best = std::max(best, U.depth(sol.sources.col(i)));
  // Deep sources only: the separation rule rejects the rest anyway.
  for (int i = 0; i < sol.sources.cols(); ++i)
    if (U.depth(sol.sources.col(i)) >= 0.5 * best) cand.push_back(i);
  if (cand.empty()) throw Error(ErrorCode::NoAdmissiblePairs, "no interior source");
  const int per_base = std::max(1, opt.directions * int(opt.fractions.size()) * int(tau_grid.size()));
  const int want = std::clamp(pair_budget / per_base, 1, int(cand.size()));
  Rng rng(seed);
  std::shuffle(cand.begin(), cand.end(), rng);
  std::vector<Vec> bases;
  for (int k = 0; k < want; ++k) bases.push_back(sol.sources.col(cand[k]));
  EngulfingOptions o = opt;
  o.U_lambda = U;
  return engulfing_constant(interpolated_potential(sol), bases, tau_grid, o);
}

EstimateReport monotonicity_gain(const CPotential& u, const Vec& x, const Vec& x_bar, double K) {
  const CostModel& c = u.cost();
  Vec y = u.subgradient(x), yb = u.subgradient(x_bar);
  double gap = u.value(x) - u.value(x_bar) - c.value(x_bar, yb) + c.value(x, yb);
  double lhs = (1.0 + K) / K * gap;
  double rhs = c.value(x_bar, y) - c.value(x, y) - c.value(x_bar, yb) + c.value(x, yb);
  double scale = std::max({1.0, std::abs(c.value(x_bar, y)), std::abs(c.value(x, y)),
                           std::abs(c.value(x_bar, yb)), std::abs(u.value(x))});
  EstimateReport r = make_report("monotonicity_gain", lhs, rhs, K, "fitted", 0.0);
  r.verdict = lhs <= rhs + 1e-8 * scale ? Outcome::Pass : Outcome::Fail;
  return r;
}

InjectivityReport injectivity_check(const TransportMap& map, const Mat& sources,
                                    const DomainBox& U_lambda, double target_spacing, double margin) {
  InjectivityReport r;
  r.threshold = 0.5 * target_spacing;
  std::vector<int> in;
  for (int i = 0; i < sources.cols(); ++i)
    if (U_lambda.depth(sources.col(i)) >= margin) in.push_back(i);
  r.interior = int(in.size());
  for (size_t a = 0; a < in.size(); ++a)
    for (size_t b = a + 1; b < in.size(); ++b) {
      double d = (map.G.col(in[a]) - map.G.col(in[b])).norm();
      r.min_separation = std::min(r.min_separation, d);
      if (d < r.threshold) r.violations.emplace_back(in[a], in[b]);
    }
  return r;
}

std::string HolderReport::json() const {
  nlohmann::json j;
  j["alpha_emp"] = alpha_emp;
  j["alpha_theory"] = alpha_theory;
  j["r2"] = r2;
  j["exponent"] = exponent;
  j["C2"] = C2;
  j["pairs"] = pairs;
  j["modulus_failures"] = modulus_failures;
  j["pass_rate"] = pass_rate;
  j["bin_distance"] = bin_distance;
  j["bin_modulus"] = bin_modulus;
  return j.dump();
}

HolderReport holder_fit(const Mat& G, const Vec& u, const CostModel& cost, const DomainBox& box, int g,
                        double K, const HolderOptions& opt) {
  const int n = box.dim();
  if (!(K >= 1.0)) throw Error(ErrorCode::ConfigError, "engulfing constant must be >= 1");
  Vec h = box.width() / double(g - 1);
  const double hmax = h.maxCoeff();
  const int m = std::max(1, int(std::ceil(opt.interior_cells)));
  const double d_min = 2.0 * hmax, d_max = box.diameter() / 8.0;
  if (g - 2 * m < 3 || d_max <= 1.5 * d_min)
    throw Error(ErrorCode::InsufficientScales, "grid too coarse for two distance scales");
  const int B = std::max(2, opt.bins);
  std::vector<double> edge(B + 1);
  for (int b = 0; b <= B; ++b) edge[b] = d_min * std::pow(d_max / d_min, double(b) / B);

  auto flat = [&](const std::vector<int>& k) {
    int f = 0;
    for (int i = n - 1; i >= 0; --i) f = f * g + k[i];
    return f;
  };
  auto point = [&](const std::vector<int>& k) {
    Vec x(n);
    for (int i = 0; i < n; ++i) x[i] = box.lower[i] + k[i] * h[i];
    return x;
  };

  struct Pair {
    int bin;
    double d, dG, lhs;
  };
  std::vector<Pair> pairs;
  Rng rng(opt.seed);
  for (int b = 0; b < B; ++b) {
    int got = 0;
    for (int attempt = 0; attempt < 20 * opt.pairs_per_bin && got < opt.pairs_per_bin; ++attempt) {
      std::vector<int> k0(n), k1(n);
      for (int i = 0; i < n; ++i) k0[i] = m + int(uniform01(rng) * (g - 2 * m));
      double r = edge[b] * std::pow(edge[b + 1] / edge[b], uniform01(rng));
      Vec dir = random_unit(rng, n);
      bool ok = true;
      for (int i = 0; i < n && ok; ++i) {
        k1[i] = k0[i] + int(std::lround(r * dir[i] / h[i]));
        ok = k1[i] >= m && k1[i] <= g - 1 - m;
      }
      if (!ok || k1 == k0) continue;
      Vec x0 = point(k0), x1 = point(k1);
      double d = (x0 - x1).norm();
      if (d < edge[b] || d >= edge[b + 1]) continue;
      int i0 = flat(k0), i1 = flat(k1);
      Vec G0 = G.col(i0), G1 = G.col(i1);
      Vec du1 = -cost.grad_x(x1, G1);
      double lhs = std::abs(u[i0] - u[i1] - du1.dot(x0 - x1));
      pairs.push_back({b, d, (G0 - G1).norm(), lhs});
      ++got;
    }
  }

  HolderReport r;
  r.exponent = 1.0 + 1.0 / K;
  r.alpha_theory = 1.0 / K;
  r.bin_distance.assign(B, 0.0);
  r.bin_modulus.assign(B, 0.0);
  std::vector<int> count(B, 0);
  for (const Pair& p : pairs) {
    count[p.bin]++;
    r.bin_modulus[p.bin] = std::max(r.bin_modulus[p.bin], p.dG);
  }
  int filled = 0, top = -1;
  for (int b = 0; b < B; ++b) {
    r.bin_distance[b] = std::sqrt(edge[b] * edge[b + 1]);
    if (count[b] > 0) {
      ++filled;
      top = b;
    }
  }
  if (filled < 2) throw Error(ErrorCode::InsufficientScales, "fewer than two populated distance strata");

  // Least squares of log |dG| on log |d|.
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  int cnt = 0;
  for (const Pair& p : pairs) {
    if (!(p.dG > 0.0)) continue;
    double lx = std::log(p.d), ly = std::log(p.dG);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    syy += ly * ly;
    ++cnt;
  }
  if (cnt < 2) throw Error(ErrorCode::InsufficientScales, "map is constant on the sampled pairs");
  double vx = sxx - sx * sx / cnt, vy = syy - sy * sy / cnt, cxy = sxy - sx * sy / cnt;
  r.alpha_emp = cxy / vx;
  r.r2 = vy > 0.0 ? cxy * cxy / (vx * vy) : 1.0;

  for (const Pair& p : pairs)
    if (p.bin == top) r.C2 = std::max(r.C2, p.lhs / std::pow(p.d, r.exponent));
  double uscale = std::max(1.0, u.cwiseAbs().maxCoeff());
  for (const Pair& p : pairs)
    if (p.lhs > 2.0 * r.C2 * std::pow(p.d, r.exponent) * (1.0 + 1e-12) + 1e-14 * uscale) ++r.modulus_failures;
  r.pairs = int(pairs.size());
  r.pass_rate = 1.0 - double(r.modulus_failures) / r.pairs;
  return r;
}

SourceGrid source_grid(const KantorovichSolution& sol) {
  const int n = int(sol.sources.rows()), N = int(sol.sources.cols());
  std::vector<std::vector<double>> axis(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < N; ++j) axis[i].push_back(sol.sources(i, j));
    std::sort(axis[i].begin(), axis[i].end());
    axis[i].erase(std::unique(axis[i].begin(), axis[i].end()), axis[i].end());
  }
  SourceGrid r;
  r.g = int(axis[0].size());
  long total = 1;
  for (int i = 0; i < n; ++i) {
    if (int(axis[i].size()) != r.g) throw Error(ErrorCode::ConfigError, "sources are not a g^n grid");
    total *= r.g;
  }
  if (total != N || r.g < 3) throw Error(ErrorCode::ConfigError, "sources are not a full tensor grid");
  Vec lo(n), hi(n);
  for (int i = 0; i < n; ++i) {
    lo[i] = axis[i].front();
    hi[i] = axis[i].back();
  }
  r.box = DomainBox(lo, hi);
  r.order.assign(size_t(N), -1);
  for (int j = 0; j < N; ++j) {
    int f = 0;
    for (int i = n - 1; i >= 0; --i) {
      int k = int(std::lower_bound(axis[i].begin(), axis[i].end(), sol.sources(i, j)) - axis[i].begin());
      f = f * r.g + k;
    }
    r.order[size_t(f)] = j;
  }
  return r;
}

std::shared_ptr<CubicGridPotential> interpolated_potential(const KantorovichSolution& sol) {
  SourceGrid grid = source_grid(sol);
  std::vector<double> values(grid.order.size());
  for (size_t f = 0; f < values.size(); ++f) values[f] = sol.u[grid.order[f]];
  Vec y_guess = sol.targets.rowwise().mean();
  return std::make_shared<CubicGridPotential>(sol.cost, grid.box, grid.g, std::move(values), y_guess);
}

HolderReport holder_fit(const TransportMap& map, const KantorovichSolution& sol, double K,
                        const HolderOptions& opt) {
  SourceGrid grid = source_grid(sol);
  const int N = int(sol.sources.cols());
  Mat G(sol.sources.rows(), N);
  Vec u(N);
  for (int f = 0; f < N; ++f) {
    G.col(f) = map.G.col(grid.order[size_t(f)]);
    u[f] = sol.u[grid.order[size_t(f)]];
  }
  return holder_fit(G, u, *sol.cost, grid.box, grid.g, K, opt);
}

std::shared_ptr<SmoothPotential> affine_pullback(std::shared_ptr<const SmoothPotential> u, CostPtr affine_cost,
                                                 const Mat& Lx, const Vec& bx, double k, const Vec& y_guess) {
  auto fn = [u, Lx, bx, k](const Vec& x) { return k * u->value(Lx * x + bx); };
  auto grad = [u, Lx, bx, k](const Vec& x) -> Vec { return k * Lx.transpose() * u->gradient(Lx * x + bx); };
  auto hess = [u, Lx, bx, k](const Vec& x) -> Mat {
    return k * Lx.transpose() * u->hessian(Lx * x + bx) * Lx;
  };
  return std::make_shared<SmoothPotential>(std::move(affine_cost), fn, grad, hess, y_guess);
}

}  // namespace mtwlab
