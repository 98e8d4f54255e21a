#include "mtwlab/estimates.hpp"

#include "mtwlab/transport.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace mtwlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kPi = std::numbers::pi;

bool chart_miss(const Error& e) {
  return e.code() == ErrorCode::SolutionOutsideU || e.code() == ErrorCode::NewtonDiverged;
}

// Deterministic probe directions: a circle for n = 2, a Fibonacci sphere
// for n = 3.
Vec probe_direction(int k, int count, int n) {
  Vec d = Vec::Zero(n);
  if (n == 1) {
    d[0] = (k % 2 == 0) ? 1.0 : -1.0;
  } else if (n == 2) {
    double a = 2.0 * kPi * k / count;
    d << std::cos(a), std::sin(a);
  } else {
    double z = 1.0 - (2.0 * k + 1.0) / count;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double a = k * kPi * (3.0 - std::sqrt(5.0));
    d[0] = r * std::cos(a);
    d[1] = r * std::sin(a);
    d[2] = z;
    for (int i = 3; i < n; ++i) d[i] = 0.0;
    d.normalize();
  }
  return d;
}

struct Grid {
  DomainBox box;
  int g = 0;
  int n = 0;
  Vec h;

  Grid(DomainBox b, int g_) : box(std::move(b)), g(g_), n(box.dim()), h(box.width() / double(g_ - 1)) {}
  int count() const {
    int c = 1;
    for (int i = 0; i < n; ++i) c *= g;
    return c;
  }
  Vec node(int idx) const {
    Vec q(n);
    for (int i = 0; i < n; ++i) {
      q[i] = box.lower[i] + (idx % g) * h[i];
      idx /= g;
    }
    return q;
  }
  int coord(int idx, int axis) const {
    for (int i = 0; i < axis; ++i) idx /= g;
    return idx % g;
  }
  int stride(int axis) const {
    int s = 1;
    for (int i = 0; i < axis; ++i) s *= g;
    return s;
  }
};

void evaluate_grid(SectionData& S, const Grid& grid) {
  const int N = grid.count();
  const int n = S.dim();
  S.window = grid.box;
  S.g = grid.g;
  S.w.assign(N, kNaN);
  S.mask.assign(N, 0);
  S.x_nodes = Mat::Constant(n, N, kNaN);
  parallel_for(N, [&](int i) {
    Vec q = grid.node(i);
    try {
      Vec x = S.x_of(q);
      S.x_nodes.col(i) = x;
      S.w[i] = S.value_at_x(x);
    } catch (const Error& e) {
      if (!chart_miss(e)) throw;
    }
  });
  S.members = 0;
  for (int i = 0; i < N; ++i) {
    if (!std::isnan(S.w[i]) && S.w[i] <= 0.0) {
      S.mask[i] = 1;
      ++S.members;
    }
  }
}

enum class GridCheck { Ok, TouchesWindow, NearOutside };

GridCheck check_grid(const SectionData& S, const Grid& grid, int margin) {
  const int N = grid.count();
  bool touches = false;
  for (int i = 0; i < N; ++i) {
    if (!S.mask[i]) continue;
    for (int a = 0; a < grid.n; ++a) {
      int k = grid.coord(i, a);
      int st = grid.stride(a);
      for (int s = 1; s <= margin; ++s) {
        for (int sgn : {-1, 1}) {
          int kk = k + sgn * s;
          if (kk < 0 || kk >= grid.g) {
            touches = true;
            continue;
          }
          if (std::isnan(S.w[i + sgn * s * st])) return GridCheck::NearOutside;
        }
      }
    }
  }
  return touches ? GridCheck::TouchesWindow : GridCheck::Ok;
}

void finish_section(SectionData& S, const Grid& grid) {
  const int N = grid.count();
  const int n = S.dim();
  std::vector<Vec> rim;
  double lo = -S.tau;  // w(q_bar)
  for (int i = 0; i < N; ++i) {
    if (!S.mask[i]) continue;
    lo = std::min(lo, S.w[i]);
    bool boundary = false;
    for (int a = 0; a < n && !boundary; ++a) {
      int k = grid.coord(i, a);
      int st = grid.stride(a);
      if (k == 0 || k == grid.g - 1 || !S.mask[i - st] || !S.mask[i + st]) boundary = true;
    }
    if (boundary) rim.push_back(grid.node(i));
  }
  if (int(rim.size()) < n + 1) throw Error(ErrorCode::EmptySection, "fewer than n+1 member nodes");
  S.hull = make_body(rim);
  if (S.hull.degenerate) throw Error(ErrorCode::EmptySection, "section hull is flat at this grid");
  S.john = john_ellipsoid(S.hull);
  S.inf_value = lo;
  S.mask_volume = S.members * grid.h.prod();
}

}  // namespace

Vec SectionData::node(int idx) const { return Grid(window, g).node(idx); }

std::vector<int> SectionData::node_index(int idx) const {
  std::vector<int> k(dim());
  for (int i = 0; i < dim(); ++i) {
    k[i] = idx % g;
    idx /= g;
  }
  return k;
}

int SectionData::flat_index(const std::vector<int>& k) const {
  int idx = 0;
  for (int i = dim() - 1; i >= 0; --i) idx = idx * g + k[i];
  return idx;
}

Vec SectionData::x_of(const Vec& q) const {
  const DomainBox& U = chart->cost().source();
  Vec guess = (x_bar + jac_inv * (q - q_bar)).cwiseMax(U.lower).cwiseMin(U.upper);
  Vec x = chart->from_q(q, guess);
  if (!U_lambda.contains(x)) throw Error(ErrorCode::SolutionOutsideU, "outside U_lambda");
  return x;
}

double SectionData::value_at_x(const Vec& x) const {
  return u->value(x) + chart->cost().value(x, y_bar) - base - tau;
}

double SectionData::value(const Vec& q) const { return value_at_x(x_of(q)); }

double SectionData::boundary_distance(const Vec& from, const Vec& dir) const {
  auto f = [&](double t) {
    try {
      return value(from + t * dir);
    } catch (const Error& e) {
      if (!chart_miss(e)) throw;
      return kNaN;
    }
  };
  double lo = 0.0;
  double hi = 1e-9 * std::max(1e-300, chart->bounding_box().diameter());
  for (int it = 0;; ++it) {
    double v = f(hi);
    if (std::isnan(v)) throw Error(ErrorCode::ShrinkTau, "section reaches the boundary of U_lambda");
    if (v > 0.0) break;
    if (it > 200) throw Error(ErrorCode::ShrinkTau, "section unbounded along a ray");
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
    double mid = 0.5 * (lo + hi);
    double v = f(mid);
    if (std::isnan(v)) throw Error(ErrorCode::ShrinkTau, "chart boundary inside the section");
    (v > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

SectionData section(PotentialPtr u, const Vec& x_bar, const Vec& y_bar, double tau,
                    const SectionOptions& opt) {
  auto chart = std::make_shared<const ExpChart>(u->cost_ptr(), y_bar);
  return section(std::move(u), std::move(chart), x_bar, tau, opt, nullptr);
}

SectionData section(PotentialPtr u, ChartPtr chart, const Vec& x_bar, double tau,
                    const SectionOptions& opt, const DomainBox* window) {
  if (!(tau > 0.0)) throw Error(ErrorCode::ConfigError, "section height must be positive");
  const CostModel& c = chart->cost();
  const int n = c.dim();
  SectionData S;
  S.chart = chart;
  S.u = u;
  S.x_bar = x_bar;
  S.y_bar = chart->base();
  S.tau = tau;
  S.U_lambda = opt.U_lambda.dim() == n ? opt.U_lambda : c.source();
  if (!S.U_lambda.contains(x_bar)) throw Error(ErrorCode::OutOfDomain, "x_bar outside U_lambda");
  S.q_bar = chart->to_q(x_bar);
  S.jac_inv = chart->jacobian(x_bar).inverse();
  S.base = u->value(x_bar) + c.value(x_bar, S.y_bar);

  const int g = opt.grid > 0 ? opt.grid : (n <= 2 ? 128 : 16);
  if (g < 8) throw Error(ErrorCode::ConfigError, "section grid needs at least 8 points per axis");
  const int margin = std::max(1, int(std::ceil(opt.margin_cells)));

  DomainBox box;
  if (window) {
    box = *window;
  } else {
    const int rays = opt.rays > 0 ? opt.rays : (n <= 2 ? 64 : 128);
    Vec lo = S.q_bar, hi = S.q_bar;
    for (int k = 0; k < rays; ++k) {
      Vec d = probe_direction(k, rays, n);
      Vec p = S.q_bar + S.boundary_distance(S.q_bar, d) * d;
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    Vec ext = (hi - lo).cwiseMax(1e-12 * (hi - lo).maxCoeff());
    Vec pad = 0.1 * ext + (margin + 2.0) * ext / double(g - 1);
    box = DomainBox(lo - pad, hi + pad);
  }

  for (int attempt = 0;; ++attempt) {
    Grid grid(box, g);
    evaluate_grid(S, grid);
    if (S.members == 0) throw Error(ErrorCode::EmptySection, "no grid node in the section");
    GridCheck chk = check_grid(S, grid, margin);
    if (chk == GridCheck::NearOutside)
      throw Error(ErrorCode::ShrinkTau, "section within margin of the boundary of U_lambda");
    if (chk == GridCheck::Ok) {
      finish_section(S, grid);
      return S;
    }
    if (window || attempt >= 6) throw Error(ErrorCode::ShrinkTau, "section does not fit the window");
    Vec c0 = box.center();
    Vec half = 0.75 * box.width();
    box = DomainBox(c0 - half, c0 + half);
  }
}

SectionData section_frame(PotentialPtr u, ChartPtr chart, const Vec& x_bar, double tau,
                          const DomainBox& U_lambda) {
  const CostModel& c = chart->cost();
  SectionData S;
  S.chart = chart;
  S.u = u;
  S.x_bar = x_bar;
  S.y_bar = chart->base();
  S.tau = tau;
  S.U_lambda = U_lambda.dim() == c.dim() ? U_lambda : c.source();
  S.q_bar = chart->to_q(x_bar);
  S.jac_inv = chart->jacobian(x_bar).inverse();
  S.base = u->value(x_bar) + c.value(x_bar, S.y_bar);
  return S;
}

double levelset_defect(const SectionData& S) {
  const int n = S.dim();
  Mat V = S.hull.vertices();
  Vec lo = V.rowwise().minCoeff(), hi = V.rowwise().maxCoeff();
  const double tol = 1e-7 * S.cell_width();
  long inside = 0;
  for (int i = 0; i < S.node_count(); ++i) {
    Vec q = S.node(i);
    bool in_box = true;
    for (int a = 0; a < n && in_box; ++a) in_box = q[a] >= lo[a] - tol && q[a] <= hi[a] + tol;
    if (in_box && S.hull.contains(q, tol)) ++inside;
  }
  if (inside == 0) return 0.0;
  return std::max(0.0, 1.0 - double(S.members) / double(inside));
}

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Pass: return "pass";
    case Outcome::Fail: return "fail";
    case Outcome::Skipped: return "skipped";
  }
  return "?";
}

std::string EstimateReport::json_line() const {
  nlohmann::json j;
  j["name"] = name;
  j["lhs"] = lhs;
  j["rhs"] = rhs;
  j["ratio"] = std::isfinite(ratio) ? nlohmann::json(ratio) : nlohmann::json(nullptr);
  j["constant"] = constant;
  j["constant_used"] = constant_used;
  j["verdict"] = to_string(verdict);
  if (!detail.empty()) j["detail"] = detail;
  return j.dump();
}

EstimateReport make_report(std::string name, double lhs, double rhs, double constant,
                           std::string constant_used, double tol) {
  EstimateReport r;
  r.name = std::move(name);
  r.lhs = lhs;
  r.rhs = rhs;
  r.constant = constant;
  r.constant_used = std::move(constant_used);
  if (rhs > 0.0)
    r.ratio = lhs / rhs;
  else
    r.ratio = lhs > 0.0 ? kInf : 0.0;
  r.verdict = r.ratio <= 1.0 + tol ? Outcome::Pass : Outcome::Fail;
  return r;
}

namespace {

nlohmann::json constants_block(const FittedConstants& k, int n) {
  nlohmann::json b;
  b["alexandrov_lower"] = k.lower[n];
  b["alexandrov_upper_inf"] = k.upper_inf[n];
  b["alexandrov_profile"] = k.profile[n];
  if (k.cone[n] > 0.0) b["cone_mass"] = k.cone[n];
  return b;
}

}  // namespace

std::string FittedConstants::dump() const {
  nlohmann::json j;
  j["source"] = source;
  j["safety"] = safety;
  for (int n = 1; n <= 3; ++n) j["n" + std::to_string(n)] = constants_block(*this, n);
  return j.dump(2) + "\n";
}

FittedConstants FittedConstants::parse(const std::string& json_text) {
  FittedConstants k;
  try {
    nlohmann::json j = nlohmann::json::parse(json_text);
    k.source = j.value("source", "");
    k.safety = j.value("safety", 2.0);
    for (int n = 1; n <= 3; ++n) {
      std::string key = "n" + std::to_string(n);
      if (!j.contains(key)) continue;
      const auto& b = j.at(key);
      k.lower[n] = b.value("alexandrov_lower", 0.0);
      k.upper_inf[n] = b.value("alexandrov_upper_inf", 0.0);
      k.profile[n] = b.value("alexandrov_profile", 0.0);
      k.cone[n] = b.value("cone_mass", 0.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("constants file: ") + e.what());
  }
  // The suites run at n = 2 and 3; a file without them is not a calibration.
  for (int n = 2; n <= 3; ++n)
    if (!(k.lower[n] > 0 && k.upper_inf[n] > 0 && k.profile[n] > 0))
      throw Error(ErrorCode::ConfigError, "constants file lacks n" + std::to_string(n) + " values");
  if (!(k.safety >= 1.0)) throw Error(ErrorCode::ConfigError, "safety factor below 1");
  return k;
}

FittedConstants FittedConstants::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read constants file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

FittedConstants model_constants() {
  FittedConstants k;
  k.source = "closed form, quadratic model";
  const double pi2 = kPi * kPi;
  // n = 1: Q = [-r, r], r = sqrt(2 tau).
  k.lower[1] = 8.0;
  k.upper_inf[1] = 1.0 / 8.0;
  k.profile[1] = 2.0 / 8.0;  // (1 + t) / 8 at t = 1
  // n = 2: disc of area 2 pi tau; the profile ratio
  // (1 - t)^{3/2} (1 + t)^2 / (4 pi^2) decreases on (1/4, 1].
  k.lower[2] = 4.0 * pi2;
  k.upper_inf[2] = 1.0 / (4.0 * pi2);
  k.profile[2] = std::pow(0.75, 1.5) * 1.25 * 1.25 / (4.0 * pi2);
  // Disc cone with vertex offset s: |dh| = pi a^2 / (1 - s^2)^{3/2}, worst
  // at s = 1/2 with the planes normal to the offset.
  k.cone[2] = 2.0 * std::pow(1.5, 1.5) * std::sqrt(0.5) / pi2;
  // n = 3: ball of volume (4/3) pi (2 tau)^{3/2}; profile decreasing on (1/6, 1].
  k.lower[3] = 128.0 * pi2 / 9.0;
  k.upper_inf[3] = 9.0 / (128.0 * pi2);
  k.profile[3] = std::pow(5.0 / 6.0, 2.75) * std::pow(7.0 / 6.0, 3.0) * 9.0 / (128.0 * pi2);
  return k;
}

double q_density(const SectionData& S, const Vec& q) {
  auto sp = std::dynamic_pointer_cast<const SmoothPotential>(S.u);
  if (!sp) throw Error(ErrorCode::PreconditionUnverifiable, "pointwise density needs a smooth potential");
  Vec x = S.x_of(q);
  double det = std::abs(S.chart->cost().hess_xy(x, S.y_bar).determinant());
  return ma_density_pde(*sp, x) / det;
}

DensityRange density_range(const SectionData& S, const Ellipsoid* region, int stride) {
  auto sp = std::dynamic_pointer_cast<const SmoothPotential>(S.u);
  if (!sp) throw Error(ErrorCode::PreconditionUnverifiable, "pointwise density needs a smooth potential");
  stride = std::max(1, stride);
  std::vector<int> picks;
  for (int i = 0; i < S.node_count(); ++i) {
    if (!S.mask[i]) continue;
    bool on = true;
    for (int k : S.node_index(i)) on = on && k % stride == 0;
    if (!on) continue;
    if (region && region->gauge(S.node(i)) > 1.0) continue;
    picks.push_back(i);
  }
  std::vector<double> d(picks.size());
  const CostModel& c = S.chart->cost();
  parallel_for(int(picks.size()), [&](int k) {
    Vec x = S.x_nodes.col(picks[k]);
    d[k] = ma_density_pde(*sp, x) / std::abs(c.hess_xy(x, S.y_bar).determinant());
  });
  DensityRange r;
  for (double v : d) {
    r.min = std::min(r.min, v);
    r.max = std::max(r.max, v);
  }
  r.samples = int(d.size());
  return r;
}

JacobianBounds gamma_tilde(const SectionData& S, int target_grid) {
  const CostModel& c = S.chart->cost();
  Mat V = S.hull.vertices();
  std::vector<Vec> xs{S.x_bar};
  for (int k = 0; k < V.cols(); ++k) xs.push_back(S.x_of(V.col(k)));
  std::vector<Vec> ys = c.target().grid(std::max(2, target_grid));
  ys.push_back(S.y_bar);
  JacobianBounds b;
  for (const Vec& x : xs) {
    double jd = std::abs(c.hess_xy(x, S.y_bar).determinant());
    for (const Vec& y : ys) {
      double d = std::abs(c.hess_xy(x, y).determinant()) / jd;
      b.gamma_plus = std::max(b.gamma_plus, d);
      b.gamma_minus = std::max(b.gamma_minus, 1.0 / d);
    }
  }
  return b;
}

EstimateReport alexandrov_lower(const SectionData& S, const CostConstants& k, double lambda,
                                double delta, double gamma_minus, double C) {
  const int n = S.dim();
  double diam = diameter(S.hull);
  double allowed = std::min(1.0, k.eps_c / (4.0 * diam));
  if (!(delta > 0.0) || delta > allowed * (1.0 + 1e-12))
    throw Error(ErrorCode::PreconditionUnverifiable,
                "delta " + std::to_string(delta) + " exceeds min(1, eps_c/(4 diam E)) = " +
                    std::to_string(allowed));
  if (!(lambda > 0.0)) throw Error(ErrorCode::PreconditionUnverifiable, "density lower bound is not positive");
  double lhs = S.mask_volume * S.mask_volume;
  double rhs = C * gamma_minus / (std::pow(delta, 2.0 * n) * lambda) * std::pow(std::abs(S.inf_value), n);
  EstimateReport r = make_report("alexandrov_lower", lhs, rhs, C, "fitted");
  r.detail = "delta=" + std::to_string(delta) + " lambda=" + std::to_string(lambda);
  return r;
}

Vec dilated_boundary_point(const SectionData& S, const Vec& dir, double t) {
  Vec d = dir.normalized();
  return S.john.center + t * S.boundary_distance(S.john.center, d) * d;
}

EstimateReport alexandrov_upper(const SectionData& S, const Vec& q_t, double t, double lambda,
                                double gamma_plus, double C_profile) {
  const int n = S.dim();
  if (!(t > 1.0 / (2.0 * n) && t <= 1.0))
    throw Error(ErrorCode::PointNotOnDilatedBoundary, "t must lie in (1/(2n), 1]");
  Vec d = q_t - S.john.center;
  double len = d.norm();
  if (len == 0.0) throw Error(ErrorCode::PointNotOnDilatedBoundary, "q_t at the centre");
  double R = S.boundary_distance(S.john.center, d / len);
  if (std::abs(len - t * R) > S.cell_width())
    throw Error(ErrorCode::PointNotOnDilatedBoundary,
                "|q_t - c| = " + std::to_string(len) + " vs t R = " + std::to_string(t * R));
  double value = S.value(q_t);
  double lhs = std::pow(std::abs(std::min(0.0, value)), n);
  double decay = std::pow(1.0 - t, 1.0 / std::pow(2.0, n - 1));
  double rhs = C_profile * gamma_plus / lambda * decay * S.mask_volume * S.mask_volume;
  EstimateReport r = make_report("alexandrov_upper", lhs, rhs, C_profile, "fitted");
  r.detail = "t=" + std::to_string(t);
  if (t == 1.0) r.verdict = lhs <= 1e-12 * std::pow(S.tau, n) ? Outcome::Pass : Outcome::Fail;
  return r;
}

EstimateReport alexandrov_inf(const SectionData& S, double lambda, double gamma_plus, double C) {
  const int n = S.dim();
  double lhs = std::pow(std::abs(S.inf_value), n) / (S.mask_volume * S.mask_volume);
  return make_report("alexandrov_inf", lhs, C * gamma_plus / lambda, C, "fitted");
}

namespace {

// Admissible targets of the cone: y in V with the cone generator
// -c~(q, y) + c~(q~, y) + u~(q~) <= 0 at every hull vertex, parametrized
// radially in the p-chart at q~.
class ConeSolver {
 public:
  ConeSolver(const SectionData& S, const CConeData& cone) : S_(S), c_(S.chart->cost()), cone_(cone) {
    ctt_bar_ = c_.value(cone.x_tilde, S.y_bar);
  }

  double generator(const Vec& x, double cbar, const Vec& y) const {
    return -(c_.value(x, y) - cbar) + (c_.value(cone_.x_tilde, y) - ctt_bar_) + cone_.height;
  }

  bool target(const Vec& p, const Vec& guess, Vec& y) const {
    Vec rhs = cone_.jt * p + cone_.px_bar;
    NewtonResult r = solve_dual_chart_inverse(c_, cone_.x_tilde, rhs, guess, 1e-13 * std::max(1.0, rhs.norm()));
    if (!r.converged) return false;
    y = r.x;
    return true;
  }

  bool admissible(const Vec& y) const {
    if (!c_.target().contains(y)) return false;
    for (int k = 0; k < cone_.vertex_x.cols(); ++k)
      if (generator(cone_.vertex_x.col(k), cone_.vertex_cbar[k], y) > 0.0) return false;
    return true;
  }

  // Largest admissible radius along dir and its target; hint > 0 is a
  // nearby radius used to bracket.
  double max_radius(const Vec& dir, double rho0, Vec& y_out, double hint = 0.0,
                    const Vec* y_hint = nullptr) const {
    Vec y = y_hint ? *y_hint : S_.y_bar, trial;
    auto ok = [&](double rho) {
      if (!target(rho * dir, y, trial)) return false;
      if (!admissible(trial)) return false;
      y = trial;
      return true;
    };
    double lo = hint > 0.0 ? 0.98 * hint : rho0, hi;
    const double grow = hint > 0.0 ? 1.02 / 0.98 : 2.0;
    if (ok(lo)) {
      hi = lo * grow;
      int it = 0;
      while (ok(hi)) {
        lo = hi;
        hi *= grow;
        if (++it > 400) throw Error(ErrorCode::ConstraintInfeasible, "admissible set unbounded");
      }
    } else {
      if (hint > 0.0) lo = rho0;
      int it = 0;
      while (!ok(lo)) {
        lo *= 0.5;
        if (++it > 60) throw Error(ErrorCode::ConstraintInfeasible, "no admissible target along a direction");
      }
      hi = 2.0 * lo;
      while (ok(hi)) {
        lo = hi;
        hi *= 2.0;
        if (++it > 200) throw Error(ErrorCode::ConstraintInfeasible, "admissible set unbounded");
      }
    }
    for (int it = 0; it < 60 && hi - lo > 1e-11 * hi; ++it) {
      double mid = 0.5 * (lo + hi);
      if (ok(mid))
        lo = mid;
      else
        hi = mid;
    }
    // y was last updated at lo.
    y_out = y;
    return lo;
  }

 private:
  const SectionData& S_;
  const CostModel& c_;
  const CConeData& cone_;
  double ctt_bar_;
};

Vec unit2(double a) {
  Vec d(2);
  d << std::cos(a), std::sin(a);
  return d;
}

}  // namespace

CConeData c_cone(const SectionData& S, const Vec& q_tilde, int directions, bool properties) {
  if (S.dim() != 2) throw Error(ErrorCode::ConfigError, "c~-cones are implemented for n = 2");
  if (directions < 16) throw Error(ErrorCode::ConfigError, "cone needs at least 16 directions");
  const CostModel& c = S.chart->cost();
  const double cell = S.cell_width();
  if (S.hull.violation(q_tilde) > -2.0 * cell)
    throw Error(ErrorCode::ConfigError, "cone vertex must be 2 cells inside Q");

  CConeData cone;
  cone.q_tilde = q_tilde;
  cone.body = S.hull;
  cone.x_tilde = S.x_of(q_tilde);
  cone.height = S.value_at_x(cone.x_tilde);
  if (!(cone.height < 0.0)) throw Error(ErrorCode::ConfigError, "cone vertex value must be negative");
  cone.scale = std::abs(cone.height);
  cone.jt = S.chart->jacobian(cone.x_tilde).transpose();
  cone.px_bar = -c.grad_x(cone.x_tilde, S.y_bar);
  Mat V = S.hull.vertices();
  cone.vertex_x.resize(2, V.cols());
  cone.vertex_cbar.resize(V.cols());
  for (int k = 0; k < V.cols(); ++k) {
    cone.vertex_x.col(k) = S.x_of(V.col(k));
    cone.vertex_cbar[k] = c.value(cone.vertex_x.col(k), S.y_bar);
  }

  ConeSolver solver(S, cone);
  const double rho0 = cone.scale / diameter(S.hull);
  cone.active.resize(2, directions);
  cone.gradients.resize(2, directions);
  cone.theta.resize(directions);
  double prev = 0.0;
  Vec prev_y = S.y_bar;
  for (int k = 0; k < directions; ++k) {
    double a = 2.0 * kPi * k / directions;
    Vec dir = unit2(a), y;
    double rho = solver.max_radius(dir, rho0, y, prev, &prev_y);
    prev = rho;
    prev_y = y;
    cone.theta[k] = a;
    cone.active.col(k) = y;
    cone.gradients.col(k) = rho * dir;
  }
  cone.subgradient_hull = make_body(Mat(cone.gradients));
  cone.mass = cone.subgradient_hull.degenerate ? 0.0 : cone.subgradient_hull.volume;
  cone.active_ct.resize(directions);
  const double ctt_bar = c.value(cone.x_tilde, S.y_bar);
  for (int k = 0; k < directions; ++k) cone.active_ct[k] = c.value(cone.x_tilde, cone.active.col(k)) - ctt_bar;
  if (!properties) return cone;

  // Cone values on a sub-grid of the members, (b).
  const int stride = std::max(1, S.g / 64);
  cone.h.assign(S.node_count(), kNaN);
  std::vector<int> picks;
  for (int i = 0; i < S.node_count(); ++i) {
    if (!S.mask[i]) continue;
    bool on = true;
    for (int k : S.node_index(i)) on = on && k % stride == 0;
    if (on) picks.push_back(i);
  }
  parallel_for(int(picks.size()), [&](int k) {
    int i = picks[k];
    cone.h[i] = cone_value(S, cone, S.node(i), false);
  });
  cone.min_minus_height = kInf;
  for (int i : picks) cone.min_minus_height = std::min(cone.min_minus_height, cone.h[i] - cone.height);

  // Boundary of Q: vertices and edge midpoints, (c).
  std::vector<Vec> rim;
  for (int k = 0; k < V.cols(); ++k) rim.push_back(V.col(k));
  for (const Facet& f : S.hull.facets)
    rim.push_back(0.5 * (S.hull.points.col(f.verts[0]) + S.hull.points.col(f.verts[1])));
  std::vector<double> hb(rim.size());
  parallel_for(int(rim.size()), [&](int k) { hb[k] = std::abs(cone_value(S, cone, rim[k], true)); });
  cone.boundary_max = 0.0;
  for (double v : hb) cone.boundary_max = std::max(cone.boundary_max, v);
  return cone;
}

double cone_value(const SectionData& S, const CConeData& cone, const Vec& q, bool refine) {
  const CostModel& c = S.chart->cost();
  ConeSolver solver(S, cone);
  Vec x = S.x_of(q);
  double cbar = c.value(x, S.y_bar);
  double best = cone.height;  // y = y_bar
  int arg = -1;
  const int K = int(cone.theta.size());
  for (int k = 0; k < K; ++k) {
    double v = -(c.value(x, cone.active.col(k)) - cbar) + cone.active_ct[k] + cone.height;
    if (v > best) {
      best = v;
      arg = k;
    }
  }
  if (!refine || arg < 0) return best;
  // Golden-section search for the sup over the boundary of the admissible
  // set between the neighbours of the best sample.
  const double rho0 = cone.scale / diameter(S.hull);
  double step = 2.0 * kPi / K;
  double a = cone.theta[arg] - step, b = cone.theta[arg] + step;
  const double hint = cone.gradients.col(arg).norm();
  const Vec y_hint = cone.active.col(arg);
  auto f = [&](double th) {
    Vec y;
    solver.max_radius(unit2(th), rho0, y, hint, &y_hint);
    return solver.generator(x, cbar, y);
  };
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double c1 = b - r * (b - a), c2 = a + r * (b - a);
  double f1 = f(c1), f2 = f(c2);
  for (int it = 0; it < 30; ++it) {
    if (f1 > f2) {
      b = c2;
      c2 = c1;
      f2 = f1;
      c1 = b - r * (b - a);
      f1 = f(c1);
    } else {
      a = c1;
      c1 = c2;
      f1 = f2;
      c2 = a + r * (b - a);
      f2 = f(c2);
    }
  }
  return std::max({best, f1, f2});
}

EstimateReport cone_mass_bound(const CConeData& cone, const Vec& normal, double C) {
  if (cone.body.degenerate) throw Error(ErrorCode::HullDegenerate, "cone body is flat");
  if (cone.subgradient_hull.degenerate || !(cone.mass > 0.0))
    throw Error(ErrorCode::HullDegenerate, "subgradient hull at the vertex is flat");
  const int n = cone.body.n;
  Vec nu = normal.normalized();
  Mat V = cone.body.vertices();
  double s_plus = -kInf, s_minus = kInf;
  for (int k = 0; k < V.cols(); ++k) {
    double s = nu.dot(V.col(k));
    s_plus = std::max(s_plus, s);
    s_minus = std::min(s_minus, s);
  }
  double at = nu.dot(cone.q_tilde);
  double dist = std::min(s_plus - at, at - s_minus);
  // Longest chord along nu: the chord length is concave piecewise linear in
  // the transverse coordinate, so a vertex attains it.
  double ell = 0.0;
  for (int k = 0; k < V.cols(); ++k) {
    Vec v = V.col(k);
    double t_lo = -kInf, t_hi = kInf;
    for (const Facet& f : cone.body.facets) {
      double a = f.normal.dot(nu);
      double b = f.offset - f.normal.dot(v);
      if (a > 1e-14)
        t_hi = std::min(t_hi, b / a);
      else if (a < -1e-14)
        t_lo = std::max(t_lo, b / a);
    }
    if (t_hi > t_lo) ell = std::max(ell, t_hi - t_lo);
  }
  double lhs = std::pow(cone.scale, n);
  double rhs = C * dist / ell * cone.mass * cone.body.volume;
  EstimateReport r = make_report("cone_mass", lhs, rhs, C, "fitted");
  std::ostringstream d;
  d << "normal=(" << nu.transpose() << ") dist=" << dist << " ell=" << ell << " mass=" << cone.mass;
  r.detail = d.str();
  return r;
}

EstimateReport cone_mass_bound(const CConeData& cone, double C) {
  if (cone.body.degenerate) throw Error(ErrorCode::HullDegenerate, "cone body is flat");
  EstimateReport worst;
  bool first = true;
  for (const Facet& f : cone.body.facets) {
    EstimateReport r = cone_mass_bound(cone, f.normal, C);
    if (first || r.ratio > worst.ratio) worst = r;
    first = false;
  }
  return worst;
}

double cone_inclusion_slack(const SectionData& S, const CConeData& cone) {
  const CostModel& c = S.chart->cost();
  const int N = S.node_count();
  std::vector<int> valid;
  for (int i = 0; i < N; ++i)
    if (!std::isnan(S.w[i])) valid.push_back(i);
  std::vector<double> cbar(valid.size());
  for (size_t k = 0; k < valid.size(); ++k) cbar[k] = c.value(S.x_nodes.col(valid[k]), S.y_bar);
  const int K = int(cone.active.cols());
  const int stride = std::max(1, K / 64);
  std::vector<int> ks;
  for (int k = 0; k < K; k += stride) ks.push_back(k);
  std::vector<double> slack(ks.size());
  parallel_for(int(ks.size()), [&](int m) {
    Vec y = cone.active.col(ks[m]);
    double in_q = kInf, all = kInf;
    for (size_t k = 0; k < valid.size(); ++k) {
      int i = valid[k];
      double f = S.w[i] + c.value(S.x_nodes.col(i), y) - cbar[k];
      all = std::min(all, f);
      if (S.mask[i]) in_q = std::min(in_q, f);
    }
    slack[m] = in_q - all;
  });
  double worst = 0.0;
  for (double s : slack) worst = std::max(worst, s);
  return worst / cone.scale;
}

double dual_norm_constant(int n, double rho) { return 8.0 * n / ((1.0 - rho) * (1.0 - rho)); }

EstimateReport dual_norm_gradient_bound(const SectionData& S, double rho, double eps_c, int max_samples) {
  if (!(rho > 0.0 && rho < 1.0)) throw Error(ErrorCode::ConfigError, "rho must lie in (0, 1)");
  double diam = diameter(S.hull);
  if (diam > eps_c / 4.0)
    throw Error(ErrorCode::DiameterTooLarge,
                "diam " + std::to_string(diam) + " > eps_c/4 = " + std::to_string(eps_c / 4.0));
  const int n = S.dim();
  const CostModel& c = S.chart->cost();
  Vec center = S.john.center;
  ConvexBody K = translate(S.hull, Vec(-center));
  ConvexBody rK = dilate_about(S.hull, center, rho);

  std::vector<Vec> xs;
  for (int i = 0; i < S.node_count(); ++i)
    if (S.mask[i] && rK.contains(S.node(i), 1e-12)) xs.push_back(S.x_nodes.col(i));
  max_samples = std::max(1, max_samples);
  if (int(xs.size()) > max_samples) {
    std::vector<Vec> thin;
    double step = double(xs.size()) / max_samples;
    for (int k = 0; k < max_samples; ++k) thin.push_back(xs[size_t(k * step)]);
    xs.swap(thin);
  }
  Mat RV = rK.vertices();
  for (int k = 0; k < RV.cols(); ++k) xs.push_back(S.x_of(RV.col(k)));

  auto disc = std::dynamic_pointer_cast<const DiscretePotential>(S.u);
  std::vector<Vec> ys;
  for (const Vec& x : xs) {
    if (disc) {
      double scale = std::max(1.0, std::abs(disc->value(x)));
      for (int j : disc->active(x, 1e-9 * scale)) ys.push_back(disc->targets().col(j));
    } else {
      ys.push_back(S.u->subgradient(x));
    }
  }

  std::vector<double> best(xs.size(), 0.0);
  parallel_for(int(xs.size()), [&](int i) {
    const Vec& x = xs[i];
    Mat JinvT = S.chart->jacobian(x).transpose().inverse();
    Vec gb = c.grad_x(x, S.y_bar);
    double m = 0.0;
    for (const Vec& y : ys) {
      Vec v = -JinvT * (c.grad_x(x, y) - gb);
      m = std::max(m, dual_norm(v, K));
    }
    best[i] = m;
  });
  double lhs = *std::max_element(best.begin(), best.end());
  double C = dual_norm_constant(n, rho);
  EstimateReport r = make_report("dual_norm", lhs, C * std::abs(S.inf_value), C, "closed form");
  r.detail = "rho=" + std::to_string(rho) + " pairs=" + std::to_string(xs.size() * ys.size());
  return r;
}

bool LipschitzCheck::pass(double tol) const {
  bool first = lhs1 <= rhs1 * (1.0 + tol) + 1e-13 * std::max(1.0, rhs1);
  bool second = direction_skipped || lhs2 <= rhs2 * (1.0 + tol) + 1e-13;
  return first && second;
}

LipschitzCheck gradient_direction_lipschitz(const ExpChart& chart, const Vec& q, const Vec& q_tilde,
                                            const Vec& y, double eps_c) {
  Vec x = chart.from_q(q);
  Vec xt = chart.from_q(q_tilde);
  Vec g = chart.modified_grad_at(x, y);
  Vec gt = chart.modified_grad_at(xt, y);
  double dq = (q - q_tilde).norm();
  LipschitzCheck r;
  r.lhs1 = (gt - g).norm();
  r.rhs1 = std::isfinite(eps_c) ? dq * gt.norm() / eps_c : 0.0;
  double ng = g.norm(), ngt = gt.norm();
  if (ng == 0.0 || ngt == 0.0) {
    r.direction_skipped = true;
    return r;
  }
  r.lhs2 = (g / ng - gt / ngt).norm();
  r.rhs2 = std::isfinite(eps_c) ? 2.0 * dq / eps_c : 0.0;
  return r;
}

std::shared_ptr<SmoothPotential> quadratic_model(int n) {
  return make_mountain_potential(make_cost("bilinear", n), Vec::Zero(n), Vec::Zero(n), Mat::Identity(n, n));
}

FittedConstants calibrate_constants(int grid2, int grid3) {
  FittedConstants k;
  k.source = "calibrated on the quadratic model";
  k.safety = 2.0;
  const double tau = 0.02;
  const FittedConstants closed = model_constants();
  k.lower[1] = closed.lower[1];
  k.upper_inf[1] = closed.upper_inf[1];
  k.profile[1] = closed.profile[1];
  for (int n = 2; n <= 3; ++n) {
    auto u = quadratic_model(n);
    SectionOptions opt;
    opt.grid = n == 2 ? grid2 : grid3;
    SectionData S = section(u, Vec::Zero(n), Vec::Zero(n), tau, opt);
    double vol2 = S.mask_volume * S.mask_volume;
    k.lower[n] = vol2 / std::pow(tau, n);
    k.upper_inf[n] = std::pow(tau, n) / vol2;
    // Boundary-decay profile on a fan of directions.
    double prof = 0.0;
    const int dirs = 16;
    for (int d = 0; d < dirs; ++d) {
      Vec dir = probe_direction(d, dirs, n);
      for (int m = 1; m <= 200; ++m) {
        double t = 1.0 / (2.0 * n) + (1.0 - 1.0 / (2.0 * n)) * m / 200.0;
        if (t >= 1.0) break;
        double val = std::abs(S.value(dilated_boundary_point(S, dir, t)));
        prof = std::max(prof, std::pow(val, n) / (std::pow(1.0 - t, 1.0 / std::pow(2.0, n - 1)) * vol2));
      }
    }
    k.profile[n] = prof;
    if (n == 2) {
      // Cone over the disc section, vertex offset along the first axis.
      double r = std::sqrt(2.0 * tau);
      double worst = 0.0;
      for (int m = 0; m <= 8; ++m) {
        Vec qt = Vec::Zero(2);
        qt[0] = r * m / 10.0;
        CConeData cone = c_cone(S, qt);
        Vec nu = Vec::Unit(2, 0);
        worst = std::max(worst, cone_mass_bound(cone, nu, 1.0).ratio);
        worst = std::max(worst, cone_mass_bound(cone, 1.0).ratio);
      }
      k.cone[n] = worst;
    }
  }
  return k;
}

}  // namespace mtwlab
