#include "mtwlab/cost_model.hpp"

#include <algorithm>
#include <cmath>

namespace mtwlab {

namespace {

template <class Residual, class Jacobian>
NewtonResult damped_newton(Residual F, Jacobian J, Vec x, double tol, int max_iter) {
  NewtonResult r;
  Vec f = F(x);
  double norm = f.norm();
  for (int it = 0; it < max_iter; ++it) {
    if (norm < tol) {
      // a couple of polishing steps bring x to roundoff, not just the residual
      for (int extra = 0; extra < 2 && norm > 0.0; ++extra) {
        Eigen::PartialPivLU<Mat> lu(J(x));
        Vec trial = x - lu.solve(f);
        Vec ft = F(trial);
        if (!(ft.norm() < norm)) break;
        x = trial;
        f = ft;
        norm = ft.norm();
      }
      r.converged = true;
      r.iterations = it;
      break;
    }
    Mat jac = J(x);
    Eigen::PartialPivLU<Mat> lu(jac);
    if (!std::isfinite(jac.determinant()) || std::abs(jac.determinant()) < 1e-300) break;
    Vec step = lu.solve(f);
    double lambda = 1.0;
    Vec trial;
    double trial_norm = kInf;
    for (int half = 0; half < 40; ++half) {
      trial = x - lambda * step;
      Vec ft = F(trial);
      trial_norm = ft.norm();
      if (std::isfinite(trial_norm) && trial_norm < norm) {
        f = ft;
        break;
      }
      lambda *= 0.5;
    }
    if (!(trial_norm < norm)) {
      r.iterations = it + 1;
      break;
    }
    x = trial;
    norm = trial_norm;
    r.iterations = it + 1;
  }
  if (norm < tol) r.converged = true;
  r.x = x;
  r.residual = norm;
  return r;
}

}  // namespace

NewtonResult solve_chart_inverse(const CostModel& cost, const Vec& y, const Vec& q,
                                 const Vec& guess, double tol, int max_iter) {
  return damped_newton([&](const Vec& x) -> Vec { return -cost.grad_y(x, y) - q; },
                       [&](const Vec& x) -> Mat { return -cost.hess_xy(x, y).transpose(); },
                       guess, tol, max_iter);
}

NewtonResult solve_dual_chart_inverse(const CostModel& cost, const Vec& x, const Vec& p,
                                      const Vec& guess, double tol, int max_iter) {
  return damped_newton([&](const Vec& y) -> Vec { return -cost.grad_x(x, y) - p; },
                       [&](const Vec& y) -> Mat { return -cost.hess_xy(x, y); }, guess, tol,
                       max_iter);
}

double default_mtw_step(const CostModel& cost) {
  double diam = std::max(cost.source().diameter(), cost.target().diameter());
  double half = std::min(cost.source().min_halfwidth(), cost.target().min_halfwidth());
  return std::min(0.1 * std::sqrt(diam), half / 6.0);
}

MtwSample mtw_tensor(const CostModel& cost, const Vec& x, const Vec& y, const Vec& xi,
                     const Vec& eta, const MtwOptions& opt) {
  const int n = cost.dim();
  if (!cost.source().contains(x) || !cost.target().contains(y))
    throw Error(ErrorCode::OutOfDomain, "mtw_tensor base point outside U x V");
  double h = opt.h > 0 ? opt.h : default_mtw_step(cost);
  Mat M = cost.cross_derivative(x, y);
  Vec q0 = -cost.grad_y(x, y), dq = -M.transpose() * xi;
  Vec p0 = -cost.grad_x(x, y), dp = -M * eta;
  double qs = std::max(1.0, q0.norm()), ps = std::max(1.0, p0.norm());

  auto mixed = [&](double hh) {
    Vec xs[5], ys[5];
    for (int k = 0; k < 5; ++k) {
      double s = double(k - 2) * hh;
      if (k == 2) {
        xs[k] = x;
        ys[k] = y;
        continue;
      }
      NewtonResult rx = solve_chart_inverse(cost, y, q0 + s * dq, x + s * xi, 1e-14 * qs);
      NewtonResult ry = solve_dual_chart_inverse(cost, x, p0 + s * dp, y + s * eta, 1e-14 * ps);
      if (!rx.converged || !ry.converged)
        throw Error(ErrorCode::FiniteDifferenceUnstable, "segment Newton solve failed");
      if (!cost.source().contains(rx.x) || !cost.target().contains(ry.x))
        throw Error(ErrorCode::SegmentEscapesDomain, "c-segment leaves U x V");
      xs[k] = rx.x;
      ys[k] = ry.x;
    }
    static const double w[5] = {-1.0, 16.0, -30.0, 16.0, -1.0};
    double acc = 0.0;
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 5; ++b) acc += w[a] * w[b] * cost.value(xs[a], ys[b]);
    double d = 12.0 * hh * hh;
    return acc / (d * d);
  };

  double coarse = mixed(h);
  double fine = mixed(0.5 * h);
  MtwSample out;
  out.x = x;
  out.y = y;
  out.xi = xi;
  out.eta = eta;
  out.value = -(16.0 * fine - coarse) / 15.0;
  out.fd_error = std::abs(fine - coarse) / 15.0;
  out.nullity = xi.dot(M * eta);
  (void)n;
  if (out.fd_error > opt.fd_tol * std::max(1.0, std::abs(out.value)))
    throw Error(ErrorCode::FiniteDifferenceUnstable,
                "Richardson disagreement " + std::to_string(out.fd_error));
  return out;
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::A3wPass: return "A3w-pass";
    case Verdict::A3sPass: return "A3s-pass";
    case Verdict::B4Pass: return "B4-pass";
    case Verdict::Fail: return "fail";
  }
  return "fail";
}

CurvatureReport classify_cost(const CostModel& cost, int sample_budget, double tol,
                              std::uint64_t seed) {
  if (sample_budget < 100) throw Error(ErrorCode::ConfigError, "sample_budget must be >= 100");
  const int n = cost.dim();
  double h = default_mtw_step(cost);
  DomainBox U = cost.source().shrunk(2.5 * h);
  DomainBox V = cost.target().shrunk(2.5 * h);

  struct Draw {
    Vec x, y, xi, eta;
  };
  Rng rng(seed);
  std::vector<Draw> draws(sample_budget);
  for (auto& d : draws) {
    d.x.resize(n);
    d.y.resize(n);
    for (int i = 0; i < n; ++i) d.x[i] = uniform(rng, U.lower[i], U.upper[i]);
    for (int i = 0; i < n; ++i) d.y[i] = uniform(rng, V.lower[i], V.upper[i]);
    d.xi = random_unit(rng, n);
    d.eta = random_unit(rng, n);
  }

  struct Slot {
    std::optional<MtwSample> free, null;
    bool skipped = false;
  };
  std::vector<Slot> slots(sample_budget);
  parallel_for(sample_budget, [&](int i) {
    const Draw& d = draws[i];
    try {
      slots[i].free = mtw_tensor(cost, d.x, d.y, d.xi, d.eta);
      Vec w = cost.hess_xy(d.x, d.y).transpose() * d.xi;
      Vec eta = d.eta - (w.dot(d.eta) / w.squaredNorm()) * w;
      if (eta.norm() > 1e-6) {
        MtwSample s = mtw_tensor(cost, d.x, d.y, d.xi, eta.normalized());
        s.constrained = true;
        slots[i].null = s;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SegmentEscapesDomain) throw;
      slots[i].skipped = true;
    }
  });

  CurvatureReport rep;
  rep.tol = tol;
  rep.attempted = sample_budget;
  for (const auto& s : slots) {
    if (s.skipped) {
      ++rep.skipped;
      continue;
    }
    for (const auto* m : {&s.free, &s.null})
      if (*m) rep.max_abs = std::max(rep.max_abs, std::abs((*m)->value));
  }
  rep.scale = std::max(1.0, rep.max_abs);
  double band = tol * rep.scale;
  for (const auto& s : slots) {
    if (s.skipped) continue;
    rep.samples.push_back(*s.free);
    rep.min_unconstrained = std::min(rep.min_unconstrained, s.free->value);
    if (s.null && std::abs(s.null->nullity) <= band) {
      rep.samples.push_back(*s.null);
      rep.min_null_constrained = std::min(rep.min_null_constrained, s.null->value);
      ++rep.null_count;
    }
  }
  if (rep.null_count < 0.1 * rep.attempted)
    throw Error(ErrorCode::InsufficientNullSamples,
                std::to_string(rep.null_count) + " of " + std::to_string(rep.attempted));

  if (rep.min_null_constrained > band)
    rep.verdict = Verdict::A3sPass;
  else if (rep.min_unconstrained >= -band)
    rep.verdict = Verdict::B4Pass;
  else if (rep.min_null_constrained >= -band)
    rep.verdict = Verdict::A3wPass;
  else
    rep.verdict = Verdict::Fail;
  return rep;
}

CostConstants compute_constants(const CostModel& cost, const DomainBox& U, const DomainBox& V,
                                int grid) {
  if (grid < 8) throw Error(ErrorCode::ConfigError, "constants grid must be >= 8 per axis");
  std::vector<Vec> ug = U.grid(grid), vg = V.grid(grid);
  struct Partial {
    double bp = 0, bm = 0, gp = 0, gm = 0, dx = 0, dxx = 0, dxxy = 0;
  };
  std::vector<Partial> part(ug.size());
  parallel_for(int(ug.size()), [&](int i) {
    Partial& p = part[i];
    for (const Vec& y : vg) {
      const Vec& x = ug[i];
      Mat M = cost.hess_xy(x, y);
      double det = M.determinant();
      if (std::abs(det) < 1e-12) throw Error(ErrorCode::SingularMixedHessian, "on constants grid");
      Eigen::JacobiSVD<Mat> svd(M);
      const Vec& sv = svd.singularValues();
      p.bp = std::max(p.bp, sv[0]);
      p.bm = std::max(p.bm, 1.0 / sv[sv.size() - 1]);
      p.gp = std::max(p.gp, std::abs(det));
      p.gm = std::max(p.gm, 1.0 / std::abs(det));
      p.dx = std::max(p.dx, cost.grad_x(x, y).norm());
      Eigen::JacobiSVD<Mat> hx(cost.hess_xx(x, y));
      p.dxx = std::max(p.dxx, hx.singularValues()[0]);
      p.dxxy = std::max(p.dxxy, frobenius(cost.third_xxy(x, y)));
    }
  });
  Partial a;
  for (const auto& p : part) {
    a.bp = std::max(a.bp, p.bp);
    a.bm = std::max(a.bm, p.bm);
    a.gp = std::max(a.gp, p.gp);
    a.gm = std::max(a.gm, p.gm);
    a.dx = std::max(a.dx, p.dx);
    a.dxx = std::max(a.dxx, p.dxx);
    a.dxxy = std::max(a.dxxy, p.dxxy);
  }
  CostConstants c;
  c.beta_plus = a.bp;
  c.beta_minus = a.bm;
  c.gamma_plus = a.gp;
  c.gamma_minus = a.gm;
  c.sup_dx = a.dx;
  c.sup_dxx = a.dxx;
  c.sup_dxxy = a.dxxy;
  c.M_c = a.bm * a.bm * a.dxx + a.bm * a.bm * a.bm * a.dx * a.dxxy;
  c.eps_c = a.dxxy < 1e-13 ? kInf
                           : 1.0 / (2.0 * std::pow(a.bp, 4) * std::pow(a.bm, 6) * a.dxxy);
  return c;
}

}  // namespace mtwlab
