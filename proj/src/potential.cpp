#include "mtwlab/potential.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace mtwlab {

DiscretePotential::DiscretePotential(CostPtr cost, Mat targets, Vec v)
    : CPotential(std::move(cost)), targets_(std::move(targets)), v_(std::move(v)) {
  if (targets_.cols() != v_.size() || targets_.cols() == 0)
    throw Error(ErrorCode::ConfigError, "targets and duals differ in size");
}

double DiscretePotential::value(const Vec& x) const {
  double best = -kInf;
  for (int j = 0; j < targets_.cols(); ++j)
    best = std::max(best, -cost().value(x, targets_.col(j)) - v_[j]);
  return best;
}

int DiscretePotential::argmax(const Vec& x) const {
  double best = -kInf;
  int arg = 0;
  for (int j = 0; j < targets_.cols(); ++j) {
    double m = -cost().value(x, targets_.col(j)) - v_[j];
    if (m > best) best = m, arg = j;
  }
  return arg;
}

std::vector<int> DiscretePotential::active(const Vec& x, double tol) const {
  Vec m(targets_.cols());
  for (int j = 0; j < targets_.cols(); ++j) m[j] = -cost().value(x, targets_.col(j)) - v_[j];
  double best = m.maxCoeff();
  std::vector<int> out;
  for (int j = 0; j < m.size(); ++j)
    if (m[j] >= best - tol) out.push_back(j);
  return out;
}

Vec DiscretePotential::subgradient(const Vec& x) const { return targets_.col(argmax(x)); }

SmoothPotential::SmoothPotential(CostPtr cost, Fn u, GradFn grad, HessFn hess, Vec y_guess)
    : CPotential(std::move(cost)),
      u_(std::move(u)),
      grad_(std::move(grad)),
      hess_(std::move(hess)),
      y_guess_(std::move(y_guess)) {}

Vec SmoothPotential::subgradient(const Vec& x) const {
  Vec p = grad_(x);
  NewtonResult r = solve_dual_chart_inverse(cost(), x, p, y_guess_, 1e-13 * std::max(1.0, p.norm()));
  if (!r.converged) throw Error(ErrorCode::NewtonDiverged, "subgradient of smooth potential");
  return r.x;
}

std::shared_ptr<SmoothPotential> make_mountain_potential(CostPtr cost, const Vec& x0, const Vec& y0,
                                                         const Mat& A) {
  const CostModel* c = cost.get();
  auto u = [c, x0, y0, A](const Vec& x) {
    Vec d = x - x0;
    return -c->value(x, y0) + 0.5 * d.dot(A * d);
  };
  auto grad = [c, x0, y0, A](const Vec& x) -> Vec { return -c->grad_x(x, y0) + A * (x - x0); };
  auto hess = [c, y0, A](const Vec& x) -> Mat { return -c->hess_xx(x, y0) + A; };
  return std::make_shared<SmoothPotential>(cost, u, grad, hess, y0);
}

std::shared_ptr<DiscretePotential> discretize(const CPotential& u, const std::vector<Vec>& xs) {
  Mat ys(u.dim(), xs.size());
  Vec v(xs.size());
  for (size_t j = 0; j < xs.size(); ++j) {
    ys.col(j) = u.subgradient(xs[j]);
    v[j] = -u.cost().value(xs[j], ys.col(j)) - u.value(xs[j]);
  }
  return std::make_shared<DiscretePotential>(u.cost_ptr(), ys, v);
}

double multilinear(const DomainBox& box, int g, const std::vector<double>& values, const Vec& x) {
  const int n = box.dim();
  std::vector<int> base(n);
  std::vector<double> frac(n);
  for (int i = 0; i < n; ++i) {
    double w = box.upper[i] - box.lower[i];
    double t = (x[i] - box.lower[i]) / w * (g - 1);
    double slack = 1e-9 * (g - 1);
    if (t < -slack || t > (g - 1) + slack)
      throw Error(ErrorCode::ExtrapolationRequested, "point outside the interpolation grid");
    t = std::clamp(t, 0.0, double(g - 1));
    int k = std::min(int(std::floor(t)), g - 2);
    base[i] = k;
    frac[i] = t - k;
  }
  double acc = 0.0;
  for (int corner = 0; corner < (1 << n); ++corner) {
    double w = 1.0;
    int idx = 0, stride = 1;
    for (int i = 0; i < n; ++i) {
      int bit = corner >> i & 1;
      w *= bit ? frac[i] : 1.0 - frac[i];
      idx += (base[i] + bit) * stride;
      stride *= g;
    }
    if (w == 0.0) continue;
    double v = values[idx];
    if (std::isnan(v)) return std::nan("");
    acc += w * v;
  }
  return acc;
}

GridPotential::GridPotential(CostPtr cost, DomainBox box, int g, std::vector<double> values,
                             Vec y_guess)
    : CPotential(std::move(cost)),
      box_(std::move(box)),
      g_(g),
      values_(std::move(values)),
      y_guess_(std::move(y_guess)) {
  if (g_ < 2) throw Error(ErrorCode::ConfigError, "grid potential needs >= 2 points per axis");
}

double GridPotential::value(const Vec& x) const { return multilinear(box_, g_, values_, x); }

Vec GridPotential::gradient(const Vec& x) const {
  const int n = dim();
  Vec gr(n);
  for (int i = 0; i < n; ++i) {
    double h = (box_.upper[i] - box_.lower[i]) / (g_ - 1);
    Vec a = x, b = x;
    double lo = x[i] - h, hi = x[i] + h;
    if (lo < box_.lower[i]) lo = x[i];
    if (hi > box_.upper[i]) hi = x[i];
    a[i] = lo;
    b[i] = hi;
    gr[i] = (value(b) - value(a)) / (hi - lo);
  }
  return gr;
}

Vec GridPotential::subgradient(const Vec& x) const {
  Vec p = gradient(x);
  NewtonResult r = solve_dual_chart_inverse(cost(), x, p, y_guess_, 1e-12 * std::max(1.0, p.norm()));
  if (!r.converged) throw Error(ErrorCode::NewtonDiverged, "subgradient of grid potential");
  return r.x;
}

CubicGridPotential::CubicGridPotential(CostPtr cost, DomainBox box, int g, std::vector<double> values,
                                       Vec y_guess)
    : CPotential(std::move(cost)),
      box_(std::move(box)),
      g_(g),
      values_(std::move(values)),
      y_guess_(std::move(y_guess)) {
  if (g_ < 3) throw Error(ErrorCode::ConfigError, "cubic grid potential needs >= 3 points per axis");
  long total = 1;
  for (int i = 0; i < dim(); ++i) total *= g_;
  if (long(values_.size()) != total) throw Error(ErrorCode::ConfigError, "grid value count mismatch");
}

double CubicGridPotential::node_value(std::vector<int> k) const {
  for (size_t a = 0; a < k.size(); ++a) {
    if (k[a] < 0) {
      int e = -k[a];
      auto k0 = k, k1 = k;
      k0[a] = 0;
      k1[a] = 1;
      return (1 + e) * node_value(k0) - e * node_value(k1);
    }
    if (k[a] > g_ - 1) {
      int e = k[a] - (g_ - 1);
      auto k0 = k, k1 = k;
      k0[a] = g_ - 1;
      k1[a] = g_ - 2;
      return (1 + e) * node_value(k0) - e * node_value(k1);
    }
  }
  long idx = 0, stride = 1;
  for (int v : k) {
    idx += v * stride;
    stride *= g_;
  }
  return values_[size_t(idx)];
}

void CubicGridPotential::evaluate(const Vec& x, int order, double& v, Vec* grad, Mat* hess) const {
  const int n = dim();
  if (!box_.contains(x, -1e-12 * (1.0 + box_.diameter())))
    throw Error(ErrorCode::ExtrapolationRequested, "cubic grid potential outside its box");
  std::vector<int> base(n);
  std::vector<std::array<double, 4>> W(n), D(n), DD(n);
  Vec h = box_.width() / double(g_ - 1);
  for (int a = 0; a < n; ++a) {
    double s = (x[a] - box_.lower[a]) / h[a];
    int i = std::clamp(int(std::floor(s)), 0, g_ - 2);
    double t = s - i, t2 = t * t, t3 = t2 * t;
    base[a] = i - 1;
    W[a] = {0.5 * (-t + 2 * t2 - t3), 0.5 * (2 - 5 * t2 + 3 * t3), 0.5 * (t + 4 * t2 - 3 * t3),
            0.5 * (-t2 + t3)};
    D[a] = {0.5 * (-1 + 4 * t - 3 * t2) / h[a], 0.5 * (-10 * t + 9 * t2) / h[a],
            0.5 * (1 + 8 * t - 9 * t2) / h[a], 0.5 * (-2 * t + 3 * t2) / h[a]};
    double h2 = h[a] * h[a];
    DD[a] = {0.5 * (4 - 6 * t) / h2, 0.5 * (-10 + 18 * t) / h2, 0.5 * (8 - 18 * t) / h2,
             0.5 * (-2 + 6 * t) / h2};
  }
  v = 0.0;
  if (grad) *grad = Vec::Zero(n);
  if (hess) *hess = Mat::Zero(n, n);
  int total = 1;
  for (int a = 0; a < n; ++a) total *= 4;
  std::vector<int> k(n), o(n);
  for (int m = 0; m < total; ++m) {
    int r = m;
    for (int a = 0; a < n; ++a) {
      o[a] = r % 4;
      r /= 4;
      k[a] = base[a] + o[a];
    }
    const double f = node_value(k);
    double w = 1.0;
    for (int a = 0; a < n; ++a) w *= W[a][o[a]];
    v += w * f;
    if (order < 1) continue;
    for (int a = 0; a < n; ++a) {
      double p = D[a][o[a]];
      for (int b = 0; b < n; ++b)
        if (b != a) p *= W[b][o[b]];
      (*grad)[a] += p * f;
      if (order < 2) continue;
      for (int b = a; b < n; ++b) {
        double q = 1.0;
        for (int e = 0; e < n; ++e) {
          if (a == b && e == a) q *= DD[e][o[e]];
          else if (e == a || e == b) q *= D[e][o[e]];
          else q *= W[e][o[e]];
        }
        (*hess)(a, b) += q * f;
        if (b != a) (*hess)(b, a) += q * f;
      }
    }
  }
}

double CubicGridPotential::value(const Vec& x) const {
  double v;
  evaluate(x, 0, v, nullptr, nullptr);
  return v;
}

Vec CubicGridPotential::gradient(const Vec& x) const {
  double v;
  Vec g;
  evaluate(x, 1, v, &g, nullptr);
  return g;
}

Mat CubicGridPotential::hessian(const Vec& x) const {
  double v;
  Vec g;
  Mat H;
  evaluate(x, 2, v, &g, &H);
  return H;
}

Vec CubicGridPotential::subgradient(const Vec& x) const {
  Vec p = gradient(x);
  NewtonResult r = solve_dual_chart_inverse(cost(), x, p, y_guess_, 1e-12 * std::max(1.0, p.norm()));
  if (!r.converged) throw Error(ErrorCode::NewtonDiverged, "subgradient of cubic grid potential");
  return r.x;
}

}  // namespace mtwlab
