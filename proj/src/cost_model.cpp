#include "mtwlab/cost_model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace mtwlab {

DomainBox::DomainBox(Vec lo, Vec hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size() || lower.size() < 1 || lower.size() > 3)
    throw Error(ErrorCode::ConfigError, "box dimension must be 1, 2 or 3");
  for (int i = 0; i < lower.size(); ++i)
    if (!(lower[i] < upper[i])) throw Error(ErrorCode::ConfigError, "box lower >= upper");
}

DomainBox DomainBox::cube(int n, double lo, double hi) {
  return DomainBox(Vec::Constant(n, lo), Vec::Constant(n, hi));
}

bool DomainBox::contains(const Vec& x, double margin) const {
  for (int i = 0; i < dim(); ++i)
    if (x[i] < lower[i] + margin || x[i] > upper[i] - margin) return false;
  return true;
}

double DomainBox::depth(const Vec& x) const {
  return std::min((x - lower).minCoeff(), (upper - x).minCoeff());
}

DomainBox DomainBox::shrunk(double margin) const {
  return DomainBox(lower.array() + margin, upper.array() - margin);
}

std::vector<Vec> DomainBox::grid(int g) const {
  int n = dim();
  int total = 1;
  for (int i = 0; i < n; ++i) total *= g;
  std::vector<Vec> pts;
  pts.reserve(total);
  for (int idx = 0; idx < total; ++idx) {
    Vec p(n);
    int r = idx;
    for (int i = 0; i < n; ++i) {
      int k = r % g;
      r /= g;
      p[i] = g == 1 ? 0.5 * (lower[i] + upper[i])
                    : lower[i] + (upper[i] - lower[i]) * double(k) / double(g - 1);
    }
    pts.push_back(p);
  }
  return pts;
}

double box_distance(const DomainBox& a, const DomainBox& b) {
  double s = 0.0;
  for (int i = 0; i < a.dim(); ++i) {
    double gap = std::max({0.0, b.lower[i] - a.upper[i], a.lower[i] - b.upper[i]});
    s += gap * gap;
  }
  return std::sqrt(s);
}

double frobenius(const Tensor3& t) {
  double s = 0.0;
  for (const auto& m : t) s += m.squaredNorm();
  return std::sqrt(s);
}

CostModel::CostModel(std::string key, DomainBox source, DomainBox target, bool diagonal_singular)
    : key_(std::move(key)),
      source_(std::move(source)),
      target_(std::move(target)),
      diagonal_singular_(diagonal_singular) {
  if (source_.dim() != target_.dim())
    throw Error(ErrorCode::ConfigError, "source and target dimensions differ");
  if (diagonal_singular_ && box_distance(source_, target_) <= 0.0)
    throw Error(ErrorCode::OutOfDomain, key_ + " is singular on the diagonal; boxes must be separated");
}

double CostModel::fd_step(int order) const {
  double d = std::max(source_.diameter(), target_.diameter());
  if (order <= 2) return 1e-2 * d;
  return order == 3 ? 5e-3 * d : 2e-2 * d;
}

double CostModel::fd_recursive(std::vector<int>& alpha, Vec& z, double h) const {
  int n = dim();
  int i = 0;
  while (i < 2 * n && alpha[i] == 0) ++i;
  if (i == 2 * n) return value(z.head(n), z.tail(n));
  static const double w[4] = {1.0, -8.0, 8.0, -1.0};
  static const double off[4] = {-2.0, -1.0, 1.0, 2.0};
  --alpha[i];
  double zi = z[i];
  double acc = 0.0;
  for (int k = 0; k < 4; ++k) {
    z[i] = zi + off[k] * h;
    acc += w[k] * fd_recursive(alpha, z, h);
  }
  z[i] = zi;
  ++alpha[i];
  return acc / (12.0 * h);
}

double CostModel::fd_derivative(const std::vector<int>& alpha, const Vec& x, const Vec& y) const {
  int n = dim();
  int order = 0;
  for (int a : alpha) order += a;
  if (int(alpha.size()) != 2 * n || order > 4)
    throw Error(ErrorCode::ConfigError, "multi-index must have 2n entries and order <= 4");
  Vec z(2 * n);
  z << x, y;
  std::vector<int> a = alpha;
  return fd_recursive(a, z, fd_step(order));
}

std::optional<double> CostModel::closed_derivative(const std::vector<int>&, const Vec&,
                                                   const Vec&) const {
  return std::nullopt;
}

double CostModel::derivative(const std::vector<int>& alpha, const Vec& x, const Vec& y) const {
  if (auto v = closed_derivative(alpha, x, y)) return *v;
  return fd_derivative(alpha, x, y);
}

namespace {

std::vector<int> unit_index(int n, int a, int b = -1, int c = -1) {
  std::vector<int> alpha(2 * n, 0);
  for (int k : {a, b, c})
    if (k >= 0) ++alpha[k];
  return alpha;
}

}  // namespace

Vec CostModel::fd_grad_x(const Vec& x, const Vec& y) const {
  int n = dim();
  Vec g(n);
  for (int i = 0; i < n; ++i) g[i] = fd_derivative(unit_index(n, i), x, y);
  return g;
}

Vec CostModel::fd_grad_y(const Vec& x, const Vec& y) const {
  int n = dim();
  Vec g(n);
  for (int i = 0; i < n; ++i) g[i] = fd_derivative(unit_index(n, n + i), x, y);
  return g;
}

Mat CostModel::fd_hess_xx(const Vec& x, const Vec& y) const {
  int n = dim();
  Mat m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) m(i, j) = m(j, i) = fd_derivative(unit_index(n, i, j), x, y);
  return m;
}

Mat CostModel::fd_hess_xy(const Vec& x, const Vec& y) const {
  int n = dim();
  Mat m(n, n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) m(i, k) = fd_derivative(unit_index(n, i, n + k), x, y);
  return m;
}

Mat CostModel::fd_hess_yy(const Vec& x, const Vec& y) const {
  int n = dim();
  Mat m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) m(i, j) = m(j, i) = fd_derivative(unit_index(n, n + i, n + j), x, y);
  return m;
}

Tensor3 CostModel::fd_third_xxy(const Vec& x, const Vec& y) const {
  int n = dim();
  Tensor3 t(n, Mat(n, n));
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j)
        t[k](i, j) = t[k](j, i) = fd_derivative(unit_index(n, i, j, n + k), x, y);
  return t;
}

Mat CostModel::cross_derivative(const Vec& x, const Vec& y) const {
  if (!source_.contains(x) || !target_.contains(y))
    throw Error(ErrorCode::OutOfDomain, "cross_derivative outside U x V");
  Mat m = hess_xy(x, y);
  if (std::abs(m.determinant()) < 1e-12)
    throw Error(ErrorCode::SingularMixedHessian, "|det D2xy c| < 1e-12");
  return m;
}

namespace {

class BilinearCost final : public CostModel {
 public:
  using CostModel::CostModel;
  double value(const Vec& x, const Vec& y) const override { return -x.dot(y); }
  bool closed_form() const override { return true; }
  Vec grad_x(const Vec&, const Vec& y) const override { return -y; }
  Vec grad_y(const Vec& x, const Vec&) const override { return -x; }
  Mat hess_xx(const Vec& x, const Vec&) const override { return Mat::Zero(x.size(), x.size()); }
  Mat hess_xy(const Vec& x, const Vec&) const override {
    return -Mat::Identity(x.size(), x.size());
  }
  Mat hess_yy(const Vec& x, const Vec&) const override { return Mat::Zero(x.size(), x.size()); }
  Tensor3 third_xxy(const Vec& x, const Vec&) const override {
    return Tensor3(x.size(), Mat::Zero(x.size(), x.size()));
  }
  std::optional<double> closed_derivative(const std::vector<int>& alpha, const Vec& x,
                                          const Vec& y) const override {
    int n = dim();
    int ox = 0, oy = 0, ix = -1, iy = -1;
    for (int i = 0; i < n; ++i) {
      ox += alpha[i];
      oy += alpha[n + i];
      if (alpha[i]) ix = i;
      if (alpha[n + i]) iy = i;
    }
    if (ox == 0 && oy == 0) return value(x, y);
    if (ox == 1 && oy == 0) return -y[ix];
    if (ox == 0 && oy == 1) return -x[iy];
    if (ox == 1 && oy == 1) return ix == iy ? -1.0 : 0.0;
    return 0.0;
  }
};

// c(x,y) = f(|x-y|^2/2); derivatives of f up to fourth order.
struct RadialProfile {
  double f[5];
};

class RadialCost : public CostModel {
 public:
  RadialCost(std::string key, DomainBox s, DomainBox t, bool sing)
      : CostModel(std::move(key), std::move(s), std::move(t), sing) {}
  virtual RadialProfile profile(double s) const = 0;

  double value(const Vec& x, const Vec& y) const override {
    return profile(0.5 * (x - y).squaredNorm()).f[0];
  }
  bool closed_form() const override { return true; }
  Vec grad_x(const Vec& x, const Vec& y) const override {
    Vec z = x - y;
    return profile(0.5 * z.squaredNorm()).f[1] * z;
  }
  Vec grad_y(const Vec& x, const Vec& y) const override { return -grad_x(x, y); }
  Mat hess_xx(const Vec& x, const Vec& y) const override { return hess_z(x - y); }
  Mat hess_xy(const Vec& x, const Vec& y) const override { return -hess_z(x - y); }
  Mat hess_yy(const Vec& x, const Vec& y) const override { return hess_z(x - y); }
  Tensor3 third_xxy(const Vec& x, const Vec& y) const override {
    Vec z = x - y;
    int n = int(z.size());
    Tensor3 t(n, Mat(n, n));
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) t[k](i, j) = -dz({i, j, k}, z);
    return t;
  }
  std::optional<double> closed_derivative(const std::vector<int>& alpha, const Vec& x,
                                          const Vec& y) const override {
    int n = dim();
    std::vector<int> idx;
    int oy = 0;
    for (int i = 0; i < n; ++i) {
      for (int a = 0; a < alpha[i]; ++a) idx.push_back(i);
      for (int a = 0; a < alpha[n + i]; ++a) idx.push_back(i);
      oy += alpha[n + i];
    }
    double sign = (oy % 2) ? -1.0 : 1.0;
    return sign * dz(idx, x - y);
  }

 private:
  Mat hess_z(const Vec& z) const {
    RadialProfile p = profile(0.5 * z.squaredNorm());
    return p.f[1] * Mat::Identity(z.size(), z.size()) + p.f[2] * z * z.transpose();
  }

  // Partial derivative of f(|z|^2/2) along the listed coordinates.
  double dz(const std::vector<int>& idx, const Vec& z) const {
    RadialProfile p = profile(0.5 * z.squaredNorm());
    auto d = [](int a, int b) { return a == b ? 1.0 : 0.0; };
    switch (idx.size()) {
      case 0: return p.f[0];
      case 1: return p.f[1] * z[idx[0]];
      case 2: {
        int i = idx[0], j = idx[1];
        return p.f[1] * d(i, j) + p.f[2] * z[i] * z[j];
      }
      case 3: {
        int i = idx[0], j = idx[1], k = idx[2];
        return p.f[2] * (d(i, j) * z[k] + d(i, k) * z[j] + d(j, k) * z[i]) +
               p.f[3] * z[i] * z[j] * z[k];
      }
      case 4: {
        int i = idx[0], j = idx[1], k = idx[2], l = idx[3];
        return p.f[3] * (d(i, j) * z[k] * z[l] + d(i, k) * z[j] * z[l] + d(j, k) * z[i] * z[l] +
                         d(i, l) * z[j] * z[k] + d(j, l) * z[i] * z[k] + d(k, l) * z[i] * z[j]) +
               p.f[2] * (d(i, j) * d(k, l) + d(i, k) * d(j, l) + d(j, k) * d(i, l)) +
               p.f[4] * z[i] * z[j] * z[k] * z[l];
      }
    }
    throw Error(ErrorCode::ConfigError, "derivative order above 4");
  }
};

class SqdistCost final : public RadialCost {
 public:
  using RadialCost::RadialCost;
  RadialProfile profile(double s) const override { return {{s, 1.0, 0.0, 0.0, 0.0}}; }
};

class NeglogCost final : public RadialCost {
 public:
  using RadialCost::RadialCost;
  RadialProfile profile(double s) const override {
    return {{-0.5 * std::log(2.0 * s), -0.5 / s, 0.5 / (s * s), -1.0 / (s * s * s),
             3.0 / (s * s * s * s)}};
  }
};

class Sqrt1pCost final : public RadialCost {
 public:
  using RadialCost::RadialCost;
  RadialProfile profile(double s) const override {
    double r = 1.0 + 2.0 * s;
    double q = std::sqrt(r);
    return {{q, 1.0 / q, -1.0 / (r * q), 3.0 / (r * r * q), -15.0 / (r * r * r * q)}};
  }
};

class QuarticCost final : public RadialCost {
 public:
  using RadialCost::RadialCost;
  RadialProfile profile(double s) const override { return {{4.0 * s * s, 8.0 * s, 8.0, 0.0, 0.0}}; }
};

struct Monomial {
  double coef;
  std::vector<int> ex;  // 2n exponents, x block then y block
};

class PolynomialCost final : public CostModel {
 public:
  PolynomialCost(DomainBox s, DomainBox t, std::vector<Monomial> terms)
      : CostModel("custom", std::move(s), std::move(t)), terms_(std::move(terms)) {}

  double value(const Vec& x, const Vec& y) const override {
    return eval(std::vector<int>(2 * dim(), 0), x, y);
  }
  bool closed_form() const override { return true; }
  Vec grad_x(const Vec& x, const Vec& y) const override {
    int n = dim();
    Vec g(n);
    for (int i = 0; i < n; ++i) g[i] = eval(unit_index(n, i), x, y);
    return g;
  }
  Vec grad_y(const Vec& x, const Vec& y) const override {
    int n = dim();
    Vec g(n);
    for (int i = 0; i < n; ++i) g[i] = eval(unit_index(n, n + i), x, y);
    return g;
  }
  Mat hess_xx(const Vec& x, const Vec& y) const override {
    int n = dim();
    Mat m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = eval(unit_index(n, i, j), x, y);
    return m;
  }
  Mat hess_xy(const Vec& x, const Vec& y) const override {
    int n = dim();
    Mat m(n, n);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) m(i, k) = eval(unit_index(n, i, n + k), x, y);
    return m;
  }
  Mat hess_yy(const Vec& x, const Vec& y) const override {
    int n = dim();
    Mat m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = eval(unit_index(n, n + i, n + j), x, y);
    return m;
  }
  Tensor3 third_xxy(const Vec& x, const Vec& y) const override {
    int n = dim();
    Tensor3 t(n, Mat(n, n));
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) t[k](i, j) = eval(unit_index(n, i, j, n + k), x, y);
    return t;
  }
  std::optional<double> closed_derivative(const std::vector<int>& alpha, const Vec& x,
                                          const Vec& y) const override {
    return eval(alpha, x, y);
  }

 private:
  double eval(const std::vector<int>& alpha, const Vec& x, const Vec& y) const {
    int n = dim();
    double total = 0.0;
    for (const auto& m : terms_) {
      double term = m.coef;
      for (int v = 0; v < 2 * n && term != 0.0; ++v) {
        int e = m.ex[v], a = alpha[v];
        if (a > e) {
          term = 0.0;
          break;
        }
        double falling = 1.0;
        for (int k = 0; k < a; ++k) falling *= double(e - k);
        double z = v < n ? x[v] : y[v - n];
        term *= falling * std::pow(z, e - a);
      }
      total += term;
    }
    return total;
  }

  std::vector<Monomial> terms_;
};

Vec json_vec(const nlohmann::json& j) {
  Vec v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

}  // namespace

DomainBox separated_source(int n) { return DomainBox::cube(n, -0.4, 0.4); }

DomainBox separated_target(int n) {
  DomainBox b = DomainBox::cube(n, -0.4, 0.4);
  b.lower[0] = 1.6;
  b.upper[0] = 2.4;
  return b;
}

std::vector<std::string> zoo_keys() { return {"bilinear", "sqdist", "neglog", "sqrt1p", "quartic"}; }

CostPtr make_cost(const std::string& key, const DomainBox& s, const DomainBox& t) {
  if (key == "bilinear") return std::make_shared<BilinearCost>(key, s, t);
  if (key == "sqdist") return std::make_shared<SqdistCost>(key, s, t, false);
  if (key == "neglog") return std::make_shared<NeglogCost>(key, s, t, true);
  if (key == "sqrt1p") return std::make_shared<Sqrt1pCost>(key, s, t, false);
  // |x-y|^4 has a degenerate mixed Hessian on the diagonal.
  if (key == "quartic") return std::make_shared<QuarticCost>(key, s, t, true);
  throw Error(ErrorCode::ConfigError, "unknown cost key '" + key + "'");
}

CostPtr make_cost(const std::string& key, int n, BoxPreset boxes) {
  bool separated = boxes == BoxPreset::Separated || key == "neglog" || key == "quartic";
  if (separated) return make_cost(key, separated_source(n), separated_target(n));
  return make_cost(key, DomainBox::cube(n, -1.0, 1.0), DomainBox::cube(n, -1.0, 1.0));
}

namespace {

class AffineCost final : public CostModel {
 public:
  AffineCost(CostPtr base, Mat Lx, Vec bx, Mat Ly, Vec by, double k, DomainBox s, DomainBox t)
      : CostModel(base->key() + "-affine", std::move(s), std::move(t), base->diagonal_singular()),
        base_(std::move(base)),
        Lx_(std::move(Lx)),
        bx_(std::move(bx)),
        Ly_(std::move(Ly)),
        by_(std::move(by)),
        k_(k) {}

  double value(const Vec& x, const Vec& y) const override { return k_ * base_->value(X(x), Y(y)); }
  Vec grad_x(const Vec& x, const Vec& y) const override {
    return k_ * Lx_.transpose() * base_->grad_x(X(x), Y(y));
  }
  Vec grad_y(const Vec& x, const Vec& y) const override {
    return k_ * Ly_.transpose() * base_->grad_y(X(x), Y(y));
  }
  Mat hess_xx(const Vec& x, const Vec& y) const override {
    return k_ * Lx_.transpose() * base_->hess_xx(X(x), Y(y)) * Lx_;
  }
  Mat hess_xy(const Vec& x, const Vec& y) const override {
    return k_ * Lx_.transpose() * base_->hess_xy(X(x), Y(y)) * Ly_;
  }
  Mat hess_yy(const Vec& x, const Vec& y) const override {
    return k_ * Ly_.transpose() * base_->hess_yy(X(x), Y(y)) * Ly_;
  }
  Tensor3 third_xxy(const Vec& x, const Vec& y) const override {
    Tensor3 T = base_->third_xxy(X(x), Y(y));
    const int n = dim();
    Tensor3 out(n, Mat::Zero(n, n));
    for (int kk = 0; kk < n; ++kk)
      for (int m = 0; m < n; ++m) out[kk] += Ly_(m, kk) * (Lx_.transpose() * T[m] * Lx_);
    for (auto& M : out) M *= k_;
    return out;
  }

 private:
  Vec X(const Vec& x) const { return Lx_ * x + bx_; }
  Vec Y(const Vec& y) const { return Ly_ * y + by_; }

  CostPtr base_;
  Mat Lx_;
  Vec bx_;
  Mat Ly_;
  Vec by_;
  double k_;
};

// Bounding box of {z : L z + b in box}.
DomainBox preimage_box(const DomainBox& box, const Mat& L, const Vec& b) {
  const int n = box.dim();
  Mat Li = L.inverse();
  Vec lo = Vec::Constant(n, kInf), hi = Vec::Constant(n, -kInf);
  for (int m = 0; m < (1 << n); ++m) {
    Vec corner(n);
    for (int i = 0; i < n; ++i) corner[i] = (m >> i) & 1 ? box.upper[i] : box.lower[i];
    Vec z = Li * (corner - b);
    lo = lo.cwiseMin(z);
    hi = hi.cwiseMax(z);
  }
  return DomainBox(lo, hi);
}

}  // namespace

CostPtr make_affine_cost(CostPtr base, const Mat& Lx, const Vec& bx, const Mat& Ly, const Vec& by,
                         double k, const DomainBox& source, const DomainBox& target) {
  const int n = base->dim();
  if (Lx.rows() != n || Lx.cols() != n || Ly.rows() != n || Ly.cols() != n || bx.size() != n ||
      by.size() != n)
    throw Error(ErrorCode::ConfigError, "affine cost: shape mismatch");
  if (std::abs(Lx.determinant()) < 1e-14 || std::abs(Ly.determinant()) < 1e-14 || k == 0.0)
    throw Error(ErrorCode::SingularAffineMap, "affine cost needs invertible maps and k != 0");
  return std::make_shared<AffineCost>(std::move(base), Lx, bx, Ly, by, k, source, target);
}

CostPtr make_affine_cost(CostPtr base, const Mat& Lx, const Vec& bx, const Mat& Ly, const Vec& by,
                         double k) {
  if (std::abs(Lx.determinant()) < 1e-14 || std::abs(Ly.determinant()) < 1e-14)
    throw Error(ErrorCode::SingularAffineMap, "affine cost needs invertible maps");
  DomainBox s = preimage_box(base->source(), Lx, bx);
  DomainBox t = preimage_box(base->target(), Ly, by);
  return make_affine_cost(std::move(base), Lx, bx, Ly, by, k, s, t);
}

CostPtr load_polynomial_cost(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("cost config: ") + e.what());
  }
  try {
    int n = j.at("n").get<int>();
    DomainBox s(json_vec(j.at("source").at("lower")), json_vec(j.at("source").at("upper")));
    DomainBox t(json_vec(j.at("target").at("lower")), json_vec(j.at("target").at("upper")));
    if (s.dim() != n || t.dim() != n) throw Error(ErrorCode::ConfigError, "box dimension != n");
    std::vector<Monomial> terms;
    for (const auto& term : j.at("terms")) {
      Monomial m;
      m.coef = term.at("coef").get<double>();
      auto ex = term.value("x", std::vector<int>(n, 0));
      auto ey = term.value("y", std::vector<int>(n, 0));
      if (int(ex.size()) != n || int(ey.size()) != n)
        throw Error(ErrorCode::ConfigError, "exponent list length != n");
      m.ex = ex;
      m.ex.insert(m.ex.end(), ey.begin(), ey.end());
      for (int e : m.ex)
        if (e < 0) throw Error(ErrorCode::ConfigError, "negative exponent");
      terms.push_back(std::move(m));
    }
    return std::make_shared<PolynomialCost>(s, t, std::move(terms));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("cost config: ") + e.what());
  }
}

}  // namespace mtwlab
