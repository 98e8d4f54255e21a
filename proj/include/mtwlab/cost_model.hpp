#pragma once

#include "mtwlab/common.hpp"

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mtwlab {

struct DomainBox {
  Vec lower;
  Vec upper;

  DomainBox() = default;
  DomainBox(Vec lo, Vec hi);
  static DomainBox cube(int n, double lo, double hi);

  int dim() const { return int(lower.size()); }
  Vec center() const { return 0.5 * (lower + upper); }
  Vec width() const { return upper - lower; }
  double diameter() const { return (upper - lower).norm(); }
  double min_halfwidth() const { return 0.5 * (upper - lower).minCoeff(); }
  double volume() const { return (upper - lower).prod(); }
  bool contains(const Vec& x, double margin = 0.0) const;
  // Distance from an interior point to the nearest face; negative outside.
  double depth(const Vec& x) const;
  DomainBox shrunk(double margin) const;
  // Grid of g points per axis including the faces.
  std::vector<Vec> grid(int g) const;
};

double box_distance(const DomainBox& a, const DomainBox& b);

// T[k](i,j) = d^3 c / dx_i dx_j dy_k.
using Tensor3 = std::vector<Mat>;
double frobenius(const Tensor3& t);

class CostModel {
 public:
  CostModel(std::string key, DomainBox source, DomainBox target, bool diagonal_singular = false);
  virtual ~CostModel() = default;

  const std::string& key() const { return key_; }
  int dim() const { return source_.dim(); }
  const DomainBox& source() const { return source_; }
  const DomainBox& target() const { return target_; }
  bool diagonal_singular() const { return diagonal_singular_; }

  virtual double value(const Vec& x, const Vec& y) const = 0;
  virtual bool closed_form() const { return false; }

  // Closed form when the model provides one, finite differences otherwise.
  virtual Vec grad_x(const Vec& x, const Vec& y) const { return fd_grad_x(x, y); }
  virtual Vec grad_y(const Vec& x, const Vec& y) const { return fd_grad_y(x, y); }
  virtual Mat hess_xx(const Vec& x, const Vec& y) const { return fd_hess_xx(x, y); }
  // (i,k) entry is d^2 c / dx_i dy_k.
  virtual Mat hess_xy(const Vec& x, const Vec& y) const { return fd_hess_xy(x, y); }
  virtual Mat hess_yy(const Vec& x, const Vec& y) const { return fd_hess_yy(x, y); }
  virtual Tensor3 third_xxy(const Vec& x, const Vec& y) const { return fd_third_xxy(x, y); }

  // Multi-index derivative; alpha has 2n entries (x block then y block),
  // total order at most 4.
  double derivative(const std::vector<int>& alpha, const Vec& x, const Vec& y) const;
  virtual std::optional<double> closed_derivative(const std::vector<int>& alpha, const Vec& x,
                                                  const Vec& y) const;
  double fd_derivative(const std::vector<int>& alpha, const Vec& x, const Vec& y) const;
  double fd_step(int order) const;

  Vec fd_grad_x(const Vec& x, const Vec& y) const;
  Vec fd_grad_y(const Vec& x, const Vec& y) const;
  Mat fd_hess_xx(const Vec& x, const Vec& y) const;
  Mat fd_hess_xy(const Vec& x, const Vec& y) const;
  Mat fd_hess_yy(const Vec& x, const Vec& y) const;
  Tensor3 fd_third_xxy(const Vec& x, const Vec& y) const;

  // D^2_xy c with the B1 check; throws SingularMixedHessian.
  Mat cross_derivative(const Vec& x, const Vec& y) const;

 private:
  double fd_recursive(std::vector<int>& alpha, Vec& z, double h) const;

  std::string key_;
  DomainBox source_;
  DomainBox target_;
  bool diagonal_singular_;
};

using CostPtr = std::shared_ptr<const CostModel>;

enum class BoxPreset { Default, Separated };

// Zoo keys: bilinear, sqdist, neglog, sqrt1p, quartic.
CostPtr make_cost(const std::string& key, int n, BoxPreset boxes = BoxPreset::Default);
CostPtr make_cost(const std::string& key, const DomainBox& source, const DomainBox& target);
std::vector<std::string> zoo_keys();
DomainBox separated_source(int n);
DomainBox separated_target(int n);

// c*(x, y) = k c(Lx x + bx, Ly y + by) with chain-rule derivatives. The
// default boxes bound the preimages of the base boxes.
CostPtr make_affine_cost(CostPtr base, const Mat& Lx, const Vec& bx, const Mat& Ly, const Vec& by,
                         double k);
CostPtr make_affine_cost(CostPtr base, const Mat& Lx, const Vec& bx, const Mat& Ly, const Vec& by,
                         double k, const DomainBox& source, const DomainBox& target);

// Polynomial cost sum_t coef_t * x^a_t * y^b_t loaded from JSON:
// {"n":2,"source":{"lower":[..],"upper":[..]},"target":{..},
//  "terms":[{"coef":-1.0,"x":[1,0],"y":[1,0]}, ...]}
CostPtr load_polynomial_cost(const std::string& json_text);

struct NewtonResult {
  Vec x;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Damped Newton for -D_y c(x, y) = q in x (the cost-exponential chart
// inverse); the step is halved while the residual fails to decrease.
NewtonResult solve_chart_inverse(const CostModel& cost, const Vec& y, const Vec& q,
                                 const Vec& guess, double tol, int max_iter = 50);
// Same for -D_x c(x, y) = p in y.
NewtonResult solve_dual_chart_inverse(const CostModel& cost, const Vec& x, const Vec& p,
                                      const Vec& guess, double tol, int max_iter = 50);

// Cross-curvature along a c-segment in x through x and a c*-segment in y
// through y with initial velocities xi and eta.
struct MtwSample {
  Vec x, y, xi, eta;
  double nullity = 0.0;
  double value = 0.0;
  double fd_error = 0.0;
  bool constrained = false;
};

struct MtwOptions {
  double h = 0.0;        // 0 selects the default step
  double fd_tol = 1e-3;  // allowed Richardson disagreement, relative to max(1,|value|)
};

double default_mtw_step(const CostModel& cost);
MtwSample mtw_tensor(const CostModel& cost, const Vec& x, const Vec& y, const Vec& xi,
                     const Vec& eta, const MtwOptions& opt = {});

enum class Verdict { A3wPass, A3sPass, B4Pass, Fail };
const char* to_string(Verdict v);
inline bool passes_a3w(Verdict v) { return v != Verdict::Fail; }

struct CurvatureReport {
  std::vector<MtwSample> samples;
  double min_null_constrained = kInf;
  double min_unconstrained = kInf;
  double max_abs = 0.0;
  double scale = 1.0;
  double tol = 0.0;
  int null_count = 0;
  int attempted = 0;
  int skipped = 0;
  Verdict verdict = Verdict::Fail;
};

CurvatureReport classify_cost(const CostModel& cost, int sample_budget, double tol,
                              std::uint64_t seed);

struct CostConstants {
  double beta_plus = 0.0;
  double beta_minus = 0.0;
  double gamma_plus = 0.0;
  double gamma_minus = 0.0;
  double M_c = 0.0;
  double eps_c = kInf;  // +inf when the third derivatives vanish
  double sup_dx = 0.0;
  double sup_dxx = 0.0;
  double sup_dxxy = 0.0;
  bool eps_unbounded() const { return !std::isfinite(eps_c); }
};

CostConstants compute_constants(const CostModel& cost, const DomainBox& U, const DomainBox& V,
                                 int grid);
inline CostConstants compute_constants(const CostModel& cost, int grid) {
  return compute_constants(cost, cost.source(), cost.target(), grid);
}

}  // namespace mtwlab
