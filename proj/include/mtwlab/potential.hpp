#pragma once

#include "mtwlab/cost_model.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace mtwlab {

// A c-convex potential u on U together with a selection of its
// c-subdifferential.
class CPotential {
 public:
  explicit CPotential(CostPtr cost) : cost_(std::move(cost)) {}
  virtual ~CPotential() = default;

  int dim() const { return cost_->dim(); }
  const CostModel& cost() const { return *cost_; }
  const CostPtr& cost_ptr() const { return cost_; }

  virtual double value(const Vec& x) const = 0;
  // Some y in the c-subdifferential at x.
  virtual Vec subgradient(const Vec& x) const = 0;
  // Du(x) = -D_x c(x, y) for y in the subdifferential.
  virtual Vec gradient(const Vec& x) const { return -cost_->grad_x(x, subgradient(x)); }

 private:
  CostPtr cost_;
};

using PotentialPtr = std::shared_ptr<const CPotential>;

// u(x) = max_j -c(x, y_j) - v_j: the c-transform of a discrete dual.
class DiscretePotential : public CPotential {
 public:
  DiscretePotential(CostPtr cost, Mat targets, Vec v);

  double value(const Vec& x) const override;
  Vec subgradient(const Vec& x) const override;
  // Lowest-index maximizer.
  int argmax(const Vec& x) const;
  // Every j within slack tol of the max.
  std::vector<int> active(const Vec& x, double tol) const;

  const Mat& targets() const { return targets_; }
  const Vec& v() const { return v_; }

 private:
  Mat targets_;
  Vec v_;
};

// Closed-form u with closed-form gradient; the subdifferential is recovered
// by Newton on -D_x c(x, y) = Du(x).
class SmoothPotential : public CPotential {
 public:
  using Fn = std::function<double(const Vec&)>;
  using GradFn = std::function<Vec(const Vec&)>;
  using HessFn = std::function<Mat(const Vec&)>;

  SmoothPotential(CostPtr cost, Fn u, GradFn grad, HessFn hess, Vec y_guess);

  double value(const Vec& x) const override { return u_(x); }
  Vec gradient(const Vec& x) const override { return grad_(x); }
  Mat hessian(const Vec& x) const { return hess_(x); }
  Vec subgradient(const Vec& x) const override;

 private:
  Fn u_;
  GradFn grad_;
  HessFn hess_;
  Vec y_guess_;
};

// u(x) = -c(x, y0) + (x - x0)^T A (x - x0) / 2 with A symmetric positive
// definite. For small A this is c-convex on U under A3w, with
// Du(x) = -D_x c(x, y0) + A (x - x0).
std::shared_ptr<SmoothPotential> make_mountain_potential(CostPtr cost, const Vec& x0, const Vec& y0,
                                                         const Mat& A);

// Supporting functions of u at the sample points: y_j in the
// subdifferential at x_j and v_j = -c(x_j, y_j) - u(x_j), so each target
// touches u at its own sample.
std::shared_ptr<DiscretePotential> discretize(const CPotential& u, const std::vector<Vec>& xs);

// Values on a tensor grid over a box (g points per axis, axis 0 fastest),
// multilinear in between; outside the box throws ExtrapolationRequested.
class GridPotential : public CPotential {
 public:
  GridPotential(CostPtr cost, DomainBox box, int g, std::vector<double> values, Vec y_guess);

  double value(const Vec& x) const override;
  // Centred differences of the interpolant, one-sided within h of a face.
  Vec gradient(const Vec& x) const override;
  Vec subgradient(const Vec& x) const override;

  const DomainBox& box() const { return box_; }
  int points_per_axis() const { return g_; }
  const std::vector<double>& values() const { return values_; }

 private:
  DomainBox box_;
  int g_;
  std::vector<double> values_;
  Vec y_guess_;
};

// Tensor Catmull-Rom interpolation of grid values (C^1, exact on
// quadratics away from the faces); ghost nodes beyond a face are linear
// extrapolations. Same layout as GridPotential.
class CubicGridPotential : public CPotential {
 public:
  CubicGridPotential(CostPtr cost, DomainBox box, int g, std::vector<double> values, Vec y_guess);

  double value(const Vec& x) const override;
  Vec gradient(const Vec& x) const override;
  Mat hessian(const Vec& x) const;
  Vec subgradient(const Vec& x) const override;

  const DomainBox& box() const { return box_; }
  int points_per_axis() const { return g_; }

 private:
  // order 0: value only; 1: plus gradient; 2: plus Hessian.
  void evaluate(const Vec& x, int order, double& v, Vec* grad, Mat* hess) const;
  double node_value(std::vector<int> k) const;

  DomainBox box_;
  int g_;
  std::vector<double> values_;
  Vec y_guess_;
};

// Multilinear interpolation on a g^n grid over box; shared by grid-valued
// objects. Returns NaN when a needed corner is NaN.
double multilinear(const DomainBox& box, int g, const std::vector<double>& values, const Vec& x);

}  // namespace mtwlab
