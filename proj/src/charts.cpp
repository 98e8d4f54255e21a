#include "mtwlab/charts.hpp"

#include <json.hpp>

#include <cmath>
#include <set>
#include <sstream>

namespace mtwlab {

ExpChart::ExpChart(CostPtr cost, Vec base, double newton_tol, int domain_grid)
    : cost_(std::move(cost)), base_(std::move(base)), tol_(newton_tol) {
  if (!cost_->target().contains(base_))
    throw Error(ErrorCode::OutOfDomain, "chart base point outside V");
  const int n = cost_->dim();
  int g = domain_grid > 0 ? domain_grid : (n <= 2 ? 33 : 13);
  std::vector<Vec> xs = cost_->source().grid(g);
  Mat qs(n, xs.size());
  for (size_t j = 0; j < xs.size(); ++j) qs.col(j) = -cost_->grad_y(xs[j], base_);
  domain_ = make_body<double>(qs);
  bbox_ = DomainBox(qs.rowwise().minCoeff(), qs.rowwise().maxCoeff());
  cell_ = bbox_.width().maxCoeff() / (g - 1);
}

Vec ExpChart::to_q(const Vec& x) const {
  if (!cost_->source().contains(x, -1e-12 * cost_->source().diameter()))
    throw Error(ErrorCode::OutOfDomain, "to_q: x outside U");
  return -cost_->grad_y(x, base_);
}

Mat ExpChart::jacobian(const Vec& x) const { return -cost_->hess_xy(x, base_).transpose(); }

NewtonResult ExpChart::solve(const Vec& q, const Vec& guess) const {
  return solve_chart_inverse(*cost_, base_, q, guess, tol_ * std::max(1.0, q.norm()));
}

Vec ExpChart::from_q(const Vec& q) const { return from_q(q, cost_->source().center()); }

Vec ExpChart::from_q(const Vec& q, const Vec& guess) const {
  NewtonResult r = solve(q, guess);
  if (!r.converged) {
    if (guess != cost_->source().center()) return from_q(q);
    throw Error(ErrorCode::NewtonDiverged, "chart inverse residual " + std::to_string(r.residual));
  }
  if (!cost_->source().contains(r.x, -1e-9 * cost_->source().diameter()))
    throw Error(ErrorCode::SolutionOutsideU, "chart inverse lands outside U");
  return r.x;
}

double ExpChart::modified_cost_at(const Vec& x, const Vec& y) const {
  return cost_->value(x, y) - cost_->value(x, base_);
}

double ExpChart::modified_cost(const Vec& q, const Vec& y) const {
  return modified_cost_at(from_q(q), y);
}

Vec ExpChart::modified_grad_at(const Vec& x, const Vec& y) const {
  Vec d = cost_->grad_x(x, y) - cost_->grad_x(x, base_);
  return jacobian(x).transpose().partialPivLu().solve(d);
}

Mat ExpChart::modified_cross_at(const Vec& x, const Vec& y) const {
  return jacobian(x).transpose().partialPivLu().solve(cost_->hess_xy(x, y));
}

CellMass target_hull_volume(const Mat& p, const Mat& jac) {
  CellMass out;
  out.targets = int(p.cols());
  const int n = int(p.rows());
  if (p.cols() < n + 1) {
    out.degenerate = true;
    return out;
  }
  ConvexBody hull = make_body<double>(p);
  if (hull.degenerate) {
    out.degenerate = true;
    return out;
  }
  out.mass = hull.volume / std::abs(jac.determinant());
  return out;
}

TransformedPotential::TransformedPotential(ChartPtr chart, PotentialPtr u, DomainBox window, int g)
    : chart_(std::move(chart)), u_(std::move(u)), window_(std::move(window)), g_(g) {
  if (g_ < 2) throw Error(ErrorCode::ConfigError, "transformed potential grid needs >= 2 points");
  const int n = chart_->dim();
  L_ = AffineMap::identity(n);
  std::vector<Vec> rs = window_.grid(g_);
  auto values = std::make_shared<std::vector<double>>(rs.size(), std::nan(""));
  auto inside = std::make_shared<std::vector<char>>(rs.size(), 0);
  const double tol = 0.5 * chart_->cell();
  parallel_for(int(rs.size()), [&](int i) {
    if (!chart_->in_domain(rs[i], tol)) return;
    try {
      Vec x = chart_->from_q(rs[i]);
      (*values)[i] = u_->value(x) + chart_->cost().value(x, chart_->base());
      (*inside)[i] = 1;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SolutionOutsideU && e.code() != ErrorCode::NewtonDiverged) throw;
    }
  });
  values_ = values;
  inside_ = inside;
}

TransformedPotential TransformedPotential::over_domain(ChartPtr chart, PotentialPtr u, int g) {
  DomainBox box = chart->bounding_box();
  return TransformedPotential(std::move(chart), std::move(u), box, g);
}

double TransformedPotential::value(const Vec& q) const {
  return k_ * multilinear(window_, g_, *values_, L_(q));
}

double TransformedPotential::exact(const Vec& q) const {
  Vec x = chart_->from_q(L_(q));
  return k_ * (u_->value(x) + chart_->cost().value(x, chart_->base()));
}

double TransformedPotential::modified_cost(const Vec& q, const Vec& y) const {
  return k_ * chart_->modified_cost(L_(q), L_.A.transpose() * y);
}

Vec TransformedPotential::modified_grad(const Vec& q, const Vec& y) const {
  return k_ * L_.A.transpose() * chart_->modified_grad(L_(q), L_.A.transpose() * y);
}

Mat TransformedPotential::modified_cross(const Vec& q, const Vec& y) const {
  Vec x = chart_->from_q(L_(q));
  return k_ * L_.A.transpose() * chart_->modified_cross_at(x, L_.A.transpose() * y) * L_.A;
}

Vec TransformedPotential::map_target(const Vec& y) const {
  return L_.A.transpose().partialPivLu().solve(y);
}

std::vector<int> TransformedPotential::node_index(int idx) const {
  std::vector<int> k(dim());
  for (int i = 0; i < dim(); ++i) {
    k[i] = idx % g_;
    idx /= g_;
  }
  return k;
}

int TransformedPotential::flat_index(const std::vector<int>& k) const {
  int idx = 0, stride = 1;
  for (int i = 0; i < dim(); ++i) {
    idx += k[i] * stride;
    stride *= g_;
  }
  return idx;
}

Vec TransformedPotential::node(int idx) const {
  std::vector<int> k = node_index(idx);
  Vec r(dim());
  for (int i = 0; i < dim(); ++i)
    r[i] = window_.lower[i] + (window_.upper[i] - window_.lower[i]) * double(k[i]) / (g_ - 1);
  return L_.inverse(r);
}

bool TransformedPotential::node_boundary_adjacent(int idx) const {
  if (!node_inside(idx)) return false;
  std::vector<int> k = node_index(idx);
  for (int i = 0; i < dim(); ++i)
    for (int s : {-1, 1}) {
      std::vector<int> m = k;
      m[i] += s;
      if (m[i] < 0 || m[i] >= g_ || !node_inside(flat_index(m))) return true;
    }
  return false;
}

TransformedPotential TransformedPotential::renormalize(const AffineMap& L) const {
  const int n = dim();
  double det = L.A.determinant();
  if (!(std::abs(det) > 1e-14)) throw Error(ErrorCode::SingularAffineMap, "det L = 0");
  TransformedPotential out = *this;
  out.k_ = k_ * std::pow(std::abs(det), -2.0 / n);
  out.L_ = L_.after(L);
  return out;
}

CellMass TransformedPotential::cell_mass(const std::vector<Vec>& qs, double tol) const {
  auto* disc = dynamic_cast<const DiscretePotential*>(u_.get());
  if (!disc) throw Error(ErrorCode::ConfigError, "cell_mass needs a discrete potential");
  const int n = dim();
  std::set<int> ids;
  Vec q0 = Vec::Zero(n);
  for (const Vec& q : qs) {
    Vec x = chart_->from_q(L_(q));
    for (int j : disc->active(x, tol)) ids.insert(j);
    q0 += q / double(qs.size());
  }
  Mat p(n, ids.size());
  Vec yc = Vec::Zero(n);
  int col = 0;
  for (int j : ids) {
    Vec y = map_target(disc->targets().col(j));
    p.col(col++) = -modified_grad(q0, y);
    yc += y / double(ids.size());
  }
  return target_hull_volume(p, modified_cross(q0, yc));
}

std::string TransformedPotential::csv() const {
  std::ostringstream os;
  os.precision(17);
  for (int i = 0; i < dim(); ++i) os << "q" << i << ",";
  os << "value,boundary_adjacent\n";
  for (int idx = 0; idx < node_count(); ++idx) {
    if (!node_inside(idx)) continue;
    Vec q = node(idx);
    for (int i = 0; i < dim(); ++i) os << q[i] << ",";
    os << node_value(idx) << "," << int(node_boundary_adjacent(idx)) << "\n";
  }
  return os.str();
}

std::string TransformedPotential::header_json() const {
  using nlohmann::json;
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json A = json::array();
  for (int i = 0; i < L_.A.rows(); ++i) A.push_back(vec(L_.A.row(i).transpose()));
  json j = {{"cost", chart_->cost().key()},
            {"dim", dim()},
            {"base_target", vec(chart_->base())},
            {"newton_tol", chart_->newton_tol()},
            {"window", {{"lower", vec(window_.lower)}, {"upper", vec(window_.upper)}}},
            {"points_per_axis", g_},
            {"scale", k_},
            {"affine", {{"A", A}, {"b", vec(L_.b)}}}};
  return j.dump(2);
}

}  // namespace mtwlab
