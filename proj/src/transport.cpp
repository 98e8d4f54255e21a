#include "mtwlab/transport.hpp"

#include "mtwlab/charts.hpp"
#include "mtwlab/convex_geometry.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <numeric>
#include <set>

namespace mtwlab {

void DiscreteMeasure::validate() const {
  if (support.cols() != weights.size() || weights.size() == 0)
    throw Error(ErrorCode::ConfigError, "measure support and weights differ in size");
  if ((weights.array() < 0).any()) throw Error(ErrorCode::ConfigError, "negative weight");
  if (std::abs(weights.sum() - 1.0) > 1e-12)
    throw Error(ErrorCode::ConfigError, "weights do not sum to 1");
  std::vector<int> order(size());
  std::iota(order.begin(), order.end(), 0);
  auto less = [&](int a, int b) {
    for (int k = 0; k < dim(); ++k)
      if (support(k, a) != support(k, b)) return support(k, a) < support(k, b);
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  for (size_t t = 1; t < order.size(); ++t)
    if (!less(order[t - 1], order[t])) throw Error(ErrorCode::ConfigError, "repeated atom");
}

DiscreteMeasure DiscreteMeasure::uniform(Mat support) {
  DiscreteMeasure m;
  m.weights = Vec::Constant(support.cols(), 1.0 / double(support.cols()));
  m.support = std::move(support);
  return m;
}

namespace {

DiscreteMeasure normalized(const std::vector<Vec>& pts, std::vector<double> w) {
  if (pts.empty()) throw Error(ErrorCode::ConfigError, "empty measure");
  DiscreteMeasure m;
  m.support.resize(pts[0].size(), pts.size());
  m.weights.resize(pts.size());
  double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (size_t i = 0; i < pts.size(); ++i) {
    m.support.col(i) = pts[i];
    m.weights[i] = w[i] / total;
  }
  return m;
}

std::vector<Vec> cell_centres(const DomainBox& box, int g) {
  Vec h = box.width() / double(g);
  DomainBox inner(box.lower + 0.5 * h, box.upper - 0.5 * h);
  if (g == 1) return {box.center()};
  return inner.grid(g);
}

}  // namespace

DiscreteMeasure cell_centered_measure(const DomainBox& box, int g,
                                      const std::function<double(const Vec&)>& density) {
  std::vector<Vec> pts = cell_centres(box, g);
  std::vector<double> w;
  for (const Vec& p : pts) w.push_back(density ? density(p) : 1.0);
  return normalized(pts, w);
}

DiscreteMeasure ball_measure(const Vec& center, double radius, int g,
                             const std::function<double(const Vec&)>& density) {
  DomainBox box(center.array() - radius, center.array() + radius);
  std::vector<Vec> pts;
  std::vector<double> w;
  for (const Vec& p : cell_centres(box, g))
    if ((p - center).norm() <= radius) {
      pts.push_back(p);
      w.push_back(density ? density(p) : 1.0);
    }
  return normalized(pts, w);
}

double Region::depth(const Vec& y) const {
  return kind == Kind::Ball ? radius - (y - center).norm() : box.depth(y);
}

double KantorovichSolution::slack(int i, int j) const {
  return u[i] + v[j] + cost->value(sources.col(i), targets.col(j));
}

double KantorovichSolution::marginal_error() const {
  Vec ra = Vec::Zero(a.size()), rb = Vec::Zero(b.size());
  for (const PlanEntry& e : plan) {
    ra[e.i] += e.mass;
    rb[e.j] += e.mass;
  }
  return std::max((ra - a).cwiseAbs().maxCoeff(), (rb - b).cwiseAbs().maxCoeff());
}

double KantorovichSolution::min_slack() const {
  double m = kInf;
  for (int i = 0; i < sources.cols(); ++i)
    for (int j = 0; j < targets.cols(); ++j) m = std::min(m, slack(i, j));
  return m;
}

std::shared_ptr<DiscretePotential> KantorovichSolution::potential() const {
  return std::make_shared<DiscretePotential>(cost, targets, v);
}

namespace {

// Primal network simplex on sources 0..N-1, sinks N..N+M-1 and an
// artificial root R = N+M joined to every node by a big-M arc. The tree is
// kept strongly feasible (zero-flow tree arcs point away from the root), so
// degenerate pivots cannot cycle.
class NetworkSimplex {
 public:
  NetworkSimplex(int N, int M, std::function<double(int, int)> cost, const Vec& a, const Vec& b)
      : N_(N), M_(M), R_(N + M), cost_(std::move(cost)) {
    const int nodes = N + M + 1;
    parent_.assign(nodes, -1);
    arc_.assign(nodes, -1);
    flow_.assign(nodes, 0.0);
    up_.assign(nodes, 0);
    depth_.assign(nodes, 0);
    pi_.assign(nodes, 0.0);
    first_child_.assign(nodes, -1);
    next_.assign(nodes, -1);
    prev_.assign(nodes, -1);

    max_cost_ = 0.0;
    if (double(N) * M <= 2.0e7) {
      cache_.resize(size_t(N) * M);
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j) {
          double c = cost_(i, j);
          cache_[size_t(i) * M + j] = c;
          max_cost_ = std::max(max_cost_, std::abs(c));
        }
    } else {
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j) max_cost_ = std::max(max_cost_, std::abs(cost_(i, j)));
    }
    big_ = 1.0 + double(N + M) * (2.0 * max_cost_ + 1.0);
    eps_ = 1e-12 * std::max(1.0, max_cost_);

    for (int w = 0; w < N + M; ++w) {
      double supply = w < N ? a[w] : -b[w - N];
      parent_[w] = R_;
      arc_[w] = -1 - w;  // artificial
      depth_[w] = 1;
      if (supply > 0) {
        up_[w] = 1;
        flow_[w] = supply;
        pi_[w] = -big_;  // big + pi_w - pi_R = 0 along w -> R
      } else {
        up_[w] = 0;
        flow_[w] = -supply;
        pi_[w] = big_;
      }
      link(w, R_);
    }
  }

  double cost(int i, int j) const {
    return cache_.empty() ? cost_(i, j) : cache_[size_t(i) * M_ + j];
  }
  double max_cost() const { return max_cost_; }

  long run(long max_pivots) {
    const long arcs = long(N_) * M_;
    const long block = std::max<long>(1, long(std::sqrt(double(arcs))));
    long next = 0, pivots = 0;
    while (true) {
      long best = -1;
      double best_rc = -eps_;
      long scanned = 0;
      while (scanned < arcs) {
        long end = std::min(arcs, scanned + block);
        for (long k = scanned; k < end; ++k) {
          long id = (next + k) % arcs;
          int i = int(id / M_), j = int(id % M_);
          double rc = cost(i, j) + pi_[i] - pi_[N_ + j];
          if (rc < best_rc) best_rc = rc, best = id;
        }
        scanned = end;
        if (best >= 0) break;
      }
      if (best < 0) return pivots;
      next = (best + 1) % arcs;
      pivot(int(best / M_), int(best % M_), best_rc);
      if (++pivots > max_pivots) throw Error(ErrorCode::SolverStalled, "pivot limit reached");
    }
  }

  // Positive flows on real arcs; throws Infeasible if an artificial arc
  // still carries flow.
  std::vector<PlanEntry> plan(double tol) const {
    std::vector<PlanEntry> out;
    for (int w = 0; w < N_ + M_; ++w) {
      if (arc_[w] < 0) {
        if (flow_[w] > tol) throw Error(ErrorCode::Infeasible, "artificial arc carries flow");
        continue;
      }
      if (flow_[w] <= 0.0) continue;
      int id = arc_[w];
      out.push_back({id / M_, id % M_, flow_[w]});
    }
    std::sort(out.begin(), out.end(),
              [](const PlanEntry& x, const PlanEntry& y) { return x.i != y.i ? x.i < y.i : x.j < y.j; });
    return out;
  }

  double pi(int w) const { return pi_[w]; }

 private:
  void link(int w, int p) {
    prev_[w] = -1;
    next_[w] = first_child_[p];
    if (first_child_[p] >= 0) prev_[first_child_[p]] = w;
    first_child_[p] = w;
  }
  void unlink(int w) {
    int p = parent_[w];
    if (prev_[w] >= 0)
      next_[prev_[w]] = next_[w];
    else
      first_child_[p] = next_[w];
    if (next_[w] >= 0) prev_[next_[w]] = prev_[w];
    prev_[w] = next_[w] = -1;
  }

  void pivot(int i, int j, double rc) {
    const int s = i, t = N_ + j;
    int a = s, b = t;
    while (a != b) {
      if (depth_[a] >= depth_[b])
        a = parent_[a];
      else
        b = parent_[b];
    }
    const int join = a;

    // Cycle orientation follows s -> t. Blocking arcs are those whose flow
    // decreases; the last one met from the join wins ties.
    double delta = kInf;
    int leave = -1;
    bool leave_on_s = false;
    for (int w = s; w != join; w = parent_[w])
      if (up_[w] && flow_[w] < delta) delta = flow_[w], leave = w, leave_on_s = true;
    for (int w = t; w != join; w = parent_[w])
      if (!up_[w] && flow_[w] <= delta) delta = flow_[w], leave = w, leave_on_s = false;
    if (leave < 0) throw Error(ErrorCode::SolverStalled, "unbounded cycle");

    for (int w = s; w != join; w = parent_[w]) flow_[w] += up_[w] ? -delta : delta;
    for (int w = t; w != join; w = parent_[w]) flow_[w] += up_[w] ? delta : -delta;

    // Hang the subtree cut off below `leave` from the entering arc.
    const int inner = leave_on_s ? s : t, outer = leave_on_s ? t : s;
    std::vector<int> path;
    for (int w = inner;; w = parent_[w]) {
      path.push_back(w);
      if (w == leave) break;
    }
    std::vector<int> old_arc(path.size());
    std::vector<double> old_flow(path.size());
    std::vector<char> old_up(path.size());
    for (size_t k = 0; k < path.size(); ++k) {
      old_arc[k] = arc_[path[k]];
      old_flow[k] = flow_[path[k]];
      old_up[k] = up_[path[k]];
      unlink(path[k]);
    }
    for (size_t k = path.size(); k-- > 1;) {
      int w = path[k], child_before = path[k - 1];
      parent_[w] = child_before;
      arc_[w] = old_arc[k - 1];
      flow_[w] = old_flow[k - 1];
      up_[w] = !old_up[k - 1];
      link(w, child_before);
    }
    parent_[inner] = outer;
    arc_[inner] = i * M_ + j;
    flow_[inner] = delta;
    up_[inner] = inner == s;
    link(inner, outer);

    // c + pi_s - pi_t = 0 on the entering arc.
    const double shift = inner == t ? rc : -rc;
    std::vector<int> stack{inner};
    while (!stack.empty()) {
      int w = stack.back();
      stack.pop_back();
      pi_[w] += shift;
      depth_[w] = depth_[parent_[w]] + 1;
      for (int c = first_child_[w]; c >= 0; c = next_[c]) stack.push_back(c);
    }
  }

  int N_, M_, R_;
  std::function<double(int, int)> cost_;
  std::vector<double> cache_;
  double max_cost_ = 0.0, big_ = 0.0, eps_ = 0.0;
  std::vector<int> parent_, arc_, depth_, first_child_, next_, prev_;
  std::vector<double> flow_, pi_;
  std::vector<char> up_;
};

// Vertex duals from the simplex are tight on every degenerate tree arc,
// which puts spurious targets into the c-subdifferential. Each component of
// the plan support may shift its duals by an offset s (u += s, v -= s)
// subject to s_B - s_A <= W(A, B), the least slack from a source of A to a
// target of B. Shortest paths from and to one component give the largest
// and smallest feasible offsets; their midpoint leaves slack on every edge
// that is not tight for both.
void center_duals(const NetworkSimplex& ns, const std::vector<PlanEntry>& plan, Vec& u, Vec& v) {
  const int N = int(u.size()), M = int(v.size());
  std::vector<int> root(N + M);
  std::iota(root.begin(), root.end(), 0);
  std::function<int(int)> find = [&](int a) { return root[a] == a ? a : root[a] = find(root[a]); };
  for (const PlanEntry& e : plan) root[find(e.i)] = find(N + e.j);
  std::vector<int> comp(N + M, -1), label(N + M, -1);
  int K = 0;
  for (int w = 0; w < N + M; ++w) {
    int r = find(w);
    if (label[r] < 0) label[r] = K++;
    comp[w] = label[r];
  }
  if (K < 2 || K > 3000) return;
  std::vector<double> W(size_t(K) * K, kInf);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < M; ++j) {
      int A = comp[i], B = comp[N + j];
      if (A == B) continue;
      double sl = std::max(0.0, u[i] + v[j] + ns.cost(i, j));
      double& w = W[size_t(A) * K + B];
      w = std::min(w, sl);
    }
  auto dijkstra = [&](bool reverse) {
    std::vector<double> d(K, kInf);
    std::vector<char> done(K, 0);
    d[0] = 0.0;
    for (int it = 0; it < K; ++it) {
      int a = -1;
      for (int k = 0; k < K; ++k)
        if (!done[k] && (a < 0 || d[k] < d[a])) a = k;
      if (a < 0 || d[a] == kInf) break;
      done[a] = 1;
      for (int b = 0; b < K; ++b) {
        double w = reverse ? W[size_t(b) * K + a] : W[size_t(a) * K + b];
        if (d[a] + w < d[b]) d[b] = d[a] + w;
      }
    }
    return d;
  };
  std::vector<double> from = dijkstra(false), to = dijkstra(true);
  std::vector<double> shift(K);
  for (int k = 0; k < K; ++k) {
    double hi = from[k], lo = -to[k];
    if (std::isfinite(hi) && std::isfinite(lo))
      shift[k] = 0.5 * (hi + lo);
    else
      shift[k] = std::isfinite(hi) ? hi : (std::isfinite(lo) ? lo : 0.0);
  }
  for (int i = 0; i < N; ++i) u[i] += shift[comp[i]];
  for (int j = 0; j < M; ++j) v[j] -= shift[comp[N + j]];
}

}  // namespace

KantorovichSolution solve_kantorovich(const ProblemSpec& spec, const SolverOptions& opt) {
  const CostModel& c = *spec.cost;
  const DiscreteMeasure &mp = spec.mu_plus, &mm = spec.mu_minus;
  if (mp.size() == 0 || mm.size() == 0 || mp.support.cols() != mp.size() ||
      mm.support.cols() != mm.size())
    throw Error(ErrorCode::ConfigError, "malformed measures");
  if (mp.size() > 10000 || mm.size() > 10000)
    throw Error(ErrorCode::ConfigError, "support sizes above 10^4");
  if ((mp.weights.array() < 0).any() || (mm.weights.array() < 0).any() ||
      std::abs(mp.weights.sum() - mm.weights.sum()) > 1e-12)
    throw Error(ErrorCode::Infeasible, "marginal masses differ");
  if (!(spec.lambda > 0 && spec.lambda <= spec.Lambda && std::isfinite(spec.Lambda)))
    throw Error(ErrorCode::ConfigError, "need 0 < lambda <= Lambda < inf");

  const int N = mp.size(), M = mm.size();
  KantorovichSolution sol;
  sol.cost = spec.cost;
  sol.sources = mp.support;
  sol.targets = mm.support;
  sol.a = mp.weights;
  sol.b = mm.weights;

  NetworkSimplex ns(
      N, M, [&](int i, int j) { return c.value(mp.support.col(i), mm.support.col(j)); },
      mp.weights, mm.weights);
  long limit = opt.max_pivots > 0 ? opt.max_pivots
                                  : long(200 * std::pow(double(N + M), 1.5)) + 100000;
  sol.pivots = ns.run(limit);
  sol.plan = ns.plan(1e-9);
  sol.scale = std::max(1.0, ns.max_cost());

  // Simplex duals, then v = u^{c*} and u = v^c; both passes keep dual
  // feasibility and can only raise the dual objective.
  Vec u(N), v(M);
  for (int i = 0; i < N; ++i) u[i] = ns.pi(i);
  for (int j = 0; j < M; ++j) v[j] = -ns.pi(N + j);
  center_duals(ns, sol.plan, u, v);
  sol.v = c_star_transform(c, mp.support, u, mm.support).values;
  sol.u = c_transform(c, mm.support, sol.v, mp.support).values;
  // Centre the gauge so the values stay O(scale).
  double shift = sol.u.mean();
  sol.u.array() -= shift;
  sol.v.array() += shift;

  sol.total_cost = 0.0;
  for (const PlanEntry& e : sol.plan) sol.total_cost += e.mass * ns.cost(e.i, e.j);
  sol.dual_value = -sol.a.dot(sol.u) - sol.b.dot(sol.v);
  sol.gap = sol.total_cost - sol.dual_value;
  return sol;
}

namespace {

CTransform transform(const Mat& from, const Vec& w, const Mat& to,
                     const std::function<double(const Vec&, const Vec&)>& c) {
  CTransform out;
  const int K = int(to.cols()), J = int(from.cols());
  out.values.resize(K);
  out.argmax.assign(K, 0);
  out.tied.assign(K, 0);
  parallel_for(K, [&](int k) {
    double best = -kInf;
    int arg = 0;
    bool tie = false;
    for (int j = 0; j < J; ++j) {
      double m = -c(to.col(k), from.col(j)) - w[j];
      if (m > best) {
        best = m, arg = j, tie = false;
      } else if (m == best) {
        tie = true;
      }
    }
    out.values[k] = best;
    out.argmax[k] = arg;
    out.tied[k] = tie;
  });
  return out;
}

}  // namespace

CTransform c_transform(const CostModel& cost, const Mat& targets, const Vec& v, const Mat& sources) {
  return transform(targets, v, sources,
                   [&](const Vec& x, const Vec& y) { return cost.value(x, y); });
}

CTransform c_star_transform(const CostModel& cost, const Mat& sources, const Vec& u,
                            const Mat& targets) {
  return transform(sources, u, targets,
                   [&](const Vec& y, const Vec& x) { return cost.value(x, y); });
}

std::vector<int> c_subdifferential(const KantorovichSolution& sol, int i, double tol) {
  std::set<int> out;
  for (int j = 0; j < sol.targets.cols(); ++j)
    if (sol.slack(i, j) <= tol) out.insert(j);
  for (const PlanEntry& e : sol.plan)
    if (e.i == i) out.insert(e.j);
  return {out.begin(), out.end()};
}

std::vector<CellDensity> cma_measure(const KantorovichSolution& sol, const DomainBox& region,
                                     int cells_per_axis, double tol) {
  const CostModel& c = *sol.cost;
  const int n = c.dim(), g = cells_per_axis;
  if (g < 1) throw Error(ErrorCode::ConfigError, "need at least one cell per axis");
  int total = 1;
  for (int k = 0; k < n; ++k) total *= g;
  std::vector<std::vector<int>> members(total);
  Vec h = region.width() / double(g);
  for (int i = 0; i < sol.sources.cols(); ++i) {
    Vec x = sol.sources.col(i);
    if (!region.contains(x)) continue;
    int idx = 0, stride = 1;
    for (int k = 0; k < n; ++k) {
      int m = std::min(g - 1, int(std::floor((x[k] - region.lower[k]) / h[k])));
      idx += m * stride;
      stride *= g;
    }
    members[idx].push_back(i);
  }

  std::vector<CellDensity> out(total);
  parallel_for(total, [&](int idx) {
    CellDensity& cd = out[idx];
    Vec lo(n);
    for (int k = 0, r = idx; k < n; ++k, r /= g) lo[k] = region.lower[k] + (r % g) * h[k];
    cd.cell = DomainBox(lo, lo + h);
    cd.sources = int(members[idx].size());
    std::set<int> ys;
    for (int i : members[idx])
      for (int j : c_subdifferential(sol, i, tol)) ys.insert(j);
    cd.targets = int(ys.size());
    cd.degenerate = true;
    if (cd.sources < n + 1 || cd.targets < n + 1) return;
    Mat xs(n, cd.sources);
    for (int k = 0; k < cd.sources; ++k) xs.col(k) = sol.sources.col(members[idx][k]);
    ConvexBody src = make_body<double>(xs);
    if (src.degenerate) return;
    Vec xc = cd.cell.center();
    Mat p(n, cd.targets);
    Vec yc = Vec::Zero(n);
    int col = 0;
    for (int j : ys) {
      p.col(col++) = -c.grad_x(xc, sol.targets.col(j));
      yc += sol.targets.col(j) / double(cd.targets);
    }
    CellMass m = target_hull_volume(p, c.hess_xy(xc, yc));
    if (m.degenerate) return;
    cd.degenerate = false;
    cd.image_volume = m.mass;
    cd.density = m.mass / src.volume;
  });
  return out;
}

double ma_density_pde(const SmoothPotential& u, const Vec& x) {
  const CostModel& c = u.cost();
  Vec G = u.subgradient(x);
  Mat cross = c.cross_derivative(x, G);
  return (u.hessian(x) + c.hess_xx(x, G)).determinant() / std::abs(cross.determinant());
}

namespace {

struct GridShape {
  std::vector<std::vector<double>> axis;
  std::vector<int> node_of;  // flat grid index -> source index
};

GridShape detect_grid(const Mat& pts) {
  const int n = int(pts.rows()), N = int(pts.cols());
  GridShape gs;
  gs.axis.resize(n);
  long count = 1;
  for (int k = 0; k < n; ++k) {
    std::vector<double> vals;
    for (int i = 0; i < N; ++i) vals.push_back(pts(k, i));
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    gs.axis[k] = vals;
    count *= long(vals.size());
  }
  if (count != N) throw Error(ErrorCode::ConfigError, "sources are not a full tensor grid");
  gs.node_of.assign(N, -1);
  for (int i = 0; i < N; ++i) {
    long idx = 0, stride = 1;
    for (int k = 0; k < n; ++k) {
      auto& ax = gs.axis[k];
      idx += stride * (std::lower_bound(ax.begin(), ax.end(), pts(k, i)) - ax.begin());
      stride *= long(ax.size());
    }
    gs.node_of[idx] = i;
  }
  return gs;
}

}  // namespace

TransportMap recover_map(const KantorovichSolution& sol) {
  const CostModel& c = *sol.cost;
  const int n = c.dim(), N = int(sol.sources.cols());
  GridShape gs = detect_grid(sol.sources);
  std::vector<int> flat_of(N);
  for (int f = 0; f < N; ++f) flat_of[gs.node_of[f]] = f;
  std::vector<int> partner(N, -1);
  std::vector<double> best(N, -1.0);
  for (const PlanEntry& e : sol.plan)
    if (e.mass > best[e.i]) best[e.i] = e.mass, partner[e.i] = e.j;

  TransportMap tm;
  tm.G.resize(n, N);
  tm.residual = Vec::Zero(N);
  tm.newton_failed.assign(N, 0);
  tm.stencil.assign(N, std::vector<Stencil>(n, Stencil::Centered));
  parallel_for(N, [&](int i) {
    std::vector<int> idx(n);
    for (int k = 0, r = flat_of[i]; k < n; ++k) {
      int sz = int(gs.axis[k].size());
      idx[k] = r % sz;
      r /= sz;
    }
    auto source_at = [&](const std::vector<int>& m) {
      long f = 0, stride = 1;
      for (int k = 0; k < n; ++k) {
        f += stride * m[k];
        stride *= long(gs.axis[k].size());
      }
      return gs.node_of[f];
    };
    Vec du(n);
    for (int k = 0; k < n; ++k) {
      int sz = int(gs.axis[k].size());
      std::vector<int> lo = idx, hi = idx;
      if (sz < 2) throw Error(ErrorCode::ConfigError, "grid axis with a single point");
      if (idx[k] > 0) lo[k]--;
      if (idx[k] < sz - 1) hi[k]++;
      if (lo[k] == idx[k] || hi[k] == idx[k]) tm.stencil[i][k] = Stencil::OneSided;
      int a = source_at(lo), b = source_at(hi);
      du[k] = (sol.u[b] - sol.u[a]) / (gs.axis[k][hi[k]] - gs.axis[k][lo[k]]);
    }
    Vec x = sol.sources.col(i);
    Vec guess = partner[i] >= 0 ? Vec(sol.targets.col(partner[i])) : c.target().center();
    NewtonResult r = solve_dual_chart_inverse(c, x, du, guess, 1e-12 * std::max(1.0, du.norm()));
    if (r.converged && r.x.allFinite()) {
      tm.G.col(i) = r.x;
      tm.residual[i] = r.residual;
    } else {
      tm.newton_failed[i] = 1;
      tm.G.col(i) = guess;
      tm.residual[i] = r.residual;
    }
  });
  return tm;
}

DasmResult dasm_check(const CostModel& cost, const Vec& x, const Vec& x_bar, const Vec& y0,
                      const Vec& y1, int samples) {
  if (samples < 3) throw Error(ErrorCode::ConfigError, "dasm_check needs >= 3 samples");
  Vec p0 = -cost.grad_x(x_bar, y0), p1 = -cost.grad_x(x_bar, y1);
  std::vector<double> f(samples);
  Vec y = y0;
  for (int k = 0; k < samples; ++k) {
    double t = double(k) / (samples - 1);
    Vec p = (1 - t) * p0 + t * p1;
    if (k == 0) {
      y = y0;
    } else if (k == samples - 1) {
      y = y1;
    } else {
      NewtonResult r =
          solve_dual_chart_inverse(cost, x_bar, p, y, 1e-13 * std::max(1.0, p.norm()));
      if (!r.converged) throw Error(ErrorCode::NewtonDiverged, "c-segment point");
      y = r.x;
      if (!cost.target().contains(y)) throw Error(ErrorCode::SegmentEscapesDomain, "c-segment leaves V");
    }
    f[k] = -cost.value(x, y) + cost.value(x_bar, y);
  }
  DasmResult out;
  double top = std::max(f.front(), f.back());
  for (int k = 0; k < samples; ++k) {
    out.violation = std::max(out.violation, f[k] - top);
    out.scale = std::max(out.scale, std::abs(f[k]));
    if (k > 0 && k < samples - 1)
      out.concavity = std::max(out.concavity, -(f[k - 1] - 2 * f[k] + f[k + 1]));
  }
  return out;
}

MixingReport boundary_mixing_check(const KantorovichSolution& sol, const Region& U,
                                   double source_cell, const Region& V, double target_cell,
                                   double tol) {
  MixingReport rep;
  for (int i = 0; i < sol.sources.cols(); ++i) {
    if (U.depth(sol.sources.col(i)) <= 2 * source_cell) continue;
    ++rep.interior_sources;
    for (int j : c_subdifferential(sol, i, tol))
      if (V.depth(sol.targets.col(j)) <= target_cell) rep.violations.push_back({i, j});
  }
  return rep;
}

namespace {

using nlohmann::json;

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const json& j) {
  std::vector<double> a = j.get<std::vector<double>>();
  return Eigen::Map<Vec>(a.data(), Eigen::Index(a.size()));
}

json box_json(const DomainBox& b) { return {{"lower", vec_json(b.lower)}, {"upper", vec_json(b.upper)}}; }

DomainBox json_box(const json& j) { return DomainBox(json_vec(j.at("lower")), json_vec(j.at("upper"))); }

json measure_json(const DiscreteMeasure& m) {
  json pts = json::array();
  for (int i = 0; i < m.size(); ++i) pts.push_back(vec_json(m.point(i)));
  return {{"support", pts}, {"weights", vec_json(m.weights)}};
}

DiscreteMeasure json_measure(const json& j) {
  DiscreteMeasure m;
  const json& pts = j.at("support");
  m.weights = json_vec(j.at("weights"));
  if (pts.empty()) throw Error(ErrorCode::ConfigError, "empty support");
  m.support.resize(Eigen::Index(pts[0].size()), Eigen::Index(pts.size()));
  for (size_t i = 0; i < pts.size(); ++i) {
    Vec p = json_vec(pts[i]);
    if (p.size() != m.support.rows()) throw Error(ErrorCode::ConfigError, "ragged support");
    m.support.col(Eigen::Index(i)) = p;
  }
  return m;
}

}  // namespace

ProblemSpec read_instance(const std::string& json_text) {
  try {
    json j = json::parse(json_text);
    ProblemSpec spec;
    spec.mu_plus = json_measure(j.at("mu_plus"));
    spec.mu_minus = json_measure(j.at("mu_minus"));
    spec.mu_plus.validate();
    spec.mu_minus.validate();
    std::string key = j.at("cost").get<std::string>();
    if (j.contains("source_box") && j.contains("target_box"))
      spec.cost = make_cost(key, json_box(j.at("source_box")), json_box(j.at("target_box")));
    else
      spec.cost = make_cost(key, spec.mu_plus.dim());
    spec.lambda = j.value("lambda", 1.0);
    spec.Lambda = j.value("Lambda", 1.0);
    spec.U_lambda = j.contains("U_lambda") ? json_box(j.at("U_lambda")) : spec.cost->source();
    return spec;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("instance file: ") + e.what());
  }
}

std::string write_instance(const ProblemSpec& spec) {
  json j = {{"cost", spec.cost->key()},
            {"source_box", box_json(spec.cost->source())},
            {"target_box", box_json(spec.cost->target())},
            {"mu_plus", measure_json(spec.mu_plus)},
            {"mu_minus", measure_json(spec.mu_minus)},
            {"lambda", spec.lambda},
            {"Lambda", spec.Lambda},
            {"U_lambda", box_json(spec.U_lambda)}};
  return j.dump(1);
}

std::string plan_csv(const KantorovichSolution& sol) {
  std::ostringstream os;
  os.precision(17);
  os << "i,j,mass\n";
  for (const PlanEntry& e : sol.plan) os << e.i << "," << e.j << "," << e.mass << "\n";
  return os.str();
}

std::string potentials_json(const KantorovichSolution& sol) {
  json j = {{"u", vec_json(sol.u)},
            {"v", vec_json(sol.v)},
            {"total_cost", sol.total_cost},
            {"dual_value", sol.dual_value},
            {"gap", sol.gap},
            {"scale", sol.scale},
            {"pivots", sol.pivots}};
  return j.dump(1);
}

}  // namespace mtwlab
