#include "mtwlab/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <vector>

namespace mtwlab {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::SingularMixedHessian: return "SingularMixedHessian";
    case ErrorCode::SegmentEscapesDomain: return "SegmentEscapesDomain";
    case ErrorCode::FiniteDifferenceUnstable: return "FiniteDifferenceUnstable";
    case ErrorCode::InsufficientNullSamples: return "InsufficientNullSamples";
    case ErrorCode::NewtonDiverged: return "NewtonDiverged";
    case ErrorCode::SolutionOutsideU: return "SolutionOutsideU";
    case ErrorCode::ExtrapolationRequested: return "ExtrapolationRequested";
    case ErrorCode::SingularAffineMap: return "SingularAffineMap";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::SolverStalled: return "SolverStalled";
    case ErrorCode::DegenerateBody: return "DegenerateBody";
    case ErrorCode::NotWellCentered: return "NotWellCentered";
    case ErrorCode::NoWitnessFound: return "NoWitnessFound";
    case ErrorCode::EmptySlice: return "EmptySlice";
    case ErrorCode::ShrinkTau: return "ShrinkTau";
    case ErrorCode::EmptySection: return "EmptySection";
    case ErrorCode::PreconditionUnverifiable: return "PreconditionUnverifiable";
    case ErrorCode::PointNotOnDilatedBoundary: return "PointNotOnDilatedBoundary";
    case ErrorCode::ConstraintInfeasible: return "ConstraintInfeasible";
    case ErrorCode::HullDegenerate: return "HullDegenerate";
    case ErrorCode::DiameterTooLarge: return "DiameterTooLarge";
    case ErrorCode::ZeroGradient: return "ZeroGradient";
    case ErrorCode::NoAdmissiblePairs: return "NoAdmissiblePairs";
    case ErrorCode::InsufficientScales: return "InsufficientScales";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

double gaussian(Rng& rng) {
  // Box-Muller on the portable uniform.
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Vec random_unit(Rng& rng, int n) {
  Vec v(n);
  do {
    for (int i = 0; i < n; ++i) v[i] = gaussian(rng);
  } while (v.norm() < 1e-12);
  return v.normalized();
}

int thread_count() {
  if (const char* env = std::getenv("MTWLAB_THREADS")) {
    int t = std::atoi(env);
    if (t > 0) return t;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(int count, const std::function<void(int)>& body) {
  int workers = std::min(thread_count(), count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  int chunk = (count + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        int end = std::min(count, (w + 1) * chunk);
        for (int i = w * chunk; i < end; ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace mtwlab
