#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace mtwlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class ErrorCode {
  OutOfDomain,
  SingularMixedHessian,
  SegmentEscapesDomain,
  FiniteDifferenceUnstable,
  InsufficientNullSamples,
  NewtonDiverged,
  SolutionOutsideU,
  ExtrapolationRequested,
  SingularAffineMap,
  Infeasible,
  SolverStalled,
  DegenerateBody,
  NotWellCentered,
  NoWitnessFound,
  EmptySlice,
  ShrinkTau,
  EmptySection,
  PreconditionUnverifiable,
  PointNotOnDilatedBoundary,
  ConstraintInfeasible,
  HullDegenerate,
  DiameterTooLarge,
  ZeroGradient,
  NoAdmissiblePairs,
  InsufficientScales,
  ConfigError,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

using Rng = std::mt19937_64;

// Uniform sample in [0,1); std::uniform_real_distribution is not portable
// across standard libraries, reports must be bit-identical.
inline double uniform01(Rng& rng) { return double(rng() >> 11) * 0x1.0p-53; }
inline double uniform(Rng& rng, double a, double b) { return a + (b - a) * uniform01(rng); }
double gaussian(Rng& rng);
Vec random_unit(Rng& rng, int n);

// Worker count from MTWLAB_THREADS, else hardware concurrency.
int thread_count();
// Static-chunked loop; each index owns its output slot so results do not
// depend on the thread count.
void parallel_for(int count, const std::function<void(int)>& body);

}  // namespace mtwlab
