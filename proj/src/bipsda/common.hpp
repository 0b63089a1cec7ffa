#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bipsda {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Error categories surfaced across the C boundary as status codes.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kDimensionMismatch = 2,
  kNotPositiveDefinite = 3,
  kDivergedSample = 4,
  kVariantUnsupported = 5,
  kConvergenceNotReached = 6,
  kConfigError = 7,
  kIoError = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// A Langevin/optimizer state left the finite region. `iteration` is the
/// inner sampler iteration; `anneal_index` is filled in by the engine.
class DivergedSampleError : public Error {
 public:
  DivergedSampleError(int iteration, const std::string& what)
      : Error(ErrorCode::kDivergedSample, what), iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }
  int anneal_index() const noexcept { return anneal_index_; }
  void set_anneal_index(int i) noexcept { anneal_index_ = i; }

 private:
  int iteration_;
  int anneal_index_ = -1;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

inline void require_dim(Index got, Index want, const char* what) {
  if (got != want) {
    fail(ErrorCode::kDimensionMismatch, std::string(what) + ": expected dimension " + std::to_string(want) +
                                            ", got " + std::to_string(got));
  }
}

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace bipsda
