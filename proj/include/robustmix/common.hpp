// common.hpp -- error taxonomy, deterministic summation, small numeric helpers.
//
// Everything in this library reports domain failures through typed exceptions
// derived from robustmix::Error so the CLI can map them to structured output
// and tests can assert on the exact failure kind.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace robustmix {

enum class ErrorCode {
    SingularCovariance,
    DimensionMismatch,
    InvalidWeights,
    InvalidSampleCount,
    InvalidEpsilon,
    DegenerateSubset,
    InvalidPartition,
    NoRoot,
    InvalidShape,
    Infeasible,
    DegreeTooHigh,
    DegenerateSelection,
    InvalidDegree,
    ApproximationFailed,
    PreconditionFailed,
    ConstructionFailed,
    WeightsNotCommensurate,
    AllCandidatesRejected,
    PipelineFailed,
    MissingInput,
    ParseError,
    UsageError,
};

inline const char* to_string(ErrorCode c) {
    switch (c) {
        case ErrorCode::SingularCovariance:     return "SingularCovariance";
        case ErrorCode::DimensionMismatch:      return "DimensionMismatch";
        case ErrorCode::InvalidWeights:         return "InvalidWeights";
        case ErrorCode::InvalidSampleCount:     return "InvalidSampleCount";
        case ErrorCode::InvalidEpsilon:         return "InvalidEpsilon";
        case ErrorCode::DegenerateSubset:       return "DegenerateSubset";
        case ErrorCode::InvalidPartition:       return "InvalidPartition";
        case ErrorCode::NoRoot:                 return "NoRoot";
        case ErrorCode::InvalidShape:           return "InvalidShape";
        case ErrorCode::Infeasible:             return "Infeasible";
        case ErrorCode::DegreeTooHigh:          return "DegreeTooHigh";
        case ErrorCode::DegenerateSelection:    return "DegenerateSelection";
        case ErrorCode::InvalidDegree:          return "InvalidDegree";
        case ErrorCode::ApproximationFailed:    return "ApproximationFailed";
        case ErrorCode::PreconditionFailed:     return "PreconditionFailed";
        case ErrorCode::ConstructionFailed:     return "ConstructionFailed";
        case ErrorCode::WeightsNotCommensurate: return "WeightsNotCommensurate";
        case ErrorCode::AllCandidatesRejected:  return "AllCandidatesRejected";
        case ErrorCode::PipelineFailed:         return "PipelineFailed";
        case ErrorCode::MissingInput:           return "MissingInput";
        case ErrorCode::ParseError:             return "ParseError";
        case ErrorCode::UsageError:             return "UsageError";
    }
    return "UnknownError";
}

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

#define ROBUSTMIX_DEFINE_ERROR(Name)                                      \
    class Name : public Error {                                           \
      public:                                                             \
        explicit Name(const std::string& what)                            \
            : Error(ErrorCode::Name, what) {}                             \
    }

ROBUSTMIX_DEFINE_ERROR(SingularCovariance);
ROBUSTMIX_DEFINE_ERROR(DimensionMismatch);
ROBUSTMIX_DEFINE_ERROR(InvalidWeights);
ROBUSTMIX_DEFINE_ERROR(InvalidSampleCount);
ROBUSTMIX_DEFINE_ERROR(InvalidEpsilon);
ROBUSTMIX_DEFINE_ERROR(DegenerateSubset);
ROBUSTMIX_DEFINE_ERROR(InvalidPartition);
ROBUSTMIX_DEFINE_ERROR(NoRoot);
ROBUSTMIX_DEFINE_ERROR(InvalidShape);
ROBUSTMIX_DEFINE_ERROR(Infeasible);
ROBUSTMIX_DEFINE_ERROR(DegreeTooHigh);
ROBUSTMIX_DEFINE_ERROR(DegenerateSelection);
ROBUSTMIX_DEFINE_ERROR(InvalidDegree);
ROBUSTMIX_DEFINE_ERROR(ApproximationFailed);
ROBUSTMIX_DEFINE_ERROR(PreconditionFailed);
ROBUSTMIX_DEFINE_ERROR(ConstructionFailed);
ROBUSTMIX_DEFINE_ERROR(WeightsNotCommensurate);
ROBUSTMIX_DEFINE_ERROR(AllCandidatesRejected);
ROBUSTMIX_DEFINE_ERROR(PipelineFailed);
ROBUSTMIX_DEFINE_ERROR(MissingInput);
ROBUSTMIX_DEFINE_ERROR(ParseError);
ROBUSTMIX_DEFINE_ERROR(UsageError);

#undef ROBUSTMIX_DEFINE_ERROR

// Deterministic summation with a fixed reduction tree.  The same input always
// reduces in the same order, independent of how callers chunk their work, so
// results are bitwise reproducible.  The tree (recursive halving down to
// blocks of 8) also keeps rounding error O(log n) instead of O(n).
inline double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 8) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += x[i];
        return acc;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

inline double pairwise_sum(const std::vector<double>& x) {
    return pairwise_sum(x.data(), x.size());
}

// n!! for n >= -1; (-1)!! = 0!! = 1.  Returned as double (exact for n <= 29).
inline double double_factorial(int n) {
    if (n < -1) throw InvalidDegree("double_factorial: n < -1");
    double acc = 1.0;
    for (int k = n; k >= 2; k -= 2) acc *= static_cast<double>(k);
    return acc;
}

inline double factorial(int n) {
    if (n < 0) throw InvalidDegree("factorial: n < 0");
    double acc = 1.0;
    for (int k = 2; k <= n; ++k) acc *= static_cast<double>(k);
    return acc;
}

// Exact binomial coefficients; C(64,32) still fits in uint64_t.  The running
// product C(n-r+i, i) is always integral, so multiply-then-divide in 128 bits
// stays exact.
inline std::uint64_t binomial_u64(int n, int r) {
    if (r < 0 || r > n) return 0;
    if (r > n - r) r = n - r;
    unsigned __int128 acc = 1;
    for (int i = 1; i <= r; ++i) {
        acc = acc * static_cast<unsigned>(n - r + i) / static_cast<unsigned>(i);
    }
    return static_cast<std::uint64_t>(acc);
}

inline double sq(double x) { return x * x; }

inline constexpr double kPi = 3.14159265358979323846264338327950288;
inline constexpr double kLog2Pi = 1.83787706640934548356065947281123527;

}  // namespace robustmix
