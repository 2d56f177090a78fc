#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "varexp/decomposition.hpp"
#include "varexp/inference.hpp"
#include "varexp/model_frame.hpp"
#include "varexp/reml.hpp"

namespace varexp {

struct BootstrapConfig {
  int n_replicates = 1000;
  std::uint64_t seed = 1;
  double level = 0.95;
  int workers = 0;  // 0: OpenMP default
  RemlConfig reml;
};

struct IntervalRow {
  double point = 0.0;   // share from the original fit
  double lower = 0.0;
  double upper = 0.0;
};

struct BootstrapResult {
  int n_replicates = 0;
  int n_failed = 0;  // non-converged replicates, dropped
  std::uint64_t seed = 0;
  double level = 0.95;
  // Label -> interval over replicate shares; labels are the attribution-table
  // rows plus "random_total:<block>", "data_cross_total", "cross_total",
  // "residual", and "r2".
  std::vector<std::pair<std::string, IntervalRow>> per_row;
  // Largest five-part identity residual across converged replicates.
  double max_identity_residual = 0.0;

  const IntervalRow* find(const std::string& label) const {
    for (const auto& [l, row] : per_row)
      if (l == label) return &row;
    return nullptr;
  }
};

// Parametric bootstrap: y* = 1 mu + X beta + sum_i Z_i u_i* + eps*, with
// u_i* ~ N(0, sigma_u_i^2 I) and eps* ~ N(0, sigma_eps^2 I) drawn from a
// counter-based stream keyed by (seed, replicate), so results are identical
// for any worker count. Each replicate is refit by REML and re-decomposed;
// non-converged replicates are dropped and counted, and a failure rate above
// 20% aborts with a diagnostic. Intervals are equal-tail percentile.
BootstrapResult parametric_bootstrap(const ModelFrame& frame,
                                     const FitResult& fit,
                                     const BootstrapConfig& config);

}  // namespace varexp
