#pragma once

#include <Eigen/Core>
#include <array>
#include <vector>

#include "varexp/model_frame.hpp"

namespace varexp {

struct VarianceComponents {
  double sigma_eps2 = 0.0;
  Eigen::VectorXd sigma_u2;  // length r

  Eigen::VectorXd gamma2() const { return sigma_u2 / sigma_eps2; }
};

struct RemlConfig {
  double tol_param = 1e-8;  // relative parameter change
  double tol_eq = 1e-6;     // REML equation residuals, unit-variance y scale
  // Extra stationarity polish: iterate until the gamma-weighted equation
  // residual sum (which bounds the decomposition identity defect) drops
  // below this, so the variance decomposition is exact to ~1e-9.
  double tol_cert = 1e-9;
  int max_iter = 500;
};

struct RemlReport {
  VarianceComponents estimates;
  int iterations = 0;
  bool converged = false;
  // residual_reml_eqs[0]: |sigma_eps^2 - y'P y/(n-k-1)| of the last iterate
  // before the exit normalization; [1..r]: |sigma_eps^2 tr(P Z_i Z_i') -
  // y'P Z_i Z_i' P y| at the returned estimates. Unit-variance y scale.
  Eigen::VectorXd residual_reml_eqs;
  double restricted_loglik = 0.0;  // original y scale, up to a constant
  std::vector<bool> boundary_flags;
  // The three equivalent expressions for sigma_eps^2 evaluated at the
  // solution (original scale); they agree at a stationary point.
  std::array<double, 3> sigma_eps_variants{0.0, 0.0, 0.0};
  bool woodbury_path = false;
  bool ldlt_fallback = false;
};

// Restricted log-likelihood, up to an additive constant:
//   -1/2 [ (n-k-1) log s2 + log det H + log det([1 X]'H^{-1}[1 X])
//          + y'P_H^I y / s2 ],   gamma built from vc.
double restricted_loglik(const ModelFrame& frame, const VarianceComponents& vc);

// Damped fixed-point REML with the multiplicative update
//   sigma_u_i^2 <- sigma_u_i^2 * [y'P Z_i Z_i' P y] / [sigma_eps^2 tr(P Z_i Z_i')]
// (P = P_H^I), step-halving whenever the restricted log-likelihood would
// decrease, and sigma_eps^2 profiled from y'Py/(n-k-1). y is internally
// rescaled to unit sample variance (equivariance) and estimates unscaled at
// exit; the returned sigma_eps^2 satisfies the first REML equation exactly
// at the returned ratios. Components driven to the boundary are clamped to
// zero, flagged, kept eligible for re-entry for 3 sweeps, then frozen.
RemlReport fit_reml(const ModelFrame& frame, const RemlConfig& config = {});

}  // namespace varexp
