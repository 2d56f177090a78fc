#pragma once

#include <Eigen/Core>
#include <optional>

#include "varexp/model_frame.hpp"
#include "varexp/reml.hpp"

namespace varexp {

struct FitOptions {
  // Above this total random dimension p the full p x p BLUP covariance is not
  // materialized; only the block-pair traces needed by the decomposition are.
  Eigen::Index cov_u_cap = 2000;
};

struct FitResult {
  VarianceComponents vc;
  double mu_hat = 0.0;
  double mu_var = 0.0;            // sigma_eps^2 / b
  Eigen::VectorXd beta_hat;       // k
  Eigen::MatrixXd cov_beta;       // k x k
  Eigen::VectorXd u_tilde;        // p (concatenated blocks)
  Eigen::MatrixXd cov_u;          // p x p, empty when p > cov_u_cap
  // tr(Sigma_hat_Z[i,j] * Sigma_u_tilde[j,i]) for every block pair; filled
  // whenever cov_u is not materialized (n x n route), else left empty and
  // derived from cov_u downstream.
  Eigen::MatrixXd sz_covu_traces;
  std::optional<RemlReport> reml;
};

// BLUE/BLUP at the given variance components:
//   beta = (X'C H_C^{-1} C X)^{-1} X'C H_C^{-1} C y,  Sigma_beta = s2 B^{-1},
//   u    = G Z'C H_C^{-1} C (y - X beta),
//   Sigma_u = s2 [G Z'S Z G - G Z'S X B^{-1} X'S Z G],  S = C H_C^{-1} C,
//   mu   = b^{-1} 1'P_H y,  var(mu) = s2 / b.
FitResult solve_blue_blup(const ModelFrame& frame, const VarianceComponents& vc,
                          const FitOptions& options = {});

// fit_reml followed by solve_blue_blup at the estimates.
FitResult fit_model(const ModelFrame& frame, const RemlConfig& config = {},
                    const FitOptions& options = {});

}  // namespace varexp
