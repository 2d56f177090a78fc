#pragma once

#include <Eigen/Core>

#include "varexp/model_frame.hpp"
#include "varexp/reml.hpp"

namespace varexp::ref {

// Serial straight-from-definitions route: every matrix (V, H, H_C, C, the
// three projectors) is formed explicitly and inverted densely. Used as an
// independent oracle by tests and as the baseline in benchmarks; no code is
// shared with the production kernels beyond the frame types.

struct DenseModel {
  Eigen::MatrixXd h;      // I + Z G Z'
  Eigen::MatrixXd h_inv;
  Eigen::MatrixXd hc;     // I + C Z G Z' C
  Eigen::MatrixXd hc_inv;
  Eigen::MatrixXd c;      // I - 11'/n
  Eigen::MatrixXd p_h;    // H^{-1} - H^{-1}X(X'H^{-1}X)^{-1}X'H^{-1}
  Eigen::MatrixXd p_hi;   // with [1 X]
  Eigen::MatrixXd p_hc;   // H_C^{-1} - H_C^{-1}CX(X'CH_C^{-1}CX)^{-1}X'CH_C^{-1}
  double a = 0.0;         // 1'H^{-1}1
  double b = 0.0;         // 1'P_H 1
};

DenseModel build_dense(const ModelFrame& frame, const Eigen::VectorXd& gamma2);

struct DenseFit {
  double mu = 0.0;
  double mu_var = 0.0;
  Eigen::VectorXd beta;
  Eigen::MatrixXd cov_beta;
  Eigen::VectorXd u;
  Eigen::MatrixXd cov_u;
};

// GLS via explicit V: alpha = (Xt'V^{-1}Xt)^{-1} Xt'V^{-1} y with Xt = [1 X],
// u = D Z' P_V y (textbook BLUP), cov_u = D Z' P_V Z D.
DenseFit solve_gls(const ModelFrame& frame, const VarianceComponents& vc);

// Restricted log-likelihood from explicit determinants of V and Xt'V^{-1}Xt
// (same additive constant as the production version).
double restricted_loglik(const ModelFrame& frame, const VarianceComponents& vc);

struct DenseSummands {
  double s_x2 = 0.0;
  double s_z2_pop = 0.0;
  double s_z2_data = 0.0;
  double s_xz2 = 0.0;
  double sigma_y2 = 0.0;
};

// Decomposition summands from explicit centered moment matrices.
DenseSummands decompose(const ModelFrame& frame, const VarianceComponents& vc);

// Absolute residuals of the two REML stationarity equations at vc,
// unit-variance y scale: [0] first equation, [1..r] per block.
Eigen::VectorXd reml_residuals(const ModelFrame& frame,
                               const VarianceComponents& vc);

}  // namespace varexp::ref
