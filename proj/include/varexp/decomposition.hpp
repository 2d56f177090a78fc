#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>
#include <vector>

#include "varexp/inference.hpp"
#include "varexp/model_frame.hpp"

namespace varexp {

// Centered cross moments with divisor n-1. The p x p and k x p matrices are
// materialized only while p <= dense_cap; the scalar summaries needed by the
// decomposition are always present. Copies are cheap (matrices shared).
struct EmpiricalMoments {
  double sigma_y2 = 0.0;             // y'Cy/(n-1)
  double tss = 0.0;                  // y'Cy
  Eigen::VectorXd tr_sigma_z_block;  // r: tr(Sigma_hat_{Z_i})
  Eigen::VectorXd tr_zz_block;       // r: tr(Z_i'Z_i), uncentered
  const ModelFrame* frame = nullptr;

  const Eigen::MatrixXd& sigma_x() const { return mats_->sigma_x; }
  const Eigen::MatrixXd& sigma_z() const { return mats_->sigma_z; }
  const Eigen::MatrixXd& sigma_xz() const { return mats_->sigma_xz; }
  bool has_dense_z() const { return mats_->sigma_z.size() > 0; }

  struct Matrices {
    Eigen::MatrixXd sigma_x;   // k x k
    Eigen::MatrixXd sigma_z;   // p x p or empty
    Eigen::MatrixXd sigma_xz;  // k x p or empty
  };
  std::shared_ptr<const Matrices> mats_;
};

EmpiricalMoments compute_moments(const ModelFrame& frame,
                                 Eigen::Index dense_cap = 2000);

struct Decomposition {
  double s_x2 = 0.0;       // beta' Sx beta - tr(Sx Sigma_beta)
  double s_z2_pop = 0.0;   // sum_i sigma_u_i^2 tr(Sigma_hat_{Z_i})
  double s_z2_data = 0.0;  // u'Sz u - tr(Sz Sigma_u)
  double s_xz2 = 0.0;      // 2 beta' Sxz u
  double sigma_eps2 = 0.0;
  double sigma_y2 = 0.0;
  double r2 = 0.0;              // 1 - sigma_eps2/sigma_y2
  double r2_pop = 0.0;          // (s_x2 + s_z2_pop)/(s_x2 + s_z2_pop + eps)
  double r2_marginal = 0.0;     // sigma_f2/(sigma_f2 + sigma_l2 + eps)
  double r2_conditional = 0.0;  // (sigma_f2 + sigma_l2)/(...)
  double sigma_f2 = 0.0;        // beta' Sx beta (uncorrected)
  double sigma_l2 = 0.0;        // tr(Z D Z')/n
  bool converged = true;        // advisory copy of the REML flag

  double s_z2() const { return s_z2_pop + s_z2_data; }
  double summand_total() const {
    return s_x2 + s_z2_pop + s_z2_data + s_xz2 + sigma_eps2;
  }
  // |sigma_y2 - summand total| / sigma_y2; ~0 at a REML stationary point.
  double identity_residual() const {
    return std::abs(sigma_y2 - summand_total()) / sigma_y2;
  }
};

Decomposition decompose(const FitResult& fit, const EmpiricalMoments& moments);

// Per-covariate fixed rows: row i = sum_j (Sx)_{ij} [beta_i beta_j -
// (Sigma_beta)_{ij}]; rows sum to s_x2.
Eigen::VectorXd attribute_fixed(const FitResult& fit,
                                const EmpiricalMoments& moments);

// Per-block random rows; population rows sum to s_z2_pop, data rows to
// s_z2_data.
struct RandomAttribution {
  Eigen::VectorXd population;
  Eigen::VectorXd data_specific;
};
RandomAttribution attribute_random(const FitResult& fit,
                                   const EmpiricalMoments& moments);

// Cross rows: k fixed rows (each beta_j (Sxz u)_j) and r random rows (each
// beta' Sxz_i u_i); all k+r rows together sum to s_xz2.
struct CrossAttribution {
  Eigen::VectorXd fixed;
  Eigen::VectorXd random;
};
CrossAttribution attribute_cross(const FitResult& fit,
                                 const EmpiricalMoments& moments);

// OLS on [1 X]: TSS = y'Cy, ESS = yhat'C yhat, RSS residual sum of squares,
// R2 = ESS/TSS, adjusted R2 = 1 - (1-R2)(n-1)/(n-k-1).
struct LmReference {
  double tss = 0.0, ess = 0.0, rss = 0.0;
  double r2 = 0.0, r2_adjusted = 0.0;
};
LmReference lm_reference(const ModelFrame& frame);

enum class RowKind {
  fixed,
  random_population,
  random_data,
  cross_fixed,
  cross_random,
  residual
};

struct AttributionRow {
  std::string label;
  RowKind kind;
  double value = 0.0;  // variance units
  double share = 0.0;  // value / sigma_y2
};

std::vector<AttributionRow> attribution_table(const FitResult& fit,
                                              const EmpiricalMoments& moments,
                                              const Decomposition& decomp);

}  // namespace varexp
