#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "varexp/model_frame.hpp"

namespace varexp {

class KernelError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Cross-iteration cache of quantities that depend on the frame only.
struct KernelCache {
  Eigen::MatrixXd ztz;  // Z'Z, empty when never needed (dense-H regime)
};
KernelCache make_kernel_cache(const ModelFrame& frame);

// Solver state for one ratio vector gamma2 (gamma2[i] = sigma_u_i^2 /
// sigma_eps^2). Provides matrix-free applications of
//   H^{-1},  with H = I + Z G Z',   G = diag(gamma2[i] I_{p_i}),
//   C H_C^{-1} C  (via  H^{-1}m - a^{-1} H^{-1}1 (1'H^{-1}m),  a = 1'H^{-1}1),
//   P_H   = H^{-1} - H^{-1}X (X'H^{-1}X)^{-1} X'H^{-1}          (X without 1),
//   P_H^I = same with [1 X],
// choosing a Woodbury factorization of A = G^{-1} + Z'Z over active blocks
// when sum of active p_i < n, and a dense factorization of H otherwise.
// Blocks with gamma2[i] == 0 are excluded from the active set.
class KernelState {
public:
  KernelState(const ModelFrame& frame, Eigen::VectorXd gamma2,
              const KernelCache* cache = nullptr);

  Eigen::MatrixXd h_inv_apply(const Eigen::Ref<const Eigen::MatrixXd>& m) const;
  Eigen::MatrixXd chc_inv_c_apply(const Eigen::Ref<const Eigen::MatrixXd>& m) const;
  Eigen::MatrixXd p_h_apply(const Eigen::Ref<const Eigen::MatrixXd>& m) const;
  Eigen::MatrixXd p_hi_apply(const Eigen::Ref<const Eigen::MatrixXd>& m) const;

  double a() const { return a_; }  // 1'H^{-1}1
  double b() const { return b_; }  // 1'P_H 1
  double log_det_h() const;
  double log_det_xt_hinv_xt() const;  // log det([1 X]'H^{-1}[1 X])
  double tr_h_inv() const;
  double tr_p_hi() const;

  const ModelFrame& frame() const { return *frame_; }
  const Eigen::VectorXd& gamma2() const { return gamma2_; }
  const std::vector<int>& active_blocks() const { return active_; }
  bool woodbury_path() const { return woodbury_; }
  bool ldlt_fallback() const { return ldlt_fallback_; }

private:
  Eigen::MatrixXd solve_core(const Eigen::Ref<const Eigen::MatrixXd>& m) const;

  const ModelFrame* frame_;
  Eigen::VectorXd gamma2_;
  std::vector<int> active_;
  bool woodbury_ = true;
  bool ldlt_fallback_ = false;

  // Woodbury branch
  Eigen::MatrixXd z_act_;          // empty when all blocks active (use frame z)
  Eigen::MatrixXd ztz_act_;
  Eigen::LLT<Eigen::MatrixXd> a_llt_;
  Eigen::LDLT<Eigen::MatrixXd> a_ldlt_;
  // Dense branch
  Eigen::LLT<Eigen::MatrixXd> h_llt_;
  Eigen::LDLT<Eigen::MatrixXd> h_ldlt_;

  const Eigen::MatrixXd& z_active() const;

  Eigen::VectorXd hinv_ones_;      // H^{-1}1
  Eigen::MatrixXd hinv_xt_;        // H^{-1}[1 X]
  Eigen::MatrixXd gram_;           // [1 X]'H^{-1}[1 X]
  Eigen::LLT<Eigen::MatrixXd> gram_llt_;
  Eigen::LLT<Eigen::MatrixXd> gram_x_llt_;  // X'H^{-1}X (k>=1)
  double a_ = 0.0, b_ = 0.0;
  double log_det_h_ = 0.0;
  mutable std::optional<double> tr_h_inv_;
};

// Dense verification of the three centered-projector identities:
//   (i)   C H_C^{-1} = H_C^{-1} C = C H_C^{-1} C = H^{-1}(I - a^{-1}11'H^{-1}),
//         together with H_C^{-1}1 = 1,
//   (ii)  P_H^I = P_H (I - b^{-1} 11' P_H),
//   (iii) C P_H^C C = C P_H^C = P_H^C C = P_H^I.
// Both sides are formed explicitly from definitions; deviations are max
// elementwise differences relative to the magnitude of the reference side.
// dev_fast_apply additionally compares this state's apply operations with the
// dense inverses.
struct IdentityReport {
  double dev_ch = 0.0;
  double dev_p_hi = 0.0;
  double dev_cpc = 0.0;
  double dev_fast_apply = 0.0;
};
IdentityReport identity_suite(const KernelState& state,
                              const Eigen::MatrixXd& x_design);

}  // namespace varexp
