#include "varexp/inference.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "varexp/kernels.hpp"

namespace varexp {

namespace {

// Centering from the left: (C m)_{.j} = m_{.j} - mean(m_{.j}) 1.
Eigen::MatrixXd center(const Eigen::MatrixXd& m) {
  return m.rowwise() - m.colwise().mean();
}

}  // namespace

FitResult solve_blue_blup(const ModelFrame& frame, const VarianceComponents& vc,
                          const FitOptions& options) {
  if (vc.sigma_u2.size() != frame.r) {
    throw std::invalid_argument("sigma_u2 has wrong length");
  }
  if (!(vc.sigma_eps2 > 0.0) || !std::isfinite(vc.sigma_eps2)) {
    throw std::invalid_argument("sigma_eps2 must be positive and finite");
  }
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    if (!(vc.sigma_u2[i] >= 0.0) || !std::isfinite(vc.sigma_u2[i])) {
      throw std::invalid_argument("sigma_u2 entries must be nonnegative");
    }
  }

  const Eigen::Index n = frame.n;
  const Eigen::Index k = frame.k;
  const Eigen::Index p = frame.p;
  const double s2 = vc.sigma_eps2;
  const Eigen::VectorXd gamma2 = vc.gamma2();

  const KernelState state(frame, gamma2);

  FitResult fit;
  fit.vc = vc;

  Eigen::MatrixXd yx(n, k + 1);
  yx.col(0) = frame.y;
  if (k > 0) yx.rightCols(k) = frame.x;
  const Eigen::MatrixXd syx = state.chc_inv_c_apply(yx);
  const Eigen::VectorXd sy = syx.col(0);
  const auto sx = syx.rightCols(k);

  Eigen::LLT<Eigen::MatrixXd> b_llt;
  fit.beta_hat.resize(k);
  fit.cov_beta.resize(k, k);
  if (k > 0) {
    Eigen::MatrixXd bmat = frame.x.transpose() * sx;
    bmat = ((bmat + bmat.transpose()) * 0.5).eval();
    b_llt.compute(bmat);
    if (b_llt.info() != Eigen::Success) {
      throw std::runtime_error("X'S X is not positive definite");
    }
    fit.beta_hat = b_llt.solve(frame.x.transpose() * sy);
    fit.cov_beta = s2 * b_llt.solve(Eigen::MatrixXd::Identity(k, k));
  }

  const Eigen::VectorXd phy = state.p_h_apply(frame.y);
  fit.mu_hat = phy.sum() / state.b();
  fit.mu_var = s2 / state.b();

  // t = S(y - X beta) without another solve: S is linear.
  Eigen::VectorXd t = sy;
  if (k > 0) t.noalias() -= sx * fit.beta_hat;
  fit.u_tilde = frame.z.transpose() * t;
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    fit.u_tilde.segment(frame.blocks[static_cast<std::size_t>(i)].offset,
                        frame.blocks[static_cast<std::size_t>(i)].cols) *=
        gamma2[i];
  }

  if (p <= options.cov_u_cap) {
    if (p > 0) {
      const Eigen::MatrixXd sz = state.chc_inv_c_apply(frame.z);
      Eigen::MatrixXd m(p, p);
      m.noalias() = frame.z.transpose() * sz;
      if (k > 0) {
        const Eigen::MatrixXd ztsx = frame.z.transpose() * sx;  // p x k
        m.noalias() -= ztsx * b_llt.solve(ztsx.transpose());
      }
      m = ((m + m.transpose()) * 0.5).eval();
      for (Eigen::Index i = 0; i < frame.r; ++i) {
        const auto& bi = frame.blocks[static_cast<std::size_t>(i)];
        m.middleRows(bi.offset, bi.cols) *= gamma2[i];
        m.middleCols(bi.offset, bi.cols) *= gamma2[i];
      }
      fit.cov_u = s2 * m;
    } else {
      fit.cov_u.resize(0, 0);
    }
  } else {
    // Large p: never materialize p x p. The decomposition only needs the
    // block-pair traces tr(Sigma_hat_Z[i,j] Sigma_u[j,i]); route them through
    // n x n products of the kernels K_i = Z_i Z_i'.
    const Eigen::Index r = frame.r;
    fit.sz_covu_traces.resize(r, r);
    std::vector<Eigen::MatrixXd> kmat(static_cast<std::size_t>(r));
    std::vector<Eigen::MatrixXd> ck(static_cast<std::size_t>(r));
    std::vector<Eigen::MatrixXd> sk(static_cast<std::size_t>(r));
    for (Eigen::Index i = 0; i < r; ++i) {
      const auto zi = frame.z_block(i);
      kmat[static_cast<std::size_t>(i)].noalias() = zi * zi.transpose();
      ck[static_cast<std::size_t>(i)] = center(kmat[static_cast<std::size_t>(i)]);
      sk[static_cast<std::size_t>(i)] =
          state.chc_inv_c_apply(kmat[static_cast<std::size_t>(i)]);
    }
    for (Eigen::Index i = 0; i < r; ++i) {
      for (Eigen::Index j = 0; j < r; ++j) {
        const auto& ckj = ck[static_cast<std::size_t>(j)];
        const auto& ski = sk[static_cast<std::size_t>(i)];
        double val = ckj.cwiseProduct(ski.transpose()).sum();
        if (k > 0) {
          const Eigen::MatrixXd a1 = ckj * sx;                     // n x k
          const Eigen::MatrixXd a2 =
              kmat[static_cast<std::size_t>(i)] * a1;              // n x k
          const Eigen::MatrixXd a3 = sx.transpose() * a2;          // k x k
          val -= b_llt.solve(a3).trace();
        }
        fit.sz_covu_traces(i, j) =
            s2 * gamma2[i] * gamma2[j] * val / static_cast<double>(n - 1);
      }
    }
  }

  return fit;
}

FitResult fit_model(const ModelFrame& frame, const RemlConfig& config,
                    const FitOptions& options) {
  RemlReport report = fit_reml(frame, config);
  FitResult fit = solve_blue_blup(frame, report.estimates, options);
  fit.reml = std::move(report);
  return fit;
}

}  // namespace varexp
