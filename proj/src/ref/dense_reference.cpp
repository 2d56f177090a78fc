#include "varexp/ref/dense_reference.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace varexp::ref {

namespace {

Eigen::MatrixXd zgz(const ModelFrame& frame, const Eigen::VectorXd& weights) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(frame.n, frame.n);
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    const auto zi = frame.z_block(i);
    out.noalias() += weights[i] * (zi * zi.transpose());
  }
  return out;
}

Eigen::MatrixXd centering(Eigen::Index n) {
  return Eigen::MatrixXd::Identity(n, n) -
         Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
}

Eigen::MatrixXd projector(const Eigen::MatrixXd& inv,
                          const Eigen::MatrixXd& design) {
  if (design.cols() == 0) return inv;
  const Eigen::MatrixXd iv = inv * design;
  const Eigen::MatrixXd gram = design.transpose() * iv;
  return inv - iv * gram.inverse() * iv.transpose();
}

Eigen::MatrixXd with_intercept(const ModelFrame& frame) {
  Eigen::MatrixXd xt(frame.n, frame.k + 1);
  xt.col(0).setOnes();
  if (frame.k > 0) xt.rightCols(frame.k) = frame.x;
  return xt;
}

}  // namespace

DenseModel build_dense(const ModelFrame& frame, const Eigen::VectorXd& gamma2) {
  const Eigen::Index n = frame.n;
  DenseModel m;
  const Eigen::MatrixXd core = zgz(frame, gamma2);
  m.h = Eigen::MatrixXd::Identity(n, n) + core;
  m.h_inv = m.h.inverse();
  m.c = centering(n);
  m.hc = Eigen::MatrixXd::Identity(n, n) + m.c * core * m.c;
  m.hc_inv = m.hc.inverse();
  m.p_h = projector(m.h_inv, frame.x);
  m.p_hi = projector(m.h_inv, with_intercept(frame));
  m.p_hc = projector(m.hc_inv, Eigen::MatrixXd(m.c * frame.x));
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  m.a = ones.dot(m.h_inv * ones);
  m.b = ones.dot(m.p_h * ones);
  return m;
}

DenseFit solve_gls(const ModelFrame& frame, const VarianceComponents& vc) {
  const Eigen::Index n = frame.n;
  const Eigen::Index k = frame.k;

  Eigen::MatrixXd v =
      vc.sigma_eps2 * Eigen::MatrixXd::Identity(n, n) + zgz(frame, vc.sigma_u2);
  const Eigen::MatrixXd v_inv = v.inverse();
  const Eigen::MatrixXd xt = with_intercept(frame);
  const Eigen::MatrixXd gram_inv = (xt.transpose() * v_inv * xt).inverse();
  const Eigen::VectorXd alpha = gram_inv * (xt.transpose() * (v_inv * frame.y));
  const Eigen::MatrixXd p_v =
      v_inv - v_inv * xt * gram_inv * xt.transpose() * v_inv;

  DenseFit fit;
  fit.mu = alpha[0];
  fit.mu_var = gram_inv(0, 0);
  fit.beta = alpha.tail(k);
  fit.cov_beta = gram_inv.bottomRightCorner(k, k);

  Eigen::MatrixXd zd = frame.z;  // Z D, scaled per block
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    zd.middleCols(frame.blocks[static_cast<std::size_t>(i)].offset,
                  frame.blocks[static_cast<std::size_t>(i)].cols) *=
        vc.sigma_u2[i];
  }
  fit.u = zd.transpose() * (p_v * frame.y);
  fit.cov_u = zd.transpose() * p_v * zd;
  return fit;
}

double restricted_loglik(const ModelFrame& frame, const VarianceComponents& vc) {
  const Eigen::Index n = frame.n;
  Eigen::MatrixXd v =
      vc.sigma_eps2 * Eigen::MatrixXd::Identity(n, n) + zgz(frame, vc.sigma_u2);
  const Eigen::MatrixXd v_inv = v.inverse();
  const Eigen::MatrixXd xt = with_intercept(frame);
  const Eigen::MatrixXd gram = xt.transpose() * v_inv * xt;
  const Eigen::MatrixXd p_v = v_inv - v_inv * xt * gram.inverse() *
                                          xt.transpose() * v_inv;

  const double log_det_v = v.ldlt().vectorD().array().log().sum();
  const double log_det_gram = gram.ldlt().vectorD().array().log().sum();
  const double quad = frame.y.dot(p_v * frame.y);
  return -0.5 * (log_det_v + log_det_gram + quad);
}

DenseSummands decompose(const ModelFrame& frame, const VarianceComponents& vc) {
  const Eigen::Index n = frame.n;
  const double nm1 = static_cast<double>(n - 1);
  const Eigen::MatrixXd c = centering(n);
  const DenseFit fit = solve_gls(frame, vc);

  DenseSummands s;
  s.sigma_y2 = frame.y.dot(c * frame.y) / nm1;

  if (frame.k > 0) {
    const Eigen::MatrixXd sx = frame.x.transpose() * c * frame.x / nm1;
    s.s_x2 = fit.beta.dot(sx * fit.beta) - (sx * fit.cov_beta).trace();
  }

  for (Eigen::Index i = 0; i < frame.r; ++i) {
    const auto zi = frame.z_block(i);
    s.s_z2_pop +=
        vc.sigma_u2[i] * (zi.transpose() * c * zi).trace() / nm1;
  }

  if (frame.p > 0) {
    const Eigen::MatrixXd sz = frame.z.transpose() * c * frame.z / nm1;
    s.s_z2_data = fit.u.dot(sz * fit.u) - (sz * fit.cov_u).trace();
    if (frame.k > 0) {
      const Eigen::MatrixXd sxz = frame.x.transpose() * c * frame.z / nm1;
      s.s_xz2 = 2.0 * fit.beta.dot(sxz * fit.u);
    }
  }
  return s;
}

Eigen::VectorXd reml_residuals(const ModelFrame& frame,
                               const VarianceComponents& vc) {
  const Eigen::Index n = frame.n;
  const double dof = static_cast<double>(n - frame.k - 1);
  const double y_mean = frame.y.mean();
  const double tss = (frame.y.array() - y_mean).matrix().squaredNorm();
  const double scale2 = tss / static_cast<double>(n - 1);
  const Eigen::VectorXd ys = frame.y / std::sqrt(scale2);
  const double se2 = vc.sigma_eps2 / scale2;

  const DenseModel m = build_dense(frame, vc.gamma2());
  const Eigen::VectorXd py = m.p_hi * ys;
  const double quad = ys.dot(py);

  Eigen::VectorXd res(frame.r + 1);
  res[0] = std::abs(se2 - quad / dof);
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    const auto zi = frame.z_block(i);
    const Eigen::MatrixXd ki = zi * zi.transpose();
    const double tr = (m.p_hi * ki).trace();
    const double num = py.dot(ki * py);
    // same boundary convention as the solver: a clamped component reports
    // only the violation of the one-sided condition
    res[i + 1] = vc.sigma_u2[i] > 0.0 ? std::abs(se2 * tr - num)
                                      : std::max(0.0, num - se2 * tr);
  }
  return res;
}

}  // namespace varexp::ref
