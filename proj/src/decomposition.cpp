#include "varexp/decomposition.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace varexp {

namespace {

// A'CB/(n-1) without forming C: A'B - n * mean_a mean_b'.
Eigen::MatrixXd centered_cross(const Eigen::Ref<const Eigen::MatrixXd>& a,
                               const Eigen::Ref<const Eigen::MatrixXd>& b) {
  const auto n = static_cast<double>(a.rows());
  const Eigen::RowVectorXd ma = a.colwise().mean();
  const Eigen::RowVectorXd mb = b.colwise().mean();
  Eigen::MatrixXd out(a.cols(), b.cols());
  constexpr Eigen::Index kChunk = 32;
#ifdef _OPENMP
  if (b.cols() >= 2 * kChunk && a.rows() >= 256) {
    const Eigen::Index nchunks = (b.cols() + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static)
    for (Eigen::Index c = 0; c < nchunks; ++c) {
      const Eigen::Index c0 = c * kChunk;
      const Eigen::Index nc = std::min(kChunk, b.cols() - c0);
      out.middleCols(c0, nc).noalias() = a.transpose() * b.middleCols(c0, nc);
      out.middleCols(c0, nc).noalias() -=
          n * ma.transpose() * mb.segment(c0, nc);
    }
    out /= n - 1.0;
    return out;
  }
#endif
  out.noalias() = a.transpose() * b;
  out.noalias() -= n * ma.transpose() * mb;
  out /= n - 1.0;
  return out;
}

double centered_dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const auto n = static_cast<double>(a.size());
  return a.dot(b) - n * a.mean() * b.mean();
}

// tr(Sigma_hat_Z[i,j] Sigma_u[j,i]) for every block pair, from whichever
// representation the fit carries.
Eigen::MatrixXd pair_traces(const FitResult& fit,
                            const EmpiricalMoments& moments) {
  const ModelFrame& frame = *moments.frame;
  const Eigen::Index r = frame.r;
  if (fit.sz_covu_traces.size() > 0) return fit.sz_covu_traces;
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(r, r);
  if (r == 0) return t;
  if (fit.cov_u.size() == 0) {
    throw std::invalid_argument(
        "fit carries neither the BLUP covariance nor the block traces");
  }
  const auto n = static_cast<double>(frame.n);
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& bi = frame.blocks[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < r; ++j) {
      const auto& bj = frame.blocks[static_cast<std::size_t>(j)];
      const auto cu = fit.cov_u.block(bi.offset, bj.offset, bi.cols, bj.cols);
      if (moments.has_dense_z()) {
        t(i, j) = moments.sigma_z()
                      .block(bi.offset, bj.offset, bi.cols, bj.cols)
                      .cwiseProduct(cu)
                      .sum();
      } else {
        const auto zi = frame.z_block(i);
        const auto zj = frame.z_block(j);
        const Eigen::RowVectorXd mi = zi.colwise().mean();
        const Eigen::RowVectorXd mj = zj.colwise().mean();
        Eigen::MatrixXd sz(bi.cols, bj.cols);
        sz.noalias() = zi.transpose() * zj;
        sz.noalias() -= n * mi.transpose() * mj;
        sz /= n - 1.0;
        t(i, j) = sz.cwiseProduct(cu).sum();
      }
    }
  }
  return t;
}

// D_{ij} = v_i'C v_j/(n-1) - T_{ij} with v_i = Z_i u_i; row sums are the
// per-block data-specific contributions and the total is s_z2_data.
Eigen::MatrixXd data_pair_matrix(const FitResult& fit,
                                 const EmpiricalMoments& moments) {
  const ModelFrame& frame = *moments.frame;
  const Eigen::Index r = frame.r;
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(r, r);
  if (r == 0) return d;
  std::vector<Eigen::VectorXd> v(static_cast<std::size_t>(r));
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& bi = frame.blocks[static_cast<std::size_t>(i)];
    v[static_cast<std::size_t>(i)] =
        frame.z_block(i) * fit.u_tilde.segment(bi.offset, bi.cols);
  }
  const Eigen::MatrixXd t = pair_traces(fit, moments);
  const auto nm1 = static_cast<double>(frame.n - 1);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < r; ++j) {
      d(i, j) = centered_dot(v[static_cast<std::size_t>(i)],
                             v[static_cast<std::size_t>(j)]) /
                    nm1 -
                t(i, j);
    }
  }
  return d;
}

}  // namespace

EmpiricalMoments compute_moments(const ModelFrame& frame,
                                 Eigen::Index dense_cap) {
  EmpiricalMoments m;
  m.frame = &frame;
  const auto n = static_cast<double>(frame.n);
  const double nm1 = n - 1.0;

  const double y_mean = frame.y.mean();
  m.tss = (frame.y.array() - y_mean).matrix().squaredNorm();
  m.sigma_y2 = m.tss / nm1;

  m.tr_sigma_z_block.resize(frame.r);
  m.tr_zz_block.resize(frame.r);
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    const auto zi = frame.z_block(i);
    const double sq = zi.squaredNorm();
    const Eigen::RowVectorXd mean = zi.colwise().mean();
    m.tr_zz_block[i] = sq;
    m.tr_sigma_z_block[i] = (sq - n * mean.squaredNorm()) / nm1;
  }

  auto mats = std::make_shared<EmpiricalMoments::Matrices>();
  mats->sigma_x = centered_cross(frame.x, frame.x);
  if (frame.p <= dense_cap && frame.p > 0) {
    mats->sigma_z = centered_cross(frame.z, frame.z);
    mats->sigma_xz = centered_cross(frame.x, frame.z);
  }
  m.mats_ = std::move(mats);
  return m;
}

Decomposition decompose(const FitResult& fit, const EmpiricalMoments& moments) {
  const ModelFrame& frame = *moments.frame;
  const Eigen::Index k = frame.k;
  const Eigen::Index r = frame.r;
  const auto n = static_cast<double>(frame.n);

  Decomposition d;
  d.sigma_eps2 = fit.vc.sigma_eps2;
  d.sigma_y2 = moments.sigma_y2;
  d.converged = fit.reml ? fit.reml->converged : true;

  if (k > 0) {
    const Eigen::MatrixXd& sx = moments.sigma_x();
    d.sigma_f2 = fit.beta_hat.dot(sx * fit.beta_hat);
    d.s_x2 = d.sigma_f2 - (sx * fit.cov_beta).trace();
  }

  for (Eigen::Index i = 0; i < r; ++i) {
    d.s_z2_pop += fit.vc.sigma_u2[i] * moments.tr_sigma_z_block[i];
    d.sigma_l2 += fit.vc.sigma_u2[i] * moments.tr_zz_block[i];
  }
  d.sigma_l2 /= n;

  d.s_z2_data = data_pair_matrix(fit, moments).sum();

  if (k > 0 && r > 0) {
    const Eigen::VectorXd f = frame.x * fit.beta_hat;
    const Eigen::VectorXd w = frame.z * fit.u_tilde;
    d.s_xz2 = 2.0 * centered_dot(f, w) / (n - 1.0);
  }

  d.r2 = 1.0 - d.sigma_eps2 / d.sigma_y2;
  d.r2_pop = (d.s_x2 + d.s_z2_pop) / (d.s_x2 + d.s_z2_pop + d.sigma_eps2);
  const double denom = d.sigma_f2 + d.sigma_l2 + d.sigma_eps2;
  d.r2_marginal = d.sigma_f2 / denom;
  d.r2_conditional = (d.sigma_f2 + d.sigma_l2) / denom;
  return d;
}

Eigen::VectorXd attribute_fixed(const FitResult& fit,
                                const EmpiricalMoments& moments) {
  const Eigen::Index k = moments.frame->k;
  Eigen::VectorXd rows = Eigen::VectorXd::Zero(k);
  if (k == 0) return rows;
  const Eigen::MatrixXd& sx = moments.sigma_x();
  const Eigen::VectorXd sxb = sx * fit.beta_hat;
  for (Eigen::Index i = 0; i < k; ++i) {
    rows[i] = fit.beta_hat[i] * sxb[i] - sx.row(i).dot(fit.cov_beta.col(i));
  }
  return rows;
}

RandomAttribution attribute_random(const FitResult& fit,
                                   const EmpiricalMoments& moments) {
  const ModelFrame& frame = *moments.frame;
  RandomAttribution attr;
  attr.population.resize(frame.r);
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    attr.population[i] = fit.vc.sigma_u2[i] * moments.tr_sigma_z_block[i];
  }
  attr.data_specific = data_pair_matrix(fit, moments).rowwise().sum();
  return attr;
}

CrossAttribution attribute_cross(const FitResult& fit,
                                 const EmpiricalMoments& moments) {
  const ModelFrame& frame = *moments.frame;
  const Eigen::Index k = frame.k;
  const Eigen::Index r = frame.r;
  const double nm1 = static_cast<double>(frame.n - 1);

  CrossAttribution attr;
  attr.fixed = Eigen::VectorXd::Zero(k);
  attr.random = Eigen::VectorXd::Zero(r);
  if (k == 0 || r == 0) return attr;

  const Eigen::VectorXd w = frame.z * fit.u_tilde;
  const Eigen::VectorXd f = frame.x * fit.beta_hat;

  // beta_j (Sigma_XZ u)_j, with X'Cw formed directly from the vectors
  const auto n = static_cast<double>(frame.n);
  const Eigen::VectorXd xcw =
      frame.x.transpose() * w -
      n * w.mean() * frame.x.colwise().mean().transpose();
  for (Eigen::Index j = 0; j < k; ++j) {
    attr.fixed[j] = fit.beta_hat[j] * xcw[j] / nm1;
  }

  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& bi = frame.blocks[static_cast<std::size_t>(i)];
    const Eigen::VectorXd vi =
        frame.z_block(i) * fit.u_tilde.segment(bi.offset, bi.cols);
    attr.random[i] = centered_dot(f, vi) / nm1;
  }
  return attr;
}

LmReference lm_reference(const ModelFrame& frame) {
  const Eigen::Index n = frame.n;
  const Eigen::Index k = frame.k;
  Eigen::MatrixXd xt(n, k + 1);
  xt.col(0).setOnes();
  if (k > 0) xt.rightCols(k) = frame.x;

  const Eigen::VectorXd coef = xt.colPivHouseholderQr().solve(frame.y);
  const Eigen::VectorXd yhat = xt * coef;

  LmReference lm;
  lm.tss = (frame.y.array() - frame.y.mean()).matrix().squaredNorm();
  lm.ess = (yhat.array() - yhat.mean()).matrix().squaredNorm();
  lm.rss = (frame.y - yhat).squaredNorm();
  lm.r2 = lm.ess / lm.tss;
  lm.r2_adjusted = 1.0 - (1.0 - lm.r2) * static_cast<double>(n - 1) /
                             static_cast<double>(n - k - 1);
  return lm;
}

std::vector<AttributionRow> attribution_table(const FitResult& fit,
                                              const EmpiricalMoments& moments,
                                              const Decomposition& decomp) {
  const ModelFrame& frame = *moments.frame;
  std::vector<AttributionRow> rows;
  const double sy2 = decomp.sigma_y2;

  const Eigen::VectorXd fixed = attribute_fixed(fit, moments);
  for (Eigen::Index j = 0; j < frame.k; ++j) {
    rows.push_back({frame.x_names[static_cast<std::size_t>(j)], RowKind::fixed,
                    fixed[j], fixed[j] / sy2});
  }

  const RandomAttribution random = attribute_random(fit, moments);
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    rows.push_back({frame.blocks[static_cast<std::size_t>(i)].label,
                    RowKind::random_population, random.population[i],
                    random.population[i] / sy2});
  }
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    rows.push_back({frame.blocks[static_cast<std::size_t>(i)].label,
                    RowKind::random_data, random.data_specific[i],
                    random.data_specific[i] / sy2});
  }

  const CrossAttribution cross = attribute_cross(fit, moments);
  for (Eigen::Index j = 0; j < frame.k; ++j) {
    rows.push_back({frame.x_names[static_cast<std::size_t>(j)],
                    RowKind::cross_fixed, cross.fixed[j], cross.fixed[j] / sy2});
  }
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    rows.push_back({frame.blocks[static_cast<std::size_t>(i)].label,
                    RowKind::cross_random, cross.random[i],
                    cross.random[i] / sy2});
  }

  rows.push_back({"residual", RowKind::residual, decomp.sigma_eps2,
                  decomp.sigma_eps2 / sy2});
  return rows;
}

}  // namespace varexp
