#include "varexp/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace varexp {

namespace {

// Fixed 32-column chunks keep results identical for every thread count: the
// parallel and serial schedules compute exactly the same partitioned products.
template <class F>
void for_each_chunk(Eigen::Index cols, Eigen::Index rows, const F& f) {
  constexpr Eigen::Index kChunk = 32;
#ifdef _OPENMP
  if (cols >= 2 * kChunk && rows >= 256) {
    const Eigen::Index nchunks = (cols + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static)
    for (Eigen::Index c = 0; c < nchunks; ++c) {
      const Eigen::Index c0 = c * kChunk;
      f(c0, std::min(kChunk, cols - c0));
    }
    return;
  }
#endif
  if (cols > 0) f(0, cols);
  (void)rows;
}

double log_det_of(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

double log_det_of(const Eigen::LDLT<Eigen::MatrixXd>& ldlt) {
  const Eigen::VectorXd d = ldlt.vectorD();
  if ((d.array() <= 0.0).any()) {
    throw KernelError("matrix numerically singular in factorization");
  }
  return d.array().log().sum();
}

}  // namespace

KernelCache make_kernel_cache(const ModelFrame& frame) {
  KernelCache cache;
  if (frame.p > 0) {
    cache.ztz.resize(frame.p, frame.p);
    cache.ztz.setZero();
    cache.ztz.selfadjointView<Eigen::Lower>().rankUpdate(frame.z.adjoint());
    cache.ztz.triangularView<Eigen::StrictlyUpper>() =
        cache.ztz.transpose().triangularView<Eigen::StrictlyUpper>();
  }
  return cache;
}

KernelState::KernelState(const ModelFrame& frame, Eigen::VectorXd gamma2,
                         const KernelCache* cache)
    : frame_(&frame), gamma2_(std::move(gamma2)) {
  const Eigen::Index n = frame.n;
  if (gamma2_.size() != frame.r) {
    throw KernelError("gamma2 has " + std::to_string(gamma2_.size()) +
                      " entries, model has " + std::to_string(frame.r) +
                      " random blocks");
  }
  Eigen::Index p_act = 0;
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    if (!std::isfinite(gamma2_[i]) || gamma2_[i] < 0.0) {
      throw KernelError("variance ratios must be finite and nonnegative");
    }
    if (gamma2_[i] > 0.0) {
      active_.push_back(static_cast<int>(i));
      p_act += frame.blocks[static_cast<std::size_t>(i)].cols;
    }
  }

  woodbury_ = p_act < n;
  if (woodbury_) {
    if (p_act > 0) {
      const bool all_active =
          static_cast<Eigen::Index>(active_.size()) == frame.r;
      if (!all_active) {
        z_act_.resize(n, p_act);
        Eigen::Index off = 0;
        for (int i : active_) {
          const auto& b = frame.blocks[static_cast<std::size_t>(i)];
          z_act_.middleCols(off, b.cols) = frame.z.middleCols(b.offset, b.cols);
          off += b.cols;
        }
      }
      Eigen::MatrixXd a_mat(p_act, p_act);
      if (cache && cache->ztz.size() > 0) {
        Eigen::Index ro = 0;
        for (int i : active_) {
          const auto& bi = frame.blocks[static_cast<std::size_t>(i)];
          Eigen::Index co = 0;
          for (int j : active_) {
            const auto& bj = frame.blocks[static_cast<std::size_t>(j)];
            a_mat.block(ro, co, bi.cols, bj.cols) =
                cache->ztz.block(bi.offset, bj.offset, bi.cols, bj.cols);
            co += bj.cols;
          }
          ro += bi.cols;
        }
        ztz_act_ = a_mat;
      } else {
        const Eigen::MatrixXd& z = z_active();
        ztz_act_.noalias() = z.transpose() * z;
        a_mat = ztz_act_;
      }
      double log_det_g = 0.0;
      Eigen::Index off = 0;
      for (int i : active_) {
        const auto& b = frame.blocks[static_cast<std::size_t>(i)];
        a_mat.diagonal().segment(off, b.cols).array() +=
            1.0 / gamma2_[static_cast<Eigen::Index>(i)];
        log_det_g += static_cast<double>(b.cols) *
                     std::log(gamma2_[static_cast<Eigen::Index>(i)]);
        off += b.cols;
      }
      a_llt_.compute(a_mat);
      if (a_llt_.info() != Eigen::Success) {
        a_ldlt_.compute(a_mat);
        ldlt_fallback_ = true;
        log_det_h_ = log_det_of(a_ldlt_) + log_det_g;
      } else {
        log_det_h_ = log_det_of(a_llt_) + log_det_g;
      }
    } else {
      log_det_h_ = 0.0;  // H = I
    }
  } else {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    for (int i : active_) {
      h.selfadjointView<Eigen::Lower>().rankUpdate(
          frame.z_block(static_cast<Eigen::Index>(i)),
          gamma2_[static_cast<Eigen::Index>(i)]);
    }
    h.diagonal().array() += 1.0;
    if (!h.allFinite()) {
      throw KernelError("H is not finite; a variance ratio is too large");
    }
    h_llt_.compute(h);  // reads the lower triangle only
    if (h_llt_.info() != Eigen::Success) {
      h_ldlt_.compute(Eigen::MatrixXd(h.selfadjointView<Eigen::Lower>()));
      ldlt_fallback_ = true;
      log_det_h_ = log_det_of(h_ldlt_);
    } else {
      log_det_h_ = log_det_of(h_llt_);
    }
  }

  Eigen::MatrixXd xt(n, frame.k + 1);
  xt.col(0).setOnes();
  if (frame.k > 0) xt.rightCols(frame.k) = frame.x;
  hinv_xt_ = solve_core(xt);
  hinv_ones_ = hinv_xt_.col(0);
  gram_.noalias() = xt.transpose() * hinv_xt_;
  gram_ = ((gram_ + gram_.transpose()) * 0.5).eval();
  a_ = gram_(0, 0);
  if (!(a_ > 0.0)) {
    throw KernelError("1'H^{-1}1 is not positive; H factorization unusable");
  }
  gram_llt_.compute(gram_);
  if (gram_llt_.info() != Eigen::Success) {
    throw KernelError("[1 X]'H^{-1}[1 X] is not positive definite");
  }
  if (frame.k > 0) {
    gram_x_llt_.compute(gram_.bottomRightCorner(frame.k, frame.k));
    if (gram_x_llt_.info() != Eigen::Success) {
      throw KernelError("X'H^{-1}X is not positive definite");
    }
    const Eigen::VectorXd s = gram_.col(0).tail(frame.k);
    b_ = a_ - s.dot(gram_x_llt_.solve(s));
  } else {
    b_ = a_;
  }
  if (!(b_ > 0.0)) {
    throw KernelError("1'P_H 1 is not positive; [1 X] effectively collinear");
  }
}

const Eigen::MatrixXd& KernelState::z_active() const {
  return z_act_.size() > 0 ? z_act_ : frame_->z;
}

Eigen::MatrixXd KernelState::solve_core(
    const Eigen::Ref<const Eigen::MatrixXd>& m) const {
  const Eigen::Index n = frame_->n;
  Eigen::MatrixXd out(m.rows(), m.cols());
  if (woodbury_) {
    if (active_.empty()) return m;
    const Eigen::MatrixXd& z = z_active();
    for_each_chunk(m.cols(), n, [&](Eigen::Index c0, Eigen::Index nc) {
      const Eigen::MatrixXd ztm = z.transpose() * m.middleCols(c0, nc);
      Eigen::MatrixXd core;
      if (ldlt_fallback_) core = a_ldlt_.solve(ztm);
      else core = a_llt_.solve(ztm);
      out.middleCols(c0, nc).noalias() = m.middleCols(c0, nc) - z * core;
    });
  } else {
    for_each_chunk(m.cols(), n, [&](Eigen::Index c0, Eigen::Index nc) {
      out.middleCols(c0, nc) = ldlt_fallback_
                                   ? h_ldlt_.solve(m.middleCols(c0, nc)).eval()
                                   : h_llt_.solve(m.middleCols(c0, nc)).eval();
    });
  }
  return out;
}

Eigen::MatrixXd KernelState::h_inv_apply(
    const Eigen::Ref<const Eigen::MatrixXd>& m) const {
  if (m.rows() != frame_->n) {
    throw KernelError("operand has " + std::to_string(m.rows()) +
                      " rows, expected " + std::to_string(frame_->n));
  }
  return solve_core(m);
}

Eigen::MatrixXd KernelState::chc_inv_c_apply(
    const Eigen::Ref<const Eigen::MatrixXd>& m) const {
  Eigen::MatrixXd hm = h_inv_apply(m);
  hm.noalias() -= hinv_ones_ * ((hinv_ones_.transpose() * m) / a_);
  return hm;
}

Eigen::MatrixXd KernelState::p_h_apply(
    const Eigen::Ref<const Eigen::MatrixXd>& m) const {
  Eigen::MatrixXd hm = h_inv_apply(m);
  if (frame_->k == 0) return hm;
  const auto hinv_x = hinv_xt_.rightCols(frame_->k);
  const Eigen::MatrixXd w = hinv_x.transpose() * m;
  hm.noalias() -= hinv_x * gram_x_llt_.solve(w);
  return hm;
}

Eigen::MatrixXd KernelState::p_hi_apply(
    const Eigen::Ref<const Eigen::MatrixXd>& m) const {
  Eigen::MatrixXd hm = h_inv_apply(m);
  const Eigen::MatrixXd w = hinv_xt_.transpose() * m;
  hm.noalias() -= hinv_xt_ * gram_llt_.solve(w);
  return hm;
}

double KernelState::log_det_h() const { return log_det_h_; }

double KernelState::log_det_xt_hinv_xt() const { return log_det_of(gram_llt_); }

double KernelState::tr_h_inv() const {
  if (!tr_h_inv_) {
    const Eigen::Index n = frame_->n;
    if (woodbury_) {
      if (active_.empty()) {
        tr_h_inv_ = static_cast<double>(n);
      } else {
        Eigen::MatrixXd core;
        if (ldlt_fallback_) core = a_ldlt_.solve(ztz_act_);
        else core = a_llt_.solve(ztz_act_);
        tr_h_inv_ = static_cast<double>(n) - core.trace();
      }
    } else {
      const Eigen::MatrixXd hinv =
          solve_core(Eigen::MatrixXd::Identity(n, n));
      tr_h_inv_ = hinv.trace();
    }
  }
  return *tr_h_inv_;
}

double KernelState::tr_p_hi() const {
  const Eigen::MatrixXd sq = hinv_xt_.transpose() * hinv_xt_;
  return tr_h_inv() - gram_llt_.solve(sq).trace();
}

namespace {

double rel_dev(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& other) {
  const double scale = std::max(1.0, reference.cwiseAbs().maxCoeff());
  return (reference - other).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

IdentityReport identity_suite(const KernelState& state,
                              const Eigen::MatrixXd& x_design) {
  const ModelFrame& frame = state.frame();
  const Eigen::Index n = frame.n;
  const Eigen::VectorXd& gamma2 = state.gamma2();

  Eigen::MatrixXd zgz = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    if (gamma2[i] == 0.0) continue;
    const auto zi = frame.z_block(i);
    zgz.noalias() += gamma2[i] * (zi * zi.transpose());
  }
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(n, 1);
  const Eigen::MatrixXd c = eye - ones * ones.transpose() / static_cast<double>(n);

  const Eigen::MatrixXd h = eye + zgz;
  const Eigen::MatrixXd h_inv = h.llt().solve(eye);
  const Eigen::MatrixXd hc = eye + c * zgz * c;
  const Eigen::MatrixXd hc_inv = hc.llt().solve(eye);

  IdentityReport report;

  // (i) the centered-inverse identity plus H_C^{-1}1 = 1
  const double a = (ones.transpose() * h_inv * ones)(0, 0);
  const Eigen::MatrixXd rhs =
      h_inv * (eye - ones * (ones.transpose() * h_inv) / a);
  report.dev_ch = std::max({rel_dev(rhs, c * hc_inv), rel_dev(rhs, hc_inv * c),
                            rel_dev(rhs, c * hc_inv * c)});
  report.dev_ch =
      std::max(report.dev_ch, (hc_inv * ones - ones).cwiseAbs().maxCoeff());

  auto project = [&](const Eigen::MatrixXd& inv, const Eigen::MatrixXd& design) {
    if (design.cols() == 0) return inv;
    const Eigen::MatrixXd iv = inv * design;
    const Eigen::MatrixXd gram = design.transpose() * iv;
    return Eigen::MatrixXd(inv - iv * gram.llt().solve(iv.transpose()));
  };

  Eigen::MatrixXd xt(n, x_design.cols() + 1);
  xt.col(0).setOnes();
  if (x_design.cols() > 0) xt.rightCols(x_design.cols()) = x_design;

  const Eigen::MatrixXd p_h = project(h_inv, x_design);
  const Eigen::MatrixXd p_hi = project(h_inv, xt);

  // (ii) P_H^I from P_H and b
  const double b = (ones.transpose() * p_h * ones)(0, 0);
  const Eigen::MatrixXd p_hi_via_b =
      p_h * (eye - ones * (ones.transpose() * p_h) / b);
  report.dev_p_hi = rel_dev(p_hi, p_hi_via_b);

  // (iii) the centered projector collapses to P_H^I
  const Eigen::MatrixXd p_hc = project(hc_inv, Eigen::MatrixXd(c * x_design));
  report.dev_cpc =
      std::max({rel_dev(p_hi, c * p_hc * c), rel_dev(p_hi, c * p_hc),
                rel_dev(p_hi, p_hc * c)});

  // matrix-free applies against the dense references
  const double dev_h = rel_dev(h_inv, state.h_inv_apply(eye));
  const double dev_s = rel_dev(c * hc_inv * c, state.chc_inv_c_apply(eye));
  const double dev_ph = rel_dev(p_h, state.p_h_apply(eye));
  const double dev_phi = rel_dev(p_hi, state.p_hi_apply(eye));
  report.dev_fast_apply = std::max({dev_h, dev_s, dev_ph, dev_phi});

  return report;
}

}  // namespace varexp
