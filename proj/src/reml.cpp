#include "varexp/reml.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>

#include "varexp/kernels.hpp"

namespace varexp {

namespace {

constexpr double kZeroClamp = 1e-10;   // unit-variance scale
constexpr double kReentrySeed = 1e-3;  // unit-variance scale
constexpr int kGraceSweeps = 3;
constexpr int kMaxReentries = 2;
constexpr int kMaxHalvings = 30;

struct IterEval {
  std::unique_ptr<KernelState> state;
  Eigen::VectorXd p_ys;  // P_H^I ys
  double quad = 0.0;     // ys' P_H^I ys
  Eigen::VectorXd num;   // ys' P Z_i Z_i' P ys
  Eigen::VectorXd tr;    // tr(P Z_i Z_i')
  double loglik = 0.0;
};

double loglik_terms(double dof, double sigma_eps2, double log_det_h,
                    double log_det_gram, double quad) {
  return -0.5 * (dof * std::log(sigma_eps2) + log_det_h + log_det_gram +
                 quad / sigma_eps2);
}

void eval_iterate(const ModelFrame& frame, const KernelCache& cache,
                  const Eigen::VectorXd& ys, const Eigen::VectorXd& gamma2,
                  double sigma_eps2, double dof, IterEval& out) {
  out.state = std::make_unique<KernelState>(frame, gamma2, &cache);
  out.p_ys = out.state->p_hi_apply(ys);
  out.quad = ys.dot(out.p_ys);
  if (!std::isfinite(out.quad) || out.quad <= 0.0) {
    throw std::runtime_error(
        "residual quadratic form is not positive; the model is numerically "
        "degenerate");
  }
  out.loglik = loglik_terms(dof, sigma_eps2, out.state->log_det_h(),
                            out.state->log_det_xt_hinv_xt(), out.quad);
}

void fill_block_stats(const ModelFrame& frame, const Eigen::VectorXd& ys,
                      IterEval& ev) {
  (void)ys;
  ev.num.resize(frame.r);
  ev.tr.resize(frame.r);
  if (frame.r == 0) return;
  const Eigen::MatrixXd pz = ev.state->p_hi_apply(frame.z);
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    const auto zi = frame.z_block(i);
    const auto pzi =
        pz.middleCols(frame.blocks[static_cast<std::size_t>(i)].offset,
                      frame.blocks[static_cast<std::size_t>(i)].cols);
    ev.num[i] = (zi.transpose() * ev.p_ys).squaredNorm();
    ev.tr[i] = zi.cwiseProduct(pzi).sum();
  }
}

// The three equivalent residual-variance expressions, evaluated on the raw y
// at the returned ratios. The first two are algebraic identities of the GLS
// fit; the third additionally needs stationarity of the per-block equations.
std::array<double, 3> sigma_eps_variants(const ModelFrame& frame,
                                         const KernelState& state, double dof) {
  const Eigen::Index n = frame.n;
  const Eigen::Index k = frame.k;
  Eigen::MatrixXd yx(n, k + 1);
  yx.col(0) = frame.y;
  if (k > 0) yx.rightCols(k) = frame.x;
  const Eigen::MatrixXd syx = state.chc_inv_c_apply(yx);

  Eigen::VectorXd beta(k);
  if (k > 0) {
    Eigen::MatrixXd bmat = frame.x.transpose() * syx.rightCols(k);
    bmat = ((bmat + bmat.transpose()) * 0.5).eval();
    beta = bmat.llt().solve(frame.x.transpose() * syx.col(0));
  }

  const Eigen::VectorXd phy = state.p_h_apply(frame.y);
  const double mu = phy.sum() / state.b();

  Eigen::VectorXd r2 = frame.y;
  if (k > 0) r2.noalias() -= frame.x * beta;
  Eigen::VectorXd r1 = r2;
  r1.array() -= mu;

  const Eigen::VectorXd sr2 = state.chc_inv_c_apply(r2);
  const double e1 = r1.dot(state.h_inv_apply(r1).col(0)) / dof;
  const double e2 = r2.dot(sr2) / dof;
  const double e3 = sr2.squaredNorm() / state.tr_p_hi();
  return {e1, e2, e3};
}

}  // namespace

double restricted_loglik(const ModelFrame& frame, const VarianceComponents& vc) {
  if (vc.sigma_u2.size() != frame.r) {
    throw std::invalid_argument("sigma_u2 has wrong length");
  }
  if (!(vc.sigma_eps2 > 0.0)) {
    throw std::invalid_argument("sigma_eps2 must be positive");
  }
  const double dof = static_cast<double>(frame.n - frame.k - 1);
  const KernelState state(frame, vc.gamma2());
  const double quad = frame.y.dot(state.p_hi_apply(frame.y).col(0));
  return loglik_terms(dof, vc.sigma_eps2, state.log_det_h(),
                      state.log_det_xt_hinv_xt(), quad);
}

RemlReport fit_reml(const ModelFrame& frame, const RemlConfig& config) {
  const Eigen::Index n = frame.n;
  const Eigen::Index r = frame.r;
  const double dof = static_cast<double>(n - frame.k - 1);

  const double y_mean = frame.y.mean();
  const double tss = (frame.y.array() - y_mean).matrix().squaredNorm();
  if (!(tss > 0.0)) {
    throw std::runtime_error("response is constant; nothing to decompose");
  }
  const double scale2 = tss / static_cast<double>(n - 1);
  const double scale = std::sqrt(scale2);
  const Eigen::VectorXd ys = frame.y / scale;

  const KernelCache cache = make_kernel_cache(frame);

  RemlReport report;
  report.boundary_flags.assign(static_cast<std::size_t>(r), false);
  report.residual_reml_eqs = Eigen::VectorXd::Zero(r + 1);

  Eigen::VectorXd sigma_u = Eigen::VectorXd::Constant(
      r, r > 0 ? 0.5 / static_cast<double>(r) : 0.0);
  double sigma_e = 0.5;

  IterEval cur;
  eval_iterate(frame, cache, ys, sigma_u / sigma_e, sigma_e, dof, cur);
  fill_block_stats(frame, ys, cur);
  if (r == 0) sigma_e = cur.quad / dof;  // closed form, nothing to iterate

  std::vector<bool> at_zero(static_cast<std::size_t>(r), false);
  std::vector<bool> frozen(static_cast<std::size_t>(r), false);
  std::vector<int> grace(static_cast<std::size_t>(r), 0);
  std::vector<int> reentries(static_cast<std::size_t>(r), 0);

  bool converged = r == 0;  // no equations to iterate when r == 0
  int iterations = 0;

  for (int iter = 1; r > 0 && iter <= config.max_iter; ++iter) {
    iterations = iter;
    const double se_prof = cur.quad / dof;

    Eigen::VectorXd su_prop = sigma_u;
    for (Eigen::Index i = 0; i < r; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      if (frozen[ui]) {
        su_prop[i] = 0.0;
        continue;
      }
      if (at_zero[ui]) {
        const bool wants_in = cur.num[i] > se_prof * cur.tr[i];
        su_prop[i] =
            (wants_in && reentries[ui] < kMaxReentries) ? kReentrySeed : 0.0;
        continue;
      }
      if (cur.tr[i] < 1e-12 * static_cast<double>(n)) {
        // Z_i effectively inside the span of [1 X]: the component is not
        // identifiable, park it at the boundary.
        su_prop[i] = 0.0;
        continue;
      }
      double next = sigma_u[i] * cur.num[i] / (se_prof * cur.tr[i]);
      if (!std::isfinite(next) || next < kZeroClamp) next = 0.0;
      su_prop[i] = next;
    }
    const double se_prop = se_prof;

    // Step-halving toward the proposal; the restricted log-likelihood must
    // not drop by more than the slack.
    const double slack = 1e-12 * std::max(1.0, std::abs(cur.loglik));
    double alpha = 1.0;
    bool accepted = false;
    IterEval cand;
    double se_new = sigma_e;
    Eigen::VectorXd su_new = sigma_u;
    for (int h = 0; h <= kMaxHalvings; ++h) {
      const double se_c = sigma_e + alpha * (se_prop - sigma_e);
      const Eigen::VectorXd su_c = sigma_u + alpha * (su_prop - sigma_u);
      eval_iterate(frame, cache, ys, su_c / se_c, se_c, dof, cand);
      if (cand.loglik >= cur.loglik - slack) {
        accepted = true;
        se_new = se_c;
        su_new = su_c;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;  // stalled at numerical precision

    // Boundary bookkeeping on the accepted point.
    for (Eigen::Index i = 0; i < r; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      if (frozen[ui]) continue;
      if (su_new[i] < kZeroClamp) {
        su_new[i] = 0.0;
        if (at_zero[ui]) {
          if (--grace[ui] <= 0) frozen[ui] = true;
        } else {
          at_zero[ui] = true;
          grace[ui] = kGraceSweeps;
          report.boundary_flags[ui] = true;
        }
      } else if (at_zero[ui]) {
        at_zero[ui] = false;
        ++reentries[ui];
      }
    }

    double param_change = std::abs(se_new - sigma_e) / std::max(1.0, sigma_e);
    for (Eigen::Index i = 0; i < r; ++i) {
      param_change =
          std::max(param_change, std::abs(su_new[i] - sigma_u[i]) /
                                     std::max(1.0, sigma_u[i]));
    }
    sigma_e = se_new;
    sigma_u = su_new;
    cur = std::move(cand);
    fill_block_stats(frame, ys, cur);

    // Residuals at the profiled sigma_eps^2 = quad/dof; clamped blocks
    // instead report the boundary-condition violation.
    const double se_norm = cur.quad / dof;
    double res_max = 0.0;
    double cert = 0.0;
    for (Eigen::Index i = 0; i < r; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const double res = sigma_u[i] > 0.0
                             ? std::abs(se_norm * cur.tr[i] - cur.num[i])
                             : std::max(0.0, cur.num[i] - se_norm * cur.tr[i]);
      if (!frozen[ui]) res_max = std::max(res_max, res);
      if (sigma_u[i] > 0.0) {
        cert += (sigma_u[i] / se_norm) * res / static_cast<double>(n - 1);
      }
    }
    if (param_change <= config.tol_param && res_max <= config.tol_eq &&
        cert <= config.tol_cert) {
      converged = true;
      break;
    }
  }

  // Exit normalization: sigma_eps^2 from the first equation at the final
  // ratios; the ratios (hence H and every projector) are unchanged.
  const double se_norm = cur.quad / dof;
  report.residual_reml_eqs[0] = std::abs(sigma_e - se_norm);
  for (Eigen::Index i = 0; i < r; ++i) {
    report.residual_reml_eqs[i + 1] =
        sigma_u[i] > 0.0 ? std::abs(se_norm * cur.tr[i] - cur.num[i])
                         : std::max(0.0, cur.num[i] - se_norm * cur.tr[i]);
  }

  report.estimates.sigma_eps2 = se_norm * scale2;
  report.estimates.sigma_u2.resize(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    report.estimates.sigma_u2[i] = (sigma_u[i] / sigma_e) * se_norm * scale2;
  }
  report.iterations = iterations;
  report.converged = converged;
  report.restricted_loglik =
      loglik_terms(dof, se_norm, cur.state->log_det_h(),
                   cur.state->log_det_xt_hinv_xt(), cur.quad) -
      dof * std::log(scale);
  report.woodbury_path = cur.state->woodbury_path();
  report.ldlt_fallback = cur.state->ldlt_fallback();
  report.sigma_eps_variants = sigma_eps_variants(frame, *cur.state, dof);
  return report;
}

}  // namespace varexp
