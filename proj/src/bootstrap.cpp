#include "varexp/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "varexp/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace varexp {

namespace {

std::vector<std::string> make_labels(const ModelFrame& frame) {
  std::vector<std::string> labels;
  for (const auto& name : frame.x_names) labels.push_back("fixed:" + name);
  for (const auto& b : frame.blocks) labels.push_back("random_pop:" + b.label);
  for (const auto& b : frame.blocks) labels.push_back("random_data:" + b.label);
  for (const auto& name : frame.x_names) labels.push_back("cross_fixed:" + name);
  for (const auto& b : frame.blocks) labels.push_back("cross_random:" + b.label);
  labels.emplace_back("residual");
  for (const auto& b : frame.blocks) labels.push_back("random_total:" + b.label);
  labels.emplace_back("cross_total");
  labels.emplace_back("data_cross_total");
  labels.emplace_back("r2");
  return labels;
}

Eigen::VectorXd collect_shares(const FitResult& fit,
                               const EmpiricalMoments& moments,
                               const Decomposition& d) {
  const ModelFrame& frame = *moments.frame;
  const double sy2 = d.sigma_y2;
  const Eigen::VectorXd fixed = attribute_fixed(fit, moments);
  const RandomAttribution random = attribute_random(fit, moments);
  const CrossAttribution cross = attribute_cross(fit, moments);

  Eigen::VectorXd vals(2 * frame.k + 4 * frame.r + 4);
  Eigen::Index at = 0;
  for (Eigen::Index j = 0; j < frame.k; ++j) vals[at++] = fixed[j] / sy2;
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    vals[at++] = random.population[i] / sy2;
  }
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    vals[at++] = random.data_specific[i] / sy2;
  }
  for (Eigen::Index j = 0; j < frame.k; ++j) vals[at++] = cross.fixed[j] / sy2;
  for (Eigen::Index i = 0; i < frame.r; ++i) vals[at++] = cross.random[i] / sy2;
  vals[at++] = d.sigma_eps2 / sy2;
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    vals[at++] = (random.population[i] + random.data_specific[i]) / sy2;
  }
  vals[at++] = d.s_xz2 / sy2;
  vals[at++] = (d.s_z2_data + d.s_xz2) / sy2;
  vals[at++] = d.r2;
  return vals;
}

// Quantile with linear interpolation between order statistics (the common
// spreadsheet/statistics-package default).
double quantile7(const std::vector<double>& sorted, double p) {
  const std::size_t m = sorted.size();
  if (m == 1) return sorted[0];
  const double h = p * static_cast<double>(m - 1);
  const auto lo = static_cast<std::size_t>(h);
  const std::size_t hi = std::min(lo + 1, m - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

BootstrapResult parametric_bootstrap(const ModelFrame& frame,
                                     const FitResult& fit,
                                     const BootstrapConfig& config) {
  if (config.n_replicates < 1) {
    throw std::invalid_argument("need at least one bootstrap replicate");
  }
  if (!(config.level > 0.0 && config.level < 1.0)) {
    throw std::invalid_argument("confidence level must be inside (0,1)");
  }
  if (fit.vc.sigma_u2.size() != frame.r) {
    throw std::invalid_argument("fit does not match the frame");
  }

  const Eigen::Index n = frame.n;
  const int nrep = config.n_replicates;

  Eigen::VectorXd mean = Eigen::VectorXd::Constant(n, fit.mu_hat);
  if (frame.k > 0) mean += frame.x * fit.beta_hat;
  const double eps_sd = std::sqrt(fit.vc.sigma_eps2);

  const std::vector<std::string> labels = make_labels(frame);
  const auto n_labels = static_cast<Eigen::Index>(labels.size());

  const EmpiricalMoments base_moments = compute_moments(frame);
  const Decomposition base_decomp = decompose(fit, base_moments);
  const Eigen::VectorXd base_vals = collect_shares(fit, base_moments, base_decomp);

  Eigen::MatrixXd shares(n_labels, nrep);
  std::vector<char> ok(static_cast<std::size_t>(nrep), 0);
  std::vector<double> ident(static_cast<std::size_t>(nrep), 0.0);

  // One replicate is a pure function of (seed, rep): the stream, the frame
  // copy, and the fit do not depend on which thread runs it.
  auto run_replicate = [&](int rep, ModelFrame& local,
                           EmpiricalMoments& local_moments) {
    PhiloxStream rng(config.seed, static_cast<std::uint64_t>(rep));
    Eigen::VectorXd ystar = mean;
    for (Eigen::Index i = 0; i < frame.r; ++i) {
      const auto& bi = frame.blocks[static_cast<std::size_t>(i)];
      const double sd = std::sqrt(fit.vc.sigma_u2[i]);
      Eigen::VectorXd ui(bi.cols);
      for (Eigen::Index j = 0; j < bi.cols; ++j) ui[j] = sd * rng.normal();
      ystar.noalias() += local.z_block(i) * ui;
    }
    for (Eigen::Index t = 0; t < n; ++t) ystar[t] += eps_sd * rng.normal();

    local.y = ystar;
    const double y_mean = local.y.mean();
    local_moments.tss = (local.y.array() - y_mean).matrix().squaredNorm();
    local_moments.sigma_y2 =
        local_moments.tss / static_cast<double>(n - 1);

    try {
      const FitResult f = fit_model(local, config.reml);
      if (!f.reml || !f.reml->converged) return;
      const Decomposition d = decompose(f, local_moments);
      shares.col(rep) = collect_shares(f, local_moments, d);
      ident[static_cast<std::size_t>(rep)] = d.identity_residual();
      ok[static_cast<std::size_t>(rep)] = 1;
    } catch (const std::exception&) {
      // dropped and counted below
    }
  };

#ifdef _OPENMP
  const int workers =
      config.workers > 0 ? config.workers : omp_get_max_threads();
#pragma omp parallel num_threads(workers)
  {
    ModelFrame local = frame;
    EmpiricalMoments local_moments = base_moments;
    local_moments.frame = &local;
#pragma omp for schedule(dynamic)
    for (int rep = 0; rep < nrep; ++rep) {
      run_replicate(rep, local, local_moments);
    }
  }
#else
  {
    ModelFrame local = frame;
    EmpiricalMoments local_moments = base_moments;
    local_moments.frame = &local;
    for (int rep = 0; rep < nrep; ++rep) {
      run_replicate(rep, local, local_moments);
    }
  }
#endif

  BootstrapResult out;
  out.n_replicates = nrep;
  out.seed = config.seed;
  out.level = config.level;
  int n_ok = 0;
  for (int rep = 0; rep < nrep; ++rep) {
    if (ok[static_cast<std::size_t>(rep)]) {
      ++n_ok;
      out.max_identity_residual = std::max(
          out.max_identity_residual, ident[static_cast<std::size_t>(rep)]);
    }
  }
  out.n_failed = nrep - n_ok;
  if (static_cast<double>(out.n_failed) > 0.2 * static_cast<double>(nrep)) {
    throw std::runtime_error(
        "bootstrap aborted: " + std::to_string(out.n_failed) + " of " +
        std::to_string(nrep) +
        " replicates failed to converge; the model is too unstable for "
        "percentile intervals");
  }

  const double alpha = (1.0 - config.level) / 2.0;
  std::vector<double> column;
  column.reserve(static_cast<std::size_t>(n_ok));
  for (Eigen::Index l = 0; l < n_labels; ++l) {
    column.clear();
    for (int rep = 0; rep < nrep; ++rep) {
      if (ok[static_cast<std::size_t>(rep)]) column.push_back(shares(l, rep));
    }
    std::sort(column.begin(), column.end());
    IntervalRow row;
    row.point = base_vals[l];
    row.lower = quantile7(column, alpha);
    row.upper = quantile7(column, 1.0 - alpha);
    out.per_row.emplace_back(labels[static_cast<std::size_t>(l)], row);
  }
  return out;
}

}  // namespace varexp
