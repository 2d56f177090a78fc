#pragma once

// Shared test helpers: random model instances with known truth, an
// independent derivative-free optimizer used as a REML oracle, the balanced
// one-way ANOVA closed form, and a running-moments accumulator.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "varexp/model_frame.hpp"
#include "varexp/reml.hpp"
#include "varexp/rng.hpp"

namespace testsup {

struct Welford {
  long long n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double var() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double sem() const { return std::sqrt(var() / static_cast<double>(n)); }
};

struct Instance {
  varexp::ModelFrame frame;
  double mu = 0.0;
  Eigen::VectorXd beta;            // truth
  varexp::VarianceComponents vc;   // truth
};

inline Eigen::MatrixXd gaussian_matrix(varexp::PhiloxStream& rng,
                                       Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

// Balanced-ish factor with `levels` levels covering all of them, order
// shuffled by the stream.
inline std::vector<int> random_factor(varexp::PhiloxStream& rng,
                                      Eigen::Index n, Eigen::Index levels) {
  std::vector<int> codes(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    codes[static_cast<std::size_t>(i)] = static_cast<int>(i % levels);
  for (std::size_t i = codes.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    std::swap(codes[i - 1], codes[std::min(j, i - 1)]);
  }
  return codes;
}

// Random instance with simulated response. Dense blocks are N(0,1) design
// matrices; grouped blocks are one-hot indicators of a random factor, so the
// frame looks like a random-intercept model per block.
inline Instance random_instance(varexp::PhiloxStream& rng, Eigen::Index n,
                                Eigen::Index k,
                                const std::vector<Eigen::Index>& block_cols,
                                bool grouped = false) {
  Instance inst;
  Eigen::MatrixXd x = gaussian_matrix(rng, n, k);
  std::vector<Eigen::MatrixXd> blocks;
  for (Eigen::Index p : block_cols) {
    if (grouped) {
      Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n, p);
      const auto codes = random_factor(rng, n, p);
      for (Eigen::Index i = 0; i < n; ++i)
        z(i, codes[static_cast<std::size_t>(i)]) = 1.0;
      blocks.push_back(std::move(z));
    } else {
      blocks.push_back(gaussian_matrix(rng, n, p));
    }
  }

  inst.mu = 2.0 * rng.uniform() - 1.0;
  inst.beta = Eigen::VectorXd(k);
  for (Eigen::Index j = 0; j < k; ++j) inst.beta[j] = rng.normal();
  inst.vc.sigma_eps2 = 0.3 + rng.uniform();
  inst.vc.sigma_u2 = Eigen::VectorXd(static_cast<Eigen::Index>(block_cols.size()));
  for (Eigen::Index i = 0; i < inst.vc.sigma_u2.size(); ++i)
    inst.vc.sigma_u2[i] = 0.1 + 1.4 * rng.uniform();

  Eigen::VectorXd y = Eigen::VectorXd::Constant(n, inst.mu);
  if (k > 0) y += x * inst.beta;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    Eigen::VectorXd u(blocks[i].cols());
    for (Eigen::Index q = 0; q < u.size(); ++q)
      u[q] = std::sqrt(inst.vc.sigma_u2[static_cast<Eigen::Index>(i)]) * rng.normal();
    y += blocks[i] * u;
  }
  for (Eigen::Index i = 0; i < n; ++i)
    y[i] += std::sqrt(inst.vc.sigma_eps2) * rng.normal();

  inst.frame = varexp::make_model_frame(std::move(y), std::move(x), std::move(blocks));
  return inst;
}

// Nelder-Mead minimizer, standard coefficients. Returns the best value and
// leaves the best point in x. Independent of the solver under test.
inline double nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                          Eigen::VectorXd& x, double step = 0.5,
                          int max_iter = 4000, double tol = 1e-12) {
  const Eigen::Index d = x.size();
  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(d) + 1, x);
  std::vector<double> vals(static_cast<std::size_t>(d) + 1);
  for (Eigen::Index i = 0; i < d; ++i) pts[static_cast<std::size_t>(i) + 1][i] += step;
  for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = f(pts[i]);

  std::vector<std::size_t> order(pts.size());
  for (int it = 0; it < max_iter; ++it) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = order.front(), worst = order.back();
    const std::size_t second_worst = order[order.size() - 2];
    if (std::abs(vals[worst] - vals[best]) <=
        tol * (std::abs(vals[best]) + tol))
      break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (std::size_t i : order)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(d);

    Eigen::VectorXd refl = centroid + (centroid - pts[worst]);
    const double f_refl = f(refl);
    if (f_refl < vals[best]) {
      Eigen::VectorXd exp_pt = centroid + 2.0 * (centroid - pts[worst]);
      const double f_exp = f(exp_pt);
      if (f_exp < f_refl) { pts[worst] = exp_pt; vals[worst] = f_exp; }
      else { pts[worst] = refl; vals[worst] = f_refl; }
    } else if (f_refl < vals[second_worst]) {
      pts[worst] = refl; vals[worst] = f_refl;
    } else {
      Eigen::VectorXd contr = centroid + 0.5 * (pts[worst] - centroid);
      const double f_contr = f(contr);
      if (f_contr < vals[worst]) { pts[worst] = contr; vals[worst] = f_contr; }
      else {
        for (std::size_t i : order) {
          if (i == best) continue;
          pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
          vals[i] = f(pts[i]);
        }
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < vals.size(); ++i)
    if (vals[i] < vals[best]) best = i;
  x = pts[best];
  return vals[best];
}

// Balanced one-way ANOVA closed form; for y laid out as `groups` consecutive
// runs of `per_group` observations. REML equals these moment estimators in
// the balanced case when the group variance is interior.
struct AnovaEstimates {
  double sigma_e2 = 0.0;  // MSE
  double sigma_u2 = 0.0;  // (MSA - MSE) / per_group
};
inline AnovaEstimates balanced_anova(const Eigen::VectorXd& y, int groups,
                                     int per_group) {
  const double grand = y.mean();
  double ss_between = 0.0, ss_within = 0.0;
  for (int g = 0; g < groups; ++g) {
    const auto seg = y.segment(g * per_group, per_group);
    const double gm = seg.mean();
    ss_between += per_group * (gm - grand) * (gm - grand);
    ss_within += (seg.array() - gm).matrix().squaredNorm();
  }
  AnovaEstimates est;
  est.sigma_e2 = ss_within / (static_cast<double>(groups) * (per_group - 1));
  const double msa = ss_between / (groups - 1);
  est.sigma_u2 = (msa - est.sigma_e2) / per_group;
  return est;
}

inline double rel_dev(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

}  // namespace testsup
