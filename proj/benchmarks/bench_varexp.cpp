// Microbenchmarks comparing the matrix-free kernels against the dense
// reference path, plus bootstrap thread scaling. Not part of the test suite.

#include <benchmark/benchmark.h>

#include <Eigen/Core>

#include "varexp/bootstrap.hpp"
#include "varexp/inference.hpp"
#include "varexp/kernels.hpp"
#include "varexp/model_frame.hpp"
#include "varexp/ref/dense_reference.hpp"
#include "varexp/reml.hpp"
#include "varexp/rng.hpp"

namespace {

varexp::ModelFrame synth_frame(Eigen::Index n, Eigen::Index k,
                               Eigen::Index p1, Eigen::Index p2) {
  varexp::PhiloxStream rng(1234, 0);
  Eigen::MatrixXd x(n, k);
  for (Eigen::Index j = 0; j < k; ++j)
    for (Eigen::Index i = 0; i < n; ++i) x(i, j) = rng.normal();
  Eigen::MatrixXd z1 = Eigen::MatrixXd::Zero(n, p1);
  Eigen::MatrixXd z2 = Eigen::MatrixXd::Zero(n, p2);
  Eigen::VectorXd u1(p1), u2(p2);
  for (Eigen::Index q = 0; q < p1; ++q) u1[q] = 0.9 * rng.normal();
  for (Eigen::Index q = 0; q < p2; ++q) u2[q] = 0.6 * rng.normal();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    z1(i, i % p1) = 1.0;
    z2(i, i % p2) = x(i, 0);
    y[i] = 1.0 + x(i, 0) + u1[i % p1] + x(i, 0) * u2[i % p2] +
           0.8 * rng.normal();
  }
  return varexp::make_model_frame(y, x, {z1, z2});
}

const varexp::ModelFrame& apply_frame() {
  static varexp::ModelFrame f = synth_frame(1500, 3, 40, 30);
  return f;
}

Eigen::VectorXd apply_gamma() {
  Eigen::VectorXd g(2);
  g << 0.8, 0.3;
  return g;
}

const Eigen::MatrixXd& apply_rhs() {
  static Eigen::MatrixXd m = [] {
    varexp::PhiloxStream rng(99, 0);
    Eigen::MatrixXd out(1500, 96);
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = rng.normal();
    return out;
  }();
  return m;
}

void BM_ProjectorApply_kernels(benchmark::State& state) {
  const varexp::KernelState ks(apply_frame(), apply_gamma());
  const Eigen::MatrixXd& m = apply_rhs();
  for (auto _ : state) {
    benchmark::DoNotOptimize(ks.p_hi_apply(m));
  }
}
BENCHMARK(BM_ProjectorApply_kernels)->Unit(benchmark::kMillisecond);

void BM_ProjectorApply_dense_reference(benchmark::State& state) {
  const auto dense = varexp::ref::build_dense(apply_frame(), apply_gamma());
  const Eigen::MatrixXd& m = apply_rhs();
  for (auto _ : state) {
    benchmark::DoNotOptimize((dense.p_hi * m).eval());
  }
}
BENCHMARK(BM_ProjectorApply_dense_reference)->Unit(benchmark::kMillisecond);

void BM_RestrictedLoglik_kernels(benchmark::State& state) {
  static varexp::ModelFrame f = synth_frame(600, 2, 30, 20);
  varexp::VarianceComponents vc;
  vc.sigma_eps2 = 0.9;
  vc.sigma_u2 = Eigen::VectorXd(2);
  vc.sigma_u2 << 0.5, 0.2;
  for (auto _ : state) {
    benchmark::DoNotOptimize(varexp::restricted_loglik(f, vc));
  }
}
BENCHMARK(BM_RestrictedLoglik_kernels)->Unit(benchmark::kMillisecond);

void BM_RestrictedLoglik_dense_reference(benchmark::State& state) {
  static varexp::ModelFrame f = synth_frame(600, 2, 30, 20);
  varexp::VarianceComponents vc;
  vc.sigma_eps2 = 0.9;
  vc.sigma_u2 = Eigen::VectorXd(2);
  vc.sigma_u2 << 0.5, 0.2;
  for (auto _ : state) {
    benchmark::DoNotOptimize(varexp::ref::restricted_loglik(f, vc));
  }
}
BENCHMARK(BM_RestrictedLoglik_dense_reference)->Unit(benchmark::kMillisecond);

void BM_Bootstrap(benchmark::State& state) {
  static varexp::ModelFrame f = synth_frame(180, 1, 18, 18);
  static varexp::FitResult fit = varexp::fit_model(f);
  varexp::BootstrapConfig cfg;
  cfg.n_replicates = 50;
  cfg.seed = 7;
  cfg.workers = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(varexp::parametric_bootstrap(f, fit, cfg));
  }
}
BENCHMARK(BM_Bootstrap)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
