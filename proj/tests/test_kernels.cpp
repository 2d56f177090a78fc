#include <doctest.h>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "support.hpp"
#include "varexp/kernels.hpp"
#include "varexp/ref/dense_reference.hpp"
#include "varexp/rng.hpp"

using varexp::KernelCache;
using varexp::KernelError;
using varexp::KernelState;
using varexp::PhiloxStream;
using testsup::random_instance;

namespace {

double max_rel(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  return (got - want).cwiseAbs().maxCoeff() /
         std::max(1.0, want.cwiseAbs().maxCoeff());
}

double dense_log_det(const Eigen::MatrixXd& m) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
  return ldlt.vectorD().array().log().sum();
}

}  // namespace

TEST_CASE("centered projector identities on random instances") {
  PhiloxStream rng(101, 0);
  for (int rep = 0; rep < 40; ++rep) {
    const Eigen::Index n = 12 + static_cast<Eigen::Index>(rng.uniform() * 30);
    const Eigen::Index k = static_cast<Eigen::Index>(rng.uniform() * 4);
    const int r = 1 + static_cast<int>(rng.uniform() * 2);
    std::vector<Eigen::Index> cols;
    for (int i = 0; i < r; ++i)
      cols.push_back(2 + static_cast<Eigen::Index>(rng.uniform() * 8));
    const bool grouped = rng.uniform() < 0.5;
    auto inst = random_instance(rng, n, k, cols, grouped);

    Eigen::VectorXd gamma2(r);
    for (int i = 0; i < r; ++i) gamma2[i] = 0.05 + 2.0 * rng.uniform();
    if (rep % 5 == 0) gamma2[0] = 0.0;  // frozen block in the mix

    const KernelState state(inst.frame, gamma2);
    const auto report = varexp::identity_suite(state, inst.frame.x);
    CAPTURE(rep);
    CHECK(report.dev_ch <= 1e-10);
    CHECK(report.dev_p_hi <= 1e-10);
    CHECK(report.dev_cpc <= 1e-10);
    CHECK(report.dev_fast_apply <= 1e-10);
  }
}

TEST_CASE("scalar summaries match the dense oracle on both solve paths") {
  PhiloxStream rng(102, 0);
  for (int rep = 0; rep < 12; ++rep) {
    // alternate p < n (low-rank path) and p >= n (dense path)
    const bool wide = rep % 2 == 1;
    const Eigen::Index n = 25;
    const Eigen::Index k = 2;
    std::vector<Eigen::Index> cols =
        wide ? std::vector<Eigen::Index>{18, 14} : std::vector<Eigen::Index>{4, 6};
    auto inst = random_instance(rng, n, k, cols);
    Eigen::VectorXd gamma2(2);
    gamma2 << 0.4 + rng.uniform(), 0.1 + rng.uniform();

    const KernelState state(inst.frame, gamma2);
    CHECK(state.woodbury_path() == !wide);

    const auto dense = varexp::ref::build_dense(inst.frame, gamma2);
    CHECK(testsup::rel_dev(state.a(), dense.a) <= 1e-10);
    CHECK(testsup::rel_dev(state.b(), dense.b) <= 1e-10);
    CHECK(testsup::rel_dev(state.log_det_h(), dense_log_det(dense.h)) <= 1e-10);
    CHECK(testsup::rel_dev(state.tr_h_inv(), dense.h_inv.trace()) <= 1e-10);
    CHECK(testsup::rel_dev(state.tr_p_hi(), dense.p_hi.trace()) <= 1e-10);

    Eigen::MatrixXd xt(n, k + 1);
    xt << Eigen::VectorXd::Ones(n), inst.frame.x;
    const Eigen::MatrixXd gram = xt.transpose() * dense.h_inv * xt;
    CHECK(testsup::rel_dev(state.log_det_xt_hinv_xt(), dense_log_det(gram)) <= 1e-10);
  }
}

TEST_CASE("applies agree with dense inverses, including the chunked regime") {
  PhiloxStream rng(103, 0);
  // rows >= 256 and >= 64 columns engages the fixed-width column chunking
  const Eigen::Index n = 300;
  auto inst = random_instance(rng, n, 3, {10, 8});
  Eigen::VectorXd gamma2(2);
  gamma2 << 0.7, 0.25;
  const KernelState state(inst.frame, gamma2);
  const auto dense = varexp::ref::build_dense(inst.frame, gamma2);

  const Eigen::MatrixXd m = testsup::gaussian_matrix(rng, n, 80);
  CHECK(max_rel(state.h_inv_apply(m), dense.h_inv * m) <= 1e-10);
  CHECK(max_rel(state.chc_inv_c_apply(m), dense.c * dense.hc_inv * dense.c * m) <= 1e-10);
  CHECK(max_rel(state.p_h_apply(m), dense.p_h * m) <= 1e-10);
  CHECK(max_rel(state.p_hi_apply(m), dense.p_hi * m) <= 1e-10);

  // single-column apply takes the unchunked route; must agree bit-for-bit in
  // value with the dense product to the same tolerance
  const Eigen::VectorXd v = m.col(0);
  CHECK(max_rel(state.p_hi_apply(v), dense.p_hi * v) <= 1e-10);
}

TEST_CASE("k = 0 frames use P_H = H^{-1}") {
  PhiloxStream rng(104, 0);
  auto inst = random_instance(rng, 30, 0, {5});
  Eigen::VectorXd gamma2(1);
  gamma2 << 0.9;
  const KernelState state(inst.frame, gamma2);
  const auto dense = varexp::ref::build_dense(inst.frame, gamma2);
  const Eigen::MatrixXd m = testsup::gaussian_matrix(rng, 30, 4);
  CHECK(max_rel(state.p_h_apply(m), dense.h_inv * m) <= 1e-10);
  CHECK(max_rel(state.p_hi_apply(m), dense.p_hi * m) <= 1e-10);
}

TEST_CASE("all-zero gamma reduces everything to centering algebra") {
  PhiloxStream rng(105, 0);
  auto inst = random_instance(rng, 24, 2, {4});
  const KernelState state(inst.frame, Eigen::VectorXd::Zero(1));
  const auto dense = varexp::ref::build_dense(inst.frame, Eigen::VectorXd::Zero(1));
  CHECK(testsup::rel_dev(state.a(), static_cast<double>(inst.frame.n)) <= 1e-12);
  const Eigen::MatrixXd m = testsup::gaussian_matrix(rng, 24, 3);
  CHECK(max_rel(state.h_inv_apply(m), m) <= 1e-12);
  CHECK(max_rel(state.p_hi_apply(m), dense.p_hi * m) <= 1e-10);
}

TEST_CASE("a shared cache changes nothing") {
  PhiloxStream rng(106, 0);
  auto inst = random_instance(rng, 40, 2, {6, 5});
  const KernelCache cache = varexp::make_kernel_cache(inst.frame);
  Eigen::VectorXd gamma2(2);
  gamma2 << 0.3, 1.1;
  const KernelState with_cache(inst.frame, gamma2, &cache);
  const KernelState without(inst.frame, gamma2);
  const Eigen::MatrixXd m = testsup::gaussian_matrix(rng, 40, 5);
  CHECK((with_cache.p_hi_apply(m) - without.p_hi_apply(m)).cwiseAbs().maxCoeff() <= 1e-13);
  CHECK(with_cache.log_det_h() == doctest::Approx(without.log_det_h()).epsilon(1e-13));
}

TEST_CASE("gamma validation") {
  PhiloxStream rng(107, 0);
  auto inst = random_instance(rng, 20, 1, {4});
  Eigen::VectorXd bad(1);
  bad << -0.5;
  CHECK_THROWS_AS(KernelState(inst.frame, bad), KernelError);
  bad << std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(KernelState(inst.frame, bad), KernelError);
  CHECK_THROWS_AS(KernelState(inst.frame, Eigen::VectorXd::Ones(3)), KernelError);
}
