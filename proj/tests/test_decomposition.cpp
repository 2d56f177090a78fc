#include <doctest.h>

#include <Eigen/Core>

#include "support.hpp"
#include "varexp/decomposition.hpp"
#include "varexp/inference.hpp"
#include "varexp/ref/dense_reference.hpp"
#include "varexp/rng.hpp"

using testsup::random_instance;
using varexp::attribution_table;
using varexp::compute_moments;
using varexp::decompose;
using varexp::Decomposition;
using varexp::EmpiricalMoments;
using varexp::fit_model;
using varexp::FitResult;
using varexp::PhiloxStream;
using varexp::RowKind;
using varexp::solve_blue_blup;
using varexp::VarianceComponents;

TEST_CASE("summands match the dense oracle at arbitrary variance components") {
  PhiloxStream rng(401, 0);
  for (int rep = 0; rep < 8; ++rep) {
    const Eigen::Index n = 20 + static_cast<Eigen::Index>(rng.uniform() * 25);
    const Eigen::Index k = static_cast<Eigen::Index>(rng.uniform() * 3);
    std::vector<Eigen::Index> cols{3 + static_cast<Eigen::Index>(rng.uniform() * 5),
                                   2 + static_cast<Eigen::Index>(rng.uniform() * 4)};
    auto inst = random_instance(rng, n, k, cols, rep % 2 == 0);
    VarianceComponents vc;
    vc.sigma_eps2 = 0.4 + rng.uniform();
    vc.sigma_u2 = Eigen::VectorXd(2);
    vc.sigma_u2 << 0.2 + rng.uniform(), 0.1 + rng.uniform();

    const FitResult fit = solve_blue_blup(inst.frame, vc);
    const EmpiricalMoments moments = compute_moments(inst.frame);
    const Decomposition dec = decompose(fit, moments);
    const auto want = varexp::ref::decompose(inst.frame, vc);

    CAPTURE(rep);
    CHECK(testsup::rel_dev(dec.sigma_y2, want.sigma_y2) <= 1e-12);
    CHECK(testsup::rel_dev(dec.s_x2, want.s_x2) <= 1e-10);
    CHECK(testsup::rel_dev(dec.s_z2_pop, want.s_z2_pop) <= 1e-10);
    CHECK(testsup::rel_dev(dec.s_z2_data, want.s_z2_data) <= 1e-10);
    CHECK(testsup::rel_dev(dec.s_xz2, want.s_xz2) <= 1e-10);
  }
}

TEST_CASE("partial attributions sum to their summands") {
  PhiloxStream rng(402, 0);
  for (int rep = 0; rep < 6; ++rep) {
    auto inst = random_instance(rng, 45, 3, {5, 4}, rep % 2 == 0);
    const FitResult fit = fit_model(inst.frame);
    const EmpiricalMoments moments = compute_moments(inst.frame);
    const Decomposition dec = decompose(fit, moments);

    const Eigen::VectorXd fixed = varexp::attribute_fixed(fit, moments);
    const auto rnd = varexp::attribute_random(fit, moments);
    const auto cross = varexp::attribute_cross(fit, moments);

    CAPTURE(rep);
    CHECK(testsup::rel_dev(fixed.sum(), dec.s_x2) <= 1e-10);
    CHECK(testsup::rel_dev(rnd.population.sum(), dec.s_z2_pop) <= 1e-10);
    CHECK(testsup::rel_dev(rnd.data_specific.sum(), dec.s_z2_data) <= 1e-10);
    CHECK(testsup::rel_dev(cross.fixed.sum() + cross.random.sum(), dec.s_xz2) <= 1e-10);
    // the two cross halves are equal by construction
    CHECK(testsup::rel_dev(cross.fixed.sum(), dec.s_xz2 / 2) <= 1e-10);
    CHECK(testsup::rel_dev(cross.random.sum(), dec.s_xz2 / 2) <= 1e-10);

    const auto rows = attribution_table(fit, moments, dec);
    REQUIRE(rows.size() == std::size_t(3 + 2 + 2 + 3 + 2 + 1));
    double total = 0.0;
    for (const auto& row : rows) total += row.value;
    CHECK(testsup::rel_dev(total, dec.summand_total()) <= 1e-10);
    CHECK(rows.back().kind == RowKind::residual);
    CHECK(rows.back().share ==
          doctest::Approx(fit.vc.sigma_eps2 / dec.sigma_y2).epsilon(1e-12));
  }
}

TEST_CASE("the variance identity holds at the REML solution") {
  PhiloxStream rng(403, 0);
  for (int rep = 0; rep < 5; ++rep) {
    auto inst = random_instance(rng, 60, 2, {6, 5}, true);
    const FitResult fit = fit_model(inst.frame);
    REQUIRE(fit.reml);
    REQUIRE(fit.reml->converged);
    const Decomposition dec = decompose(fit, compute_moments(inst.frame));
    CHECK(dec.identity_residual() <= 1e-8);
  }
}

TEST_CASE("no random part reduces to the least-squares decomposition") {
  PhiloxStream rng(404, 0);
  auto inst = random_instance(rng, 50, 3, {});
  const FitResult fit = fit_model(inst.frame);
  const EmpiricalMoments moments = compute_moments(inst.frame);
  const Decomposition dec = decompose(fit, moments);
  const auto lm = varexp::lm_reference(inst.frame);

  CHECK(std::abs(dec.r2 - lm.r2_adjusted) <= 1e-12);
  CHECK(testsup::rel_dev(lm.ess + lm.rss, lm.tss) <= 1e-10);
  CHECK(dec.s_z2_pop == 0.0);
  CHECK(dec.s_z2_data == 0.0);
  CHECK(dec.s_xz2 == 0.0);
  CHECK(dec.identity_residual() <= 1e-10);
}

TEST_CASE("comparator R2 measures use the uncentered conventions") {
  PhiloxStream rng(405, 0);
  auto inst = random_instance(rng, 40, 2, {5}, true);
  const FitResult fit = fit_model(inst.frame);
  const EmpiricalMoments moments = compute_moments(inst.frame);
  const Decomposition dec = decompose(fit, moments);

  const auto& frame = inst.frame;
  const Eigen::Index n = frame.n;
  const Eigen::MatrixXd c =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  const Eigen::MatrixXd sx =
      frame.x.transpose() * c * frame.x / static_cast<double>(n - 1);
  const double sigma_f2 = fit.beta_hat.dot(sx * fit.beta_hat);
  double sigma_l2 = 0.0;
  for (Eigen::Index i = 0; i < frame.r; ++i)
    sigma_l2 += fit.vc.sigma_u2[i] * frame.z_block(i).squaredNorm() / n;

  CHECK(testsup::rel_dev(dec.sigma_f2, sigma_f2) <= 1e-10);
  CHECK(testsup::rel_dev(dec.sigma_l2, sigma_l2) <= 1e-10);
  const double denom = sigma_f2 + sigma_l2 + fit.vc.sigma_eps2;
  CHECK(testsup::rel_dev(dec.r2_marginal, sigma_f2 / denom) <= 1e-10);
  CHECK(testsup::rel_dev(dec.r2_conditional, (sigma_f2 + sigma_l2) / denom) <= 1e-10);
  CHECK(testsup::rel_dev(
            dec.r2_pop,
            (dec.s_x2 + dec.s_z2_pop) /
                (dec.s_x2 + dec.s_z2_pop + fit.vc.sigma_eps2)) <= 1e-12);
}

TEST_CASE("moment summaries match their definitions") {
  PhiloxStream rng(406, 0);
  auto inst = random_instance(rng, 30, 2, {4, 3});
  const EmpiricalMoments moments = compute_moments(inst.frame);
  const auto& frame = inst.frame;
  const Eigen::Index n = frame.n;
  const Eigen::MatrixXd c =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);

  const Eigen::MatrixXd sx =
      frame.x.transpose() * c * frame.x / static_cast<double>(n - 1);
  CHECK((moments.sigma_x() - sx).cwiseAbs().maxCoeff() <= 1e-12);
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    const Eigen::MatrixXd szi = frame.z_block(i).transpose() * c *
                                frame.z_block(i) / static_cast<double>(n - 1);
    CHECK(testsup::rel_dev(moments.tr_sigma_z_block[i], szi.trace()) <= 1e-12);
    CHECK(testsup::rel_dev(moments.tr_zz_block[i],
                           frame.z_block(i).squaredNorm()) <= 1e-12);
  }
  const double sy2 =
      (frame.y.array() - frame.y.mean()).matrix().squaredNorm() / (n - 1);
  CHECK(testsup::rel_dev(moments.sigma_y2, sy2) <= 1e-12);
}

TEST_CASE("the decomposition is identical with and without dense moment matrices") {
  PhiloxStream rng(407, 0);
  auto inst = random_instance(rng, 35, 2, {5, 4});
  const FitResult fit = fit_model(inst.frame);
  const EmpiricalMoments dense_m = compute_moments(inst.frame);
  const EmpiricalMoments lean_m = compute_moments(inst.frame, /*dense_cap=*/2);
  CHECK(dense_m.has_dense_z());
  CHECK_FALSE(lean_m.has_dense_z());

  const Decomposition a = decompose(fit, dense_m);
  const Decomposition b = decompose(fit, lean_m);
  CHECK(testsup::rel_dev(a.s_z2_data, b.s_z2_data) <= 1e-12);
  CHECK(testsup::rel_dev(a.s_xz2, b.s_xz2) <= 1e-12);

  const auto ra = varexp::attribute_random(fit, dense_m);
  const auto rb = varexp::attribute_random(fit, lean_m);
  CHECK((ra.data_specific - rb.data_specific).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("shares and r2 are invariant under affine design changes") {
  PhiloxStream rng(408, 0);
  auto inst = random_instance(rng, 50, 2, {5}, true);
  const FitResult base_fit = fit_model(inst.frame);
  const Decomposition base = decompose(base_fit, compute_moments(inst.frame));
  const auto base_rows =
      attribution_table(base_fit, compute_moments(inst.frame), base);

  varexp::ModelFrame t = inst.frame;
  t.x.col(0) = (t.x.col(0).array() - 3.0) * 8.0;   // center+scale a fixed column
  t.x.col(1).array() += 1.5;                        // shift another
  t.y *= 4.0;                                       // rescale the response
  t.z *= 2.5;                                       // rescale the whole block
  const FitResult fit = fit_model(t);
  const Decomposition dec = decompose(fit, compute_moments(t));
  const auto rows = attribution_table(fit, compute_moments(t), dec);

  CHECK(std::abs(dec.r2 - base.r2) <= 1e-8);
  REQUIRE(rows.size() == base_rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CAPTURE(i);
    CHECK(std::abs(rows[i].share - base_rows[i].share) <= 1e-8);
  }
  // coefficients transform inversely to their columns
  CHECK(testsup::rel_dev(fit.beta_hat[0], 4.0 * base_fit.beta_hat[0] / 8.0) <= 1e-7);
  CHECK(testsup::rel_dev(fit.beta_hat[1], 4.0 * base_fit.beta_hat[1]) <= 1e-7);
}
