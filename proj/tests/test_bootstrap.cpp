#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "support.hpp"
#include "varexp/bootstrap.hpp"
#include "varexp/decomposition.hpp"
#include "varexp/inference.hpp"
#include "varexp/rng.hpp"

using testsup::random_instance;
using varexp::BootstrapConfig;
using varexp::BootstrapResult;
using varexp::fit_model;
using varexp::FitResult;
using varexp::parametric_bootstrap;
using varexp::PhiloxStream;

TEST_CASE("counter-based streams are reproducible and well distributed") {
  PhiloxStream a(42, 7);
  PhiloxStream b(42, 7);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.uniform() == b.uniform());
  }
  PhiloxStream c(42, 8);  // different stream must decorrelate
  int agree = 0;
  PhiloxStream a2(42, 7);
  for (int i = 0; i < 1000; ++i)
    if (a2.uniform() == c.uniform()) ++agree;
  CHECK(agree == 0);

  testsup::Welford u, g;
  PhiloxStream d(9, 0);
  for (int i = 0; i < 200000; ++i) {
    const double x = d.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    u.add(x);
    g.add(d.normal());
  }
  CHECK(std::abs(u.mean - 0.5) < 0.005);
  CHECK(std::abs(u.var() - 1.0 / 12.0) < 0.002);
  CHECK(std::abs(g.mean) < 0.01);
  CHECK(std::abs(g.var() - 1.0) < 0.02);
}

TEST_CASE("intervals are identical for any worker count") {
  PhiloxStream rng(501, 0);
  auto inst = random_instance(rng, 60, 1, {6, 5}, true);
  const FitResult fit = fit_model(inst.frame);
  REQUIRE(fit.reml);
  REQUIRE(fit.reml->converged);

  BootstrapConfig cfg;
  cfg.n_replicates = 40;
  cfg.seed = 77;
  cfg.workers = 1;
  const BootstrapResult serial = parametric_bootstrap(inst.frame, fit, cfg);
  cfg.workers = 4;
  const BootstrapResult wide = parametric_bootstrap(inst.frame, fit, cfg);

  REQUIRE(serial.per_row.size() == wide.per_row.size());
  for (std::size_t i = 0; i < serial.per_row.size(); ++i) {
    CHECK(serial.per_row[i].first == wide.per_row[i].first);
    // bitwise equality: replicate results may not depend on scheduling
    CHECK(serial.per_row[i].second.lower == wide.per_row[i].second.lower);
    CHECK(serial.per_row[i].second.upper == wide.per_row[i].second.upper);
  }
  CHECK(serial.max_identity_residual == wide.max_identity_residual);
}

TEST_CASE("rows carry the attribution labels plus the aggregates") {
  PhiloxStream rng(502, 0);
  auto inst = random_instance(rng, 50, 2, {5}, true);
  const FitResult fit = fit_model(inst.frame);
  BootstrapConfig cfg;
  cfg.n_replicates = 12;
  cfg.seed = 3;
  const BootstrapResult bs = parametric_bootstrap(inst.frame, fit, cfg);

  std::set<std::string> labels;
  for (const auto& [label, row] : bs.per_row) labels.insert(label);
  const auto& fr = inst.frame;
  for (const auto& name : fr.x_names) {
    CHECK(labels.count("fixed:" + name) == 1);
    CHECK(labels.count("cross_fixed:" + name) == 1);
  }
  for (const auto& b : fr.blocks) {
    CHECK(labels.count("random_pop:" + b.label) == 1);
    CHECK(labels.count("random_data:" + b.label) == 1);
    CHECK(labels.count("cross_random:" + b.label) == 1);
    CHECK(labels.count("random_total:" + b.label) == 1);
  }
  CHECK(labels.count("residual") == 1);
  CHECK(labels.count("cross_total") == 1);
  CHECK(labels.count("data_cross_total") == 1);
  CHECK(labels.count("r2") == 1);
  // 2k + 4r + 4 rows in total
  CHECK(bs.per_row.size() == std::size_t(2 * fr.k + 4 * fr.r + 4));

  // the point column is the share from the original fit
  const auto moments = varexp::compute_moments(fr);
  const auto dec = varexp::decompose(fit, moments);
  CHECK(bs.find("residual")->point ==
        doctest::Approx(fit.vc.sigma_eps2 / dec.sigma_y2).epsilon(1e-12));
  CHECK(bs.find("r2")->point == doctest::Approx(dec.r2).epsilon(1e-12));

  for (const auto& [label, row] : bs.per_row) {
    CAPTURE(label);
    CHECK(row.lower <= row.upper);
  }
}

TEST_CASE("level ordering and failure accounting") {
  PhiloxStream rng(503, 0);
  auto inst = random_instance(rng, 70, 1, {6}, true);
  const FitResult fit = fit_model(inst.frame);
  BootstrapConfig cfg;
  cfg.n_replicates = 60;
  cfg.seed = 11;
  cfg.level = 0.5;
  const BootstrapResult narrow = parametric_bootstrap(inst.frame, fit, cfg);
  cfg.level = 0.95;
  const BootstrapResult wide = parametric_bootstrap(inst.frame, fit, cfg);
  CHECK(narrow.n_failed == 0);

  const auto* n50 = narrow.find("r2");
  const auto* n95 = wide.find("r2");
  CHECK(n95->lower <= n50->lower);
  CHECK(n50->upper <= n95->upper);

  CHECK_THROWS_AS(
      [&] {
        BootstrapConfig bad;
        bad.n_replicates = 0;
        return parametric_bootstrap(inst.frame, fit, bad);
      }(),
      std::invalid_argument);
  CHECK_THROWS_AS(
      [&] {
        BootstrapConfig bad;
        bad.level = 1.5;
        return parametric_bootstrap(inst.frame, fit, bad);
      }(),
      std::invalid_argument);
}
