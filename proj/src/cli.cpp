#include "varexp/cli.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>

#include "varexp/bootstrap.hpp"
#include "varexp/dataset.hpp"
#include "varexp/decomposition.hpp"
#include "varexp/formula.hpp"
#include "varexp/inference.hpp"
#include "varexp/model_frame.hpp"
#include "varexp/report.hpp"

namespace varexp::cli {

namespace {

// Columns used as grouping factors must be categorical even when their
// values look numeric (subject ids); everything else in the formula must be
// numeric, and forcing that here makes a bad cell fail with its row and
// column instead of a late type error.
std::map<std::string, ColumnType> hints_from(const FormulaAst& ast) {
  std::map<std::string, ColumnType> hints;
  hints[ast.response] = ColumnType::numeric;
  for (const auto& name : ast.fixed_terms) hints[name] = ColumnType::numeric;
  for (const auto& spec : ast.random_specs) {
    for (const auto& slope : spec.slope_terms) {
      if (slope != "1") hints[slope] = ColumnType::numeric;
    }
  }
  for (const auto& spec : ast.random_specs) {
    hints[spec.group] = ColumnType::categorical;
  }
  return hints;
}

}  // namespace

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  if (config.output != "text" && config.output != "json" &&
      config.output != "csv") {
    err << "error: unknown output format '" << config.output
        << "' (expected text, json, or csv)\n";
    return 1;
  }
  if (config.formula.empty()) {
    err << "error: no formula given\n";
    return 1;
  }
  if (config.data_path.empty()) {
    err << "error: no data file given\n";
    return 1;
  }
  if (!(config.level > 0.0 && config.level < 1.0)) {
    err << "error: --level must be strictly between 0 and 1\n";
    return 1;
  }
  if (config.bootstrap_n < 0) {
    err << "error: --bootstrap must be nonnegative\n";
    return 1;
  }
  if (!(config.tol > 0.0)) {
    err << "error: --tol must be positive\n";
    return 1;
  }
  if (config.max_iter < 1) {
    err << "error: --max-iter must be at least 1\n";
    return 1;
  }

  Report report;
  ModelFrame frame;
  try {
    report.formula = parse_formula(config.formula);
    for (const auto& w : report.formula.warnings) err << "warning: " << w << "\n";

    Dataset data = read_csv(config.data_path, hints_from(report.formula));
    frame = build_model_frame(data, report.formula);

    if (config.scale_y) {
      const double mean = frame.y.mean();
      const double s2 =
          (frame.y.array() - mean).matrix().squaredNorm() /
          static_cast<double>(frame.n - 1);
      if (!(s2 > 0.0)) {
        err << "error: response is constant; nothing to decompose\n";
        return 1;
      }
      report.y_scale = 1.0 / std::sqrt(s2);
      frame.y *= report.y_scale;
    }

    RemlConfig reml;
    reml.tol_param = config.tol;
    reml.max_iter = config.max_iter;

    const auto t0 = std::chrono::steady_clock::now();
    report.fit = fit_model(frame, reml);
    report.frame = &frame;
    report.moments = compute_moments(frame);
    report.decomp = decompose(report.fit, report.moments);
    report.rows = attribution_table(report.fit, report.moments, report.decomp);
    if (frame.r == 0) report.lm = lm_reference(frame);

    bool bootstrap_failed = false;
    if (config.bootstrap_n > 0) {
      if (report.fit.reml && !report.fit.reml->converged) {
        err << "warning: skipping bootstrap, the point fit did not converge\n";
      } else {
        BootstrapConfig bs;
        bs.n_replicates = config.bootstrap_n;
        bs.seed = config.seed;
        bs.level = config.level;
        bs.workers = config.workers;
        bs.reml = reml;
        try {
          report.bootstrap = parametric_bootstrap(frame, report.fit, bs);
        } catch (const std::exception& e) {
          err << "error: " << e.what() << "\n";
          bootstrap_failed = true;
        }
      }
    }
    report.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();

    if (config.output == "json") {
      render_json(report, out);
    } else if (config.output == "csv") {
      render_csv(report, out);
    } else {
      render_text(report, out);
    }

    if (!config.plot_path.empty()) {
      std::ofstream svg(config.plot_path, std::ios::binary);
      if (!svg) {
        err << "error: cannot write '" << config.plot_path << "'\n";
        return 1;
      }
      render_svg(report, svg);
    }

    if (bootstrap_failed) return 1;
    if (report.fit.reml && !report.fit.reml->converged) {
      err << "warning: REML did not converge within " << config.max_iter
          << " iterations; estimates are the last iterate\n";
      return 2;
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace varexp::cli
