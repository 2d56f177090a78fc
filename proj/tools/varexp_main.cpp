#include <iostream>

#include <CLI11.hpp>

#include "varexp/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "Variance decomposition for linear mixed models fit by REML.\n"
      "Splits the sample variance of the response into fixed, random\n"
      "(population and data-specific), cross, and residual parts, with\n"
      "per-covariate attributions and optional bootstrap intervals."};

  varexp::cli::RunConfig cfg;
  app.add_option("--data", cfg.data_path, "CSV input file")
      ->envname("VAREXP_DATA")
      ->required();
  app.add_option("--formula", cfg.formula,
                 "model formula, e.g. \"y ~ x + (x || g)\"")
      ->envname("VAREXP_FORMULA")
      ->required();
  app.add_option("--output", cfg.output, "report format")
      ->check(CLI::IsMember({"text", "json", "csv"}))
      ->envname("VAREXP_OUTPUT");
  app.add_flag("--scale-y", cfg.scale_y,
               "rescale the response to unit sample variance before fitting");
  app.add_option("--bootstrap", cfg.bootstrap_n,
                 "parametric bootstrap replicates (0 = off)")
      ->envname("VAREXP_BOOTSTRAP");
  app.add_option("--seed", cfg.seed, "bootstrap seed")->envname("VAREXP_SEED");
  app.add_option("--level", cfg.level,
                 "bootstrap interval coverage, in (0,1)")
      ->envname("VAREXP_LEVEL");
  app.add_option("--tol", cfg.tol, "REML relative parameter tolerance")
      ->envname("VAREXP_TOL");
  app.add_option("--max-iter", cfg.max_iter, "REML iteration cap")
      ->envname("VAREXP_MAX_ITER");
  app.add_option("--workers", cfg.workers,
                 "bootstrap threads (0 = all hardware threads)")
      ->envname("VAREXP_WORKERS");
  app.add_option("--plot", cfg.plot_path,
                 "also write an SVG chart of the shares to this path")
      ->envname("VAREXP_PLOT");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems are all exit 1
  }

  return varexp::cli::run(cfg, std::cout, std::cerr);
}
