#pragma once

#include <iosfwd>
#include <string>

namespace varexp::cli {

struct RunConfig {
  std::string data_path;
  std::string formula;
  std::string output = "text";  // text | json | csv
  bool scale_y = false;         // keep reported numbers on the unit-variance scale
  int bootstrap_n = 0;          // 0 disables the bootstrap
  unsigned long long seed = 1;
  double level = 0.95;
  double tol = 1e-8;            // parameter-change tolerance passed to the solver
  int max_iter = 500;
  int workers = 0;              // 0 = library default (all hardware threads)
  std::string plot_path;        // write an SVG here when non-empty
};

// Full pipeline: read, parse, fit, decompose, render. Returns the process
// exit code: 0 success, 1 input or usage error, 2 fit failed to converge
// (a report is still emitted in that case).
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace varexp::cli
