// Consistency checker for serialized reports. Re-derives the variance
// identity, the partial-attribution sums, and the R^2 relations from the
// JSON numbers alone, so a report can be audited without refitting.

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

namespace {

using nlohmann::json;

struct Checker {
  double tol;
  int failures = 0;

  void check(const std::string& name, double lhs, double rhs) {
    const double scale = std::max({1.0, std::abs(lhs), std::abs(rhs)});
    const double dev = std::abs(lhs - rhs) / scale;
    const bool ok = dev <= tol;
    if (!ok) ++failures;
    std::cout << (ok ? "[ok]   " : "[FAIL] ") << name << "  |" << lhs << " - "
              << rhs << "| rel " << dev << "\n";
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audit a JSON report: variance identity, partial sums, R^2."};
  std::string path = "-";
  double tol = 1e-8;
  app.add_option("report", path, "report file ('-' = stdin)");
  app.add_option("--tol", tol, "relative tolerance for every check");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  json j;
  try {
    if (path == "-") {
      j = json::parse(std::cin);
    } else {
      std::ifstream in(path, std::ios::binary);
      if (!in) {
        std::cerr << "error: cannot open '" << path << "'\n";
        return 1;
      }
      j = json::parse(in);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    const json& dec = j.at("decomposition");
    const double sigma_y2 = dec.at("sigma_y2").get<double>();
    const double fixed = dec.at("fixed").get<double>();
    const double pop = dec.at("random_population").get<double>();
    const double data = dec.at("random_data_specific").get<double>();
    const double cross = dec.at("cross").get<double>();
    const double resid = dec.at("residual").get<double>();

    Checker c{tol};

    c.check("variance identity: sample variance equals summand total",
            sigma_y2, fixed + pop + data + cross + resid);
    c.check("stored summand total", dec.at("summand_total").get<double>(),
            fixed + pop + data + cross + resid);

    double sum_fixed = 0, sum_pop = 0, sum_data = 0, sum_cross = 0;
    double sum_shares = 0;
    for (const json& row : j.at("partials")) {
      const std::string kind = row.at("kind").get<std::string>();
      const double value = row.at("value").get<double>();
      if (kind == "fixed") sum_fixed += value;
      else if (kind == "random_population") sum_pop += value;
      else if (kind == "random_data") sum_data += value;
      else if (kind == "cross_fixed" || kind == "cross_random") sum_cross += value;
      else if (kind != "residual") {
        std::cerr << "error: unknown partial kind '" << kind << "'\n";
        return 1;
      }
      c.check("row share of '" + row.at("label").get<std::string>() + "'",
              row.at("share").get<double>() * sigma_y2, value);
      sum_shares += row.at("share").get<double>();
    }
    c.check("fixed rows sum to the fixed summand", sum_fixed, fixed);
    c.check("population rows sum to the population summand", sum_pop, pop);
    c.check("data-specific rows sum to their summand", sum_data, data);
    c.check("cross rows sum to the cross summand", sum_cross, cross);
    c.check("all shares sum to one", sum_shares, 1.0);

    const json& r2 = j.at("r_squared");
    c.check("r2 equals one minus the residual share",
            r2.at("r2").get<double>(), 1.0 - resid / sigma_y2);
    c.check("population r2", r2.at("r2_pop").get<double>(),
            (fixed + pop) / (fixed + pop + resid));

    if (c.failures == 0) {
      std::cout << "report is internally consistent\n";
      return 0;
    }
    std::cout << c.failures << " check(s) failed\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: report is missing required fields: " << e.what()
              << "\n";
    return 1;
  }
}
