#include "varexp/report.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include <json.hpp>

namespace varexp {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

double z_pvalue(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

const char* kind_name(RowKind kind) {
  switch (kind) {
    case RowKind::fixed: return "fixed";
    case RowKind::random_population: return "random_population";
    case RowKind::random_data: return "random_data";
    case RowKind::cross_fixed: return "cross_fixed";
    case RowKind::cross_random: return "cross_random";
    case RowKind::residual: return "residual";
  }
  return "?";
}

// Interval lookup key; must match the labels the bootstrap emits.
std::string row_key(const AttributionRow& row) {
  switch (row.kind) {
    case RowKind::fixed: return "fixed:" + row.label;
    case RowKind::random_population: return "random_pop:" + row.label;
    case RowKind::random_data: return "random_data:" + row.label;
    case RowKind::cross_fixed: return "cross_fixed:" + row.label;
    case RowKind::cross_random: return "cross_random:" + row.label;
    case RowKind::residual: return "residual";
  }
  return row.label;
}

struct GroupedRow {
  std::string label;
  std::string key;  // bootstrap label, empty if none
  double share = 0.0;
};

// The coarse view: fixed total, one population row per block, the pooled
// data-specific + cross remainder, and the residual. These are the shares
// usually quoted for a fitted mixed model.
std::vector<GroupedRow> grouped_shares(const Report& report) {
  const ModelFrame& frame = *report.frame;
  const Decomposition& d = report.decomp;
  std::vector<GroupedRow> rows;
  rows.push_back({"fixed effects", "", d.s_x2 / d.sigma_y2});
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    const auto& label = frame.blocks[static_cast<std::size_t>(i)].label;
    double value = 0.0;
    for (const auto& row : report.rows) {
      if (row.kind == RowKind::random_population && row.label == label) {
        value = row.share;
      }
    }
    rows.push_back({"population " + label, "random_pop:" + label, value});
  }
  rows.push_back({"data-specific + cross", "data_cross_total",
                  (d.s_z2_data + d.s_xz2) / d.sigma_y2});
  rows.push_back({"residual", "residual", d.sigma_eps2 / d.sigma_y2});
  return rows;
}

const IntervalRow* find_interval(const Report& report, const std::string& key) {
  if (!report.bootstrap || key.empty()) return nullptr;
  return report.bootstrap->find(key);
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    out += c;
    if (c == '"') out += '"';
  }
  out += '"';
  return out;
}

}  // namespace

void render_text(const Report& report, std::ostream& out) {
  const ModelFrame& frame = *report.frame;
  const FitResult& fit = report.fit;
  const Decomposition& d = report.decomp;

  out << "model: " << render_formula(report.formula) << "\n";
  out << "n = " << frame.n << ", fixed effects k = " << frame.k
      << ", random blocks r = " << frame.r << " (total p = " << frame.p
      << ")\n";
  if (report.y_scale != 1.0) {
    out << "response scaled by " << fmt_g(report.y_scale)
        << " to unit sample variance before fitting\n";
  }
  if (fit.reml) {
    out << "REML: " << (fit.reml->converged ? "converged" : "NOT CONVERGED")
        << " after " << fit.reml->iterations
        << " iterations, restricted log-likelihood "
        << fmt(fit.reml->restricted_loglik) << "\n";
  }
  out << "\nvariance components\n";
  out << "  residual                  " << fmt(fit.vc.sigma_eps2) << "\n";
  for (Eigen::Index i = 0; i < frame.r; ++i) {
    const auto& b = frame.blocks[static_cast<std::size_t>(i)];
    out << "  " << b.label;
    for (std::size_t s = b.label.size(); s < 26; ++s) out << ' ';
    out << fmt(fit.vc.sigma_u2[i]);
    if (fit.reml && fit.reml->boundary_flags[static_cast<std::size_t>(i)]) {
      out << "  [boundary]";
    }
    out << "\n";
  }

  out << "\nfixed effects (normal-approximation p-values)\n";
  {
    const double se = std::sqrt(fit.mu_var);
    const double z = fit.mu_hat / se;
    out << "  (intercept)  " << fmt(fit.mu_hat) << "  se " << fmt(se) << "  z "
        << fmt(z, 2) << "  p " << fmt_g(z_pvalue(z)) << "\n";
  }
  for (Eigen::Index j = 0; j < frame.k; ++j) {
    const double se = std::sqrt(fit.cov_beta(j, j));
    const double z = fit.beta_hat[j] / se;
    out << "  " << frame.x_names[static_cast<std::size_t>(j)] << "  "
        << fmt(fit.beta_hat[j]) << "  se " << fmt(se) << "  z " << fmt(z, 2)
        << "  p " << fmt_g(z_pvalue(z)) << "\n";
  }

  out << "\nvariance decomposition, sample variance " << fmt(d.sigma_y2)
      << "\n";
  out << "  summands: fixed " << fmt(d.s_x2) << ", random population "
      << fmt(d.s_z2_pop) << ", random data-specific " << fmt(d.s_z2_data)
      << ", cross " << fmt(d.s_xz2) << ", residual " << fmt(d.sigma_eps2)
      << "\n";
  out << "  identity residual " << fmt_g(d.identity_residual()) << "\n";

  out << "\nshares (percent of sample variance)";
  if (report.bootstrap) {
    out << ", " << fmt(report.bootstrap->level * 100, 0)
        << "% bootstrap intervals from " << report.bootstrap->n_replicates
        << " replicates";
  }
  out << "\n";
  for (const auto& g : grouped_shares(report)) {
    out << "  " << g.label;
    for (std::size_t s = g.label.size(); s < 36; ++s) out << ' ';
    out << fmt(100.0 * g.share, 2);
    if (const IntervalRow* ci = find_interval(report, g.key)) {
      out << "  [" << fmt(100.0 * ci->lower, 1) << ", "
          << fmt(100.0 * ci->upper, 1) << "]";
    }
    out << "\n";
  }

  out << "\ndetailed rows\n";
  for (const auto& row : report.rows) {
    out << "  " << kind_name(row.kind) << " " << row.label;
    const std::size_t used = std::string(kind_name(row.kind)).size() +
                             row.label.size() + 1;
    for (std::size_t s = used; s < 44; ++s) out << ' ';
    out << fmt(row.value) << "  (" << fmt(100.0 * row.share, 2) << "%)";
    if (const IntervalRow* ci = find_interval(report, row_key(row))) {
      out << "  [" << fmt(100.0 * ci->lower, 1) << ", "
          << fmt(100.0 * ci->upper, 1) << "]";
    }
    out << "\n";
  }

  out << "\nr-squared\n";
  out << "  r2 (variance decomposition)   " << fmt(d.r2, 6) << "\n";
  out << "  r2 population                 " << fmt(d.r2_pop, 6) << "\n";
  out << "  r2 marginal (comparator)      " << fmt(d.r2_marginal, 6) << "\n";
  out << "  r2 conditional (comparator)   " << fmt(d.r2_conditional, 6) << "\n";
  if (report.lm) {
    out << "  linear-model R2 / adjusted    " << fmt(report.lm->r2, 6) << " / "
        << fmt(report.lm->r2_adjusted, 6) << "\n";
  }

  if (fit.reml) {
    out << "\ndiagnostics\n";
    out << "  REML equation residuals (unit scale):";
    for (Eigen::Index i = 0; i < fit.reml->residual_reml_eqs.size(); ++i) {
      out << " " << fmt_g(fit.reml->residual_reml_eqs[i]);
    }
    out << "\n  sigma_eps^2 variants: " << fmt_g(fit.reml->sigma_eps_variants[0])
        << " " << fmt_g(fit.reml->sigma_eps_variants[1]) << " "
        << fmt_g(fit.reml->sigma_eps_variants[2]) << "\n";
    out << "  solve path: "
        << (fit.reml->woodbury_path ? "low-rank update" : "dense H")
        << (fit.reml->ldlt_fallback ? " (LDLT fallback)" : "") << "\n";
  }
  if (report.elapsed_seconds > 0.0) {
    out << "  elapsed " << fmt(report.elapsed_seconds, 3) << " s\n";
  }
}

void render_json(const Report& report, std::ostream& out) {
  const ModelFrame& frame = *report.frame;
  const FitResult& fit = report.fit;
  const Decomposition& d = report.decomp;

  ordered_json j;

  ordered_json model;
  model["formula"] = render_formula(report.formula);
  model["response"] = frame.y_name;
  model["n"] = frame.n;
  model["k"] = frame.k;
  model["r"] = frame.r;
  model["p"] = frame.p;
  model["x_names"] = frame.x_names;
  {
    std::vector<std::string> blocks;
    for (const auto& b : frame.blocks) blocks.push_back(b.label);
    model["block_labels"] = blocks;
  }
  model["y_scale"] = report.y_scale;
  j["model"] = model;

  ordered_json vc;
  vc["residual"] = fit.vc.sigma_eps2;
  {
    ordered_json blocks = ordered_json::array();
    for (Eigen::Index i = 0; i < frame.r; ++i) {
      ordered_json b;
      b["label"] = frame.blocks[static_cast<std::size_t>(i)].label;
      b["value"] = fit.vc.sigma_u2[i];
      if (fit.reml) {
        b["boundary"] =
            static_cast<bool>(fit.reml->boundary_flags[static_cast<std::size_t>(i)]);
      }
      blocks.push_back(b);
    }
    vc["blocks"] = blocks;
  }
  if (fit.reml) vc["restricted_loglik"] = fit.reml->restricted_loglik;
  j["variance_components"] = vc;

  ordered_json fe;
  {
    ordered_json ic;
    ic["estimate"] = fit.mu_hat;
    ic["se"] = std::sqrt(fit.mu_var);
    const double z = fit.mu_hat / std::sqrt(fit.mu_var);
    ic["z"] = z;
    ic["p_z"] = z_pvalue(z);
    fe["intercept"] = ic;
    ordered_json coefs = ordered_json::array();
    for (Eigen::Index q = 0; q < frame.k; ++q) {
      ordered_json cj;
      cj["name"] = frame.x_names[static_cast<std::size_t>(q)];
      cj["estimate"] = fit.beta_hat[q];
      const double se = std::sqrt(fit.cov_beta(q, q));
      cj["se"] = se;
      cj["z"] = fit.beta_hat[q] / se;
      cj["p_z"] = z_pvalue(fit.beta_hat[q] / se);
      coefs.push_back(cj);
    }
    fe["coefficients"] = coefs;
  }
  j["fixed_effects"] = fe;

  ordered_json dec;
  dec["sigma_y2"] = d.sigma_y2;
  dec["fixed"] = d.s_x2;
  dec["random_population"] = d.s_z2_pop;
  dec["random_data_specific"] = d.s_z2_data;
  dec["cross"] = d.s_xz2;
  dec["residual"] = d.sigma_eps2;
  dec["summand_total"] = d.summand_total();
  dec["identity_residual"] = d.identity_residual();
  j["decomposition"] = dec;

  {
    ordered_json rows = ordered_json::array();
    for (const auto& row : report.rows) {
      ordered_json rj;
      rj["label"] = row.label;
      rj["kind"] = kind_name(row.kind);
      rj["value"] = row.value;
      rj["share"] = row.share;
      if (const IntervalRow* ci = find_interval(report, row_key(row))) {
        rj["lower"] = ci->lower;
        rj["upper"] = ci->upper;
      }
      rows.push_back(rj);
    }
    j["partials"] = rows;
  }

  ordered_json r2;
  r2["r2"] = d.r2;
  r2["r2_pop"] = d.r2_pop;
  r2["r2_marginal"] = d.r2_marginal;
  r2["r2_conditional"] = d.r2_conditional;
  r2["sigma_f2"] = d.sigma_f2;
  r2["sigma_l2"] = d.sigma_l2;
  if (report.lm) {
    ordered_json lmj;
    lmj["tss"] = report.lm->tss;
    lmj["ess"] = report.lm->ess;
    lmj["rss"] = report.lm->rss;
    lmj["r2"] = report.lm->r2;
    lmj["r2_adjusted"] = report.lm->r2_adjusted;
    r2["linear_model"] = lmj;
  }
  j["r_squared"] = r2;

  if (report.bootstrap) {
    const BootstrapResult& bs = *report.bootstrap;
    ordered_json bj;
    bj["n_replicates"] = bs.n_replicates;
    bj["n_failed"] = bs.n_failed;
    bj["seed"] = bs.seed;
    bj["level"] = bs.level;
    bj["max_identity_residual"] = bs.max_identity_residual;
    ordered_json rows = ordered_json::array();
    for (const auto& [label, row] : bs.per_row) {
      ordered_json rj;
      rj["label"] = label;
      rj["point"] = row.point;
      rj["lower"] = row.lower;
      rj["upper"] = row.upper;
      rows.push_back(rj);
    }
    bj["intervals"] = rows;
    j["bootstrap"] = bj;
  } else {
    j["bootstrap"] = nullptr;
  }

  ordered_json diag;
  if (fit.reml) {
    diag["converged"] = fit.reml->converged;
    diag["iterations"] = fit.reml->iterations;
    std::vector<double> res(fit.reml->residual_reml_eqs.data(),
                            fit.reml->residual_reml_eqs.data() +
                                fit.reml->residual_reml_eqs.size());
    diag["reml_equation_residuals"] = res;
    diag["sigma_eps_variants"] = fit.reml->sigma_eps_variants;
    diag["boundary_flags"] = fit.reml->boundary_flags;
    diag["woodbury_path"] = fit.reml->woodbury_path;
    diag["ldlt_fallback"] = fit.reml->ldlt_fallback;
  }
  diag["elapsed_seconds"] = report.elapsed_seconds;
  j["diagnostics"] = diag;

  out << j.dump(2) << "\n";
}

void render_csv(const Report& report, std::ostream& out) {
  out << "label,kind,value,share,lower,upper\n";
  for (const auto& row : report.rows) {
    out << csv_quote(row.label) << "," << kind_name(row.kind) << ","
        << fmt_g(row.value) << "," << fmt_g(row.share) << ",";
    if (const IntervalRow* ci = find_interval(report, row_key(row))) {
      out << fmt_g(ci->lower) << "," << fmt_g(ci->upper);
    } else {
      out << ",";
    }
    out << "\n";
  }
}

void render_svg(const Report& report, std::ostream& out) {
  const auto rows = grouped_shares(report);
  const int bar_h = 26;
  const int gap = 10;
  const int label_w = 230;
  const int plot_w = 340;
  const int top = 46;
  const int height = top + static_cast<int>(rows.size()) * (bar_h + gap) + 16;
  const int width = label_w + plot_w + 70;

  double max_share = 0.0;
  for (const auto& g : rows) max_share = std::max(max_share, g.share);
  const double px = plot_w / std::max(max_share, 1e-9);

  static const char* colors[] = {"#4878d0", "#ee854a", "#6acc64", "#956cb4",
                                 "#d65f5f", "#82c6e2"};

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  out << "<style>text{font-family:sans-serif;font-size:13px;}"
         ".t{font-size:15px;font-weight:bold;}</style>\n";
  out << "<text class=\"t\" x=\"12\" y=\"24\">Explained variance shares: "
      << render_formula(report.formula) << "</text>\n";
  int y = top;
  int ci_idx = 0;
  for (const auto& g : rows) {
    const double w = std::max(0.0, g.share) * px;
    const char* color = colors[ci_idx++ % 6];
    out << "<text x=\"12\" y=\"" << y + bar_h - 8 << "\">" << g.label
        << "</text>\n";
    out << "<rect x=\"" << label_w << "\" y=\"" << y << "\" width=\""
        << fmt(w, 1) << "\" height=\"" << bar_h << "\" fill=\"" << color
        << "\"/>\n";
    out << "<text x=\"" << label_w + w + 6 << "\" y=\"" << y + bar_h - 8
        << "\">" << fmt(100.0 * g.share, 1) << "%</text>\n";
    if (const IntervalRow* ci = find_interval(report, g.key)) {
      const double x0 = label_w + std::max(0.0, ci->lower) * px;
      const double x1 = label_w + std::max(0.0, ci->upper) * px;
      const double ym = y + bar_h / 2.0;
      out << "<line x1=\"" << fmt(x0, 1) << "\" y1=\"" << ym << "\" x2=\""
          << fmt(x1, 1) << "\" y2=\"" << ym
          << "\" stroke=\"#333\" stroke-width=\"1.5\"/>\n";
      out << "<line x1=\"" << fmt(x0, 1) << "\" y1=\"" << ym - 5 << "\" x2=\""
          << fmt(x0, 1) << "\" y2=\"" << ym + 5
          << "\" stroke=\"#333\" stroke-width=\"1.5\"/>\n";
      out << "<line x1=\"" << fmt(x1, 1) << "\" y1=\"" << ym - 5 << "\" x2=\""
          << fmt(x1, 1) << "\" y2=\"" << ym + 5
          << "\" stroke=\"#333\" stroke-width=\"1.5\"/>\n";
    }
    y += bar_h + gap;
  }
  out << "</svg>\n";
}

}  // namespace varexp
