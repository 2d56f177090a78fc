#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "varexp/bootstrap.hpp"
#include "varexp/decomposition.hpp"
#include "varexp/formula.hpp"
#include "varexp/inference.hpp"

namespace varexp {

// Everything a renderer needs, assembled once by the caller. Bootstrap is
// optional; lm is only present when the model has no random terms.
struct Report {
  FormulaAst formula;
  const ModelFrame* frame = nullptr;
  FitResult fit;
  EmpiricalMoments moments;
  Decomposition decomp;
  std::vector<AttributionRow> rows;
  std::optional<BootstrapResult> bootstrap;
  std::optional<LmReference> lm;
  double y_scale = 1.0;  // multiplier applied to y before fitting (1 = none)
  double elapsed_seconds = 0.0;
};

void render_text(const Report& report, std::ostream& out);

// Stable top-level keys: model, variance_components, fixed_effects,
// decomposition, partials, r_squared, bootstrap, diagnostics.
void render_json(const Report& report, std::ostream& out);

// One row per attribution table entry: label,kind,value,share,lower,upper
// (interval columns empty without bootstrap).
void render_csv(const Report& report, std::ostream& out);

// Self-contained horizontal bar chart of the variance shares.
void render_svg(const Report& report, std::ostream& out);

}  // namespace varexp
