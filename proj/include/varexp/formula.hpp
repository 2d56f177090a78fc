#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace varexp {

// Parse error with the byte offset of the offending token in the input.
class FormulaError : public std::runtime_error {
public:
  FormulaError(const std::string& msg, std::size_t offset)
      : std::runtime_error(msg + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

// One expanded random term: slope_terms holds a single entry after parsing,
// either "1" for a random intercept or a covariate name.
struct RandomSpec {
  std::vector<std::string> slope_terms;
  std::string group;
  bool operator==(const RandomSpec&) const = default;
};

struct FormulaAst {
  std::string response;
  std::vector<std::string> fixed_terms;
  std::vector<RandomSpec> random_specs;
  std::vector<std::string> warnings;  // not part of equality

  bool operator==(const FormulaAst& other) const {
    return response == other.response && fixed_terms == other.fixed_terms &&
           random_specs == other.random_specs;
  }
};

// Grammar: RESPONSE "~" term ("+" term)*, term = identifier or
// "(" slopes ("||"|"|") GROUP ")". A leading "0 +" suppresses the implicit
// random intercept; "|" is accepted as "||" with a warning since only
// diagonal covariance is supported. "(x || g)" expands to intercept-by-g
// followed by x-by-g.
FormulaAst parse_formula(std::string_view text);

// Canonical rendering; parse(render(ast)) == ast for parser-produced asts.
std::string render_formula(const FormulaAst& ast);

}  // namespace varexp
