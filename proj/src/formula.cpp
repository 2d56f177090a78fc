#include "varexp/formula.hpp"

#include <cctype>
#include <utility>

namespace varexp {

namespace {

enum class Tok { ident, number, tilde, plus, minus, lparen, rparen, bar, barbar, end };

struct Token {
  Tok kind;
  std::string text;
  std::size_t offset;
};

bool ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

class Lexer {
public:
  explicit Lexer(std::string_view text) : text_(text) {}

  Token next() {
    while (pos_ < text_.size() &&
           (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' ||
            text_[pos_] == '\r')) {
      ++pos_;
    }
    const std::size_t start = pos_;
    if (pos_ >= text_.size()) return {Tok::end, "", start};
    const char c = text_[pos_];
    switch (c) {
      case '~': ++pos_; return {Tok::tilde, "~", start};
      case '+': ++pos_; return {Tok::plus, "+", start};
      case '-': ++pos_; return {Tok::minus, "-", start};
      case '(': ++pos_; return {Tok::lparen, "(", start};
      case ')': ++pos_; return {Tok::rparen, ")", start};
      case '|':
        ++pos_;
        if (pos_ < text_.size() && text_[pos_] == '|') {
          ++pos_;
          return {Tok::barbar, "||", start};
        }
        return {Tok::bar, "|", start};
      default:
        break;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      while (pos_ < text_.size() && ident_char(text_[pos_])) ++pos_;
      return {Tok::number, std::string(text_.substr(start, pos_ - start)), start};
    }
    if (ident_start(c)) {
      while (pos_ < text_.size() && ident_char(text_[pos_])) ++pos_;
      return {Tok::ident, std::string(text_.substr(start, pos_ - start)), start};
    }
    throw FormulaError("unexpected character '" + std::string(1, c) + "'", start);
  }

private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

class Parser {
public:
  explicit Parser(std::string_view text) : lex_(text) { advance(); }

  FormulaAst parse() {
    FormulaAst ast;
    ast.response = expect_ident("response name").text;
    expect(Tok::tilde, "'~' after the response");
    parse_term(ast);
    while (cur_.kind != Tok::end) {
      if (cur_.kind == Tok::minus) {
        throw FormulaError(
            "term removal with '-' is not supported; the intercept is always included",
            cur_.offset);
      }
      expect(Tok::plus, "'+' between terms");
      parse_term(ast);
    }
    return ast;
  }

private:
  void advance() { cur_ = lex_.next(); }

  void expect(Tok kind, const std::string& what) {
    if (cur_.kind != kind) {
      throw FormulaError("expected " + what, cur_.offset);
    }
    advance();
  }

  Token expect_ident(const std::string& what) {
    if (cur_.kind != Tok::ident) {
      throw FormulaError("expected " + what, cur_.offset);
    }
    Token t = cur_;
    advance();
    return t;
  }

  void check_not_response(const FormulaAst& ast, const Token& t,
                          const char* role) const {
    if (t.text == ast.response) {
      throw FormulaError("response '" + t.text + "' cannot appear as " + role,
                         t.offset);
    }
  }

  void parse_term(FormulaAst& ast) {
    if (cur_.kind == Tok::number) {
      if (cur_.text == "1") {
        // Explicit intercept; the global intercept is always fit anyway.
        advance();
        return;
      }
      if (cur_.text == "0") {
        throw FormulaError("removing the fixed intercept is not supported",
                           cur_.offset);
      }
      throw FormulaError("unexpected number '" + cur_.text + "'", cur_.offset);
    }
    if (cur_.kind == Tok::lparen) {
      advance();
      parse_random(ast);
      return;
    }
    Token t = expect_ident("a covariate name or '(' starting a random term");
    check_not_response(ast, t, "a fixed effect");
    for (const auto& existing : ast.fixed_terms) {
      if (existing == t.text) {
        throw FormulaError("duplicate fixed term '" + t.text + "'", t.offset);
      }
    }
    ast.fixed_terms.push_back(std::move(t.text));
  }

  void parse_random(FormulaAst& ast) {
    bool intercept = true;
    bool saw_explicit_one = false;
    std::size_t intercept_offset = cur_.offset;
    std::vector<Token> slopes;

    if (cur_.kind == Tok::number && cur_.text == "0") {
      advance();
      expect(Tok::plus, "'+' after '0'");
      intercept = false;
    } else if (cur_.kind == Tok::number && cur_.text == "1") {
      intercept_offset = cur_.offset;
      saw_explicit_one = true;
      advance();
    }

    if (!saw_explicit_one || cur_.kind == Tok::plus) {
      if (saw_explicit_one) advance();  // the '+' after '1'
      for (;;) {
        if (cur_.kind == Tok::number && cur_.text == "1") {
          throw FormulaError("'1' must be the first term inside a random group",
                             cur_.offset);
        }
        Token t = expect_ident("a slope name inside the random term");
        check_not_response(ast, t, "a random slope");
        slopes.push_back(std::move(t));
        if (cur_.kind != Tok::plus) break;
        advance();
      }
    }

    bool single_bar = false;
    if (cur_.kind == Tok::bar) {
      single_bar = true;
      advance();
    } else if (cur_.kind == Tok::barbar) {
      advance();
    } else {
      throw FormulaError("expected '|' or '||' before the group name",
                         cur_.offset);
    }

    Token group = expect_ident("a group name");
    check_not_response(ast, group, "a grouping factor");
    expect(Tok::rparen, "')'");

    if (single_bar) {
      ast.warnings.push_back(
          "'|' before '" + group.text +
          "' treated as '||': only uncorrelated random effects are supported");
    }

    auto add_spec = [&](const std::string& slope, std::size_t offset) {
      for (const auto& spec : ast.random_specs) {
        if (spec.group == group.text && spec.slope_terms.size() == 1 &&
            spec.slope_terms.front() == slope) {
          throw FormulaError(
              "duplicate random term '" + slope + " | " + group.text + "'",
              offset);
        }
      }
      ast.random_specs.push_back(RandomSpec{{slope}, group.text});
    };

    if (intercept) add_spec("1", intercept_offset);
    for (const auto& s : slopes) add_spec(s.text, s.offset);
  }

  Lexer lex_;
  Token cur_{Tok::end, "", 0};
};

bool is_intercept_spec(const RandomSpec& spec) {
  return spec.slope_terms.size() == 1 && spec.slope_terms.front() == "1";
}

void append_joined(std::string& out, const std::vector<std::string>& parts) {
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += " + ";
    out += parts[i];
  }
}

}  // namespace

FormulaAst parse_formula(std::string_view text) {
  if (text.empty()) throw FormulaError("empty formula", 0);
  return Parser(text).parse();
}

std::string render_formula(const FormulaAst& ast) {
  std::string out = ast.response + " ~ ";
  std::vector<std::string> terms(ast.fixed_terms);

  // Merge consecutive specs sharing a group into one parenthesized term. A
  // run is split before any non-leading intercept spec so that re-parsing
  // reproduces the original block order exactly.
  std::size_t i = 0;
  while (i < ast.random_specs.size()) {
    const std::string& group = ast.random_specs[i].group;
    const bool intercept = is_intercept_spec(ast.random_specs[i]);
    std::vector<std::string> slopes;
    std::size_t j = i;
    if (intercept) {
      for (const auto& s : ast.random_specs[j].slope_terms) {
        if (s != "1") slopes.push_back(s);
      }
      ++j;
    }
    while (j < ast.random_specs.size() && ast.random_specs[j].group == group &&
           !is_intercept_spec(ast.random_specs[j])) {
      for (const auto& s : ast.random_specs[j].slope_terms) slopes.push_back(s);
      ++j;
    }
    std::string term = "(";
    if (intercept && slopes.empty()) {
      term += "1";
    } else if (intercept) {
      append_joined(term, slopes);
    } else {
      term += "0 + ";
      append_joined(term, slopes);
    }
    term += " || " + group + ")";
    terms.push_back(std::move(term));
    i = j;
  }

  if (terms.empty()) return out + "1";
  append_joined(out, terms);
  return out;
}

}  // namespace varexp
