#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace varexp {

class CsvError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ColumnType { numeric, categorical };

struct CategoricalColumn {
  std::vector<std::int32_t> codes;   // index into levels
  std::vector<std::string> levels;   // first-appearance order
};

struct Column {
  std::string name;
  std::variant<Eigen::VectorXd, CategoricalColumn> data;

  bool is_numeric() const { return std::holds_alternative<Eigen::VectorXd>(data); }
  const Eigen::VectorXd& numeric() const { return std::get<Eigen::VectorXd>(data); }
  const CategoricalColumn& categorical() const { return std::get<CategoricalColumn>(data); }
};

struct Dataset {
  std::vector<Column> columns;
  Eigen::Index n_rows = 0;

  const Column* find(std::string_view name) const {
    for (const auto& c : columns)
      if (c.name == name) return &c;
    return nullptr;
  }
};

// RFC-4180-style CSV: header required, '.' decimal separator, optional
// quoting (embedded commas, newlines, doubled quotes). Columns named in
// type_hints are coerced; otherwise a column is numeric iff every entry
// parses as a finite decimal. Missing cells ("" or "NA") are an error
// naming the data row and column.
Dataset parse_csv(std::string_view text,
                  const std::map<std::string, ColumnType>& type_hints = {});
Dataset read_csv(const std::string& path,
                 const std::map<std::string, ColumnType>& type_hints = {});

}  // namespace varexp
