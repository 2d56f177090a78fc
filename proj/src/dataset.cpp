#include "varexp/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <utility>

namespace varexp {

namespace {

void validate_utf8(std::string_view text) {
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (c < 0x80) {
      ++i;
      continue;
    }
    int extra = 0;
    unsigned long cp = 0;
    if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1Fu;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0Fu;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07u;
    } else {
      throw CsvError("invalid UTF-8 at byte " + std::to_string(i));
    }
    if (i + static_cast<std::size_t>(extra) >= n) {
      throw CsvError("truncated UTF-8 sequence at byte " + std::to_string(i));
    }
    for (int k = 1; k <= extra; ++k) {
      const unsigned char cc = static_cast<unsigned char>(text[i + k]);
      if ((cc & 0xC0) != 0x80) {
        throw CsvError("invalid UTF-8 continuation at byte " +
                       std::to_string(i + k));
      }
      cp = (cp << 6) | (cc & 0x3Fu);
    }
    static constexpr unsigned long kMinCp[4] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMinCp[extra] || cp > 0x10FFFF ||
        (cp >= 0xD800 && cp <= 0xDFFF)) {
      throw CsvError("invalid UTF-8 code point at byte " + std::to_string(i));
    }
    i += 1 + static_cast<std::size_t>(extra);
  }
}

std::vector<std::vector<std::string>> split_records(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    std::vector<std::string> fields;
    for (;;) {
      std::string field;
      if (text[i] == '"') {
        ++i;
        bool closed = false;
        while (i < n) {
          if (text[i] == '"') {
            if (i + 1 < n && text[i + 1] == '"') {
              field += '"';
              i += 2;
              continue;
            }
            ++i;
            closed = true;
            break;
          }
          field += text[i++];
        }
        if (!closed) throw CsvError("unterminated quoted field at end of input");
        if (i < n && text[i] != ',' && text[i] != '\r' && text[i] != '\n') {
          throw CsvError("unexpected character after closing quote at byte " +
                         std::to_string(i));
        }
      } else {
        while (i < n && text[i] != ',' && text[i] != '\r' && text[i] != '\n') {
          if (text[i] == '"') {
            throw CsvError("quote inside unquoted field at byte " +
                           std::to_string(i));
          }
          field += text[i++];
        }
      }
      fields.push_back(std::move(field));
      if (i < n && text[i] == ',') {
        ++i;
        if (i == n) {
          // trailing comma: one more (empty) field
          fields.emplace_back();
          break;
        }
        continue;
      }
      break;
    }
    records.push_back(std::move(fields));
    if (i < n) {
      if (text[i] == '\r') {
        ++i;
        if (i < n && text[i] == '\n') ++i;
      } else if (text[i] == '\n') {
        ++i;
      }
    }
  }
  return records;
}

bool parse_number(std::string_view raw, double& out) {
  std::size_t b = 0;
  std::size_t e = raw.size();
  while (b < e && (raw[b] == ' ' || raw[b] == '\t')) ++b;
  while (e > b && (raw[e - 1] == ' ' || raw[e - 1] == '\t')) --e;
  if (b == e) return false;
  const char* first = raw.data() + b;
  const char* last = raw.data() + e;
  if (*first == '+') ++first;
  double v = 0.0;
  const auto [p, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || p != last) return false;
  if (!std::isfinite(v)) return false;
  out = v;
  return true;
}

bool is_missing(const std::string& field) {
  return field.empty() || field == "NA";
}

}  // namespace

Dataset parse_csv(std::string_view text,
                  const std::map<std::string, ColumnType>& type_hints) {
  validate_utf8(text);
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") {
    text.remove_prefix(3);
  }

  const auto records = split_records(text);
  if (records.empty() ||
      (records.size() == 1 && records[0].size() == 1 && records[0][0].empty())) {
    throw CsvError("empty CSV: a header row is required");
  }

  const auto& header = records.front();
  const std::size_t ncol = header.size();
  for (std::size_t j = 0; j < ncol; ++j) {
    if (header[j].empty()) {
      throw CsvError("empty header name in column " + std::to_string(j + 1));
    }
    for (std::size_t k = j + 1; k < ncol; ++k) {
      if (header[j] == header[k]) {
        throw CsvError("duplicate column name '" + header[j] + "'");
      }
    }
  }

  const std::size_t nrow = records.size() - 1;
  if (nrow < 3) {
    throw CsvError("need at least 3 data rows, found " + std::to_string(nrow));
  }
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != ncol) {
      throw CsvError("data row " + std::to_string(r) + " has " +
                     std::to_string(records[r].size()) + " fields, expected " +
                     std::to_string(ncol));
    }
  }

  Dataset ds;
  ds.n_rows = static_cast<Eigen::Index>(nrow);
  ds.columns.reserve(ncol);

  for (std::size_t j = 0; j < ncol; ++j) {
    const std::string& name = header[j];
    for (std::size_t r = 1; r < records.size(); ++r) {
      if (is_missing(records[r][j])) {
        throw CsvError("missing value at data row " + std::to_string(r) +
                       " in column '" + name + "'");
      }
    }

    const auto hint = type_hints.find(name);
    const bool force_categorical =
        hint != type_hints.end() && hint->second == ColumnType::categorical;
    const bool force_numeric =
        hint != type_hints.end() && hint->second == ColumnType::numeric;

    bool numeric = !force_categorical;
    Eigen::VectorXd values(static_cast<Eigen::Index>(nrow));
    if (numeric) {
      for (std::size_t r = 1; r < records.size(); ++r) {
        double v = 0.0;
        if (!parse_number(records[r][j], v)) {
          if (force_numeric) {
            throw CsvError("cannot parse '" + records[r][j] +
                           "' as a number at data row " + std::to_string(r) +
                           " in column '" + name + "'");
          }
          numeric = false;
          break;
        }
        values[static_cast<Eigen::Index>(r - 1)] = v;
      }
    }

    Column col;
    col.name = name;
    if (numeric) {
      col.data = std::move(values);
    } else {
      CategoricalColumn cat;
      cat.codes.resize(nrow);
      for (std::size_t r = 1; r < records.size(); ++r) {
        const std::string& field = records[r][j];
        std::int32_t code = -1;
        for (std::size_t l = 0; l < cat.levels.size(); ++l) {
          if (cat.levels[l] == field) {
            code = static_cast<std::int32_t>(l);
            break;
          }
        }
        if (code < 0) {
          code = static_cast<std::int32_t>(cat.levels.size());
          cat.levels.push_back(field);
        }
        cat.codes[r - 1] = code;
      }
      col.data = std::move(cat);
    }
    ds.columns.push_back(std::move(col));
  }

  return ds;
}

Dataset read_csv(const std::string& path,
                 const std::map<std::string, ColumnType>& type_hints) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), type_hints);
}

}  // namespace varexp
