#include <doctest.h>

#include <string>

#include "varexp/dataset.hpp"

using varexp::ColumnType;
using varexp::CsvError;
using varexp::Dataset;
using varexp::parse_csv;
using varexp::read_csv;

TEST_CASE("numeric and categorical auto-typing") {
  const Dataset d = parse_csv("a,b\n1,x\n2.5,y\n-3e2,x\n");
  CHECK(d.n_rows == 3);
  REQUIRE(d.columns.size() == 2);
  CHECK(d.columns[0].is_numeric());
  CHECK(d.columns[0].numeric()[2] == doctest::Approx(-300.0));
  CHECK_FALSE(d.columns[1].is_numeric());
  const auto& cat = d.columns[1].categorical();
  REQUIRE(cat.levels.size() == 2);
  CHECK(cat.levels[0] == "x");  // first-appearance order
  CHECK(cat.levels[1] == "y");
  CHECK(cat.codes == std::vector<std::int32_t>{0, 1, 0});
}

TEST_CASE("type hints override auto-typing") {
  const Dataset d =
      parse_csv("id,v\n1,4\n2,5\n3,6\n", {{"id", ColumnType::categorical}});
  CHECK_FALSE(d.columns[0].is_numeric());
  CHECK(d.columns[0].categorical().levels ==
        std::vector<std::string>{"1", "2", "3"});
  CHECK(d.columns[1].is_numeric());
}

TEST_CASE("forcing numeric on a bad cell names the row and column") {
  try {
    parse_csv("a\n1\nzap\n3\n", {{"a", ColumnType::numeric}});
    FAIL("expected a parse error");
  } catch (const CsvError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'a'") != std::string::npos);
    CHECK(msg.find("2") != std::string::npos);  // data row 2
  }
}

TEST_CASE("unknown hint names are ignored") {
  CHECK_NOTHROW(parse_csv("a\n1\n2\n3\n", {{"nope", ColumnType::numeric}}));
}

TEST_CASE("quoted fields, embedded separators, doubled quotes") {
  const Dataset d =
      parse_csv("name,v\n\"a,b\",1\n\"say \"\"hi\"\"\",2\n\"line\nbreak\",3\n");
  const auto& cat = d.columns[0].categorical();
  CHECK(cat.levels[0] == "a,b");
  CHECK(cat.levels[1] == "say \"hi\"");
  CHECK(cat.levels[2] == "line\nbreak");
}

TEST_CASE("CRLF and final line without newline") {
  const Dataset d = parse_csv("a,b\r\n1,2\r\n3,4\r\n5,6");
  CHECK(d.n_rows == 3);
  CHECK(d.columns[1].numeric()[2] == 6.0);
}

TEST_CASE("a UTF-8 BOM is stripped") {
  const Dataset d = parse_csv("\xEF\xBB\xBFy\n1\n2\n3\n");
  CHECK(d.columns[0].name == "y");
}

TEST_CASE("invalid UTF-8 is rejected with a byte offset") {
  CHECK_THROWS_AS(parse_csv("a\n1\n\xFF\n3\n"), CsvError);
  CHECK_THROWS_AS(parse_csv("a\n\xC0\x80\n2\n3\n"), CsvError);        // overlong
  CHECK_THROWS_AS(parse_csv("a\n\xED\xA0\x80\n2\n3\n"), CsvError);    // surrogate
  try {
    parse_csv("ab\n1\n\xFF\n3\n");
    FAIL("expected a parse error");
  } catch (const CsvError& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
}

TEST_CASE("missing cells are an error naming the data row and column") {
  const char* cases[] = {
      "a,b\n1,2\n,4\n5,6\n",          // empty
      "a,b\n1,2\n3,NA\n5,6\n",        // NA
      "a,b\n1,2\n3,\"NA\"\n5,6\n",    // quoted NA is still missing
      "a,b\n1,2\n3,4\n5,6,\n",        // ragged: trailing comma adds a field
  };
  for (const char* text : cases) {
    CAPTURE(text);
    CHECK_THROWS_AS(parse_csv(text), CsvError);
  }
  try {
    parse_csv("a,b\n1,2\n3,NA\n5,6\n");
    FAIL("expected a parse error");
  } catch (const CsvError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'b'") != std::string::npos);
    CHECK(msg.find("2") != std::string::npos);
  }
}

TEST_CASE("structural errors") {
  CHECK_THROWS_AS(parse_csv(""), CsvError);                  // no header
  CHECK_THROWS_AS(parse_csv("a,b\n1,2\n3,4\n"), CsvError);   // < 3 data rows
  CHECK_THROWS_AS(parse_csv("a,a\n1,2\n3,4\n5,6\n"), CsvError);  // dup name
  CHECK_THROWS_AS(parse_csv("a,\n1,2\n3,4\n5,6\n"), CsvError);   // empty name
  CHECK_THROWS_AS(parse_csv("a\n\"1\n2\n3\n"), CsvError);    // unterminated
  CHECK_THROWS_AS(parse_csv("a\n\"1\"x\n2\n3\n"), CsvError); // junk after quote
  CHECK_THROWS_AS(parse_csv("a\n1\"2\n3\n4\n"), CsvError);   // quote mid-field
  CHECK_THROWS_AS(parse_csv("a,b\n1,2\n3\n5,6\n"), CsvError);  // ragged short
}

TEST_CASE("numeric lexing is strict but trims padding") {
  const Dataset d = parse_csv("a\n 1 \n+2\n\t3.5\n");
  CHECK(d.columns[0].is_numeric());
  CHECK(d.columns[0].numeric()[1] == 2.0);
  // partial parses do not count as numeric
  const Dataset e = parse_csv("a\n1.2.3\n2\n3\n");
  CHECK_FALSE(e.columns[0].is_numeric());
  // infinities are not finite data
  const Dataset f = parse_csv("a\ninf\n2\n3\n");
  CHECK_FALSE(f.columns[0].is_numeric());
}

TEST_CASE("read_csv reports unreadable paths") {
  CHECK_THROWS_AS(read_csv("/nonexistent/nope.csv"), CsvError);
}
