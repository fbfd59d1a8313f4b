#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hnndecon {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A CSV file with a leading "# schema: <name> v<version>" comment line.
struct CsvTable {
  std::string schema;
  int version = 1;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw CsvError("no column '" + name + "' in " + schema);
  }

  void add_row(std::vector<std::string> row) {
    if (row.size() != columns.size())
      throw CsvError(schema + ": row has " + std::to_string(row.size()) + " fields, header has " +
                     std::to_string(columns.size()));
    rows.push_back(std::move(row));
  }

  friend bool operator==(const CsvTable&, const CsvTable&) = default;
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    // stod rejects "nan"/"inf" spellings on some platforms
    if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw CsvError("not a number: '" + s + "'");
  }
  return v;
}

namespace detail {

inline std::string quote_field(const std::string& f) {
  if (f.find_first_of(",\"\n\r") == std::string::npos) return f;
  std::string out = "\"";
  for (char c : f) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

// Splits one record starting at `pos`; advances `pos` past the record terminator.
inline std::vector<std::string> split_record(const std::string& text, std::size_t& pos) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (; pos < text.size(); ++pos) {
    const char c = text[pos];
    if (quoted) {
      if (c == '"' && pos + 1 < text.size() && text[pos + 1] == '"') {
        fields.back() += '"';
        ++pos;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c == '\n') {
      ++pos;
      return fields;
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  if (quoted) throw CsvError("unterminated quoted field");
  return fields;
}

}  // namespace detail

inline std::string to_csv_text(const CsvTable& t) {
  std::ostringstream out;
  out << "# schema: " << t.schema << " v" << t.version << '\n';
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << detail::quote_field(fields[i]);
    out << '\n';
  };
  line(t.columns);
  for (const auto& r : t.rows) line(r);
  return out.str();
}

inline CsvTable parse_csv_text(const std::string& text) {
  CsvTable t;
  std::size_t pos = text.find('\n');
  const std::string head = text.substr(0, pos);
  const std::string tag = "# schema: ";
  const auto v = head.rfind(" v");
  if (head.rfind(tag, 0) != 0 || v == std::string::npos || v < tag.size())
    throw CsvError("missing schema header line");
  t.schema = head.substr(tag.size(), v - tag.size());
  t.version = std::stoi(head.substr(v + 2));
  if (pos == std::string::npos) throw CsvError("missing column header");
  ++pos;
  t.columns = detail::split_record(text, pos);
  while (pos < text.size()) {
    auto row = detail::split_record(text, pos);
    if (row.size() == 1 && row[0].empty()) continue;
    t.add_row(std::move(row));
  }
  return t;
}

inline void write_csv(const std::string& path, const CsvTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CsvError("cannot write " + path);
  out << to_csv_text(t);
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv_text(buf.str());
}

}  // namespace hnndecon
