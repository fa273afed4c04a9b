#pragma once

// Minimal RFC 4180 reader/writer plus locale-independent number conversion.

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "coverbias/error.hpp"

namespace coverbias::csv {

struct Row {
  std::size_t line = 0;  // 1-based line where the record starts
  std::vector<std::string> fields;
};

struct Document {
  std::vector<std::string> header;
  std::vector<Row> rows;

  // Column index by name, or SchemaError naming `origin`.
  std::size_t column(std::string_view name, std::string_view origin = "csv") const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw SchemaError(std::string(origin) + ": missing column '" + std::string(name) + "'");
  }
};

inline Document parse(std::string_view text, std::string_view origin = "csv") {
  Document doc;
  std::vector<std::vector<std::string>> records;
  std::vector<std::size_t> starts;

  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  std::size_t record_line = 1;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    bool blank = record.size() == 1 && record[0].empty();
    if (!blank) {
      records.push_back(std::move(record));
      starts.push_back(record_line);
    }
    record.clear();
  };

  std::size_t i = 0;
  // skip UTF-8 BOM
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") i = 3;
  for (; i < text.size(); ++i) {
    char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++line;
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (field_started || !field.empty())
          throw ParseError(std::string(origin) + ":" + std::to_string(line) + ": stray quote");
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        ++line;
        record_line = line;
        break;
      default:
        field.push_back(ch);
    }
  }
  if (in_quotes) throw ParseError(std::string(origin) + ":" + std::to_string(line) + ": unterminated quote");
  if (!field.empty() || !record.empty() || field_started) end_record();

  if (records.empty()) throw SchemaError(std::string(origin) + ": empty file, header row required");
  doc.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != doc.header.size())
      throw ParseError(std::string(origin) + ":" + std::to_string(starts[r]) + ": expected " +
                       std::to_string(doc.header.size()) + " fields, got " +
                       std::to_string(records[r].size()));
    doc.rows.push_back(Row{starts[r], std::move(records[r])});
  }
  return doc;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Document read(const std::string& path) { return parse(read_file(path), path); }

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

// Parses a finite decimal real; ParseError carries origin and line.
inline double to_real(std::string_view text, std::string_view origin, std::size_t line) {
  std::string t = trim(text);
  double value = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (!t.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (t.empty() || ec != std::errc() || ptr != last || !std::isfinite(value))
    throw ParseError(std::string(origin) + ":" + std::to_string(line) + ": not a finite number: '" + t + "'");
  return value;
}

inline long long to_integer(std::string_view text, std::string_view origin, std::size_t line) {
  std::string t = trim(text);
  long long value = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw ParseError(std::string(origin) + ":" + std::to_string(line) + ": not an integer: '" + t + "'");
  return value;
}

// Shortest decimal text that round-trips to the same double.
inline std::string format_real(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

class Writer {
 public:
  explicit Writer(const std::vector<std::string>& header) { row(header); }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << quote(fields[i]);
    }
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write '" + path + "'");
    f << out_.str();
  }

 private:
  std::ostringstream out_;
};

}  // namespace coverbias::csv
