#pragma once

// Minimal CSV emit/parse used for every table the toolkit writes. Numbers are
// formatted with std::to_chars (shortest round-trip form), so emitted files
// are byte-stable and re-parse to the exact same doubles.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "branchlens/errors.hpp"

namespace branchlens::csv {

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// Fixed-precision variant for SVG coordinates and display tables.
inline std::string format_fixed(double v, int precision) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, precision);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw Error(ErrorCode::SchemaViolation, "bad numeric field '" + s + "'");
    return v;
}

inline std::string escape_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

using Row = std::vector<std::string>;

struct Table {
    Row header;
    std::vector<Row> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw Error(ErrorCode::SchemaViolation, "missing CSV column '" + name + "'");
    }
};

inline std::string emit_row(const Row& row) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) line += ',';
        line += escape_field(row[i]);
    }
    line += '\n';
    return line;
}

inline void write_table(const Table& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open '" + path + "' for writing");
    out << emit_row(table.header);
    for (const auto& row : table.rows) out << emit_row(row);
    if (!out) throw Error(ErrorCode::IoFailure, "short write to '" + path + "'");
}

inline std::vector<Row> parse_text(const std::string& text) {
    std::vector<Row> rows;
    Row row;
    std::string field;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') { field += '"'; ++i; }
                else quoted = false;
            } else {
                field += c;
            }
            any = true;
            continue;
        }
        if (c == '"') { quoted = true; any = true; }
        else if (c == ',') { row.push_back(field); field.clear(); any = true; }
        else if (c == '\n') {
            if (any || !field.empty() || !row.empty()) {
                row.push_back(field);
                rows.push_back(row);
            }
            row.clear(); field.clear(); any = false;
        } else if (c == '\r') {
            // tolerated, dropped
        } else {
            field += c; any = true;
        }
    }
    if (any || !field.empty() || !row.empty()) {
        row.push_back(field);
        rows.push_back(row);
    }
    return rows;
}

inline Table read_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    auto rows = parse_text(buf.str());
    if (rows.empty()) throw Error(ErrorCode::SchemaViolation, "empty CSV '" + path + "'");
    Table t;
    t.header = rows.front();
    t.rows.assign(rows.begin() + 1, rows.end());
    for (const auto& r : t.rows)
        if (r.size() != t.header.size())
            throw Error(ErrorCode::SchemaViolation, "ragged CSV row in '" + path + "'");
    return t;
}

}  // namespace branchlens::csv
