#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "tablerl/common.hpp"

namespace tablerl::env {

enum class ColumnType { Int, Float, Text };

struct Column {
    std::string name;
    ColumnType type = ColumnType::Int;
};

using Value = std::variant<int64_t, double, std::string>;

inline std::string value_to_string(const Value& v) {
    if (std::holds_alternative<int64_t>(v)) return std::to_string(std::get<int64_t>(v));
    if (std::holds_alternative<double>(v)) return format_number(std::get<double>(v));
    return std::get<std::string>(v);
}

inline double value_as_number(const Value& v) {
    if (std::holds_alternative<int64_t>(v)) return static_cast<double>(std::get<int64_t>(v));
    if (std::holds_alternative<double>(v)) return std::get<double>(v);
    throw std::invalid_argument("text value used as number");
}

struct Table {
    std::string name;
    std::vector<Column> columns;
    std::vector<std::vector<Value>> rows;

    int column_index(std::string_view col) const {
        for (size_t i = 0; i < columns.size(); ++i)
            if (columns[i].name == col) return static_cast<int>(i);
        return -1;
    }

    /// Row arity and value/column type agreement.
    bool well_formed() const {
        for (const auto& row : rows) {
            if (row.size() != columns.size()) return false;
            for (size_t c = 0; c < row.size(); ++c) {
                switch (columns[c].type) {
                    case ColumnType::Int:
                        if (!std::holds_alternative<int64_t>(row[c])) return false;
                        break;
                    case ColumnType::Float:
                        if (!std::holds_alternative<double>(row[c])) return false;
                        break;
                    case ColumnType::Text:
                        if (!std::holds_alternative<std::string>(row[c])) return false;
                        break;
                }
            }
        }
        return true;
    }
};

// ----------------------------------------------------------------------------
// CSV (RFC 4180 style: header row, quoted fields, "" escapes a quote)
// ----------------------------------------------------------------------------

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool any = false;
    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"' && field.empty()) {
            quoted = true;
            any = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !field.empty()) {
                row.push_back(std::move(field));
                field.clear();
                rows.push_back(std::move(row));
                row.clear();
                any = false;
            }
        } else {
            field.push_back(c);
            any = true;
        }
    }
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace detail

inline std::string table_to_csv(const Table& t) {
    std::string out;
    for (size_t c = 0; c < t.columns.size(); ++c) {
        if (c) out.push_back(',');
        out += detail::csv_field(t.columns[c].name);
    }
    out.push_back('\n');
    for (const auto& row : t.rows) {
        for (size_t c = 0; c < row.size(); ++c) {
            if (c) out.push_back(',');
            out += detail::csv_field(value_to_string(row[c]));
        }
        out.push_back('\n');
    }
    return out;
}

/// Reads a CSV with header row; column types are inferred (int if every cell
/// parses as an integer, float if every cell parses numerically, else text).
inline Table table_from_csv(std::string_view text, const std::string& name) {
    auto cells = detail::parse_csv(text);
    if (cells.empty()) throw std::invalid_argument("csv has no header row");
    Table t;
    t.name = name;
    for (const std::string& h : cells[0]) t.columns.push_back({h, ColumnType::Int});

    size_t ncols = t.columns.size();
    std::vector<bool> all_int(ncols, true), all_num(ncols, true);
    for (size_t r = 1; r < cells.size(); ++r) {
        if (cells[r].size() != ncols)
            throw std::invalid_argument("csv row " + std::to_string(r) + " has wrong arity");
        for (size_t c = 0; c < ncols; ++c) {
            double v;
            if (!parse_number(cells[r][c], v)) {
                all_int[c] = all_num[c] = false;
            } else if (v != std::floor(v) || cells[r][c].find('.') != std::string::npos ||
                       cells[r][c].find('e') != std::string::npos ||
                       cells[r][c].find('E') != std::string::npos) {
                all_int[c] = false;
            }
        }
    }
    for (size_t c = 0; c < ncols; ++c)
        t.columns[c].type = all_int[c] ? ColumnType::Int
                          : all_num[c] ? ColumnType::Float
                                       : ColumnType::Text;
    for (size_t r = 1; r < cells.size(); ++r) {
        std::vector<Value> row;
        row.reserve(ncols);
        for (size_t c = 0; c < ncols; ++c) {
            switch (t.columns[c].type) {
                case ColumnType::Int:
                    row.emplace_back(static_cast<int64_t>(std::strtoll(cells[r][c].c_str(), nullptr, 10)));
                    break;
                case ColumnType::Float: {
                    double v = 0;
                    parse_number(cells[r][c], v);
                    row.emplace_back(v);
                    break;
                }
                case ColumnType::Text:
                    row.emplace_back(cells[r][c]);
                    break;
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline void write_table_csv(const Table& t, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write table file: " + path);
    f << table_to_csv(t);
}

inline Table read_table_csv(const std::string& path, const std::string& name) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read table file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return table_from_csv(ss.str(), name);
}

}  // namespace tablerl::env
