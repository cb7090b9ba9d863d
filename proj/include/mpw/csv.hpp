#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mpw/errors.hpp"

namespace mpw {

// Minimal strict CSV layer for the flat numeric tables this library reads and
// writes: comma-separated, header row required, decimal dot, no thousands
// separators, no quoting. An empty field means "missing" where the schema
// allows it. Errors name file, line, and column.

struct CsvTable {
    std::string path;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;  // raw fields, header excluded

    // Column index by name, or -1.
    int find(const std::string& name) const {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return static_cast<int>(j);
        return -1;
    }

    int require(const std::string& name) const {
        int j = find(name);
        if (j < 0)
            throw ValidationError(path + ": missing required column '" + name + "'");
        return j;
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace detail

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError(path + ": cannot open file");
    CsvTable t;
    t.path = path;
    std::string line;
    if (!std::getline(in, line))
        throw ValidationError(path + ": empty file (header row required)");
    t.header = detail::split_csv_line(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != t.header.size())
            throw ValidationError(path + ":" + std::to_string(lineno) + ": expected " +
                                  std::to_string(t.header.size()) + " fields, got " +
                                  std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
    }
    return t;
}

// Field parsers. `where` is "file:line" context and `col` the column name.
inline double parse_double(const std::string& s, const std::string& where,
                           const std::string& col) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ValidationError(where + ": column '" + col + "': not a number: '" + s + "'");
    return v;
}

inline std::int64_t parse_int(const std::string& s, const std::string& where,
                              const std::string& col) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ValidationError(where + ": column '" + col + "': not an integer: '" + s + "'");
    return v;
}

inline std::optional<double> parse_optional_double(const std::string& s,
                                                   const std::string& where,
                                                   const std::string& col) {
    if (s.empty()) return std::nullopt;
    return parse_double(s, where, col);
}

// All numeric output goes through this: 10 significant digits, so reruns with
// the same config and seed are byte-identical.
inline std::string format_number(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v,
                                 std::chars_format::general, 10);
    (void)ec;
    return std::string(buf, p);
}

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header)
        : path_(path), out_(path), n_cols_(header.size()) {
        if (!out_) throw ValidationError(path + ": cannot open for writing");
        write_row_raw(header);
    }

    void field(const std::string& s) { pending_.push_back(s); }
    void field(double v) { pending_.push_back(format_number(v)); }
    void field(std::int64_t v) { pending_.push_back(std::to_string(v)); }
    void field(int v) { pending_.push_back(std::to_string(v)); }
    void field(const std::optional<double>& v) {
        pending_.push_back(v ? format_number(*v) : std::string());
    }

    void end_row() {
        if (pending_.size() != n_cols_)
            throw Error(path_ + ": row has " + std::to_string(pending_.size()) +
                        " fields, header has " + std::to_string(n_cols_));
        write_row_raw(pending_);
        pending_.clear();
    }

private:
    void write_row_raw(const std::vector<std::string>& fields) {
        for (std::size_t j = 0; j < fields.size(); ++j) {
            if (j) out_ << ',';
            out_ << fields[j];
        }
        out_ << '\n';
    }

    std::string path_;
    std::ofstream out_;
    std::size_t n_cols_;
    std::vector<std::string> pending_;
};

}  // namespace mpw
