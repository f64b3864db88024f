#pragma once

// Dataset CSV: header naming t, y, x1..xp (any order, x columns contiguous
// from 1) and optionally mu0, mu1 for semi-synthetic ground truth.

#include "deconf/dataset.hpp"
#include "deconf/error.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace deconf::harness {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) return out;
        start = comma + 1;
    }
}

inline std::optional<double> parse_number(std::string_view s) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

// Index of each known column, by role.
struct Columns {
    std::size_t t = 0, y = 0;
    std::vector<std::size_t> x;
    std::optional<std::size_t> mu0, mu1;
    std::size_t count = 0;
};

inline Columns resolve_header(const std::vector<std::string_view>& header, const std::string& source) {
    std::map<std::string, std::size_t> seen;
    std::map<int, std::size_t> xs;
    for (std::size_t k = 0; k < header.size(); ++k) {
        const std::string name(header[k]);
        if (!seen.emplace(name, k).second) throw SchemaError(source + ": duplicate column '" + name + "'");
        if (name == "t" || name == "y" || name == "mu0" || name == "mu1") continue;
        bool is_x = name.size() >= 2 && name[0] == 'x' && name[1] != '0';
        int idx = 0;
        if (is_x) {
            const auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), idx);
            is_x = ec == std::errc() && ptr == name.data() + name.size() && idx >= 1;
        }
        if (!is_x) throw SchemaError(source + ": unknown column '" + name + "'");
        xs[idx] = k;
    }
    Columns c;
    c.count = header.size();
    for (const char* required : {"t", "y"})
        if (!seen.count(required)) throw SchemaError(source + ": missing column '" + required + "'");
    c.t = seen["t"];
    c.y = seen["y"];
    if (xs.empty()) throw SchemaError(source + ": no covariate columns x1..xp");
    int expect = 1;
    for (const auto& [idx, k] : xs) {
        if (idx != expect) throw SchemaError(source + ": missing column 'x" + std::to_string(expect) + "'");
        c.x.push_back(k);
        ++expect;
    }
    if (seen.count("mu0")) c.mu0 = seen["mu0"];
    if (seen.count("mu1")) c.mu1 = seen["mu1"];
    if (c.mu0.has_value() != c.mu1.has_value()) throw SchemaError(source + ": mu0 and mu1 must appear together");
    return c;
}

}  // namespace detail

inline Dataset parse_dataset_csv(std::istream& in, const std::string& source = "<csv>") {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(source + ": empty file");
    const detail::Columns cols = detail::resolve_header(detail::split(line), source);
    const std::size_t p = cols.x.size();

    std::vector<double> x, t, y, mu0, mu1;
    std::size_t row = 0, line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        ++row;
        const std::vector<std::string_view> cells = detail::split(line);
        const std::string where = source + ": row " + std::to_string(row) + " (line " + std::to_string(line_no) + ")";
        if (cells.size() != cols.count)
            throw ParseError(where + " has " + std::to_string(cells.size()) + " fields, header has " + std::to_string(cols.count));
        auto number = [&](std::size_t k, const char* column) {
            const auto v = detail::parse_number(cells[k]);
            if (!v) throw ParseError(where + ", column '" + column + "': not a finite number: '" + std::string(cells[k]) + "'");
            return *v;
        };
        const double tv = number(cols.t, "t");
        if (tv != 0.0 && tv != 1.0) throw SchemaError(where + ": treatment must be 0 or 1, got " + std::string(cells[cols.t]));
        t.push_back(tv);
        y.push_back(number(cols.y, "y"));
        for (std::size_t j = 0; j < p; ++j) x.push_back(number(cols.x[j], ("x" + std::to_string(j + 1)).c_str()));
        if (cols.mu0) {
            mu0.push_back(number(*cols.mu0, "mu0"));
            mu1.push_back(number(*cols.mu1, "mu1"));
        }
    }
    if (row == 0) throw SchemaError(source + ": no data rows");

    const auto n = static_cast<Eigen::Index>(row);
    Dataset d;
    d.design = glm::DesignMatrix(
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(x.data(), n,
                                                                                                  static_cast<Eigen::Index>(p)));
    d.treatment = Eigen::Map<const Eigen::VectorXd>(t.data(), n);
    d.outcome = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
    if (cols.mu0) {
        d.oracle_m0 = Eigen::Map<const Eigen::VectorXd>(mu0.data(), n);
        d.oracle_m1 = Eigen::Map<const Eigen::VectorXd>(mu1.data(), n);
    }
    d.validate();
    return d;
}

inline Dataset load_dataset_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return parse_dataset_csv(in, path.string());
}

}  // namespace deconf::harness
