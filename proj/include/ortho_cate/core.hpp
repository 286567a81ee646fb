#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ortho_cate/errors.hpp"
#include "ortho_cate/linalg.hpp"
#include "ortho_cate/rng.hpp"

namespace ortho_cate {

// Observed triples (y_i, a_i, x_i) plus the conditioning subset V of the
// feature columns. Immutable after construction; all operations treat it
// read-only.
struct Dataset {
    std::vector<double> y;
    std::vector<int> a;               // each entry 0 or 1
    Matrix x;                         // n x d_X
    std::vector<std::string> feature_names;
    std::vector<std::size_t> v_columns;

    std::size_t n() const { return y.size(); }
    std::size_t d_x() const { return x.cols; }
    std::size_t d_v() const { return v_columns.size(); }

    bool v_is_all_columns() const {
        if (v_columns.size() != x.cols) return false;
        std::vector<std::size_t> sorted = v_columns;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t j = 0; j < sorted.size(); ++j)
            if (sorted[j] != j) return false;
        return true;
    }

    void validate() const {
        if (y.empty()) throw InvalidParams("dataset must have n >= 1");
        if (a.size() != y.size() || x.rows != y.size())
            throw LengthMismatch("y, a, x row counts differ");
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i] != 0 && a[i] != 1)
                throw NonBinaryTreatment("a[" + std::to_string(i) + "] = " +
                                         std::to_string(a[i]));
        for (std::size_t i = 0; i < y.size(); ++i)
            if (!std::isfinite(y[i]))
                throw NonFiniteValue("y[" + std::to_string(i) + "]");
        for (double v : x.data)
            if (!std::isfinite(v)) throw NonFiniteValue("feature matrix");
        std::vector<std::size_t> seen = v_columns;
        std::sort(seen.begin(), seen.end());
        if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
            throw InvalidParams("v_columns contains duplicates");
        for (std::size_t c : v_columns)
            if (c >= x.cols) throw InvalidParams("v_column index out of range");
    }
};

// n x d_V copy of the conditioning columns, in v_columns order.
inline Matrix v_matrix(const Dataset& data) {
    Matrix v(data.n(), data.v_columns.size());
    for (std::size_t i = 0; i < data.n(); ++i)
        for (std::size_t j = 0; j < data.v_columns.size(); ++j)
            v(i, j) = data.x(i, data.v_columns[j]);
    return v;
}

inline Dataset subset(const Dataset& data, std::span<const std::size_t> rows) {
    Dataset out;
    out.feature_names = data.feature_names;
    out.v_columns = data.v_columns;
    out.y.reserve(rows.size());
    out.a.reserve(rows.size());
    out.x = Matrix(rows.size(), data.x.cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.y.push_back(data.y[rows[r]]);
        out.a.push_back(data.a[rows[r]]);
        for (std::size_t j = 0; j < data.x.cols; ++j) out.x(r, j) = data.x(rows[r], j);
    }
    return out;
}

// Deterministic K-fold partition of {0..n-1}.
struct FoldAssignment {
    std::vector<int> fold_of;  // values in {0..k-1}
    int k = 0;
    std::uint64_t seed = 0;

    std::size_t n() const { return fold_of.size(); }
};

// Shuffled-index partition: the first (n mod K) folds take ceil(n/K)
// elements, the rest take floor(n/K).
inline FoldAssignment kfold_assign(std::size_t n, int k, std::uint64_t seed) {
    if (k < 2 || static_cast<std::size_t>(k) > n)
        throw InvalidK("need 2 <= K <= n, got K=" + std::to_string(k) +
                       ", n=" + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n; i-- > 1;) {
        const std::size_t j = rng.below(i + 1);
        std::swap(order[i], order[j]);
    }
    FoldAssignment fa;
    fa.k = k;
    fa.seed = seed;
    fa.fold_of.assign(n, 0);
    const std::size_t base = n / static_cast<std::size_t>(k);
    const std::size_t extra = n % static_cast<std::size_t>(k);
    std::size_t pos = 0;
    for (int f = 0; f < k; ++f) {
        const std::size_t size = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
        for (std::size_t s = 0; s < size; ++s) fa.fold_of[order[pos++]] = f;
    }
    return fa;
}

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& field, std::size_t row,
                           const std::string& column) {
    double value = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last)
        throw NonFiniteValue("cannot parse '" + field + "' at row " +
                             std::to_string(row) + ", column " + column);
    if (!std::isfinite(value))
        throw NonFiniteValue("non-finite value at row " + std::to_string(row) +
                             ", column " + column);
    return value;
}

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

// Parse a dataset from CSV text with header `y,a,<feature names...>`.
// Feature columns keep header order; v_names resolve to column indices.
inline Dataset dataset_from_csv_text(const std::string& text,
                                     const std::vector<std::string>& v_names) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw MissingColumn("empty input, no header row");
    const std::vector<std::string> header = detail::split_csv_line(line);
    if (header.size() < 3 || header[0] != "y" || header[1] != "a")
        throw MissingColumn("header must start with y,a and have features");

    Dataset data;
    data.feature_names.assign(header.begin() + 2, header.end());
    const std::size_t d = data.feature_names.size();

    for (const std::string& name : v_names) {
        auto it = std::find(data.feature_names.begin(), data.feature_names.end(), name);
        if (it == data.feature_names.end())
            throw MissingColumn("v name '" + name + "' not among feature columns");
        data.v_columns.push_back(
            static_cast<std::size_t>(it - data.feature_names.begin()));
    }
    if (data.v_columns.empty())
        throw MissingColumn("at least one v column is required");

    std::vector<double> xflat;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row;
        const std::vector<std::string> fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw MissingColumn("row " + std::to_string(row) + " has " +
                                std::to_string(fields.size()) + " fields, expected " +
                                std::to_string(header.size()));
        data.y.push_back(detail::parse_double(fields[0], row, "y"));
        const double a_val = detail::parse_double(fields[1], row, "a");
        if (a_val != 0.0 && a_val != 1.0)
            throw NonBinaryTreatment("row " + std::to_string(row) + " has a=" +
                                     fields[1]);
        data.a.push_back(static_cast<int>(a_val));
        for (std::size_t j = 0; j < d; ++j)
            xflat.push_back(detail::parse_double(fields[2 + j], row,
                                                 data.feature_names[j]));
    }
    if (row == 0) throw InvalidParams("dataset must have n >= 1");
    data.x.rows = row;
    data.x.cols = d;
    data.x.data = std::move(xflat);
    data.validate();
    return data;
}

inline Dataset dataset_from_csv(const std::string& path,
                                const std::vector<std::string>& v_names) {
    std::ifstream in(path);
    if (!in) throw MissingColumn("cannot open file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return dataset_from_csv_text(buf.str(), v_names);
}

// Decimal text at 17 significant digits; round-trips doubles bit-exactly.
inline std::string dataset_to_csv_text(const Dataset& data) {
    std::ostringstream out;
    out << "y,a";
    for (const std::string& name : data.feature_names) out << ',' << name;
    out << '\n';
    for (std::size_t i = 0; i < data.n(); ++i) {
        out << detail::format_double(data.y[i]) << ',' << data.a[i];
        for (std::size_t j = 0; j < data.d_x(); ++j)
            out << ',' << detail::format_double(data.x(i, j));
        out << '\n';
    }
    return out.str();
}

inline void dataset_to_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidParams("cannot open file for writing: " + path);
    out << dataset_to_csv_text(data);
}

// Audit format: single integer column.
inline void folds_to_csv(const FoldAssignment& folds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidParams("cannot open file for writing: " + path);
    out << "fold\n";
    for (int f : folds.fold_of) out << f << '\n';
}

}  // namespace ortho_cate
