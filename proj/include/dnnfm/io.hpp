/**
 * @file io.hpp
 * @brief CSV ingestion/export for dated panels and square matrices.
 *
 * Panel layout: header `date,<id1>,<id2>,...`, one row per period. Empty
 * cells and NA/NaN/null read as missing (quiet NaN). Numbers are written in
 * shortest round-trip form so re-reading reproduces the values exactly.
 */
#pragma once

#include "dnnfm/common.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace dnnfm::io
{

struct Panel
{
    std::vector<std::string> dates;
    std::vector<std::string> columns;
    Matrix values;  ///< dates.size() x columns.size()
};

inline std::string format_double(double x)
{
    if (std::isnan(x))
        return "NaN";
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    return std::string(buf.data(), res.ptr);
}

inline std::string trim(std::string_view s)
{
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '"'))
        ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '"'))
        --e;
    return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;)
    {
        const auto pos = line.find(',', start);
        out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
        if (pos == std::string::npos)
            break;
        start = pos + 1;
    }
    return out;
}

inline bool is_missing_token(const std::string& t)
{
    return t.empty() || t == "NA" || t == "NaN" || t == "nan" || t == "null" || t == "NULL" || t == "." || t == "-";
}

inline double parse_double(const std::string& token, const std::string& where)
{
    if (is_missing_token(token))
        return std::numeric_limits<double>::quiet_NaN();
    double value = 0.0;
    const char* first = token.data();
    const char* last = first + token.size();
    if (*first == '+')
        ++first;
    auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last)
        fail(ErrorKind::data, where + ": cannot parse '" + token + "' as a number");
    return value;
}

inline std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
    return in;
}

inline std::ofstream open_out(const std::filesystem::path& path)
{
    if (path.has_parent_path())
    {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out)
        fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    return out;
}

inline Panel read_panel_csv(const std::filesystem::path& path)
{
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line))
        fail(ErrorKind::data, path.string() + ": empty file");
    auto header = split_csv_line(line);
    if (header.size() < 2)
        fail(ErrorKind::data, path.string() + ": need a date column and at least one data column");
    std::string first = header[0];
    if (first.size() >= 3 && static_cast<unsigned char>(first[0]) == 0xEF)
        first = first.substr(3);  // UTF-8 BOM
    for (auto& ch : first)
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (first != "date")
        fail(ErrorKind::data, path.string() + ": first column must be 'date'");

    Panel p;
    p.columns.assign(header.begin() + 1, header.end());
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line))
    {
        ++line_no;
        if (trim(line).empty())
            continue;
        auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            fail(ErrorKind::data, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                      std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
        p.dates.push_back(cells[0]);
        std::vector<double> row;
        row.reserve(cells.size() - 1);
        for (std::size_t c = 1; c < cells.size(); ++c)
            row.push_back(parse_double(cells[c], path.string() + ":" + std::to_string(line_no)));
        rows.push_back(std::move(row));
    }
    p.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p.columns.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < rows[i].size(); ++c)
            p.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    return p;
}

inline void write_panel_csv(const std::filesystem::path& path, const std::vector<std::string>& dates,
                            const std::vector<std::string>& columns, const Matrix& values)
{
    require_shape(static_cast<Eigen::Index>(dates.size()) == values.rows() &&
                      static_cast<Eigen::Index>(columns.size()) == values.cols(),
                  "write_panel_csv: labels do not match matrix shape");
    auto out = open_out(path);
    out << "date";
    for (const auto& c : columns)
        out << ',' << c;
    out << '\n';
    for (Eigen::Index i = 0; i < values.rows(); ++i)
    {
        out << dates[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < values.cols(); ++j)
            out << ',' << format_double(values(i, j));
        out << '\n';
    }
    if (!out)
        fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

/// Square matrix: header = ids, rows in the same order, no row labels.
inline void write_matrix_csv(const std::filesystem::path& path, const std::vector<std::string>& ids, const Matrix& m)
{
    require_shape(static_cast<Eigen::Index>(ids.size()) == m.cols(), "write_matrix_csv: id count does not match columns");
    auto out = open_out(path);
    for (std::size_t k = 0; k < ids.size(); ++k)
        out << (k ? "," : "") << ids[k];
    out << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i)
    {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            out << (j ? "," : "") << format_double(m(i, j));
        out << '\n';
    }
    if (!out)
        fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

struct LabeledMatrix
{
    std::vector<std::string> ids;
    Matrix values;
};

inline LabeledMatrix read_matrix_csv(const std::filesystem::path& path)
{
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line))
        fail(ErrorKind::data, path.string() + ": empty file");
    LabeledMatrix lm;
    lm.ids = split_csv_line(line);
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line))
    {
        ++line_no;
        if (trim(line).empty())
            continue;
        auto cells = split_csv_line(line);
        if (cells.size() != lm.ids.size())
            fail(ErrorKind::data, path.string() + ":" + std::to_string(line_no) + ": wrong field count");
        std::vector<double> row;
        for (const auto& c : cells)
            row.push_back(parse_double(c, path.string() + ":" + std::to_string(line_no)));
        rows.push_back(std::move(row));
    }
    lm.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(lm.ids.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            lm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return lm;
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    auto out = open_out(path);
    out << text;
    if (!out)
        fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

/// 64-bit FNV-1a, hex encoded. Used for config and manifest fingerprints.
inline std::string fnv1a_hex(std::string_view data)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data)
    {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

}  // namespace dnnfm::io
