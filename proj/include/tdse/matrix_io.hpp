// Copyright 2026 the tdse-toolkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Text format for square complex matrices and complex vectors:
//   line 1: dimension d
//   then d lines of d (matrix) or 1 (vector) whitespace-separated entries,
//   each written as "re+imj" with 17 significant digits, so that doubles
//   round-trip bit-exactly.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "tdse/errors.hpp"
#include "tdse/operator_core.hpp"

namespace tdse {

inline std::string format_complex(Complex z) {
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
        throw Error("format_complex: non-finite entry");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g%+.17gj", z.real(), z.imag());
    return buf;
}

inline Complex parse_complex(const std::string& token) {
    const char* s = token.c_str();
    char* end = nullptr;
    const double re = std::strtod(s, &end);
    if (end == s || (*end != '+' && *end != '-'))
        throw ParseError("parse_complex: bad entry '" + token + "'");
    const char* imag_start = end;
    const double im = std::strtod(imag_start, &end);
    if (end == imag_start || *end != 'j' || *(end + 1) != '\0')
        throw ParseError("parse_complex: bad entry '" + token + "'");
    if (!std::isfinite(re) || !std::isfinite(im))
        throw ParseError("parse_complex: non-finite entry '" + token + "'");
    return {re, im};
}

inline void write_matrix(std::ostream& os, const Matrix& m) {
    if (m.rows() != m.cols()) throw DimensionError("write_matrix: matrix not square");
    os << m.rows() << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) os << ' ';
            os << format_complex(m(r, c));
        }
        os << '\n';
    }
}

inline void write_vector(std::ostream& os, const Vector& v) {
    os << v.size() << '\n';
    for (Eigen::Index r = 0; r < v.size(); ++r) os << format_complex(v[r]) << '\n';
}

inline void save_matrix(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream os(path);
    if (!os) throw IoError("save_matrix: cannot open " + path.string());
    write_matrix(os, m);
    if (!os) throw IoError("save_matrix: write failed for " + path.string());
}

inline void save_vector(const std::filesystem::path& path, const Vector& v) {
    std::ofstream os(path);
    if (!os) throw IoError("save_vector: cannot open " + path.string());
    write_vector(os, v);
    if (!os) throw IoError("save_vector: write failed for " + path.string());
}

namespace detail {

inline long read_dimension(std::istream& is, const char* what) {
    long d = 0;
    if (!(is >> d) || d < 1)
        throw ParseError(std::string(what) + ": missing or invalid dimension line");
    return d;
}

inline std::string next_token(std::istream& is, const char* what) {
    std::string token;
    if (!(is >> token)) throw ParseError(std::string(what) + ": unexpected end of input");
    return token;
}

}  // namespace detail

inline Matrix read_matrix(std::istream& is) {
    const long d = detail::read_dimension(is, "read_matrix");
    Matrix m(d, d);
    for (long r = 0; r < d; ++r)
        for (long c = 0; c < d; ++c) m(r, c) = parse_complex(detail::next_token(is, "read_matrix"));
    std::string extra;
    if (is >> extra) throw ParseError("read_matrix: trailing data '" + extra + "'");
    return m;
}

inline Vector read_vector(std::istream& is) {
    const long d = detail::read_dimension(is, "read_vector");
    Vector v(d);
    for (long r = 0; r < d; ++r) v[r] = parse_complex(detail::next_token(is, "read_vector"));
    std::string extra;
    if (is >> extra) throw ParseError("read_vector: trailing data '" + extra + "'");
    return v;
}

inline Matrix load_matrix(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_matrix: cannot open " + path.string());
    try {
        return read_matrix(is);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline Vector load_vector(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_vector: cannot open " + path.string());
    try {
        return read_vector(is);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace tdse
