#pragma once

// Sparse tensor text format (.tns):
//
//   line 1: order d
//   line 2: d extents
//   then one entry per line: i_1 ... i_d value   (1-based, whitespace separated)
//
// Values are written as the shortest decimal that round-trips to the same
// double. Blank lines are ignored.

#include <charconv>
#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "tenfill/error.hpp"
#include "tenfill/observations.hpp"
#include "tenfill/tensor.hpp"

namespace tenfill {

/// Shortest round-trip decimal for a double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::size_t parse_size(std::string_view tok, std::size_t line, const char* what) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(std::string("invalid ") + what + " '" + std::string(tok) + "'", line);
  return v;
}

inline double parse_value(std::string_view tok, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("invalid value '" + std::string(tok) + "'", line);
  return v;
}

}  // namespace detail

/// Parses a .tns stream. Throws ParseError for malformed lines, DataError
/// for duplicate indices and IndexError for out-of-bounds indices; every
/// message names the offending line.
inline ObservationSet read_tns(std::istream& in) {
  std::string raw;
  std::size_t line_no = 0;
  auto next_line = [&](std::vector<std::string_view>& toks) {
    while (std::getline(in, raw)) {
      ++line_no;
      toks = detail::split_ws(raw);
      if (!toks.empty()) return true;
    }
    return false;
  };

  std::vector<std::string_view> toks;
  if (!next_line(toks)) throw ParseError("missing order line", line_no + 1);
  if (toks.size() != 1) throw ParseError("order line must hold one integer", line_no);
  const std::size_t order = detail::parse_size(toks[0], line_no, "order");
  if (order < 1) throw ParseError("order must be at least 1", line_no);

  if (!next_line(toks)) throw ParseError("missing extents line", line_no + 1);
  if (toks.size() != order)
    throw ParseError("expected " + std::to_string(order) + " extents, found " +
                         std::to_string(toks.size()),
                     line_no);
  Dims dims(order);
  for (std::size_t k = 0; k < order; ++k) {
    dims[k] = detail::parse_size(toks[k], line_no, "extent");
    if (dims[k] < 1) throw ParseError("extents must be positive", line_no);
  }

  ObservationSet obs(dims);
  std::unordered_map<std::size_t, std::size_t> first_seen;
  std::vector<std::size_t> idx(order);
  while (next_line(toks)) {
    if (toks.size() != order + 1)
      throw ParseError("expected " + std::to_string(order) + " indices and a value, found " +
                           std::to_string(toks.size()) + " fields",
                       line_no);
    for (std::size_t k = 0; k < order; ++k) {
      idx[k] = detail::parse_size(toks[k], line_no, "index");
      if (idx[k] < 1 || idx[k] > dims[k])
        throw IndexError("line " + std::to_string(line_no) + ": index " +
                         std::to_string(idx[k]) + " outside [1, " + std::to_string(dims[k]) +
                         "] in mode " + std::to_string(k + 1));
    }
    const double value = detail::parse_value(toks[order], line_no);
    if (!std::isfinite(value)) throw ParseError("non-finite value", line_no);
    const MultiIndex mi(idx);
    const std::size_t off = linear_offset(dims, mi);
    if (auto [it, fresh] = first_seen.emplace(off, line_no); !fresh)
      throw DataError("duplicate index " + to_string(mi) + " (first on line " +
                          std::to_string(it->second) + ")",
                      line_no);
    obs.insert(mi, value);
  }
  return obs;
}

inline ObservationSet load_tns(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return read_tns(in);
}

/// Loads a file that covers every index as a dense tensor.
inline DenseTensor load_tns_dense(const std::string& path) {
  return load_tns(path).to_dense();
}

inline void write_tns(std::ostream& out, const ObservationSet& obs) {
  out << obs.order() << '\n';
  for (std::size_t k = 0; k < obs.order(); ++k) out << (k ? " " : "") << obs.dims()[k];
  out << '\n';
  for (std::size_t e = 0; e < obs.size(); ++e) {
    for (std::size_t k = 0; k < obs.order(); ++k) out << obs.coord(e, k) << ' ';
    out << format_double(obs.value(e)) << '\n';
  }
}

/// Writes every entry of a dense tensor in canonical (row-major) order.
inline void write_tns(std::ostream& out, const DenseTensor& x) {
  const Dims& dims = x.dims();
  out << dims.size() << '\n';
  for (std::size_t k = 0; k < dims.size(); ++k) out << (k ? " " : "") << dims[k];
  out << '\n';
  std::vector<std::size_t> idx(dims.size(), 1);
  for (std::size_t off = 0; off < x.size(); ++off) {
    for (std::size_t i : idx) out << i << ' ';
    out << format_double(x.at_linear(off)) << '\n';
    for (std::size_t k = dims.size(); k-- > 0;) {
      if (++idx[k] <= dims[k]) break;
      idx[k] = 1;
    }
  }
}

template <class T>
void write_tns(const std::string& path, const T& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_tns(out, data);
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace tenfill
