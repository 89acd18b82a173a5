#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tenfill/error.hpp"

namespace tenfill {

using Dims = std::vector<std::size_t>;

/// Validate an extent vector: order >= 1 and every extent >= 1.
inline void check_dims(const Dims& dims) {
  if (dims.empty()) throw ShapeError("tensor order must be at least 1");
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (dims[k] == 0)
      throw ShapeError("extent " + std::to_string(k + 1) + " of " +
                       detail::format_dims(dims) + " is zero");
  }
}

inline std::size_t num_elements(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

/// 1-based multi-index (i_1, ..., i_d).
class MultiIndex {
 public:
  MultiIndex() = default;
  MultiIndex(std::initializer_list<std::size_t> idx) : idx_(idx) {}
  explicit MultiIndex(std::vector<std::size_t> idx) : idx_(std::move(idx)) {}

  std::size_t order() const noexcept { return idx_.size(); }
  std::size_t operator[](std::size_t k) const { return idx_[k]; }
  std::size_t& operator[](std::size_t k) { return idx_[k]; }
  const std::vector<std::size_t>& values() const noexcept { return idx_; }

  friend bool operator==(const MultiIndex&, const MultiIndex&) = default;
  friend auto operator<=>(const MultiIndex&, const MultiIndex&) = default;

 private:
  std::vector<std::size_t> idx_;
};

inline std::string to_string(const MultiIndex& idx) {
  std::string s = "(";
  for (std::size_t k = 0; k < idx.order(); ++k) {
    if (k) s += ',';
    s += std::to_string(idx[k]);
  }
  return s + ')';
}

/// Row-major (last index fastest) offset of a 1-based index. Throws
/// IndexError when the index has the wrong order or is out of bounds.
inline std::size_t linear_offset(const Dims& dims, const MultiIndex& idx) {
  if (idx.order() != dims.size())
    throw IndexError("index " + to_string(idx) + " has order " +
                     std::to_string(idx.order()) + ", tensor " +
                     detail::format_dims(dims) + " has order " +
                     std::to_string(dims.size()));
  std::size_t off = 0;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (idx[k] < 1 || idx[k] > dims[k])
      throw IndexError("index " + to_string(idx) + " out of bounds for " +
                       detail::format_dims(dims));
    off = off * dims[k] + (idx[k] - 1);
  }
  return off;
}

/// Inverse of linear_offset.
inline MultiIndex multi_index(const Dims& dims, std::size_t offset) {
  std::vector<std::size_t> idx(dims.size());
  for (std::size_t k = dims.size(); k-- > 0;) {
    idx[k] = offset % dims[k] + 1;
    offset /= dims[k];
  }
  return MultiIndex(std::move(idx));
}

/// Dense d-way array of finite doubles, row-major with the last index fastest.
class DenseTensor {
 public:
  DenseTensor(Dims dims, std::vector<double> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims(dims_);
    if (data_.size() != num_elements(dims_))
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " does not match extents " + detail::format_dims(dims_));
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i]))
        throw DomainError("non-finite value at " +
                          to_string(multi_index(dims_, i)));
    }
  }

  static DenseTensor zeros(Dims dims) {
    check_dims(dims);
    auto n = num_elements(dims);
    return DenseTensor(std::move(dims), std::vector<double>(n, 0.0));
  }

  static DenseTensor constant(Dims dims, double value) {
    check_dims(dims);
    auto n = num_elements(dims);
    return DenseTensor(std::move(dims), std::vector<double>(n, value));
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t order() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const double> values() const noexcept { return data_; }

  double operator()(const MultiIndex& idx) const {
    return data_[linear_offset(dims_, idx)];
  }
  double at_linear(std::size_t offset) const { return data_.at(offset); }

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

 private:
  Dims dims_;
  std::vector<double> data_;
};

/// CP model: d factor matrices sharing the same column count r.
/// Factor k has shape n_k x r; column j is the mode-k vector of component j.
class CpModel {
 public:
  CpModel() = default;
  explicit CpModel(std::vector<Eigen::MatrixXd> factors)
      : factors_(std::move(factors)) {
    if (factors_.empty()) throw ModelError("CP model needs at least one factor");
    const auto r = factors_.front().cols();
    for (std::size_t k = 0; k < factors_.size(); ++k) {
      if (factors_[k].cols() != r)
        throw ModelError("factor " + std::to_string(k + 1) + " has " +
                         std::to_string(factors_[k].cols()) +
                         " columns, factor 1 has " + std::to_string(r));
      if (factors_[k].rows() < 1)
        throw ModelError("factor " + std::to_string(k + 1) + " has no rows");
      if (!factors_[k].allFinite())
        throw DomainError("factor " + std::to_string(k + 1) +
                          " has non-finite entries");
    }
  }

  std::size_t rank() const noexcept {
    return factors_.empty() ? 0 : static_cast<std::size_t>(factors_.front().cols());
  }
  std::size_t order() const noexcept { return factors_.size(); }
  Dims dims() const {
    Dims d;
    d.reserve(factors_.size());
    for (const auto& f : factors_) d.push_back(static_cast<std::size_t>(f.rows()));
    return d;
  }
  const Eigen::MatrixXd& factor(std::size_t k) const { return factors_.at(k); }
  const std::vector<Eigen::MatrixXd>& factors() const noexcept { return factors_; }

 private:
  std::vector<Eigen::MatrixXd> factors_;
};

namespace detail {

inline void require_same_dims(const DenseTensor& x, const DenseTensor& y) {
  if (x.dims() != y.dims())
    throw ShapeError("dimension mismatch: " + format_dims(x.dims()) + " vs " +
                     format_dims(y.dims()));
}

// Sum over j of prod over k, accumulated in that order. Shared by
// cp_evaluate_entry and cp_reconstruct so both agree bit for bit.
inline double cp_entry_zero_based(const std::vector<Eigen::MatrixXd>& factors,
                                  const std::size_t* rows) {
  const Eigen::Index r = factors.front().cols();
  double sum = 0.0;
  for (Eigen::Index j = 0; j < r; ++j) {
    double prod = 1.0;
    for (std::size_t k = 0; k < factors.size(); ++k)
      prod *= factors[k](static_cast<Eigen::Index>(rows[k]), j);
    sum += prod;
  }
  return sum;
}

}  // namespace detail

/// <x, y> = sum of elementwise products in canonical index order.
inline double inner_product(const DenseTensor& x, const DenseTensor& y) {
  detail::require_same_dims(x, y);
  auto a = x.values();
  auto b = y.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

/// Sum over all indices of the n-way elementwise product.
inline double generalized_inner_product(
    std::span<const std::reference_wrapper<const DenseTensor>> tensors) {
  if (tensors.empty())
    throw ArgumentError("generalized inner product of an empty list");
  const DenseTensor& first = tensors.front();
  for (const DenseTensor& t : tensors) detail::require_same_dims(first, t);
  double sum = 0.0;
  for (std::size_t i = 0; i < first.size(); ++i) {
    double prod = 1.0;
    for (const DenseTensor& t : tensors) prod *= t.values()[i];
    sum += prod;
  }
  return sum;
}

inline double generalized_inner_product(const std::vector<DenseTensor>& tensors) {
  std::vector<std::reference_wrapper<const DenseTensor>> refs(tensors.begin(),
                                                              tensors.end());
  return generalized_inner_product(
      std::span<const std::reference_wrapper<const DenseTensor>>(refs));
}

inline double frobenius_norm(const DenseTensor& x) {
  return std::sqrt(inner_product(x, x));
}

inline double cp_evaluate_entry(const CpModel& m, const MultiIndex& idx) {
  const Dims dims = m.dims();
  if (idx.order() != dims.size())
    throw IndexError("index " + to_string(idx) + " has order " +
                     std::to_string(idx.order()) + ", model has order " +
                     std::to_string(dims.size()));
  std::vector<std::size_t> rows(dims.size());
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (idx[k] < 1 || idx[k] > dims[k])
      throw IndexError("index " + to_string(idx) + " out of bounds for " +
                       detail::format_dims(dims));
    rows[k] = idx[k] - 1;
  }
  return detail::cp_entry_zero_based(m.factors(), rows.data());
}

/// Dense tensor sum_j u_1^j o ... o u_d^j.
inline DenseTensor cp_reconstruct(const CpModel& m) {
  if (m.order() == 0) throw ModelError("empty CP model");
  const Dims dims = m.dims();
  const std::size_t n = num_elements(dims);
  std::vector<double> out(n);
  std::vector<std::size_t> rows(dims.size(), 0);
  for (std::size_t off = 0; off < n; ++off) {
    out[off] = detail::cp_entry_zero_based(m.factors(), rows.data());
    for (std::size_t k = dims.size(); k-- > 0;) {
      if (++rows[k] < dims[k]) break;
      rows[k] = 0;
    }
  }
  return DenseTensor(dims, std::move(out));
}

/// ||pred - truth||_F / ||truth||_F.
inline double relative_error(const DenseTensor& pred, const DenseTensor& truth) {
  detail::require_same_dims(pred, truth);
  const double denom = frobenius_norm(truth);
  if (!(denom > 0.0))
    throw DomainError("relative error against a zero-norm reference");
  auto p = pred.values();
  auto t = truth.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = p[i] - t[i];
    sum += e * e;
  }
  return std::sqrt(sum) / denom;
}

}  // namespace tenfill
