#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tenfill/error.hpp"
#include "tenfill/tensor.hpp"

namespace tenfill {

/// Sparse set of observed entries (the index set Omega with its values).
/// Coordinates are stored flat, 1-based, entry-major.
class ObservationSet {
 public:
  explicit ObservationSet(Dims dims) : dims_(std::move(dims)) { check_dims(dims_); }

  /// Adds one entry. Throws IndexError for out-of-bounds indices,
  /// ArgumentError for duplicates and DomainError for non-finite values.
  void insert(const MultiIndex& idx, double value) {
    const std::size_t off = linear_offset(dims_, idx);
    if (!std::isfinite(value))
      throw DomainError("non-finite observation at " + to_string(idx));
    if (!seen_.insert(off).second)
      throw ArgumentError("duplicate observation at " + to_string(idx));
    coords_.insert(coords_.end(), idx.values().begin(), idx.values().end());
    values_.push_back(value);
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t order() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  /// 1-based coordinate k of entry e.
  std::size_t coord(std::size_t e, std::size_t k) const {
    return coords_[e * dims_.size() + k];
  }
  MultiIndex index(std::size_t e) const {
    auto first = coords_.begin() + static_cast<std::ptrdiff_t>(e * dims_.size());
    return MultiIndex(std::vector<std::size_t>(
        first, first + static_cast<std::ptrdiff_t>(dims_.size())));
  }
  double value(std::size_t e) const { return values_[e]; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool contains(const MultiIndex& idx) const {
    return seen_.count(linear_offset(dims_, idx)) != 0;
  }

  /// Fraction of the tensor that is observed.
  double sampling_ratio() const {
    return static_cast<double>(size()) / static_cast<double>(num_elements(dims_));
  }

  /// Materialize as a dense tensor; requires every index to be present.
  DenseTensor to_dense() const {
    const std::size_t n = num_elements(dims_);
    if (size() != n)
      throw DataError("observation set covers " + std::to_string(size()) + " of " +
                          std::to_string(n) + " entries",
                      0);
    std::vector<double> data(n);
    for (std::size_t e = 0; e < size(); ++e) data[linear_offset(dims_, index(e))] = values_[e];
    return DenseTensor(dims_, std::move(data));
  }

 private:
  Dims dims_;
  std::vector<std::size_t> coords_;
  std::vector<double> values_;
  std::unordered_set<std::size_t> seen_;
};

}  // namespace tenfill
