#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tcsm/errors.hpp"

namespace tcsm {

// Flat gradient aligned with a model's parameter vector. Storage is split
// into fixed-length rows and only rows that were written are tracked, so a
// large tabular model pays per step for what the batch touched, not for the
// whole table.
class Gradient {
 public:
  Gradient() = default;
  explicit Gradient(std::size_t size, std::size_t row_length = 0) { resize(size, row_length); }

  void resize(std::size_t size, std::size_t row_length = 0) {
    if (row_length == 0 || size == 0) row_length = std::max<std::size_t>(size, 1);
    if (size % row_length != 0) throw UsageError("gradient size must be a multiple of the row length");
    values_.assign(size, 0.0);
    row_ = row_length;
    flags_.assign(size / row_length, 0);
    touched_.clear();
  }

  std::size_t size() const { return values_.size(); }
  std::size_t row_length() const { return row_; }
  std::size_t rows() const { return flags_.size(); }

  // Mutable view of one row; marks it as touched.
  std::span<double> row(std::size_t r) {
    mark(r);
    return std::span<double>(values_).subspan(r * row_, row_);
  }

  // Mutable view of [offset, offset + n), which must stay inside one row.
  std::span<double> segment(std::size_t offset, std::size_t n) {
    mark(offset / row_);
    return std::span<double>(values_).subspan(offset, n);
  }

  // Mutable view of everything; marks every row.
  std::span<double> dense() {
    if (touched_.size() != flags_.size()) {
      for (std::size_t r = 0; r < flags_.size(); ++r) mark(r);
    }
    return values_;
  }

  std::span<const double> values() const { return values_; }
  const std::vector<std::size_t>& touched_rows() const { return touched_; }
  bool all_touched() const { return touched_.size() == flags_.size(); }

  void clear() {
    for (std::size_t r : touched_) {
      std::fill_n(values_.begin() + static_cast<std::ptrdiff_t>(r * row_), row_, 0.0);
      flags_[r] = 0;
    }
    touched_.clear();
  }

  double norm() const {
    double s = 0.0;
    for (std::size_t r : touched_)
      for (std::size_t k = r * row_; k < (r + 1) * row_; ++k) s += values_[k] * values_[k];
    return std::sqrt(s);
  }

  void scale(double c) {
    for (std::size_t r : touched_)
      for (std::size_t k = r * row_; k < (r + 1) * row_; ++k) values_[k] *= c;
  }

  bool finite() const {
    for (std::size_t r : touched_)
      for (std::size_t k = r * row_; k < (r + 1) * row_; ++k)
        if (!std::isfinite(values_[k])) return false;
    return true;
  }

 private:
  void mark(std::size_t r) {
    if (!flags_[r]) {
      flags_[r] = 1;
      touched_.push_back(r);
    }
  }

  std::vector<double> values_;
  std::size_t row_ = 1;
  std::vector<std::uint8_t> flags_;
  std::vector<std::size_t> touched_;
};

}  // namespace tcsm
