#pragma once

// Small fully connected network over a flat parameter vector. Inputs are
// sparse (one-hot tokens plus a few dense time features), so the first layer
// only visits non-zero input columns.

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "tcsm/core.hpp"
#include "tcsm/models/gradient.hpp"

namespace tcsm {

struct SparseInput {
  std::vector<std::pair<std::size_t, double>> entries;  // (index, value)
};

// Sinusoidal time features: sin and cos of pi * 2^k * t for k < frequencies.
inline void append_time_features(SparseInput& in, std::size_t offset, double t, int frequencies) {
  for (int k = 0; k < frequencies; ++k) {
    const double w = M_PI * std::ldexp(1.0, k) * t;
    in.entries.emplace_back(offset + static_cast<std::size_t>(2 * k), std::sin(w));
    in.entries.emplace_back(offset + static_cast<std::size_t>(2 * k + 1), std::cos(w));
  }
}

class Mlp {
 public:
  Mlp() = default;
  // sizes = {input, hidden..., output}. Parameters live at params[offset...].
  Mlp(std::vector<int> sizes, std::size_t offset) : sizes_(std::move(sizes)), offset_(offset) {
    if (sizes_.size() < 2) throw ConfigError("mlp needs at least an input and an output layer");
    for (int s : sizes_)
      if (s < 1) throw ConfigError("mlp layer widths must be >= 1");
    std::size_t off = offset_;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      w_off_.push_back(off);
      off += static_cast<std::size_t>(sizes_[l]) * static_cast<std::size_t>(sizes_[l + 1]);
      b_off_.push_back(off);
      off += static_cast<std::size_t>(sizes_[l + 1]);
    }
    end_ = off;
  }

  const std::vector<int>& sizes() const { return sizes_; }
  std::size_t param_count() const { return end_ - offset_; }
  int output_size() const { return sizes_.back(); }
  std::size_t layers() const { return sizes_.size() - 1; }

  // Hidden weights ~ N(0, 1/fan_in), biases zero, final layer zero.
  void init(std::span<double> params, Rng& rng) const {
    for (std::size_t l = 0; l < layers(); ++l) {
      const std::size_t n_in = static_cast<std::size_t>(sizes_[l]);
      const std::size_t n_out = static_cast<std::size_t>(sizes_[l + 1]);
      const double scale = (l + 1 == layers()) ? 0.0 : 1.0 / std::sqrt(static_cast<double>(n_in));
      for (std::size_t k = 0; k < n_in * n_out; ++k) params[w_off_[l] + k] = scale == 0.0 ? 0.0 : scale * standard_normal(rng);
      for (std::size_t k = 0; k < n_out; ++k) params[b_off_[l] + k] = 0.0;
    }
  }

  // Activations after each hidden ReLU, kept for backward.
  struct Cache {
    SparseInput input;
    std::vector<std::vector<double>> hidden;
  };

  std::vector<double> forward(std::span<const double> params, const SparseInput& in, Cache* cache) const {
    std::vector<double> cur;
    // First layer over the sparse input. Weights are stored [out][in].
    {
      const std::size_t n_in = static_cast<std::size_t>(sizes_[0]);
      const std::size_t n_out = static_cast<std::size_t>(sizes_[1]);
      cur.assign(params.begin() + static_cast<std::ptrdiff_t>(b_off_[0]),
                 params.begin() + static_cast<std::ptrdiff_t>(b_off_[0] + n_out));
      for (std::size_t o = 0; o < n_out; ++o) {
        const double* w = params.data() + w_off_[0] + o * n_in;
        double s = 0.0;
        for (const auto& [idx, val] : in.entries) s += w[idx] * val;
        cur[o] += s;
      }
    }
    if (cache) {
      cache->input = in;
      cache->hidden.clear();
    }
    for (std::size_t l = 1; l < layers(); ++l) {
      for (auto& h : cur) h = std::max(0.0, h);
      if (cache) cache->hidden.push_back(cur);
      const std::size_t n_in = static_cast<std::size_t>(sizes_[l]);
      const std::size_t n_out = static_cast<std::size_t>(sizes_[l + 1]);
      std::vector<double> next(params.begin() + static_cast<std::ptrdiff_t>(b_off_[l]),
                               params.begin() + static_cast<std::ptrdiff_t>(b_off_[l] + n_out));
      for (std::size_t o = 0; o < n_out; ++o) {
        const double* w = params.data() + w_off_[l] + o * n_in;
        double s = 0.0;
        for (std::size_t i = 0; i < n_in; ++i) s += w[i] * cur[i];
        next[o] += s;
      }
      cur.swap(next);
    }
    return cur;
  }

  // Accumulates d(output)/d(params) * upstream into grad.
  void backward(std::span<const double> params, const Cache& cache, std::span<const double> upstream,
                std::span<double> grad) const {
    if (cache.hidden.size() + 1 != layers()) throw UsageError("mlp backward called without a matching forward cache");
    std::vector<double> delta(upstream.begin(), upstream.end());
    for (std::size_t l = layers(); l-- > 1;) {
      const auto& h = cache.hidden[l - 1];
      const std::size_t n_in = static_cast<std::size_t>(sizes_[l]);
      const std::size_t n_out = static_cast<std::size_t>(sizes_[l + 1]);
      std::vector<double> prev(n_in, 0.0);
      for (std::size_t o = 0; o < n_out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        grad[b_off_[l] + o] += d;
        double* gw = grad.data() + w_off_[l] + o * n_in;
        const double* w = params.data() + w_off_[l] + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) {
          gw[i] += d * h[i];
          prev[i] += d * w[i];
        }
      }
      for (std::size_t i = 0; i < n_in; ++i)
        if (h[i] <= 0.0) prev[i] = 0.0;
      delta.swap(prev);
    }
    const std::size_t n_in = static_cast<std::size_t>(sizes_[0]);
    const std::size_t n_out = static_cast<std::size_t>(sizes_[1]);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      grad[b_off_[0] + o] += d;
      double* gw = grad.data() + w_off_[0] + o * n_in;
      for (const auto& [idx, val] : cache.input.entries) gw[idx] += d * val;
    }
  }

 private:
  std::vector<int> sizes_;
  std::size_t offset_ = 0;
  std::size_t end_ = 0;
  std::vector<std::size_t> w_off_, b_off_;
};

}  // namespace tcsm
