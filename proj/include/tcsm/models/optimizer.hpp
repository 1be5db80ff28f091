#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "tcsm/models/gradient.hpp"

namespace tcsm {

struct OptimizerConfig {
  std::string kind = "adam";  // "sgd" or "adam"
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double clip = 10.0;  // global gradient-norm clip; <= 0 disables
  double warmup_fraction = 0.1;
  long total_steps = 0;  // needed for warmup; 0 disables warmup
};

// SGD or Adam over a flat parameter vector. Only rows the gradient touched
// are updated: for SGD this is exact, for Adam it means rows absent from a
// step keep their moments (the "lazy" variant). Dense models touch every row
// and get textbook Adam.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerConfig cfg, std::size_t param_count) : cfg_(std::move(cfg)) {
    if (cfg_.kind != "sgd" && cfg_.kind != "adam") throw ConfigError("optimizer.kind must be \"sgd\" or \"adam\"");
    if (!(cfg_.lr >= 0.0)) throw ConfigError("optimizer.lr must be >= 0");
    if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
      throw ConfigError("optimizer betas must lie in [0, 1)");
    if (cfg_.warmup_fraction < 0.0 || cfg_.warmup_fraction > 1.0)
      throw ConfigError("optimizer.warmup_fraction must lie in [0, 1]");
    if (cfg_.kind == "adam") {
      m_.assign(param_count, 0.0);
      v_.assign(param_count, 0.0);
      row_steps_.clear();
    }
  }

  const OptimizerConfig& config() const { return cfg_; }
  long steps() const { return step_; }

  double current_lr() const {
    if (cfg_.total_steps <= 0 || cfg_.warmup_fraction <= 0.0) return cfg_.lr;
    const double warm = cfg_.warmup_fraction * static_cast<double>(cfg_.total_steps);
    if (warm < 1.0) return cfg_.lr;
    return cfg_.lr * std::min(1.0, static_cast<double>(step_ + 1) / warm);
  }

  // Applies one update and returns the pre-clip gradient norm. The gradient
  // is scaled in place when clipped.
  double step(std::span<double> params, Gradient& grad) {
    if (params.size() != grad.size()) throw UsageError("gradient does not match the parameter vector");
    const double norm = grad.norm();
    if (!std::isfinite(norm)) throw NumericalAbort("non-finite gradient norm");
    if (cfg_.clip > 0.0 && norm > cfg_.clip) grad.scale(cfg_.clip / norm);
    const double lr = current_lr();
    const std::size_t row = grad.row_length();
    const auto g = grad.values();

    if (cfg_.kind == "sgd") {
      for (std::size_t r : grad.touched_rows())
        for (std::size_t k = r * row; k < (r + 1) * row; ++k) params[k] -= lr * g[k];
    } else {
      if (row_steps_.size() != grad.rows()) row_steps_.assign(grad.rows(), 0);
      for (std::size_t r : grad.touched_rows()) {
        // Bias correction counts the updates this row has received.
        const long n = ++row_steps_[r];
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(n));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(n));
        for (std::size_t k = r * row; k < (r + 1) * row; ++k) {
          m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g[k];
          v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
          params[k] -= lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + cfg_.eps);
        }
      }
    }
    ++step_;
    for (std::size_t r : grad.touched_rows())
      for (std::size_t k = r * row; k < (r + 1) * row; ++k)
        if (!std::isfinite(params[k])) throw NumericalAbort("optimizer step produced a non-finite parameter");
    return norm;
  }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_, v_;
  std::vector<long> row_steps_;
  long step_ = 0;
};

}  // namespace tcsm
