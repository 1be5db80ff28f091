#pragma once

// Scalar head f(x1, x_t, t); exp(f) plays the role of a density ratio.

#include <string>

#include "tcsm/models/gradient.hpp"
#include "tcsm/models/mlp.hpp"
#include "tcsm/oracle.hpp"

namespace tcsm {

struct RatioConfig {
  std::string kind = "tabular";
  Vocabulary vocab;
  int length = 1;
  int time_bins = 16;
  std::vector<int> hidden{128, 128};
  int time_frequencies = 8;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["kind"] = kind;
    j["V"] = vocab.size();
    j["mask_id"] = vocab.has_mask() ? nlohmann::json(*vocab.mask_id()) : nlohmann::json(nullptr);
    j["L"] = length;
    j["time_bins"] = time_bins;
    j["hidden"] = hidden;
    j["time_frequencies"] = time_frequencies;
    return j;
  }

  static RatioConfig from_json(const nlohmann::json& j) {
    RatioConfig c;
    c.kind = j.at("kind").get<std::string>();
    std::optional<int> mask;
    if (!j.at("mask_id").is_null()) mask = j.at("mask_id").get<int>();
    c.vocab = Vocabulary(j.at("V").get<int>(), mask);
    c.length = j.at("L").get<int>();
    c.time_bins = j.at("time_bins").get<int>();
    c.hidden = j.at("hidden").get<std::vector<int>>();
    c.time_frequencies = j.at("time_frequencies").get<int>();
    return c;
  }
};

class RatioModel {
 public:
  struct Output {
    double f = 0.0;
    bool cached = false;
    std::size_t index = 0;  // tabular entry
    Mlp::Cache mlp;
  };

  RatioModel() = default;
  explicit RatioModel(RatioConfig cfg, std::uint64_t init_seed = 0) : cfg_(std::move(cfg)) {
    if (cfg_.kind != "tabular" && cfg_.kind != "mlp") throw ConfigError("ratio model kind must be \"tabular\" or \"mlp\"");
    if (cfg_.time_bins < 1 || cfg_.length < 1) throw ConfigError("ratio model needs length >= 1 and time_bins >= 1");
    const int V = cfg_.vocab.size();
    const int L = cfg_.length;
    if (cfg_.kind == "tabular") {
      codes_ = state_count(V, L);
      const std::uint64_t n = static_cast<std::uint64_t>(cfg_.time_bins) * codes_ * codes_;
      if (n > (std::uint64_t{1} << 27)) throw CapacityError("tabular ratio model would need more than 2^27 parameters");
      params_.assign(static_cast<std::size_t>(n), 0.0);
    } else {
      if (cfg_.hidden.empty()) throw ConfigError("ratio model needs at least one hidden layer");
      std::vector<int> sizes{2 * L * V + 2 * cfg_.time_frequencies};
      for (int h : cfg_.hidden) sizes.push_back(h);
      sizes.push_back(1);
      mlp_ = Mlp(sizes, 0);
      params_.assign(mlp_.param_count(), 0.0);
      Rng rng(init_seed);
      mlp_.init(params_, rng);
    }
  }

  const RatioConfig& config() const { return cfg_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }
  Gradient make_gradient() const { return Gradient(params_.size(), cfg_.kind == "tabular" ? 1 : 0); }

  Output forward(const Sequence& x1, const Sequence& xt, double t, bool keep_cache = true) const {
    const int V = cfg_.vocab.size();
    if (x1.length() != cfg_.length || xt.length() != cfg_.length) throw DomainError("ratio model input length mismatch");
    Output out;
    if (cfg_.kind == "tabular") {
      const int bin = std::clamp(static_cast<int>(std::floor(t * cfg_.time_bins)), 0, cfg_.time_bins - 1);
      out.index = static_cast<std::size_t>((static_cast<std::uint64_t>(bin) * codes_ + encode(xt, V)) * codes_ + encode(x1, V));
      out.f = params_[out.index];
    } else {
      for (double p : params_)
        if (!std::isfinite(p)) throw ModelCorruptError("ratio model parameters contain NaN or infinity");
      SparseInput in;
      const int LV = cfg_.length * V;
      for (int i = 0; i < cfg_.length; ++i) {
        in.entries.emplace_back(static_cast<std::size_t>(i * V + xt[static_cast<std::size_t>(i)]), 1.0);
        in.entries.emplace_back(static_cast<std::size_t>(LV + i * V + x1[static_cast<std::size_t>(i)]), 1.0);
      }
      append_time_features(in, static_cast<std::size_t>(2 * LV), t, cfg_.time_frequencies);
      out.f = mlp_.forward(params_, in, keep_cache ? &out.mlp : nullptr)[0];
    }
    if (!std::isfinite(out.f)) throw ModelCorruptError("ratio model produced a non-finite output");
    out.cached = keep_cache;
    return out;
  }

  double operator()(const Sequence& x1, const Sequence& xt, double t) const { return forward(x1, xt, t, false).f; }

  void backward(const Output& out, double upstream, Gradient& grad) const {
    if (!out.cached) throw UsageError("backward requires a forward pass with keep_cache = true");
    if (grad.size() != params_.size()) throw UsageError("gradient buffer does not match the ratio model");
    if (cfg_.kind == "tabular") {
      grad.row(out.index)[0] += upstream;
      return;
    }
    const double up[1] = {upstream};
    mlp_.backward(params_, out.mlp, up, grad.dense());
  }

 private:
  RatioConfig cfg_;
  std::vector<double> params_;
  std::uint64_t codes_ = 0;
  Mlp mlp_;
};

}  // namespace tcsm
