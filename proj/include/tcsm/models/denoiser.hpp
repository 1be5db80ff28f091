#pragma once

// Factorized denoiser p^theta_{1|t}(x1 | x_t): per-position logits from
// either a lookup table or a small ReLU network.

#include <string>

#include "tcsm/models/gradient.hpp"
#include "tcsm/models/mlp.hpp"
#include "tcsm/models/posterior_model.hpp"

namespace tcsm {

struct DenoiserConfig {
  std::string kind = "tabular";  // "tabular" or "mlp"
  Vocabulary vocab;
  int length = 1;
  Source source = Source::Uniform;
  int time_bins = 16;
  std::vector<int> hidden{128, 128};
  int time_frequencies = 8;
  bool carry_over = true;  // only meaningful for the mask source

  void validate() const {
    if (kind != "tabular" && kind != "mlp") throw ConfigError("model.kind must be \"tabular\" or \"mlp\"");
    if (length < 1) throw ConfigError("model.length must be >= 1");
    if (time_bins < 1) throw ConfigError("model.time_bins must be >= 1");
    if (time_frequencies < 0) throw ConfigError("model.time_frequencies must be >= 0");
    if (kind == "mlp" && hidden.empty()) throw ConfigError("model.hidden must list at least one width");
    if (source == Source::Mask && !vocab.has_mask())
      throw ConfigError("vocab.mask_id is required when path.source is \"mask\"");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["kind"] = kind;
    j["V"] = vocab.size();
    j["mask_id"] = vocab.has_mask() ? nlohmann::json(*vocab.mask_id()) : nlohmann::json(nullptr);
    j["L"] = length;
    j["source"] = std::string(to_string(source));
    j["time_bins"] = time_bins;
    j["hidden"] = hidden;
    j["time_frequencies"] = time_frequencies;
    j["carry_over"] = carry_over;
    return j;
  }

  static DenoiserConfig from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.kind = j.at("kind").get<std::string>();
    std::optional<int> mask;
    if (!j.at("mask_id").is_null()) mask = j.at("mask_id").get<int>();
    c.vocab = Vocabulary(j.at("V").get<int>(), mask);
    c.length = j.at("L").get<int>();
    c.source = source_from_string(j.at("source").get<std::string>());
    c.time_bins = j.at("time_bins").get<int>();
    c.hidden = j.at("hidden").get<std::vector<int>>();
    c.time_frequencies = j.at("time_frequencies").get<int>();
    c.carry_over = j.at("carry_over").get<bool>();
    return c;
  }
};

class Denoiser : public PosteriorModel {
 public:
  struct Output {
    int L = 0;
    int V = 0;
    std::vector<double> logits;  // L*V, -inf on tokens the model never emits
    std::vector<double> logp;    // log-softmax per position
    std::vector<double> probs;
    std::vector<std::uint8_t> fixed;  // positions pinned by carry-over
    // backward cache
    bool cached = false;
    std::size_t table_row = 0;  // tabular: first gradient row of this x_t
    Mlp::Cache mlp;

    double p(int i, int v) const { return probs[static_cast<std::size_t>(i * V + v)]; }
    double lp(int i, int v) const { return logp[static_cast<std::size_t>(i * V + v)]; }
    Categorical categorical(int i) const {
      return Categorical(std::vector<double>(probs.begin() + i * V, probs.begin() + (i + 1) * V));
    }
  };

  Denoiser() = default;

  // Tabular models start at zero logits (uniform); MLP hidden layers are
  // drawn from rng and the output layer starts at zero.
  explicit Denoiser(DenoiserConfig cfg, std::uint64_t init_seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int V = cfg_.vocab.size();
    const int L = cfg_.length;
    if (cfg_.kind == "tabular") {
      codes_ = state_count(V, L);
      const std::uint64_t n = static_cast<std::uint64_t>(cfg_.time_bins) * codes_ * static_cast<std::uint64_t>(L * V);
      if (n > (std::uint64_t{1} << 27)) throw CapacityError("tabular denoiser would need more than 2^27 parameters");
      params_.assign(static_cast<std::size_t>(n), 0.0);
    } else {
      std::vector<int> sizes{L * V + 2 * cfg_.time_frequencies};
      for (int h : cfg_.hidden) sizes.push_back(h);
      sizes.push_back(L * V);
      mlp_ = Mlp(sizes, 0);
      params_.assign(mlp_.param_count(), 0.0);
      Rng rng(init_seed);
      mlp_.init(params_, rng);
    }
  }

  const DenoiserConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const override { return cfg_.vocab; }
  int length() const override { return cfg_.length; }
  bool carries_over() const { return cfg_.source == Source::Mask && cfg_.carry_over; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  Gradient make_gradient() const {
    return Gradient(params_.size(), cfg_.kind == "tabular" ? static_cast<std::size_t>(cfg_.vocab.size()) : 0);
  }

  int time_bin(double t) const {
    const int b = static_cast<int>(std::floor(t * cfg_.time_bins));
    return std::clamp(b, 0, cfg_.time_bins - 1);
  }

  bool emits(int token) const { return !cfg_.vocab.is_mask(token); }

  Output forward(const Sequence& xt, double t, bool keep_cache = true) const {
    const int V = cfg_.vocab.size();
    const int L = cfg_.length;
    if (xt.length() != L) throw DomainError("x_t length does not match the model");
    validate(xt, cfg_.vocab);
    Output out;
    out.L = L;
    out.V = V;
    out.fixed.assign(static_cast<std::size_t>(L), 0);
    if (carries_over())
      for (int i = 0; i < L; ++i) out.fixed[static_cast<std::size_t>(i)] = xt[static_cast<std::size_t>(i)] != *cfg_.vocab.mask_id();

    if (cfg_.kind == "tabular") {
      const std::uint64_t code = encode(xt, V);
      out.table_row = static_cast<std::size_t>((static_cast<std::uint64_t>(time_bin(t)) * codes_ + code) * static_cast<std::uint64_t>(L));
      const auto first = params_.begin() + static_cast<std::ptrdiff_t>(out.table_row * static_cast<std::size_t>(V));
      out.logits.assign(first, first + L * V);
    } else {
      if (!params_finite()) throw ModelCorruptError("denoiser parameters contain NaN or infinity");
      out.logits = mlp_.forward(params_, mlp_input(xt, t), keep_cache ? &out.mlp : nullptr);
    }
    out.cached = keep_cache;

    out.logp.resize(out.logits.size());
    out.probs.resize(out.logits.size());
    for (int i = 0; i < L; ++i) {
      double* lg = out.logits.data() + i * V;
      double* lp = out.logp.data() + i * V;
      double* pr = out.probs.data() + i * V;
      if (out.fixed[static_cast<std::size_t>(i)]) {
        const int keep = xt[static_cast<std::size_t>(i)];
        for (int v = 0; v < V; ++v) {
          lp[v] = v == keep ? 0.0 : kNegInf;
          pr[v] = v == keep ? 1.0 : 0.0;
        }
        continue;
      }
      for (int v = 0; v < V; ++v) {
        if (!emits(v)) lg[v] = kNegInf;
        else if (!std::isfinite(lg[v])) throw ModelCorruptError("denoiser produced a non-finite logit");
      }
      const double lse = log_sum_exp(std::span<const double>(lg, static_cast<std::size_t>(V)));
      for (int v = 0; v < V; ++v) {
        lp[v] = lg[v] == kNegInf ? kNegInf : lg[v] - lse;
        pr[v] = lg[v] == kNegInf ? 0.0 : std::exp(lp[v]);
      }
    }
    return out;
  }

  // Accumulates the parameter gradient for upstream d(loss)/d(logits).
  // Entries for pinned positions and never-emitted tokens are ignored.
  void backward(const Output& out, std::span<const double> dlogits, Gradient& grad) const {
    if (!out.cached) throw UsageError("backward requires a forward pass with keep_cache = true");
    const int V = out.V;
    const int L = out.L;
    if (dlogits.size() != static_cast<std::size_t>(L * V)) throw UsageError("upstream gradient has the wrong shape");
    if (grad.size() != params_.size()) throw UsageError("gradient buffer does not match the model");
    if (cfg_.kind == "tabular") {
      for (int i = 0; i < L; ++i) {
        if (out.fixed[static_cast<std::size_t>(i)]) continue;
        bool any = false;
        for (int v = 0; v < V; ++v) any = any || (emits(v) && dlogits[static_cast<std::size_t>(i * V + v)] != 0.0);
        if (!any) continue;
        auto row = grad.row(out.table_row + static_cast<std::size_t>(i));
        for (int v = 0; v < V; ++v)
          if (emits(v)) row[static_cast<std::size_t>(v)] += dlogits[static_cast<std::size_t>(i * V + v)];
      }
      return;
    }
    std::vector<double> up(dlogits.begin(), dlogits.end());
    for (int i = 0; i < L; ++i)
      for (int v = 0; v < V; ++v)
        if (out.fixed[static_cast<std::size_t>(i)] || !emits(v)) up[static_cast<std::size_t>(i * V + v)] = 0.0;
    mlp_.backward(params_, out.mlp, up, grad.dense());
  }

  std::vector<Categorical> marginals(const Sequence& xt, double t) const override {
    const auto out = forward(xt, t, false);
    std::vector<Categorical> m;
    m.reserve(static_cast<std::size_t>(out.L));
    for (int i = 0; i < out.L; ++i) m.push_back(out.categorical(i));
    return m;
  }

  // Tabular only: set every row to log of another model's marginals, so the
  // table starts as a copy of a reference (a frozen pre-trained model or an
  // oracle). States with zero evidence under the source keep zero logits.
  void copy_from(const PosteriorModel& src, double floor = kProbFloor) {
    if (cfg_.kind != "tabular") throw UsageError("copy_from is only defined for tabular denoisers");
    if (src.vocab() != cfg_.vocab || src.length() != cfg_.length) throw ConfigError("copy_from: shapes differ");
    const int V = cfg_.vocab.size();
    const int L = cfg_.length;
    for (int b = 0; b < cfg_.time_bins; ++b) {
      const double t = (b + 0.5) / cfg_.time_bins;
      for (std::uint64_t code = 0; code < codes_; ++code) {
        const Sequence xt = decode(code, V, L);
        std::vector<Categorical> m;
        try {
          m = src.marginals(xt, t);
        } catch (const EvidenceError&) {
          continue;
        }
        double* row = params_.data() + (static_cast<std::uint64_t>(b) * codes_ + code) * static_cast<std::uint64_t>(L * V);
        for (int i = 0; i < L; ++i)
          for (int v = 0; v < V; ++v)
            row[i * V + v] = emits(v) ? std::log(std::max(m[static_cast<std::size_t>(i)][static_cast<std::size_t>(v)], floor)) : 0.0;
      }
    }
  }

  bool params_finite() const {
    for (double p : params_)
      if (!std::isfinite(p)) return false;
    return true;
  }

 private:
  SparseInput mlp_input(const Sequence& xt, double t) const {
    const int V = cfg_.vocab.size();
    SparseInput in;
    in.entries.reserve(static_cast<std::size_t>(cfg_.length + 2 * cfg_.time_frequencies));
    for (int i = 0; i < cfg_.length; ++i) in.entries.emplace_back(static_cast<std::size_t>(i * V + xt[static_cast<std::size_t>(i)]), 1.0);
    append_time_features(in, static_cast<std::size_t>(cfg_.length * V), t, cfg_.time_frequencies);
    return in;
  }

  DenoiserConfig cfg_;
  std::vector<double> params_;
  std::uint64_t codes_ = 0;
  Mlp mlp_;
};

}  // namespace tcsm
