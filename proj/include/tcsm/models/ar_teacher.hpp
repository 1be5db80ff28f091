#pragma once

// Order-n autoregressive model over clean tokens: p(x^i | x^{i-n+1..i-1}),
// missing context padded with a BOS symbol. A reversed model conditions on
// the right context instead and is used as the n-gram side model in
// distillation.

#include "tcsm/oracle.hpp"

namespace tcsm {

class ARTeacher {
 public:
  ARTeacher() = default;

  // tables: one row of V probabilities per context code; rows must put
  // zero mass on the mask token.
  ARTeacher(Vocabulary vocab, int order, std::vector<double> tables, bool reversed = false)
      : vocab_(std::move(vocab)), order_(order), reversed_(reversed), tables_(std::move(tables)) {
    if (order_ < 1) throw ConfigError("teacher order must be >= 1");
    contexts_ = state_count(vocab_.size() + 1, order_ - 1);
    const std::size_t V = static_cast<std::size_t>(vocab_.size());
    if (tables_.size() != contexts_ * V) throw ConfigError("teacher table has the wrong size");
    for (std::size_t c = 0; c < contexts_; ++c) {
      double s = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        const double p = tables_[c * V + v];
        if (!(p >= 0.0) || (p > 0.0 && vocab_.is_mask(static_cast<int>(v))))
          throw ConfigError("teacher rows must be non-negative and avoid the mask token");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-10) throw ConfigError("teacher rows must sum to 1");
    }
  }

  // Dirichlet rows; small concentration gives peaked conditionals.
  static ARTeacher random(Vocabulary vocab, int order, Rng& rng, double concentration = 1.0) {
    const std::uint64_t C = state_count(vocab.size() + 1, order - 1);
    const auto clean = vocab.clean_tokens();
    std::vector<double> t(static_cast<std::size_t>(C) * static_cast<std::size_t>(vocab.size()), 0.0);
    for (std::uint64_t c = 0; c < C; ++c) {
      const auto row = dirichlet(clean.size(), concentration, rng);
      for (std::size_t k = 0; k < clean.size(); ++k)
        t[static_cast<std::size_t>(c) * static_cast<std::size_t>(vocab.size()) + static_cast<std::size_t>(clean[k])] = row[k];
    }
    return ARTeacher(std::move(vocab), order, std::move(t));
  }

  // Additive-smoothed counts.
  static ARTeacher fit(Vocabulary vocab, int order, std::span<const Sequence> corpus, double smoothing = 0.1,
                       bool reversed = false) {
    const std::uint64_t C = state_count(vocab.size() + 1, order - 1);
    const std::size_t V = static_cast<std::size_t>(vocab.size());
    std::vector<double> t(static_cast<std::size_t>(C) * V, 0.0);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t v = 0; v < V; ++v)
        if (!vocab.is_mask(static_cast<int>(v))) t[c * V + v] = smoothing;
    ARTeacher shape(vocab, order, uniform_rows(vocab, C), reversed);
    for (const auto& x : corpus) {
      validate(x, vocab);
      for (int i = 0; i < x.length(); ++i)
        t[shape.context(x, i) * V + static_cast<std::size_t>(x[static_cast<std::size_t>(i)])] += 1.0;
    }
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t v = 0; v < V; ++v) s += t[c * V + v];
      for (std::size_t v = 0; v < V; ++v) t[c * V + v] /= s;
    }
    return ARTeacher(std::move(vocab), order, std::move(t), reversed);
  }

  const Vocabulary& vocab() const { return vocab_; }
  int order() const { return order_; }
  bool reversed() const { return reversed_; }
  int bos() const { return vocab_.size(); }
  std::uint64_t context_count() const { return contexts_; }
  const std::vector<double>& tables() const { return tables_; }

  // Context code for predicting position i of x (tokens further from i are
  // more significant).
  std::size_t context(const Sequence& x, int i) const {
    const int B = vocab_.size() + 1;
    std::size_t c = 0;
    for (int d = order_ - 1; d >= 1; --d) {
      const int j = reversed_ ? i + d : i - d;
      const int tok = (j < 0 || j >= x.length()) ? bos() : x[static_cast<std::size_t>(j)];
      c = c * static_cast<std::size_t>(B) + static_cast<std::size_t>(tok);
    }
    return c;
  }

  std::span<const double> next(std::size_t ctx) const {
    const std::size_t V = static_cast<std::size_t>(vocab_.size());
    return std::span<const double>(tables_).subspan(ctx * V, V);
  }

  std::span<const double> next(const Sequence& x, int i) const { return next(context(x, i)); }

  double log_prob(const Sequence& x) const {
    double s = 0.0;
    for (int i = 0; i < x.length(); ++i) {
      s += safe_log(next(x, i)[static_cast<std::size_t>(x[static_cast<std::size_t>(i)])]);
      if (s == kNegInf) break;
    }
    return s;
  }

  // Positions whose factor depends on x^i, including i itself.
  std::vector<int> dependents(int i, int length) const {
    std::vector<int> out;
    for (int d = 0; d < order_; ++d) {
      const int l = reversed_ ? i - d : i + d;
      if (l >= 0 && l < length) out.push_back(l);
    }
    return out;
  }

  // p(x^i = . | x^{≠i}) by renormalizing the joint over the V fills; only the
  // factors that touch position i are evaluated.
  Categorical conditional(int i, const Sequence& x) const {
    const int V = vocab_.size();
    const auto deps = dependents(i, x.length());
    std::vector<double> logw(static_cast<std::size_t>(V), kNegInf);
    Sequence y = x;
    for (int v = 0; v < V; ++v) {
      if (vocab_.is_mask(v)) continue;
      y[static_cast<std::size_t>(i)] = v;
      double s = 0.0;
      for (int l : deps) s += safe_log(next(y, l)[static_cast<std::size_t>(y[static_cast<std::size_t>(l)])]);
      logw[static_cast<std::size_t>(v)] = s;
    }
    const double lse = log_sum_exp(logw);
    if (lse == kNegInf) throw UndefinedConditionalError("teacher assigns zero mass to every fill at this position");
    std::vector<double> p(logw.size());
    for (std::size_t v = 0; v < p.size(); ++v) p[v] = logw[v] == kNegInf ? 0.0 : std::exp(logw[v] - lse);
    return Categorical(std::move(p));
  }

  Sequence sample(int length, Rng& rng) const {
    Sequence x(static_cast<std::size_t>(length), bos());
    for (int k = 0; k < length; ++k) {
      const int i = reversed_ ? length - 1 - k : k;
      x[static_cast<std::size_t>(i)] = static_cast<int>(sample_index(next(x, i), rng));
    }
    return x;
  }

  TabularJoint to_joint(int length, std::uint64_t cap = kDefaultStateCap) const {
    const std::uint64_t n = state_count(vocab_.size(), length, cap);
    std::vector<double> p(static_cast<std::size_t>(n));
    for (std::uint64_t c = 0; c < n; ++c) p[static_cast<std::size_t>(c)] = std::exp(log_prob(decode(c, vocab_.size(), length)));
    // Chain-rule probabilities already sum to 1; from_weights absorbs rounding.
    return TabularJoint::from_weights(vocab_, length, std::move(p), cap);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["V"] = vocab_.size();
    j["mask_id"] = vocab_.has_mask() ? nlohmann::json(*vocab_.mask_id()) : nlohmann::json(nullptr);
    j["order"] = order_;
    j["reversed"] = reversed_;
    j["tables"] = doubles_to_json(tables_);
    return j;
  }

  static ARTeacher from_json(const nlohmann::json& j) {
    std::optional<int> mask;
    if (!j.at("mask_id").is_null()) mask = j.at("mask_id").get<int>();
    return ARTeacher(Vocabulary(j.at("V").get<int>(), mask), j.at("order").get<int>(),
                     doubles_from_json(j.at("tables")), j.value("reversed", false));
  }

 private:
  static std::vector<double> uniform_rows(const Vocabulary& vocab, std::uint64_t C) {
    const std::size_t V = static_cast<std::size_t>(vocab.size());
    std::vector<double> t(static_cast<std::size_t>(C) * V, 0.0);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t v = 0; v < V; ++v)
        if (!vocab.is_mask(static_cast<int>(v))) t[c * V + v] = 1.0 / vocab.clean_count();
    return t;
  }

  Vocabulary vocab_;
  int order_ = 1;
  bool reversed_ = false;
  std::uint64_t contexts_ = 1;
  std::vector<double> tables_;
};

}  // namespace tcsm
