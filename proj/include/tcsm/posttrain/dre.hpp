#pragma once

// Fine-tuning against a frozen reference by density-ratio estimation.
// With f the log-ratio log(p / p_ref), every objective has the form
//   E_ref[A(f)] + E_data[B(f)],
// minimized at f = log(p / p_ref):
//   gkl:  A = e^f,        B = -f
//   lsif: A = e^{2f} / 2, B = -e^f
//   bce:  A = softplus(f), B = softplus(-f)
// Strategy (i) reads f off a denoiser, f = log q(x1|x_t) - log p_ref(x1|x_t).
// Strategy (ii) learns f directly and defines q ∝ p_ref e^f, normalized by
// enumerating x1.

#include "tcsm/posttrain/common.hpp"

namespace tcsm {

enum class DreStrategy { ModelRatio, TiltedReference };

inline DreStrategy dre_strategy_from_string(std::string_view s) {
  if (s == "i") return DreStrategy::ModelRatio;
  if (s == "ii") return DreStrategy::TiltedReference;
  throw ConfigError("task.strategy must be \"i\" or \"ii\"");
}

struct DreTerms {
  double value = 0.0;
  double d_ref = 0.0;   // dA/df at the reference sample
  double d_data = 0.0;  // dB/df at the data sample
};

inline DreTerms dre_objective(Bregman gen, double f_ref, double f_data) {
  if (!std::isfinite(f_ref) || !std::isfinite(f_data)) throw DomainError("log-ratio must be finite");
  DreTerms o;
  switch (gen) {
    case Bregman::GKL: {
      const double e = std::exp(f_ref);
      o = {e - f_data, e, -1.0};
      break;
    }
    case Bregman::LSIF: {
      const double e2 = std::exp(2.0 * f_ref), e = std::exp(f_data);
      o = {0.5 * e2 - e, e2, -e};
      break;
    }
    case Bregman::BCE:
      o = {softplus(f_ref) + softplus(-f_data), sigmoid(f_ref), sigmoid(f_data) - 1.0};
      break;
  }
  if (!std::isfinite(o.value)) throw DomainError("density-ratio objective overflowed");
  return o;
}

// A training example plus the reference draw x1_ref ~ p_ref(. | x_t).
struct DreExample {
  double t = 0.0;
  Sequence x1, xt, xref;
};

inline std::vector<DreExample> dre_batch(const ExampleSource& src, const PosteriorModel& ref, int n, Rng& rng) {
  ExampleSource s = src;
  s.proposal = Proposal::TruePosterior;
  auto base = s.batch(n, rng);
  std::vector<DreExample> out;
  out.reserve(base.size());
  for (auto& ex : base) {
    Sequence xref = ref.sample(ex.xt, ex.t, rng);
    out.push_back({ex.t, std::move(ex.x1), std::move(ex.xt), std::move(xref)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Strategy (i).

inline double model_log_ratio(const Denoiser::Output& out, const PosteriorModel& ref, const Sequence& x1,
                              const Sequence& xt, double t, long& clamped) {
  return model_log_prob(out, x1) - floored_log_prob(ref, x1, xt, t, clamped);
}

inline LossOutput dre_loss_model(const Denoiser& model, const PosteriorModel& ref, Bregman gen,
                                 std::span<const DreExample> batch, Gradient* grad) {
  LossOutput total;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const auto out = model.forward(ex.xt, ex.t, grad != nullptr);
    const double fr = model_log_ratio(out, ref, ex.xref, ex.xt, ex.t, total.clamped);
    const double fd = model_log_ratio(out, ref, ex.x1, ex.xt, ex.t, total.clamped);
    const auto terms = dre_objective(gen, fr, fd);
    total.value += inv * terms.value;
    if (grad) {
      std::vector<double> d(out.logits.size(), 0.0);
      add_log_prob_grad(out, ex.xref, inv * terms.d_ref, d);
      add_log_prob_grad(out, ex.x1, inv * terms.d_data, d);
      model.backward(out, d, *grad);
    }
  }
  return total;
}

inline std::vector<StepStats> dre_finetune_model(Denoiser& model, const PosteriorModel& ref, Bregman gen,
                                                 const ExampleSource& src, const OptimizerConfig& ocfg,
                                                 const TrainOptions& o, Rng& rng,
                                                 const RunWriter& writer = RunWriter(), const TrainHooks& hooks = {}) {
  OptimizerConfig oc = ocfg;
  oc.total_steps = o.steps;
  Optimizer opt(oc, model.param_count());
  return run_loop(model, opt, o, [&](long, Gradient& g) {
    const auto batch = dre_batch(src, ref, o.batch, rng);
    return dre_loss_model(model, ref, gen, batch, &g);
  }, writer, hooks);
}

// ---------------------------------------------------------------------------
// Strategy (ii).

// q(x1 | x_t) ∝ p_ref(x1 | x_t) exp(f(x1, x_t, t)), normalized by enumerating
// every x1 in V^L.
class TiltedPosterior : public PosteriorModel {
 public:
  TiltedPosterior(const PosteriorModel& ref, const RatioModel& f, std::uint64_t cap = kDefaultStateCap)
      : ref_(&ref), f_(&f) {
    if (ref.vocab() != f.config().vocab || ref.length() != f.config().length)
      throw ConfigError("ratio model and reference have different shapes");
    count_ = state_count(ref.vocab().size(), ref.length(), cap);
  }

  const Vocabulary& vocab() const override { return ref_->vocab(); }
  int length() const override { return ref_->length(); }

  // Normalized probabilities of every x1 code given x_t.
  std::vector<double> table(const Sequence& xt, double t) const {
    const int V = vocab().size(), L = length();
    std::vector<double> lw(static_cast<std::size_t>(count_), kNegInf);
    for (std::uint64_t c = 0; c < count_; ++c) {
      const Sequence x1 = decode(c, V, L);
      bool clean = true;
      for (int tok : x1) clean = clean && !vocab().is_mask(tok);
      if (!clean) continue;
      const double lr = ref_->log_prob(x1, xt, t);
      if (lr == kNegInf) continue;
      lw[c] = lr + (*f_)(x1, xt, t);
    }
    const double lse = log_sum_exp(lw);
    if (!std::isfinite(lse)) throw EvidenceError("tilted posterior has no mass at this x_t");
    for (auto& v : lw) v = v == kNegInf ? 0.0 : std::exp(v - lse);
    return lw;
  }

  std::vector<Categorical> marginals(const Sequence& xt, double t) const override {
    const int V = vocab().size(), L = length();
    const auto p = table(xt, t);
    std::vector<std::vector<double>> m(static_cast<std::size_t>(L), std::vector<double>(static_cast<std::size_t>(V), 0.0));
    for (std::uint64_t c = 0; c < count_; ++c) {
      if (p[c] == 0.0) continue;
      const Sequence x1 = decode(c, V, L);
      for (int i = 0; i < L; ++i) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(x1[static_cast<std::size_t>(i)])] += p[c];
    }
    std::vector<Categorical> out;
    for (auto& row : m) out.emplace_back(std::move(row));
    return out;
  }

  Categorical conditional(int i, const Sequence& x1, const Sequence& xt, double t) const override {
    const int V = vocab().size();
    std::vector<double> lw(static_cast<std::size_t>(V), kNegInf);
    for (int y = 0; y < V; ++y) {
      if (vocab().is_mask(y)) continue;
      const Sequence z = x1.with(i, y);
      const double lr = ref_->log_prob(z, xt, t);
      if (lr != kNegInf) lw[static_cast<std::size_t>(y)] = lr + (*f_)(z, xt, t);
    }
    return Categorical::from_logits(std::move(lw));
  }

  double log_prob(const Sequence& x1, const Sequence& xt, double t) const override {
    return safe_log(table(xt, t)[encode(x1, vocab().size())]);
  }

  Sequence sample(const Sequence& xt, double t, Rng& rng) const override {
    return decode(sample_index(table(xt, t), rng), vocab().size(), length());
  }

 private:
  const PosteriorModel* ref_;
  const RatioModel* f_;
  std::uint64_t count_ = 0;
};

inline LossOutput dre_loss_ratio(const RatioModel& f, Bregman gen, std::span<const DreExample> batch, Gradient* grad) {
  LossOutput total;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const auto orf = f.forward(ex.xref, ex.xt, ex.t, grad != nullptr);
    const auto odf = f.forward(ex.x1, ex.xt, ex.t, grad != nullptr);
    const auto terms = dre_objective(gen, orf.f, odf.f);
    total.value += inv * terms.value;
    if (grad) {
      f.backward(orf, inv * terms.d_ref, *grad);
      f.backward(odf, inv * terms.d_data, *grad);
    }
  }
  return total;
}

inline std::vector<StepStats> dre_finetune_ratio(RatioModel& f, const PosteriorModel& ref, Bregman gen,
                                                 const ExampleSource& src, const OptimizerConfig& ocfg,
                                                 const TrainOptions& o, Rng& rng,
                                                 const RunWriter& writer = RunWriter(), const TrainHooks& hooks = {}) {
  TiltedPosterior check(ref, f);  // enumeration must fit under the cap
  (void)check;
  OptimizerConfig oc = ocfg;
  oc.total_steps = o.steps;
  Optimizer opt(oc, f.param_count());
  return run_loop(f, opt, o, [&](long, Gradient& g) {
    const auto batch = dre_batch(src, ref, o.batch, rng);
    return dre_loss_ratio(f, gen, batch, &g);
  }, writer, hooks);
}

}  // namespace tcsm
