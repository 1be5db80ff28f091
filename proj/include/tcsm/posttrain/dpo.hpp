#pragma once

// Preference fine-tuning with the BCE density-ratio loss
//   r = q(x | x_t) / (beta p_pre(x | x_t)),
//   loss = -log(r_w / (1 + r_w)) - log(1 / (1 + r_l)),
// where the joint ratios are products of per-position marginals.

#include "tcsm/posttrain/common.hpp"

namespace tcsm {

struct PreferenceTriple {
  Sequence query;  // may be empty; kept clean and prepended to both responses
  Sequence winner, loser;

  void validate() const {
    if (winner.length() != loser.length()) throw DomainError("winner and loser must have the same length");
    if (winner == loser) throw DomainError("winner and loser must differ");
  }

  Sequence full(const Sequence& response) const {
    std::vector<int> t(query.begin(), query.end());
    t.insert(t.end(), response.begin(), response.end());
    return Sequence(std::move(t));
  }
};

inline double dpo_loss_value(double log_rw, double log_rl) { return softplus(-log_rw) + softplus(log_rl); }

// Noise only the response positions.
inline Sequence noise_response(const PathSpec& path, double t, const Sequence& full, int query_len, Rng& rng) {
  Sequence xt = sample_xt(path, t, full, rng);
  for (int i = 0; i < query_len; ++i) xt[static_cast<std::size_t>(i)] = full[static_cast<std::size_t>(i)];
  return xt;
}

struct DpoExample {
  double t = 0.0;
  int query_len = 0;
  Sequence xw, xl;    // clean query + response
  Sequence xtw, xtl;  // noisy versions
};

// Response-only log q(x | x_t) from a factorized model output.
inline double response_log_prob(const Denoiser::Output& out, const Sequence& x, int query_len) {
  double s = 0.0;
  for (int i = query_len; i < out.L; ++i)
    if (!out.fixed[static_cast<std::size_t>(i)]) s += out.lp(i, x[static_cast<std::size_t>(i)]);
  return s;
}

inline double response_log_prob(const PosteriorModel& m, const Sequence& x, const Sequence& xt, double t,
                                int query_len, long& clamped) {
  const auto marg = m.marginals(xt, t);
  double s = 0.0;
  for (int i = query_len; i < x.length(); ++i) {
    double p = marg[static_cast<std::size_t>(i)][static_cast<std::size_t>(x[static_cast<std::size_t>(i)])];
    if (p < kProbFloor) {
      ++clamped;
      p = kProbFloor;
    }
    s += std::log(p);
  }
  return s;
}

inline void add_response_grad(const Denoiser::Output& out, const Sequence& x, int query_len, double coef,
                              std::vector<double>& dlogits) {
  for (int i = query_len; i < out.L; ++i) {
    if (out.fixed[static_cast<std::size_t>(i)]) continue;
    for (int v = 0; v < out.V; ++v) dlogits[static_cast<std::size_t>(i * out.V + v)] -= coef * out.p(i, v);
    dlogits[static_cast<std::size_t>(i * out.V + x[static_cast<std::size_t>(i)])] += coef;
  }
}

inline LossOutput dpo_loss(const Denoiser& model, const PosteriorModel& pre, double beta,
                           std::span<const DpoExample> batch, Gradient* grad) {
  LossOutput total;
  const double inv = 1.0 / static_cast<double>(batch.size());
  const double lb = std::log(beta);
  for (const auto& ex : batch) {
    const auto ow = model.forward(ex.xtw, ex.t, grad != nullptr);
    const auto ol = model.forward(ex.xtl, ex.t, grad != nullptr);
    const double lrw =
        response_log_prob(ow, ex.xw, ex.query_len) - lb - response_log_prob(pre, ex.xw, ex.xtw, ex.t, ex.query_len, total.clamped);
    const double lrl =
        response_log_prob(ol, ex.xl, ex.query_len) - lb - response_log_prob(pre, ex.xl, ex.xtl, ex.t, ex.query_len, total.clamped);
    total.value += inv * dpo_loss_value(lrw, lrl);
    if (grad) {
      // d/dlog r_w = sigma(log r_w) - 1, d/dlog r_l = sigma(log r_l)
      std::vector<double> dw(ow.logits.size(), 0.0), dl(ol.logits.size(), 0.0);
      add_response_grad(ow, ex.xw, ex.query_len, inv * (sigmoid(lrw) - 1.0), dw);
      add_response_grad(ol, ex.xl, ex.query_len, inv * sigmoid(lrl), dl);
      model.backward(ow, dw, *grad);
      model.backward(ol, dl, *grad);
    }
  }
  return total;
}

inline std::vector<DpoExample> dpo_batch(std::span<const PreferenceTriple> triples, const PathSpec& path,
                                         const TimeDistribution& omega, int n, Rng& rng) {
  const auto ts = omega.sample_batch(static_cast<std::size_t>(n), rng);
  std::vector<DpoExample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int b = 0; b < n; ++b) {
    const std::size_t k = std::min(triples.size() - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(triples.size())));
    const auto& tr = triples[k];
    DpoExample ex;
    ex.t = ts[static_cast<std::size_t>(b)];
    ex.query_len = tr.query.length();
    ex.xw = tr.full(tr.winner);
    ex.xl = tr.full(tr.loser);
    ex.xtw = noise_response(path, ex.t, ex.xw, ex.query_len, rng);
    ex.xtl = noise_response(path, ex.t, ex.xl, ex.query_len, rng);
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<StepStats> dpo_finetune(Denoiser& model, const PosteriorModel& pre,
                                           std::span<const PreferenceTriple> triples, double beta,
                                           const PathSpec& path, const TimeDistribution& omega,
                                           const OptimizerConfig& ocfg, const TrainOptions& o, Rng& rng,
                                           const RunWriter& writer = RunWriter(), const TrainHooks& hooks = {}) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("task.beta must be a positive finite number");
  if (triples.empty()) throw ConfigError("preference dataset is empty");
  for (const auto& tr : triples) {
    tr.validate();
    if (tr.full(tr.winner).length() != model.length()) throw ConfigError("query + response length does not match the model");
  }
  OptimizerConfig oc = ocfg;
  oc.total_steps = o.steps;
  Optimizer opt(oc, model.param_count());
  long clamped = 0;
  auto metrics = run_loop(model, opt, o, [&](long, Gradient& g) {
    const auto batch = dpo_batch(triples, path, omega, o.batch, rng);
    auto out = dpo_loss(model, pre, beta, batch, &g);
    clamped += out.clamped;
    out.clamped = 0;
    return out;
  }, writer, hooks);
  if (clamped > 0)
    log_error("warning: reference gave zero probability to an observed response " + std::to_string(clamped) +
              " times; clamped to " + format_double(kProbFloor));
  return metrics;
}

}  // namespace tcsm
