#pragma once

// Distillation of an autoregressive teacher into a denoiser. The target at
// position i is
//   p(y | x1^{≠i}, x_t) ∝ exp(rho(y)) K_t(x_t^i | y),
// where rho(y) = log p_AR(y, x1^{≠i}) - log p_AR(x1) is computed exactly on a
// candidate set (top-K variants) or by a first-order expansion (taylor).

#include "tcsm/posttrain/common.hpp"

namespace tcsm {

enum class DistillMethod { Exact, TopK, TopKNgram, Taylor };

inline std::string_view to_string(DistillMethod m) {
  switch (m) {
    case DistillMethod::Exact: return "exact";
    case DistillMethod::TopK: return "topk";
    case DistillMethod::TopKNgram: return "topk_ngram";
    case DistillMethod::Taylor: return "taylor";
  }
  return "?";
}

inline DistillMethod distill_method_from_string(std::string_view s) {
  for (auto m : {DistillMethod::Exact, DistillMethod::TopK, DistillMethod::TopKNgram, DistillMethod::Taylor})
    if (s == to_string(m)) return m;
  throw ConfigError("task.method must be one of exact, topk, topk_ngram, taylor");
}

struct DistillTargetSpec {
  DistillMethod method = DistillMethod::Exact;
  int K = 1;
  int ngram_order = 2;
  double tau = 1.0;

  void validate(int V) const {
    if (method == DistillMethod::TopK || method == DistillMethod::TopKNgram) {
      if (K < 1) throw ConfigError("task.K must be >= 1");
      if (K > V) throw ConfigError("task.K = " + std::to_string(K) + " exceeds the vocabulary size " + std::to_string(V));
    }
    if (method == DistillMethod::TopKNgram && ngram_order < 2) throw ConfigError("task.ngram_order must be >= 2");
    if (method == DistillMethod::Taylor && !(tau > 0.0)) throw ConfigError("task.tau must be > 0");
  }
};

namespace detail {

// Indices of the K largest entries; ties go to the lower index.
inline std::vector<int> top_k(std::span<const double> scores, int K) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  idx.resize(static_cast<std::size_t>(std::min<int>(K, static_cast<int>(idx.size()))));
  return idx;
}

// Sum of the teacher log-factors that depend on position i.
inline double local_log_prob(const ARTeacher& teacher, const Sequence& x, int i) {
  double s = 0.0;
  for (int l : teacher.dependents(i, x.length()))
    s += safe_log(teacher.next(x, l)[static_cast<std::size_t>(x[static_cast<std::size_t>(l)])]);
  return s;
}

// d log p_AR / d onehot(x^i)[y] for the teacher written as a function of
// one-hot inputs: logits_l = log T[context_l], log p = sum_l <x^l, log_softmax(logits_l)>.
inline double taylor_gradient(const ARTeacher& teacher, const Sequence& x, int i, int y) {
  const Sequence xy = x.with(i, y);
  double g = safe_log(teacher.next(x, i)[static_cast<std::size_t>(y)]);
  if (g == kNegInf) return g;
  for (int l : teacher.dependents(i, x.length())) {
    if (l == i) continue;
    const auto base = teacher.next(x, l);
    const auto alt = teacher.next(xy, l);
    double term = safe_log(alt[static_cast<std::size_t>(x[static_cast<std::size_t>(l)])]);
    for (std::size_t u = 0; u < base.size(); ++u)
      if (base[u] > 0.0) term -= base[u] * safe_log(alt[u]);
    g += term;
    if (g == kNegInf || std::isnan(g)) return kNegInf;
  }
  return g;
}

}  // namespace detail

// rho(y) for every token (-inf outside the candidate set).
inline std::vector<double> distill_log_ratios(const ARTeacher& teacher, const DistillTargetSpec& spec, int i,
                                              const Sequence& x1, const ARTeacher* ngram = nullptr) {
  const int V = teacher.vocab().size();
  spec.validate(V);
  std::vector<double> rho(static_cast<std::size_t>(V), kNegInf);
  const int xi = x1[static_cast<std::size_t>(i)];

  if (spec.method == DistillMethod::Taylor) {
    const double g0 = detail::taylor_gradient(teacher, x1, i, xi);
    for (int y = 0; y < V; ++y) {
      const double g = y == xi ? g0 : detail::taylor_gradient(teacher, x1, i, y);
      rho[static_cast<std::size_t>(y)] = g == kNegInf ? kNegInf : (g - g0) / spec.tau;
    }
    return rho;
  }

  std::vector<std::uint8_t> cand(static_cast<std::size_t>(V), spec.method == DistillMethod::Exact ? 1 : 0);
  if (spec.method != DistillMethod::Exact) {
    for (int y : detail::top_k(teacher.next(x1, i), spec.K)) cand[static_cast<std::size_t>(y)] = 1;
    if (spec.method == DistillMethod::TopKNgram) {
      if (!ngram) throw ConfigError("topk_ngram needs an n-gram model");
      for (int y : detail::top_k(ngram->next(x1, i), spec.K)) cand[static_cast<std::size_t>(y)] = 1;
    }
    cand[static_cast<std::size_t>(xi)] = 1;
  }
  const double base = detail::local_log_prob(teacher, x1, i);
  for (int y = 0; y < V; ++y)
    if (cand[static_cast<std::size_t>(y)])
      rho[static_cast<std::size_t>(y)] = y == xi ? 0.0 : detail::local_log_prob(teacher, x1.with(i, y), i) - base;
  return rho;
}

inline Categorical distill_target(const ARTeacher& teacher, const DistillTargetSpec& spec, int i, const Sequence& x1,
                                  const Sequence& xt, const PathSpec& path, double t, const ARTeacher* ngram = nullptr) {
  auto lw = distill_log_ratios(teacher, spec, i, x1, ngram);
  const double a = path.schedule.alpha(t);
  const int xti = xt[static_cast<std::size_t>(i)];
  for (int y = 0; y < static_cast<int>(lw.size()); ++y)
    if (lw[static_cast<std::size_t>(y)] != kNegInf) lw[static_cast<std::size_t>(y)] += safe_log(kernel_prob_at(path, a, y, xti));
  if (log_sum_exp(lw) == kNegInf) throw TargetError("distillation target has no mass at position " + std::to_string(i));
  return Categorical::from_logits(std::move(lw));
}

class DistillTarget : public ConditionalTarget {
 public:
  DistillTarget(const ARTeacher& teacher, DistillTargetSpec spec, const PathSpec& path, const ARTeacher* ngram = nullptr)
      : teacher_(&teacher), spec_(spec), path_(&path), ngram_(ngram) {
    spec_.validate(teacher.vocab().size());
    if (spec_.method == DistillMethod::TopKNgram && !ngram_) throw ConfigError("topk_ngram needs an n-gram model");
  }
  Categorical conditional(int i, const Sequence& x1, const Sequence& xt, double t) const override {
    return distill_target(*teacher_, spec_, i, x1, xt, *path_, t, ngram_);
  }

 private:
  const ARTeacher* teacher_;
  DistillTargetSpec spec_;
  const PathSpec* path_;
  const ARTeacher* ngram_;
};

// Right-context n-gram model fitted on teacher samples (order N predicts x^l
// from x^{l+1..l+N-1}).
inline ARTeacher fit_right_ngram(const ARTeacher& teacher, int order, int length, int samples, Rng& rng,
                                 double smoothing = 0.1) {
  std::vector<Sequence> corpus;
  corpus.reserve(static_cast<std::size_t>(samples));
  for (int k = 0; k < samples; ++k) corpus.push_back(teacher.sample(length, rng));
  return ARTeacher::fit(teacher.vocab(), order, corpus, smoothing, true);
}

// Student training: x1 drawn from the teacher, KL distribution loss.
inline std::vector<StepStats> distill_finetune(Denoiser& student, const ARTeacher& teacher,
                                               const DistillTargetSpec& spec, const PathSpec& path,
                                               const TimeDistribution& omega, const OptimizerConfig& ocfg,
                                               const TrainOptions& o, Rng& rng, const ARTeacher* ngram = nullptr,
                                               const RunWriter& writer = RunWriter(), const TrainHooks& hooks = {}) {
  if (student.vocab() != teacher.vocab()) throw ConfigError("student and teacher vocabularies differ");
  DistillTarget target(teacher, spec, path, ngram);
  ExampleSource src;
  src.path = &path;
  src.omega = omega;
  const int L = student.length();
  src.data = [&teacher, L](Rng& r) { return teacher.sample(L, r); };
  LossSpec ls;
  ls.family = LossFamily::DistribN1;
  ls.stat = StatDivergence::KL;
  return pretrain_from_data(student, src, ls, ocfg, o, rng, &target, writer, hooks);
}

}  // namespace tcsm
