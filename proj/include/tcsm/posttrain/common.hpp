#pragma once

// Helpers shared by the post-training regimes.

#include "tcsm/train.hpp"

namespace tcsm {

inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log q(x1 | x_t) of a factorized denoiser output, over the free positions
// (pinned positions contribute log 1).
inline double model_log_prob(const Denoiser::Output& out, const Sequence& x1) {
  double s = 0.0;
  for (int i = 0; i < out.L; ++i)
    if (!out.fixed[static_cast<std::size_t>(i)]) s += out.lp(i, x1[static_cast<std::size_t>(i)]);
  return s;
}

// dlogits += coef * d log q(x1 | x_t) / d logits = coef * (e_{x1^i} - q_i).
inline void add_log_prob_grad(const Denoiser::Output& out, const Sequence& x1, double coef, std::vector<double>& dlogits) {
  for (int i = 0; i < out.L; ++i) {
    if (out.fixed[static_cast<std::size_t>(i)]) continue;
    for (int v = 0; v < out.V; ++v) dlogits[static_cast<std::size_t>(i * out.V + v)] -= coef * out.p(i, v);
    dlogits[static_cast<std::size_t>(i * out.V + x1[static_cast<std::size_t>(i)])] += coef;
  }
}

// log p_ref(x1 | x_t) with a floor; zero-probability hits are counted.
inline double floored_log_prob(const PosteriorModel& ref, const Sequence& x1, const Sequence& xt, double t,
                               long& clamped) {
  const double lp = ref.log_prob(x1, xt, t);
  const double lo = std::log(kProbFloor) * static_cast<double>(x1.size());
  if (lp < lo) {
    ++clamped;
    return lo;
  }
  return lp;
}

}  // namespace tcsm
