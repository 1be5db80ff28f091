#pragma once

// Generation: Euler simulation of the CTMC driven by the model velocity, and
// the ancestral unmasking sampler for the mask source.

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "tcsm/models/posterior_model.hpp"
#include "tcsm/parallel.hpp"

namespace tcsm {

struct EulerConfig {
  int steps = 256;
  double t_start = kTimeEps;
  double t_end = 1.0 - kTimeEps;
  std::uint64_t seed = 0;
  int max_halvings = 8;

  void validate() const {
    if (steps < 1) throw ConfigError("sampler steps must be >= 1");
    if (!(t_start >= 0.0 && t_start < t_end && t_end < 1.0)) throw ConfigError("sampler needs 0 <= t_start < t_end < 1");
  }
};

inline RateTable model_velocity(const PosteriorModel& model, const PathSpec& path, double t, const Sequence& xt) {
  return velocity_from_marginals(path, t, xt, model.marginals(xt, t));
}

namespace detail {

// Per-step memo of velocities keyed by the encoded state; chains that share
// a state at the same time share one model evaluation.
class VelocityCache {
 public:
  VelocityCache(const PosteriorModel& m, const PathSpec& p) : model_(&m), path_(&p), V_(p.vocab.size()) {}

  const RateTable& at(double t, const Sequence& xt) {
    if (t != t_) {
      cache_.clear();
      t_ = t;
    }
    const std::uint64_t code = encode(xt, V_);
    auto it = cache_.find(code);
    if (it == cache_.end()) it = cache_.emplace(code, model_velocity(*model_, *path_, t, xt)).first;
    return it->second;
  }

 private:
  const PosteriorModel* model_;
  const PathSpec* path_;
  int V_;
  double t_ = -1.0;
  std::unordered_map<std::uint64_t, RateTable> cache_;
};

// One Euler step of size dt from time t. Every position flips independently
// with probabilities u_i(y) dt; if some position's total exceeds 1 the step
// is split in halves.
inline void euler_step(Sequence& x, double t, double dt, VelocityCache& cache, Rng& rng, int halvings_left) {
  const RateTable& r = cache.at(t, x);
  bool too_big = false;
  for (int i = 0; i < r.L && !too_big; ++i) too_big = -r(i, x[static_cast<std::size_t>(i)]) * dt > 1.0 + 1e-12;
  if (too_big) {
    if (halvings_left == 0) throw NumericalAbort("euler step still has flip probability > 1 after 8 halvings");
    euler_step(x, t, dt / 2, cache, rng, halvings_left - 1);
    euler_step(x, t + dt / 2, dt / 2, cache, rng, halvings_left - 1);
    return;
  }
  const RateTable& rates = r;
  for (int i = 0; i < rates.L; ++i) {
    const int cur = x[static_cast<std::size_t>(i)];
    const double u = uniform01(rng);
    double cum = 0.0;
    for (int y = 0; y < rates.V; ++y) {
      if (y == cur) continue;
      cum += rates(i, y) * dt;
      if (u < cum) {
        x[static_cast<std::size_t>(i)] = y;
        break;
      }
    }
  }
}

// Mask-source samples can end with a few positions still masked; draw them
// from the model at the final time.
inline void resolve_masks(Sequence& x, const PosteriorModel& model, const PathSpec& path, double t, Rng& rng) {
  if (path.source != Source::Mask) return;
  bool any = false;
  for (int tok : x) any = any || tok == path.mask_id();
  if (!any) return;
  const auto m = model.marginals(x, t);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] == path.mask_id()) x[i] = m[i].sample(rng);
}

inline Sequence euler_chain(const PosteriorModel& model, const PathSpec& path, const EulerConfig& cfg,
                            VelocityCache& cache, Rng& rng) {
  Sequence x = sample_source(path, model.length(), rng);
  const double dt = (cfg.t_end - cfg.t_start) / cfg.steps;
  for (int k = 0; k < cfg.steps; ++k) euler_step(x, cfg.t_start + k * dt, dt, cache, rng, cfg.max_halvings);
  resolve_masks(x, model, path, cfg.t_end, rng);
  return x;
}

}  // namespace detail

// Single chain with its own RNG seeded by cfg.seed.
inline Sequence euler_sample(const PosteriorModel& model, const PathSpec& path, const EulerConfig& cfg) {
  cfg.validate();
  detail::VelocityCache cache(model, path);
  Rng rng(cfg.seed);
  return detail::euler_chain(model, path, cfg, cache, rng);
}

// n chains; chain k uses seed cfg.seed + k, so output does not depend on the
// worker count. Chains advance in lockstep blocks so velocity evaluations
// are shared between chains in the same state.
inline std::vector<Sequence> euler_sample_many(const PosteriorModel& model, const PathSpec& path,
                                               const EulerConfig& cfg, std::size_t n, int workers = 1,
                                               std::size_t block = 4096) {
  cfg.validate();
  std::vector<Sequence> out(n);
  const std::size_t blocks = (n + block - 1) / block;
  const double dt = (cfg.t_end - cfg.t_start) / cfg.steps;
  parallel_for(blocks, workers, [&](std::size_t b) {
    const std::size_t lo = b * block, hi = std::min(n, lo + block);
    detail::VelocityCache cache(model, path);
    std::vector<Rng> rngs;
    rngs.reserve(hi - lo);
    for (std::size_t k = lo; k < hi; ++k) {
      rngs.emplace_back(cfg.seed + k);
      out[k] = sample_source(path, model.length(), rngs.back());
    }
    for (int s = 0; s < cfg.steps; ++s) {
      const double t = cfg.t_start + s * dt;
      for (std::size_t k = lo; k < hi; ++k) detail::euler_step(out[k], t, dt, cache, rngs[k - lo], cfg.max_halvings);
    }
    for (std::size_t k = lo; k < hi; ++k) detail::resolve_masks(out[k], model, path, cfg.t_end, rngs[k - lo]);
  });
  return out;
}

// Ancestral unmasking on the grid t_k = t_start + k (1 - t_start) / steps.
// Between s and t a masked position is revealed with probability
// (alpha_t - alpha_s) / (1 - alpha_s), drawing its token from the model at s;
// revealed tokens are never changed. The last step reaches alpha = 1.
inline Sequence ancestral_chain(const PosteriorModel& model, const PathSpec& path, const EulerConfig& cfg, Rng& rng) {
  if (path.source != Source::Mask) throw ConfigError("ancestral sampling requires path.source = \"mask\"");
  const int mask = path.mask_id();
  Sequence x(static_cast<std::size_t>(model.length()), mask);
  const double dt = (1.0 - cfg.t_start) / cfg.steps;
  for (int k = 0; k < cfg.steps; ++k) {
    const double s = cfg.t_start + k * dt;
    const double t = k + 1 == cfg.steps ? 1.0 : s + dt;
    const double as = path.schedule.alpha(s), at = path.schedule.alpha(t);
    const double p = (at - as) / (1.0 - as);
    std::vector<Categorical> m;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] != mask) continue;
      if (uniform01(rng) >= p) continue;
      if (m.empty()) m = model.marginals(x, s);
      x[i] = m[i].sample(rng);
    }
  }
  return x;
}

inline Sequence ancestral_mask_sample(const PosteriorModel& model, const PathSpec& path, const EulerConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  return ancestral_chain(model, path, cfg, rng);
}

inline std::vector<Sequence> ancestral_sample_many(const PosteriorModel& model, const PathSpec& path,
                                                   const EulerConfig& cfg, std::size_t n, int workers = 1) {
  cfg.validate();
  std::vector<Sequence> out(n);
  parallel_for(n, workers, [&](std::size_t k) {
    Rng rng(cfg.seed + k);
    out[k] = ancestral_chain(model, path, cfg, rng);
  });
  return out;
}

inline void write_samples(const std::vector<Sequence>& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  for (const auto& x : samples) {
    for (std::size_t i = 0; i < x.size(); ++i) out << (i ? " " : "") << x[i];
    out << '\n';
  }
}

inline std::vector<Sequence> read_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<Sequence> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<int> t;
    int v;
    while (ss >> v) t.push_back(v);
    out.emplace_back(std::move(t));
  }
  return out;
}

}  // namespace tcsm
