#pragma once

// Shared algebra: vocabularies, sequences, categoricals, noise schedules,
// forward kernels and Hamming neighborhoods.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tcsm/errors.hpp"

namespace tcsm {

inline constexpr double kTimeEps = 1e-4;
inline constexpr double kProbFloor = 1e-12;
inline constexpr std::uint64_t kDefaultStateCap = std::uint64_t{1} << 20;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Random numbers. Every draw goes through these helpers so results depend
// only on the mt19937_64 stream, not on the standard library's distributions.

using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform on the open interval (0, 1).
inline double uniform_open(Rng& rng) {
  double u = 0.0;
  while (u == 0.0) u = uniform01(rng);
  return u;
}

inline double standard_normal(Rng& rng) {
  const double u1 = uniform_open(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Marsaglia-Tsang.
inline double gamma_variate(double shape, Rng& rng) {
  if (shape <= 0.0) throw DomainError("gamma shape must be positive");
  if (shape < 1.0) {
    const double u = uniform_open(rng);
    return gamma_variate(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0, v = 0.0;
    do {
      x = standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_open(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

inline std::vector<double> dirichlet(std::size_t n, double concentration, Rng& rng) {
  std::vector<double> out(n);
  double total = 0.0;
  for (auto& x : out) {
    x = gamma_variate(concentration, rng);
    total += x;
  }
  if (total <= 0.0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(n));
    return out;
  }
  for (auto& x : out) x /= total;
  return out;
}

// Inverse-CDF draw from unnormalized non-negative weights.
inline std::size_t sample_index(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw DomainError("cannot sample from zero total weight");
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    acc += weights[k];
    last_positive = k;
    if (u < acc) return k;
  }
  return last_positive;
}

// ---------------------------------------------------------------------------
// Log-space helpers.

inline double log_sum_exp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

// In-place softmax over a logit row; -inf entries get probability zero.
inline void softmax_inplace(std::span<double> row) {
  const double lse = log_sum_exp(row);
  if (lse == kNegInf) throw UndefinedConditionalError("softmax of an all -inf row");
  for (auto& x : row) x = (x == kNegInf) ? 0.0 : std::exp(x - lse);
}

inline double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

// ---------------------------------------------------------------------------
// Vocabulary.

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(int size, std::optional<int> mask_id = std::nullopt) : size_(size), mask_id_(mask_id) {
    if (size < 2) throw ConfigError("vocab.size must be at least 2");
    if (mask_id && (*mask_id < 0 || *mask_id >= size))
      throw ConfigError("vocab.mask_id must lie in [0, vocab.size)");
  }

  // Vocabulary of `clean` data tokens plus a trailing mask token.
  static Vocabulary with_mask(int clean) { return Vocabulary(clean + 1, clean); }

  int size() const { return size_; }
  const std::optional<int>& mask_id() const { return mask_id_; }
  bool has_mask() const { return mask_id_.has_value(); }
  bool is_mask(int token) const { return mask_id_ && *mask_id_ == token; }

  // Tokens that can appear in clean data.
  int clean_count() const { return has_mask() ? size_ - 1 : size_; }
  std::vector<int> clean_tokens() const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(size_));
    for (int v = 0; v < size_; ++v)
      if (!is_mask(v)) out.push_back(v);
    return out;
  }

  bool operator==(const Vocabulary&) const = default;

 private:
  int size_ = 2;
  std::optional<int> mask_id_;
};

// ---------------------------------------------------------------------------
// Sequence of token indices.

class Sequence {
 public:
  Sequence() = default;
  explicit Sequence(std::vector<int> tokens) : tokens_(std::move(tokens)) {}
  Sequence(std::initializer_list<int> tokens) : tokens_(tokens) {}
  Sequence(std::size_t length, int fill) : tokens_(length, fill) {}

  std::size_t size() const { return tokens_.size(); }
  int length() const { return static_cast<int>(tokens_.size()); }
  int operator[](std::size_t i) const { return tokens_[i]; }
  int& operator[](std::size_t i) { return tokens_[i]; }
  auto begin() const { return tokens_.begin(); }
  auto end() const { return tokens_.end(); }
  const std::vector<int>& tokens() const { return tokens_; }

  // Copy with position i replaced by token y: [y^i, x^{≠i}].
  Sequence with(int i, int y) const {
    Sequence out = *this;
    out.tokens_[static_cast<std::size_t>(i)] = y;
    return out;
  }

  bool operator==(const Sequence&) const = default;
  auto operator<=>(const Sequence&) const = default;

  std::string str() const {
    std::string s;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (i) s += ' ';
      s += std::to_string(tokens_[i]);
    }
    return s;
  }

 private:
  std::vector<int> tokens_;
};

inline void validate(const Sequence& x, const Vocabulary& vocab) {
  if (x.size() == 0) throw DomainError("sequence must have length >= 1");
  for (int tok : x)
    if (tok < 0 || tok >= vocab.size()) throw DomainError("token outside vocabulary");
}

// ---------------------------------------------------------------------------
// Enumeration of V^L, row-major with the first token most significant.

inline std::uint64_t state_count(int vocab_size, int length, std::uint64_t cap = kDefaultStateCap) {
  std::uint64_t n = 1;
  for (int i = 0; i < length; ++i) {
    n *= static_cast<std::uint64_t>(vocab_size);
    if (n > cap)
      throw CapacityError("state space V^L exceeds enumeration cap of " + std::to_string(cap));
  }
  return n;
}

inline std::uint64_t encode(const Sequence& x, int vocab_size) {
  std::uint64_t code = 0;
  for (int tok : x) code = code * static_cast<std::uint64_t>(vocab_size) + static_cast<std::uint64_t>(tok);
  return code;
}

inline Sequence decode(std::uint64_t code, int vocab_size, int length) {
  std::vector<int> t(static_cast<std::size_t>(length));
  for (int i = length - 1; i >= 0; --i) {
    t[static_cast<std::size_t>(i)] = static_cast<int>(code % static_cast<std::uint64_t>(vocab_size));
    code /= static_cast<std::uint64_t>(vocab_size);
  }
  return Sequence(std::move(t));
}

// Stride of position i in the row-major code.
inline std::uint64_t position_stride(int vocab_size, int length, int i) {
  std::uint64_t s = 1;
  for (int j = length - 1; j > i; --j) s *= static_cast<std::uint64_t>(vocab_size);
  return s;
}

// ---------------------------------------------------------------------------
// Categorical distribution over V tokens.

class Categorical {
 public:
  Categorical() = default;
  explicit Categorical(std::vector<double> probs) : probs_(std::move(probs)) {}

  static Categorical one_hot(int size, int k) {
    std::vector<double> p(static_cast<std::size_t>(size), 0.0);
    p[static_cast<std::size_t>(k)] = 1.0;
    return Categorical(std::move(p));
  }

  static Categorical uniform(int size) {
    return Categorical(std::vector<double>(static_cast<std::size_t>(size), 1.0 / size));
  }

  // Normalizes non-negative weights. Throws if they sum to zero.
  static Categorical normalized(std::vector<double> weights) {
    double total = 0.0;
    for (double w : weights) {
      if (w < 0.0 || !std::isfinite(w)) throw DomainError("categorical weights must be finite and >= 0");
      total += w;
    }
    if (!(total > 0.0)) throw UndefinedConditionalError("categorical weights sum to zero");
    for (auto& w : weights) w /= total;
    return Categorical(std::move(weights));
  }

  // Softmax of log-weights (-inf allowed).
  static Categorical from_logits(std::vector<double> logits) {
    softmax_inplace(logits);
    return Categorical(std::move(logits));
  }

  int size() const { return static_cast<int>(probs_.size()); }
  double operator[](std::size_t k) const { return probs_[k]; }
  const std::vector<double>& probs() const { return probs_; }
  std::span<const double> span() const { return probs_; }

  double total() const { return std::accumulate(probs_.begin(), probs_.end(), 0.0); }

  int sample(Rng& rng) const { return static_cast<int>(sample_index(probs_, rng)); }

  int argmax() const {
    return static_cast<int>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
  }

 private:
  std::vector<double> probs_;
};

// ---------------------------------------------------------------------------
// Noise schedule alpha_t with alpha(0) = 0 and alpha(1) = 1.

class NoiseSchedule {
 public:
  enum class Kind { Linear, Tabulated };

  NoiseSchedule() = default;

  static NoiseSchedule linear() { return NoiseSchedule(); }

  // Piecewise-linear interpolation through (times[k], values[k]).
  static NoiseSchedule tabulated(std::vector<double> times, std::vector<double> values) {
    if (times.size() != values.size() || times.size() < 2)
      throw ConfigError("tabulated schedule needs matching times/values with at least 2 points");
    if (times.front() != 0.0 || times.back() != 1.0)
      throw ConfigError("tabulated schedule times must start at 0 and end at 1");
    if (values.front() != 0.0 || values.back() != 1.0)
      throw ConfigError("tabulated schedule must satisfy alpha(0)=0 and alpha(1)=1");
    for (std::size_t k = 1; k < times.size(); ++k) {
      if (!(times[k] > times[k - 1])) throw ConfigError("tabulated schedule times must increase");
      if (values[k] < values[k - 1]) throw ConfigError("tabulated schedule must be non-decreasing");
    }
    NoiseSchedule s;
    s.kind_ = Kind::Tabulated;
    s.times_ = std::move(times);
    s.values_ = std::move(values);
    return s;
  }

  Kind kind() const { return kind_; }
  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& values() const { return values_; }

  double alpha(double t) const {
    if (t < 0.0 || t > 1.0) throw DomainError("time must lie in [0, 1]");
    if (kind_ == Kind::Linear) return t;
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    if (it == times_.end()) return values_.back();
    const std::size_t k = static_cast<std::size_t>(it - times_.begin());
    const double w = (t - times_[k - 1]) / (times_[k] - times_[k - 1]);
    return values_[k - 1] + w * (values_[k] - values_[k - 1]);
  }

  // Analytic for linear; central difference with h = 1e-6 for tables
  // (one-sided at the boundaries).
  double alpha_dot(double t) const {
    if (t < 0.0 || t > 1.0) throw DomainError("time must lie in [0, 1]");
    if (kind_ == Kind::Linear) return 1.0;
    constexpr double h = 1e-6;
    const double lo = std::max(0.0, t - h);
    const double hi = std::min(1.0, t + h);
    return (alpha(hi) - alpha(lo)) / (hi - lo);
  }

 private:
  Kind kind_ = Kind::Linear;
  std::vector<double> times_;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Probability path: source distribution plus schedule.

enum class Source { Uniform, Mask };

inline std::string_view to_string(Source s) { return s == Source::Uniform ? "uniform" : "mask"; }

inline Source source_from_string(std::string_view s) {
  if (s == "uniform") return Source::Uniform;
  if (s == "mask") return Source::Mask;
  throw ConfigError("path.source must be \"uniform\" or \"mask\"");
}

struct PathSpec {
  Source source = Source::Uniform;
  NoiseSchedule schedule;
  Vocabulary vocab;

  PathSpec() = default;
  PathSpec(Source src, NoiseSchedule sched, Vocabulary v)
      : source(src), schedule(std::move(sched)), vocab(std::move(v)) {
    validate();
  }

  void validate() const {
    if (source == Source::Mask && !vocab.has_mask())
      throw ConfigError("vocab.mask_id is required when path.source is \"mask\"");
  }

  int mask_id() const { return *vocab.mask_id(); }
};

// p_{t|1}(xt_tok | x1_tok) for one position at schedule value alpha.
inline double kernel_prob_at(const PathSpec& path, double alpha, int x1_tok, int xt_tok) {
  const double carry = (xt_tok == x1_tok) ? alpha : 0.0;
  if (path.source == Source::Uniform) return carry + (1.0 - alpha) / path.vocab.size();
  return carry + ((xt_tok == path.mask_id()) ? 1.0 - alpha : 0.0);
}

inline double kernel_prob(const PathSpec& path, double t, int x1_tok, int xt_tok) {
  return kernel_prob_at(path, path.schedule.alpha(t), x1_tok, xt_tok);
}

// Per-position V x V kernel matrix K[x1][xt] at time t.
inline std::vector<double> kernel_matrix(const PathSpec& path, double t) {
  const int V = path.vocab.size();
  const double a = path.schedule.alpha(t);
  std::vector<double> k(static_cast<std::size_t>(V * V));
  for (int x1 = 0; x1 < V; ++x1)
    for (int xt = 0; xt < V; ++xt) k[static_cast<std::size_t>(x1 * V + xt)] = kernel_prob_at(path, a, x1, xt);
  return k;
}

// log p_{t|1}(xt | x1) for the full factorized kernel.
inline double log_kernel(const PathSpec& path, double t, const Sequence& x1, const Sequence& xt) {
  const double a = path.schedule.alpha(t);
  double s = 0.0;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    const double p = kernel_prob_at(path, a, x1[i], xt[i]);
    if (p <= 0.0) return kNegInf;
    s += std::log(p);
  }
  return s;
}

inline std::vector<Categorical> forward_kernel(const PathSpec& path, double t, const Sequence& x1) {
  path.validate();
  if (t < 0.0 || t > 1.0) throw DomainError("forward_kernel: t must lie in [0, 1]");
  validate(x1, path.vocab);
  const int V = path.vocab.size();
  const double a = path.schedule.alpha(t);
  std::vector<Categorical> out;
  out.reserve(x1.size());
  for (int x1_tok : x1) {
    std::vector<double> p(static_cast<std::size_t>(V));
    for (int v = 0; v < V; ++v) p[static_cast<std::size_t>(v)] = kernel_prob_at(path, a, x1_tok, v);
    out.emplace_back(std::move(p));
  }
  return out;
}

inline Sequence sample_xt(std::span<const Categorical> kernels, Rng& rng) {
  std::vector<int> out;
  out.reserve(kernels.size());
  for (const auto& k : kernels) out.push_back(k.sample(rng));
  return Sequence(std::move(out));
}

// Draw x_t ~ p_{t|1}(. | x1) without materializing the kernels.
inline Sequence sample_xt(const PathSpec& path, double t, const Sequence& x1, Rng& rng) {
  const double a = path.schedule.alpha(t);
  Sequence xt = x1;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    if (uniform01(rng) < a) continue;
    if (path.source == Source::Mask) {
      xt[i] = path.mask_id();
    } else {
      xt[i] = static_cast<int>(rng() % static_cast<std::uint64_t>(path.vocab.size()));
    }
  }
  return xt;
}

// Draw from the source distribution p_0.
inline Sequence sample_source(const PathSpec& path, int length, Rng& rng) {
  if (path.source == Source::Mask) return Sequence(static_cast<std::size_t>(length), path.mask_id());
  std::vector<int> t(static_cast<std::size_t>(length));
  for (auto& x : t) x = static_cast<int>(rng() % static_cast<std::uint64_t>(path.vocab.size()));
  return Sequence(std::move(t));
}

// ---------------------------------------------------------------------------
// Time distribution omega(t), clamped to [eps, 1 - eps].

class TimeDistribution {
 public:
  enum class Kind { Uniform, Stratified };

  static TimeDistribution uniform() { return TimeDistribution(Kind::Uniform, 1); }
  static TimeDistribution stratified(int n) {
    if (n < 1) throw ConfigError("stratified time distribution needs n >= 1");
    return TimeDistribution(Kind::Stratified, n);
  }

  Kind kind() const { return kind_; }
  int strata() const { return strata_; }

  static double clamp(double t) { return std::clamp(t, kTimeEps, 1.0 - kTimeEps); }

  double sample(Rng& rng) const { return clamp(uniform01(rng)); }

  // Stratified draws place one sample in each of n equal strata (cycled when
  // the batch is larger than n).
  std::vector<double> sample_batch(std::size_t count, Rng& rng) const {
    std::vector<double> out(count);
    for (std::size_t b = 0; b < count; ++b) {
      const double u = uniform01(rng);
      if (kind_ == Kind::Uniform) {
        out[b] = clamp(u);
      } else {
        const double k = static_cast<double>(b % static_cast<std::size_t>(strata_));
        out[b] = clamp((k + u) / strata_);
      }
    }
    return out;
  }

 private:
  TimeDistribution(Kind k, int n) : kind_(k), strata_(n) {}
  Kind kind_ = Kind::Uniform;
  int strata_ = 1;
};

// ---------------------------------------------------------------------------
// Hamming neighborhoods N^k(x).

struct NeighborhoodSpec {
  int k = 1;
};

struct Neighbor {
  std::vector<int> positions;  // positions where the neighbor differs from x
  Sequence sequence;
};

// All sequences at Hamming distance 1..k from x, excluding x. Ordered by
// distance, then position set (lexicographic), then replacement tokens.
inline std::vector<Neighbor> neighbors(const Sequence& x, int vocab_size, NeighborhoodSpec spec,
                                       std::uint64_t cap = kDefaultStateCap) {
  const int L = x.length();
  if (spec.k < 1) throw ConfigError("neighborhood k must be >= 1");
  if (spec.k > L) throw ConfigError("neighborhood k must not exceed the sequence length");
  if (spec.k == L) state_count(vocab_size, L, cap);

  // Count first so the capacity check happens before allocation.
  std::uint64_t total = 0;
  {
    double binom = 1.0;
    for (int d = 1; d <= spec.k; ++d) {
      binom = binom * (L - d + 1) / d;
      total += static_cast<std::uint64_t>(std::llround(binom * std::pow(vocab_size - 1, d)));
      if (total > cap) throw CapacityError("neighborhood size exceeds enumeration cap");
    }
  }

  std::vector<Neighbor> out;
  out.reserve(static_cast<std::size_t>(total));
  for (int d = 1; d <= spec.k; ++d) {
    // Enumerate position subsets of size d in lexicographic order.
    std::vector<int> pos(static_cast<std::size_t>(d));
    std::iota(pos.begin(), pos.end(), 0);
    for (;;) {
      // Enumerate replacement tokens (each != original) as a mixed-radix counter.
      std::vector<int> digit(static_cast<std::size_t>(d), 0);
      for (;;) {
        Sequence y = x;
        for (int j = 0; j < d; ++j) {
          const int p = pos[static_cast<std::size_t>(j)];
          int tok = digit[static_cast<std::size_t>(j)];
          if (tok >= x[static_cast<std::size_t>(p)]) ++tok;
          y[static_cast<std::size_t>(p)] = tok;
        }
        out.push_back(Neighbor{pos, std::move(y)});
        int j = d - 1;
        while (j >= 0 && ++digit[static_cast<std::size_t>(j)] == vocab_size - 1) {
          digit[static_cast<std::size_t>(j)] = 0;
          --j;
        }
        if (j < 0) break;
      }
      int j = d - 1;
      while (j >= 0 && pos[static_cast<std::size_t>(j)] == L - d + j) --j;
      if (j < 0) break;
      ++pos[static_cast<std::size_t>(j)];
      for (int m = j + 1; m < d; ++m) pos[static_cast<std::size_t>(m)] = pos[static_cast<std::size_t>(m - 1)] + 1;
    }
  }
  return out;
}

}  // namespace tcsm
