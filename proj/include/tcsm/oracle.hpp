#pragma once

// Brute-force ground truth on enumerable sequence spaces: marginals,
// posteriors, concrete scores, conditionals and exact velocities.

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tcsm/core.hpp"

namespace tcsm {

// Doubles are written as 17-significant-digit strings so files round-trip
// bit-exactly regardless of the JSON library's float printer.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_double(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  if (!j.is_string()) throw FormatError("expected a number or numeric string");
  const std::string s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return kNegInf;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw FormatError("malformed numeric string: " + s);
  return v;
}

inline nlohmann::json doubles_to_json(std::span<const double> xs) {
  nlohmann::json arr = nlohmann::json::array();
  for (double x : xs) arr.push_back(format_double(x));
  return arr;
}

inline std::vector<double> doubles_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw FormatError("expected an array of numbers");
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& e : arr) out.push_back(parse_double(e));
  return out;
}

// ---------------------------------------------------------------------------
// Exact distribution over all V^L sequences.

class TabularJoint {
 public:
  TabularJoint() = default;

  TabularJoint(Vocabulary vocab, int length, std::vector<double> probs, std::uint64_t cap = kDefaultStateCap)
      : vocab_(std::move(vocab)), length_(length), cap_(cap), probs_(std::move(probs)) {
    if (length < 1) throw DomainError("sequence length must be >= 1");
    const std::uint64_t n = state_count(vocab_.size(), length_, cap_);
    if (probs_.size() != n) throw FormatError("probability table has the wrong number of entries");
    double total = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("joint masses must be finite and >= 0");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-10) throw DomainError("joint masses must sum to 1");
    build_cdf();
  }

  // Normalizes arbitrary non-negative weights.
  static TabularJoint from_weights(Vocabulary vocab, int length, std::vector<double> weights,
                                   std::uint64_t cap = kDefaultStateCap) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw DomainError("joint weights sum to zero");
    for (auto& w : weights) w /= total;
    return TabularJoint(std::move(vocab), length, std::move(weights), cap);
  }

  // Dirichlet-random joint over sequences of clean tokens (sequences that
  // contain the mask token get zero mass).
  static TabularJoint random(Vocabulary vocab, int length, Rng& rng, double concentration = 1.0) {
    const std::uint64_t n = state_count(vocab.size(), length);
    std::vector<double> w(n, 0.0);
    for (std::uint64_t c = 0; c < n; ++c) {
      const Sequence x = decode(c, vocab.size(), length);
      bool clean = true;
      for (int tok : x) clean = clean && !vocab.is_mask(tok);
      if (clean) w[c] = gamma_variate(concentration, rng);
    }
    return from_weights(std::move(vocab), length, std::move(w));
  }

  // Independent positions with the given per-position marginals.
  static TabularJoint product(Vocabulary vocab, const std::vector<Categorical>& marginals) {
    const int L = static_cast<int>(marginals.size());
    const std::uint64_t n = state_count(vocab.size(), L);
    std::vector<double> w(n);
    for (std::uint64_t c = 0; c < n; ++c) {
      const Sequence x = decode(c, vocab.size(), L);
      double p = 1.0;
      for (int i = 0; i < L; ++i) p *= marginals[static_cast<std::size_t>(i)][static_cast<std::size_t>(x[static_cast<std::size_t>(i)])];
      w[c] = p;
    }
    return from_weights(std::move(vocab), L, std::move(w));
  }

  static TabularJoint point_mass(Vocabulary vocab, const Sequence& x) {
    const std::uint64_t n = state_count(vocab.size(), x.length());
    std::vector<double> w(n, 0.0);
    w[encode(x, vocab.size())] = 1.0;
    return TabularJoint(std::move(vocab), x.length(), std::move(w));
  }

  static TabularJoint uniform_over_clean(Vocabulary vocab, int length) {
    const std::uint64_t n = state_count(vocab.size(), length);
    std::vector<double> w(n, 0.0);
    for (std::uint64_t c = 0; c < n; ++c) {
      const Sequence x = decode(c, vocab.size(), length);
      bool clean = true;
      for (int tok : x) clean = clean && !vocab.is_mask(tok);
      w[c] = clean ? 1.0 : 0.0;
    }
    return from_weights(std::move(vocab), length, std::move(w));
  }

  const Vocabulary& vocab() const { return vocab_; }
  int V() const { return vocab_.size(); }
  int length() const { return length_; }
  std::uint64_t cap() const { return cap_; }
  std::size_t size() const { return probs_.size(); }
  const std::vector<double>& probs() const { return probs_; }
  double operator[](std::uint64_t code) const { return probs_[code]; }
  double prob(const Sequence& x) const { return probs_[encode(x, V())]; }
  Sequence sequence(std::uint64_t code) const { return decode(code, V(), length_); }

  Sequence sample(Rng& rng) const {
    const double u = uniform01(rng) * cdf_.back();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    // Skip zero-mass states that share a cdf value.
    std::size_t k = static_cast<std::size_t>(it - cdf_.begin());
    while (probs_[k] == 0.0 && k + 1 < probs_.size()) ++k;
    return sequence(k);
  }

  double entropy() const {
    double h = 0.0;
    for (double p : probs_)
      if (p > 0.0) h -= p * std::log(p);
    return h;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["V"] = V();
    j["L"] = length_;
    if (vocab_.has_mask()) j["mask_id"] = *vocab_.mask_id();
    j["probs"] = doubles_to_json(probs_);
    return j;
  }

  static TabularJoint from_json(const nlohmann::json& j, std::uint64_t cap = kDefaultStateCap) {
    try {
      std::optional<int> mask;
      if (j.contains("mask_id") && !j.at("mask_id").is_null()) mask = j.at("mask_id").get<int>();
      Vocabulary vocab(j.at("V").get<int>(), mask);
      return TabularJoint(std::move(vocab), j.at("L").get<int>(), doubles_from_json(j.at("probs")), cap);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("joint file: ") + e.what());
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path);
    out << to_json().dump(1) << '\n';
  }

  static TabularJoint load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot read " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("joint file " + path + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  void build_cdf() {
    cdf_.resize(probs_.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < probs_.size(); ++k) {
      acc += probs_[k];
      cdf_[k] = acc;
    }
  }

  Vocabulary vocab_;
  int length_ = 1;
  std::uint64_t cap_ = kDefaultStateCap;
  std::vector<double> probs_;
  std::vector<double> cdf_;
};

// ---------------------------------------------------------------------------
// Probability path marginal p_t.

// Applies the per-position kernel as a mode product along each axis:
// out[.., xt_i, ..] = sum_{x1_i} in[.., x1_i, ..] * K[x1_i][xt_i].
inline std::vector<double> apply_kernel(std::span<const double> table, int V, int L, std::span<const double> K) {
  std::vector<double> cur(table.begin(), table.end());
  std::vector<double> next(cur.size());
  for (int i = 0; i < L; ++i) {
    const std::uint64_t stride = position_stride(V, L, i);
    const std::uint64_t block = stride * static_cast<std::uint64_t>(V);
    std::fill(next.begin(), next.end(), 0.0);
    for (std::uint64_t base = 0; base < cur.size(); base += block) {
      for (std::uint64_t r = 0; r < stride; ++r) {
        for (int a = 0; a < V; ++a) {
          const double v = cur[base + static_cast<std::uint64_t>(a) * stride + r];
          if (v == 0.0) continue;
          for (int b = 0; b < V; ++b)
            next[base + static_cast<std::uint64_t>(b) * stride + r] += v * K[static_cast<std::size_t>(a * V + b)];
        }
      }
    }
    cur.swap(next);
  }
  return cur;
}

inline std::vector<double> marginal_pt(const TabularJoint& joint, const PathSpec& path, double t) {
  path.validate();
  if (path.vocab.size() != joint.V()) throw ConfigError("path vocabulary does not match the joint");
  return apply_kernel(joint.probs(), joint.V(), joint.length(), kernel_matrix(path, t));
}

// ---------------------------------------------------------------------------
// Posterior p_{1|t}(. | x_t), computed in log space.

struct PosteriorTable {
  Sequence xt;
  double t = 0.0;
  int V = 0;
  int L = 0;
  std::vector<double> probs;
  double log_evidence = 0.0;  // log p_t(x_t)

  double prob(const Sequence& x1) const { return probs[encode(x1, V)]; }
};

// Posterior restricted to its candidate support, as (code, probability)
// pairs in increasing code order. Under the mask source only the masked
// positions are enumerated: unmasked positions are pinned by the kernel.
struct SparsePosterior {
  std::vector<std::uint64_t> codes;
  std::vector<double> probs;
  double log_evidence = 0.0;
};

inline SparsePosterior sparse_posterior(const TabularJoint& joint, const PathSpec& path, double t, const Sequence& xt) {
  path.validate();
  validate(xt, path.vocab);
  if (xt.length() != joint.length()) throw DomainError("x_t length does not match the joint");
  if (path.vocab.size() != joint.V()) throw ConfigError("path vocabulary does not match the joint");
  const int V = joint.V();
  const int L = joint.length();
  const double a = path.schedule.alpha(t);
  std::vector<double> logk(static_cast<std::size_t>(V * V));
  for (int x1 = 0; x1 < V; ++x1)
    for (int v = 0; v < V; ++v) logk[static_cast<std::size_t>(x1 * V + v)] = safe_log(kernel_prob_at(path, a, x1, v));

  // Free positions range over all tokens; pinned ones keep x_t's token.
  std::vector<int> free;
  for (int i = 0; i < L; ++i)
    if (path.source == Source::Uniform || xt[static_cast<std::size_t>(i)] == path.mask_id()) free.push_back(i);
  std::uint64_t count = 1;
  for (std::size_t k = 0; k < free.size(); ++k) count *= static_cast<std::uint64_t>(V);

  SparsePosterior out;
  std::vector<double> logw;
  out.codes.reserve(static_cast<std::size_t>(count));
  logw.reserve(static_cast<std::size_t>(count));
  Sequence x1 = xt;
  std::vector<int> digit(free.size(), 0);
  for (std::uint64_t n = 0; n < count; ++n) {
    for (std::size_t k = 0; k < free.size(); ++k) x1[static_cast<std::size_t>(free[k])] = digit[k];
    const std::uint64_t code = encode(x1, V);
    const double p = joint[code];
    if (p > 0.0) {
      double s = std::log(p);
      for (int i = 0; i < L && s != kNegInf; ++i)
        s += logk[static_cast<std::size_t>(x1[static_cast<std::size_t>(i)] * V + xt[static_cast<std::size_t>(i)])];
      if (s != kNegInf) {
        out.codes.push_back(code);
        logw.push_back(s);
      }
    }
    for (int k = static_cast<int>(free.size()) - 1; k >= 0; --k) {
      if (++digit[static_cast<std::size_t>(k)] < V) break;
      digit[static_cast<std::size_t>(k)] = 0;
    }
  }
  const double lse = log_sum_exp(logw);
  if (lse == kNegInf) throw EvidenceError("p_t(x_t) = 0 for x_t = [" + xt.str() + "]");
  out.log_evidence = lse;
  out.probs.resize(logw.size());
  for (std::size_t k = 0; k < logw.size(); ++k) out.probs[k] = std::exp(logw[k] - lse);
  return out;
}

inline PosteriorTable posterior(const TabularJoint& joint, const PathSpec& path, double t, const Sequence& xt) {
  const auto sp = sparse_posterior(joint, path, t, xt);
  PosteriorTable out{xt, t, joint.V(), joint.length(), std::vector<double>(joint.size(), 0.0), sp.log_evidence};
  for (std::size_t k = 0; k < sp.codes.size(); ++k) out.probs[sp.codes[k]] = sp.probs[k];
  return out;
}

// Per-position marginals m_i(y) = sum over x1 with x1^i = y of the table.
inline std::vector<Categorical> position_marginals(std::span<const double> table, int V, int L) {
  std::vector<std::vector<double>> m(static_cast<std::size_t>(L), std::vector<double>(static_cast<std::size_t>(V), 0.0));
  for (std::uint64_t c = 0; c < table.size(); ++c) {
    const double p = table[c];
    if (p == 0.0) continue;
    std::uint64_t code = c;
    for (int i = L - 1; i >= 0; --i) {
      m[static_cast<std::size_t>(i)][code % static_cast<std::uint64_t>(V)] += p;
      code /= static_cast<std::uint64_t>(V);
    }
  }
  std::vector<Categorical> out;
  out.reserve(m.size());
  for (auto& row : m) out.emplace_back(std::move(row));
  return out;
}

inline std::vector<Categorical> posterior_marginals(const SparsePosterior& post, int V, int L) {
  std::vector<std::vector<double>> m(static_cast<std::size_t>(L), std::vector<double>(static_cast<std::size_t>(V), 0.0));
  for (std::size_t k = 0; k < post.codes.size(); ++k) {
    std::uint64_t code = post.codes[k];
    for (int i = L - 1; i >= 0; --i) {
      m[static_cast<std::size_t>(i)][code % static_cast<std::uint64_t>(V)] += post.probs[k];
      code /= static_cast<std::uint64_t>(V);
    }
  }
  std::vector<Categorical> out;
  for (auto& row : m) out.emplace_back(std::move(row));
  return out;
}

inline std::vector<Categorical> posterior_marginals(const TabularJoint& joint, const PathSpec& path, double t,
                                                    const Sequence& xt) {
  return posterior_marginals(sparse_posterior(joint, path, t, xt), joint.V(), joint.length());
}

inline std::vector<Categorical> posterior_marginals(const PosteriorTable& post) {
  return position_marginals(post.probs, post.V, post.L);
}

// ---------------------------------------------------------------------------
// Concrete score c_p(x; N) = [p(y) / p(x)] over the neighborhood.

struct ConcreteScoreVec {
  Sequence base;
  NeighborhoodSpec spec;
  std::vector<Neighbor> neighbors;
  std::vector<double> values;
};

inline ConcreteScoreVec concrete_score(std::span<const double> table, int V, const Sequence& x, NeighborhoodSpec spec) {
  const double px = table[encode(x, V)];
  if (!(px > 0.0)) throw ZeroBaseError("concrete score requested at a zero-mass base point [" + x.str() + "]");
  ConcreteScoreVec out{x, spec, neighbors(x, V, spec), {}};
  out.values.reserve(out.neighbors.size());
  for (const auto& n : out.neighbors) out.values.push_back(table[encode(n.sequence, V)] / px);
  return out;
}

inline ConcreteScoreVec concrete_score(const TabularJoint& joint, const Sequence& x, NeighborhoodSpec spec) {
  return concrete_score(joint.probs(), joint.V(), x, spec);
}

inline ConcreteScoreVec concrete_score(const PosteriorTable& post, const Sequence& x, NeighborhoodSpec spec) {
  return concrete_score(post.probs, post.V, x, spec);
}

// Categorical over column i built from a 1-Hamming concrete score:
// softmax of log c with log c(x) = 0 for the base token itself.
inline Categorical conditional_from_score(const ConcreteScoreVec& score, int V, int i) {
  std::vector<double> w(static_cast<std::size_t>(V), 0.0);
  w[static_cast<std::size_t>(score.base[static_cast<std::size_t>(i)])] = 1.0;
  for (std::size_t k = 0; k < score.neighbors.size(); ++k) {
    const auto& n = score.neighbors[k];
    if (n.positions.size() != 1 || n.positions[0] != i) continue;
    w[static_cast<std::size_t>(n.sequence[static_cast<std::size_t>(i)])] = score.values[k];
  }
  std::vector<double> logits(w.size());
  for (std::size_t v = 0; v < w.size(); ++v) logits[v] = safe_log(w[v]);
  return Categorical::from_logits(std::move(logits));
}

// ---------------------------------------------------------------------------
// Conditional of position i given the rest.

// p(y^i, x^{≠i}) normalized over y. With x_t supplied the weights are further
// multiplied by the kernel p_{t|1}(x_t^i | y); the other positions' kernel
// factors do not depend on y and cancel.
inline Categorical conditional_given_rest(std::span<const double> table, int V, int L, int i, const Sequence& x,
                                          const PathSpec* path = nullptr, double t = 1.0,
                                          const Sequence* xt = nullptr) {
  if (i < 0 || i >= L) throw DomainError("position out of range");
  const double a = (path && xt) ? path->schedule.alpha(t) : 1.0;
  std::vector<double> w(static_cast<std::size_t>(V));
  double total = 0.0;
  for (int y = 0; y < V; ++y) {
    double p = table[encode(x.with(i, y), V)];
    if (path && xt) p *= kernel_prob_at(*path, a, y, (*xt)[static_cast<std::size_t>(i)]);
    w[static_cast<std::size_t>(y)] = p;
    total += p;
  }
  if (!(total > 0.0)) throw UndefinedConditionalError("conditional has zero total mass at position " + std::to_string(i));
  for (auto& p : w) p /= total;
  return Categorical(std::move(w));
}

inline Categorical conditional_given_rest(const TabularJoint& joint, int i, const Sequence& x) {
  return conditional_given_rest(joint.probs(), joint.V(), joint.length(), i, x);
}

inline Categorical conditional_given_rest(const TabularJoint& joint, const PathSpec& path, double t, int i,
                                          const Sequence& x, const Sequence& xt) {
  return conditional_given_rest(joint.probs(), joint.V(), joint.length(), i, x, &path, t, &xt);
}

inline Categorical conditional_given_rest(const PosteriorTable& post, int i, const Sequence& x) {
  return conditional_given_rest(post.probs, post.V, post.L, i, x);
}

// ---------------------------------------------------------------------------
// Velocities.

// L x V table of single-token flip rates; entry (i, x_t^i) is the diagonal.
struct RateTable {
  int L = 0;
  int V = 0;
  std::vector<double> rates;

  double operator()(int i, int y) const { return rates[static_cast<std::size_t>(i * V + y)]; }
  double& operator()(int i, int y) { return rates[static_cast<std::size_t>(i * V + y)]; }
};

inline double velocity_coefficient(const PathSpec& path, double t) {
  if (t >= 1.0 - kTimeEps) throw SingularityError("velocity evaluated at t >= 1 - 1e-4");
  const double a = path.schedule.alpha(t);
  if (!(1.0 - a > 0.0)) throw SingularityError("velocity undefined where alpha_t = 1");
  return path.schedule.alpha_dot(t) / (1.0 - a);
}

// u_i(y) = coef * (m_i(y) - delta(y, x_t^i)).
inline RateTable velocity_from_marginals(const PathSpec& path, double t, const Sequence& xt,
                                         const std::vector<Categorical>& marginals) {
  const double coef = velocity_coefficient(path, t);
  const int L = xt.length();
  const int V = path.vocab.size();
  RateTable r{L, V, std::vector<double>(static_cast<std::size_t>(L * V), 0.0)};
  for (int i = 0; i < L; ++i) {
    const auto& m = marginals[static_cast<std::size_t>(i)];
    const int cur = xt[static_cast<std::size_t>(i)];
    double off = 0.0;
    for (int y = 0; y < V; ++y) {
      if (y == cur) continue;
      r(i, y) = coef * m[static_cast<std::size_t>(y)];
      off += r(i, y);
    }
    r(i, cur) = -off;
  }
  return r;
}

inline RateTable exact_velocity(const TabularJoint& joint, const PathSpec& path, double t, const Sequence& xt) {
  velocity_coefficient(path, t);
  return velocity_from_marginals(path, t, xt, posterior_marginals(joint, path, t, xt));
}

// Max deviation from the rate conditions: negative off-diagonal entries and
// non-zero row sums.
inline double rate_condition_violation(const RateTable& r, const Sequence& xt) {
  double worst = 0.0;
  for (int i = 0; i < r.L; ++i) {
    double sum = 0.0;
    for (int y = 0; y < r.V; ++y) {
      sum += r(i, y);
      if (y != xt[static_cast<std::size_t>(i)]) worst = std::max(worst, -r(i, y));
    }
    worst = std::max(worst, std::abs(sum));
  }
  return worst;
}

// Kolmogorov forward equation check: max over x of
// |d/dt p_t(x) (central difference, step h) - sum of probability flux into x|.
inline double kolmogorov_forward_residual(const TabularJoint& joint, const PathSpec& path, double t, double h = 1e-5) {
  const int V = joint.V();
  const int L = joint.length();
  const auto pt = marginal_pt(joint, path, t);
  const auto plus = marginal_pt(joint, path, t + h);
  const auto minus = marginal_pt(joint, path, t - h);

  std::vector<RateTable> u(pt.size());
  for (std::uint64_t c = 0; c < pt.size(); ++c)
    if (pt[c] > 0.0) u[c] = exact_velocity(joint, path, t, decode(c, V, L));

  double worst = 0.0;
  for (std::uint64_t c = 0; c < pt.size(); ++c) {
    const Sequence x = decode(c, V, L);
    double flux = 0.0;
    for (int i = 0; i < L; ++i) {
      for (int y = 0; y < V; ++y) {
        if (y == x[static_cast<std::size_t>(i)]) continue;
        const std::uint64_t cy = encode(x.with(i, y), V);
        if (pt[cy] > 0.0) flux += u[cy](i, x[static_cast<std::size_t>(i)]) * pt[cy];
      }
      if (pt[c] > 0.0) flux += u[c](i, x[static_cast<std::size_t>(i)]) * pt[c];
    }
    const double fd = (plus[c] - minus[c]) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - flux));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Target-score decomposition: c_{p_{1|t}}[y] = c_{p_1}[y] * k(x_t|y) / k(x_t|x).

inline double score_decomposition_check(const TabularJoint& joint, const PathSpec& path, double t, const Sequence& xt,
                                        const Sequence& x1) {
  const auto post = posterior(joint, path, t, xt);
  const auto lhs = concrete_score(post, x1, NeighborhoodSpec{1});
  const auto rhs = concrete_score(joint, x1, NeighborhoodSpec{1});
  const double lkx = log_kernel(path, t, x1, xt);
  double worst = 0.0;
  for (std::size_t k = 0; k < lhs.values.size(); ++k) {
    const double lky = log_kernel(path, t, lhs.neighbors[k].sequence, xt);
    const double ratio = lky == kNegInf ? 0.0 : std::exp(lky - lkx);
    worst = std::max(worst, std::abs(lhs.values[k] - rhs.values[k] * ratio));
  }
  return worst;
}

}  // namespace tcsm
