#pragma once

// Synthetic datasets and evaluation metrics.

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "tcsm/divergences.hpp"
#include "tcsm/models/ar_teacher.hpp"
#include "tcsm/models/posterior_model.hpp"

namespace tcsm {

// ---------------------------------------------------------------------------
// 2D grid: a sequence (x, y) of two coordinates in [0, G).

struct GridMode {
  double cx = 0.0, cy = 0.0;
  double radius = 8.0;
  double weight = 1.0;
};

class GridDataset {
 public:
  // Four bumps, two in each half (x < G/2 is the left half).
  static std::vector<GridMode> default_modes(int G) {
    const double a = G / 4.0, b = 3.0 * G / 4.0, r = G / 16.0;
    return {{a, a, r, 1.0}, {a, b, r, 1.0}, {b, a, r, 1.0}, {b, b, r, 1.0}};
  }

  explicit GridDataset(int side = 128, bool with_mask = true, std::vector<GridMode> modes = {})
      : side_(side), modes_(modes.empty() ? default_modes(side) : std::move(modes)) {
    if (side_ < 2) throw ConfigError("grid side must be >= 2");
    vocab_ = with_mask ? Vocabulary::with_mask(side_) : Vocabulary(side_);
    double wsum = 0.0;
    for (const auto& m : modes_) {
      if (m.cx < 0 || m.cy < 0 || m.cx >= side_ || m.cy >= side_) throw ConfigError("grid mode center outside the grid");
      if (!(m.radius > 0.0) || !(m.weight > 0.0)) throw ConfigError("grid modes need positive radius and weight");
      wsum += m.weight;
    }
    // Each bump is normalized over the grid before mixing.
    const std::size_t V = static_cast<std::size_t>(vocab_.size());
    std::vector<double> w(V * V, 0.0);
    for (const auto& m : modes_) {
      std::vector<double> bump(static_cast<std::size_t>(side_) * static_cast<std::size_t>(side_));
      double z = 0.0;
      for (int x = 0; x < side_; ++x)
        for (int y = 0; y < side_; ++y) {
          const double d2 = (x - m.cx) * (x - m.cx) + (y - m.cy) * (y - m.cy);
          const double v = std::exp(-d2 / (2.0 * m.radius * m.radius));
          bump[static_cast<std::size_t>(x * side_ + y)] = v;
          z += v;
        }
      for (int x = 0; x < side_; ++x)
        for (int y = 0; y < side_; ++y)
          w[static_cast<std::size_t>(x) * V + static_cast<std::size_t>(y)] +=
              m.weight / wsum * bump[static_cast<std::size_t>(x * side_ + y)] / z;
    }
    joint_ = TabularJoint::from_weights(vocab_, 2, std::move(w));
  }

  int side() const { return side_; }
  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<GridMode>& modes() const { return modes_; }
  const TabularJoint& joint() const { return joint_; }
  Sequence sample(Rng& rng) const { return joint_.sample(rng); }

  bool right_half(const Sequence& x) const { return x[0] >= side_ / 2; }

  // Joint restricted to the left half and renormalized.
  TabularJoint left_target() const {
    std::vector<double> w(joint_.probs());
    for (std::uint64_t c = 0; c < w.size(); ++c)
      if (right_half(joint_.sequence(c))) w[c] = 0.0;
    return TabularJoint::from_weights(vocab_, 2, std::move(w));
  }

 private:
  int side_;
  std::vector<GridMode> modes_;
  Vocabulary vocab_;
  TabularJoint joint_;
};

// ---------------------------------------------------------------------------
// Character-like sequences from an order-2 Markov chain.

class CharDataset {
 public:
  explicit CharDataset(int vocab_size = 8, int length = 6, std::uint64_t seed = 1, double concentration = 0.5)
      : length_(length) {
    Rng rng(seed);
    chain_ = ARTeacher::random(Vocabulary::with_mask(vocab_size - 1), 3, rng, concentration);
    joint_ = chain_.to_joint(length_);
  }

  const Vocabulary& vocab() const { return chain_.vocab(); }
  int length() const { return length_; }
  const ARTeacher& chain() const { return chain_; }
  const TabularJoint& joint() const { return joint_; }
  Sequence sample(Rng& rng) const { return chain_.sample(length_, rng); }

 private:
  int length_;
  ARTeacher chain_;
  TabularJoint joint_;
};

// ---------------------------------------------------------------------------
// Two-mode preference task: an equal mixture of two product distributions,
// mode A on low tokens and mode B on high tokens. Winners come from A, losers
// from B; the evaluation reward is the posterior responsibility of mode A.

class TwoModeTask {
 public:
  explicit TwoModeTask(int clean = 7, int length = 4, double peak = 0.8) : length_(length) {
    if (clean < 4) throw ConfigError("two-mode task needs at least 4 clean tokens");
    if (!(peak > 0.0 && peak < 1.0)) throw ConfigError("two-mode peak must lie in (0, 1)");
    vocab_ = Vocabulary::with_mask(clean);
    const int half = clean / 2;
    a_.assign(static_cast<std::size_t>(vocab_.size()), 0.0);
    b_ = a_;
    for (int v = 0; v < clean; ++v) {
      const bool low = v < half, high = v >= clean - half;
      a_[static_cast<std::size_t>(v)] = low ? peak / half : (1.0 - peak) / (clean - half);
      b_[static_cast<std::size_t>(v)] = high ? peak / half : (1.0 - peak) / (clean - half);
    }
    std::vector<double> w(state_count(vocab_.size(), length_), 0.0);
    for (std::uint64_t c = 0; c < w.size(); ++c) w[c] = 0.5 * mode_prob(a_, decode(c, vocab_.size(), length_)) +
                                                       0.5 * mode_prob(b_, decode(c, vocab_.size(), length_));
    joint_ = TabularJoint::from_weights(vocab_, length_, std::move(w));
  }

  const Vocabulary& vocab() const { return vocab_; }
  int length() const { return length_; }
  const TabularJoint& joint() const { return joint_; }

  Sequence sample_mode(bool mode_a, Rng& rng) const {
    const Categorical c(mode_a ? a_ : b_);
    std::vector<int> x(static_cast<std::size_t>(length_));
    for (auto& v : x) v = c.sample(rng);
    return Sequence(std::move(x));
  }

  // P(mode A | x).
  double reward(const Sequence& x) const {
    const double pa = mode_prob(a_, x), pb = mode_prob(b_, x);
    return pa + pb > 0.0 ? pa / (pa + pb) : 0.5;
  }

 private:
  static double mode_prob(const std::vector<double>& m, const Sequence& x) {
    double p = 1.0;
    for (int v : x) p *= m[static_cast<std::size_t>(v)];
    return p;
  }

  int length_;
  Vocabulary vocab_;
  std::vector<double> a_, b_;
  TabularJoint joint_;
};

// ---------------------------------------------------------------------------
// Metrics.

inline std::vector<double> default_t_grid(int n = 5) {
  std::vector<double> g;
  for (int k = 0; k < n; ++k) g.push_back((k + 0.5) / n);
  return g;
}

// Mean over t of E_{x_t} E_{x1 ~ p_{1|t}}[-log q(x1 | x_t)], i.e. the oracle
// posterior entropy plus KL(oracle || model).
inline double exact_nll(const PosteriorModel& model, const TabularJoint& joint, const PathSpec& path,
                        std::span<const double> t_grid) {
  double total = 0.0;
  for (double t : t_grid) {
    const auto pt = marginal_pt(joint, path, t);
    for (std::uint64_t c = 0; c < pt.size(); ++c) {
      if (pt[c] <= 0.0) continue;
      const Sequence xt = decode(c, joint.V(), joint.length());
      const auto post = sparse_posterior(joint, path, t, xt);
      for (std::size_t k = 0; k < post.codes.size(); ++k)
        total -= pt[c] * post.probs[k] * model.log_prob(joint.sequence(post.codes[k]), xt, t);
    }
  }
  return total / static_cast<double>(t_grid.size());
}

// Mean over t of E_{x_t} sum_i KL(oracle posterior marginal_i || q_i): the
// distance from a factorized model to the best factorized posterior.
inline double posterior_kl(const PosteriorModel& model, const TabularJoint& joint, const PathSpec& path,
                           std::span<const double> t_grid) {
  double total = 0.0;
  for (double t : t_grid) {
    const auto pt = marginal_pt(joint, path, t);
    for (std::uint64_t c = 0; c < pt.size(); ++c) {
      if (pt[c] <= 0.0) continue;
      const Sequence xt = decode(c, joint.V(), joint.length());
      const auto truth = posterior_marginals(joint, path, t, xt);
      const auto q = model.marginals(xt, t);
      for (std::size_t i = 0; i < q.size(); ++i) total += pt[c] * kl_divergence(truth[i], q[i]);
    }
  }
  return total / static_cast<double>(t_grid.size());
}

inline std::vector<double> empirical_counts(const std::vector<Sequence>& samples, int V, int L) {
  std::vector<double> counts(static_cast<std::size_t>(state_count(V, L)), 0.0);
  for (const auto& x : samples) counts[encode(x, V)] += 1.0;
  return counts;
}

// TV between normalized counts and an exact table of the same size.
inline double tv_distance(std::span<const double> counts, std::span<const double> table) {
  if (counts.size() != table.size()) throw DomainError("tv_distance: size mismatch");
  double n = 0.0, z = 0.0;
  for (double c : counts) n += c;
  for (double p : table) z += p;
  if (!(n > 0.0) || !(z > 0.0)) throw DomainError("tv_distance: empty distribution");
  double s = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) s += std::abs(counts[k] / n - table[k] / z);
  return 0.5 * s;
}

inline double region_mass(const std::vector<Sequence>& samples, const std::function<bool(const Sequence&)>& in_region) {
  if (samples.empty()) throw DomainError("region_mass of an empty sample set");
  std::size_t hits = 0;
  for (const auto& x : samples) hits += in_region(x) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

struct RewardEntropy {
  double mean_reward = 0.0;
  double entropy = 0.0;  // plug-in, nats
};

inline RewardEntropy reward_entropy_stats(const std::vector<Sequence>& samples,
                                          const std::function<double(const Sequence&)>& reward) {
  if (samples.empty()) throw DomainError("reward_entropy_stats of an empty sample set");
  std::map<Sequence, std::size_t> counts;
  RewardEntropy out;
  for (const auto& x : samples) {
    out.mean_reward += reward(x);
    ++counts[x];
  }
  const double n = static_cast<double>(samples.size());
  out.mean_reward /= n;
  for (const auto& [x, c] : counts) {
    const double p = static_cast<double>(c) / n;
    out.entropy -= p * std::log(p);
  }
  return out;
}

// Coarse histogram of grid samples over blocks of `cell` x `cell` points.
inline std::vector<double> block_histogram(const std::vector<Sequence>& samples, int side, int cell) {
  const int B = (side + cell - 1) / cell;
  std::vector<double> h(static_cast<std::size_t>(B * B), 0.0);
  for (const auto& x : samples)
    if (x[0] < side && x[1] < side) h[static_cast<std::size_t>((x[0] / cell) * B + x[1] / cell)] += 1.0;
  return h;
}

inline std::vector<double> block_histogram(const TabularJoint& joint, int side, int cell) {
  const int B = (side + cell - 1) / cell;
  std::vector<double> h(static_cast<std::size_t>(B * B), 0.0);
  for (std::uint64_t c = 0; c < joint.size(); ++c) {
    const Sequence x = joint.sequence(c);
    if (x[0] < side && x[1] < side) h[static_cast<std::size_t>((x[0] / cell) * B + x[1] / cell)] += joint[c];
  }
  return h;
}

// ---------------------------------------------------------------------------
// CSV output.

struct MetricRow {
  long step = 0;
  std::string name;
  double value = 0.0;
};

inline void write_metric_rows(const std::vector<MetricRow>& rows, const std::string& path, bool append = false) {
  const bool header = !append || !std::ifstream(path).good();
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  if (header) out << "step,name,value\n";
  for (const auto& r : rows) out << r.step << ',' << r.name << ',' << format_double(r.value) << '\n';
}

inline std::vector<MetricRow> read_metric_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "step,name,value") throw FormatError(path + ": expected header step,name,value");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b) throw FormatError(path + ": malformed row \"" + line + "\"");
    rows.push_back({std::stol(line.substr(0, a)), line.substr(a + 1, b - a - 1), std::stod(line.substr(b + 1))});
  }
  return rows;
}

// Histogram rows (x, y, count) for every cell, zeros included.
inline void write_histogram(const std::vector<double>& counts, int width, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "x,y,count\n";
  for (std::size_t k = 0; k < counts.size(); ++k)
    out << k / static_cast<std::size_t>(width) << ',' << k % static_cast<std::size_t>(width) << ',' << format_double(counts[k]) << '\n';
}

inline std::vector<double> read_histogram(const std::string& path, int width, int height) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "x,y,count") throw FormatError(path + ": expected header x,y,count");
  std::vector<double> h(static_cast<std::size_t>(width * height), 0.0);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int x = 0, y = 0;
    char c1 = 0, c2 = 0;
    std::istringstream ss(line);
    std::string rest;
    if (!(ss >> x >> c1 >> y >> c2 >> rest) || c1 != ',' || c2 != ',') throw FormatError(path + ": malformed row");
    if (x < 0 || y < 0 || x >= height || y >= width) throw FormatError(path + ": cell out of range");
    h[static_cast<std::size_t>(x * width + y)] = std::stod(rest);
  }
  return h;
}

}  // namespace tcsm
