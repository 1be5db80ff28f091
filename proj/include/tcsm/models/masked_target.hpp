#pragma once

// Count-based estimate of the clean-data conditionals p1(x^i | x^{≠i}),
// a stand-in for a pretrained masked language model.

#include <unordered_map>

#include "tcsm/oracle.hpp"

namespace tcsm {

class MaskedTargetModel {
 public:
  MaskedTargetModel() = default;
  MaskedTargetModel(Vocabulary vocab, int length, double smoothing = 0.1)
      : vocab_(std::move(vocab)), length_(length), smoothing_(smoothing) {
    if (length_ < 1) throw ConfigError("masked target length must be >= 1");
    if (!(smoothing_ > 0.0)) throw ConfigError("masked target smoothing must be > 0");
    state_count(vocab_.size(), length_);
  }

  const Vocabulary& vocab() const { return vocab_; }
  int length() const { return length_; }
  double smoothing() const { return smoothing_; }
  std::size_t context_count() const { return counts_.size(); }

  // Fractional weights are allowed, e.g. probabilities from an exact joint.
  void observe(const Sequence& x, double weight = 1.0) {
    if (!(weight >= 0.0)) throw DomainError("observation weight must be >= 0");
    if (x.length() != length_) throw DomainError("corpus sequence has the wrong length");
    validate(x, vocab_);
    const int V = vocab_.size();
    for (int i = 0; i < length_; ++i) {
      auto& row = counts_[key(i, x)];
      if (row.empty()) row.assign(static_cast<std::size_t>(V), 0.0);
      row[static_cast<std::size_t>(x[static_cast<std::size_t>(i)])] += weight;
    }
  }

  void fit(std::span<const Sequence> corpus) {
    for (const auto& x : corpus) observe(x);
  }

  // Smoothed conditional over clean tokens; x^i itself is ignored.
  Categorical conditional(int i, const Sequence& x) const {
    const int V = vocab_.size();
    std::vector<double> p(static_cast<std::size_t>(V), 0.0);
    const auto it = counts_.find(key(i, x));
    for (int v = 0; v < V; ++v) {
      if (vocab_.is_mask(v)) continue;
      p[static_cast<std::size_t>(v)] = smoothing_ + (it == counts_.end() ? 0.0 : it->second[static_cast<std::size_t>(v)]);
    }
    return Categorical::normalized(std::move(p));
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["V"] = vocab_.size();
    j["mask_id"] = vocab_.has_mask() ? nlohmann::json(*vocab_.mask_id()) : nlohmann::json(nullptr);
    j["L"] = length_;
    j["smoothing"] = format_double(smoothing_);
    // Sorted for stable output.
    std::vector<std::uint64_t> keys;
    keys.reserve(counts_.size());
    for (const auto& kv : counts_) keys.push_back(kv.first);
    std::sort(keys.begin(), keys.end());
    auto rows = nlohmann::json::array();
    for (auto k : keys) rows.push_back({std::to_string(k), doubles_to_json(counts_.at(k))});
    j["counts"] = std::move(rows);
    return j;
  }

  static MaskedTargetModel from_json(const nlohmann::json& j) {
    std::optional<int> mask;
    if (!j.at("mask_id").is_null()) mask = j.at("mask_id").get<int>();
    MaskedTargetModel m(Vocabulary(j.at("V").get<int>(), mask), j.at("L").get<int>(), parse_double(j.at("smoothing")));
    for (const auto& row : j.at("counts")) {
      auto values = doubles_from_json(row.at(1));
      if (values.size() != static_cast<std::size_t>(m.vocab_.size())) throw FormatError("masked target row has the wrong width");
      m.counts_[std::stoull(row.at(0).get<std::string>())] = std::move(values);
    }
    return m;
  }

 private:
  std::uint64_t key(int i, const Sequence& x) const {
    const std::uint64_t code = encode(x.with(i, 0), vocab_.size());
    return code * static_cast<std::uint64_t>(length_) + static_cast<std::uint64_t>(i);
  }

  Vocabulary vocab_;
  int length_ = 1;
  double smoothing_ = 0.1;
  std::unordered_map<std::uint64_t, std::vector<double>> counts_;
};

}  // namespace tcsm
