#pragma once

// Reward-guided fine-tuning toward p^R ∝ p^pre exp(R / beta).

#include <cfloat>
#include <map>

#include "tcsm/posttrain/common.hpp"

namespace tcsm {

struct RewardFn {
  std::string name;
  std::function<double(const Sequence&)> R;
  double beta = 1.0;

  void validate() const {
    if (!R) throw ConfigError("reward function is not set");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("task.beta must be a positive finite number");
  }

  double scaled(const Sequence& x) const {
    const double r = R(x);
    if (!std::isfinite(r)) throw DomainError("reward is not finite at " + x.str());
    return r / beta;
  }
};

inline constexpr double kGridPenalty = -1e5;

// 0 on the left half of a side x side grid (x[0] < side/2), -1e5 on the right.
inline RewardFn grid_left_half(int side, double beta = 1.0) {
  return {"grid_left_half", [side](const Sequence& x) { return x[0] < side / 2 ? 0.0 : kGridPenalty; }, beta};
}

// Table of {tokens, reward} entries; sequences not listed get `fallback`.
inline RewardFn reward_from_table(const nlohmann::json& rows, double beta = 1.0, double fallback = 0.0) {
  if (!rows.is_array()) throw FormatError("reward table must be a JSON array of {tokens, reward}");
  auto table = std::make_shared<std::map<Sequence, double>>();
  for (const auto& r : rows) {
    if (!r.is_object() || !r.contains("tokens") || !r.contains("reward"))
      throw FormatError("reward table entries need \"tokens\" and \"reward\"");
    const double v = r.at("reward").get<double>();
    if (!std::isfinite(v)) throw FormatError("reward table values must be finite");
    (*table)[Sequence(r.at("tokens").get<std::vector<int>>())] = v;
  }
  return {"table", [table, fallback](const Sequence& x) {
            const auto it = table->find(x);
            return it == table->end() ? fallback : it->second;
          },
          beta};
}

// A built-in name or the path of a JSON table.
inline RewardFn load_reward(const std::string& spec, const Vocabulary& vocab, double beta) {
  if (spec == "grid_left_half") return grid_left_half(vocab.clean_count(), beta);
  std::ifstream in(spec);
  if (!in) throw ConfigError("task.reward: \"" + spec + "\" is neither a built-in reward nor a readable file");
  try {
    return reward_from_table(nlohmann::json::parse(in), beta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("reward table " + spec + ": " + e.what());
  }
}

// p^R(. | x1^{≠i}, x_t) ∝ p^pre(. | x1^{≠i}, x_t) exp(R(., x1^{≠i}) / beta),
// computed in log space.
inline Categorical reward_target_n1(const PosteriorModel& pre, const RewardFn& reward, int i, const Sequence& x1,
                                    const Sequence& xt, double t) {
  const auto base = pre.conditional(i, x1, xt, t);
  std::vector<double> lw(base.probs().size(), kNegInf);
  for (int y = 0; y < base.size(); ++y) {
    const double p = base[static_cast<std::size_t>(y)];
    if (p > 0.0) lw[static_cast<std::size_t>(y)] = std::log(p) + reward.scaled(x1.with(i, y));
  }
  return Categorical::from_logits(std::move(lw));
}

class RewardTarget : public ConditionalTarget {
 public:
  RewardTarget(const PosteriorModel& pre, const RewardFn& r) : pre_(&pre), r_(&r) {}
  Categorical conditional(int i, const Sequence& x1, const Sequence& xt, double t) const override {
    return reward_target_n1(*pre_, *r_, i, x1, xt, t);
  }

 private:
  const PosteriorModel* pre_;
  const RewardFn* r_;
};

// N^1 fine-tuning: proposal x1 ~ p^pre(. | x_t), KL distribution loss against
// the tilted conditionals.
inline std::vector<StepStats> reward_finetune_n1(Denoiser& model, const PosteriorModel& pre, const RewardFn& reward,
                                                 const ExampleSource& src, const OptimizerConfig& ocfg,
                                                 const TrainOptions& o, Rng& rng,
                                                 const RunWriter& writer = RunWriter(), const TrainHooks& hooks = {}) {
  reward.validate();
  RewardTarget target(pre, reward);
  ExampleSource s = src;
  s.proposal = Proposal::ReferenceModel;
  s.proposal_model = &pre;
  LossSpec spec;
  spec.family = LossFamily::DistribN1;
  spec.stat = StatDivergence::KL;
  return pretrain_from_data(model, s, spec, ocfg, o, rng, &target, writer, hooks);
}

// Self-normalized weights exp(R_b / beta) / Z. Returns an empty vector when
// the literal sum Z underflows to zero; otherwise evaluates the same ratio
// with a max shift.
inline std::vector<double> importance_weights(std::span<const double> scaled_rewards) {
  if (scaled_rewards.empty()) throw UsageError("importance weights of an empty batch");
  const double m = *std::max_element(scaled_rewards.begin(), scaled_rewards.end());
  if (m < std::log(DBL_MIN)) return {};
  std::vector<double> w(scaled_rewards.size());
  double z = 0.0;
  for (std::size_t b = 0; b < w.size(); ++b) z += (w[b] = std::exp(scaled_rewards[b] - m));
  for (auto& v : w) v /= z;
  return w;
}

inline constexpr int kMaxResample = 64;

// N^full fine-tuning. Per x_t: draw B proposals from p^pre(. | x_t), weight
// them by the self-normalized rewards and minimize -sum_b w_b log q(x1_b|x_t).
// The log p^R term of the printed objective does not depend on the model and
// is left out of the reported loss.
inline std::vector<StepStats> reward_finetune_full(Denoiser& model, const PosteriorModel& pre, const RewardFn& reward,
                                                   int B, const ExampleSource& src, const OptimizerConfig& ocfg,
                                                   const TrainOptions& o, Rng& rng,
                                                   const RunWriter& writer = RunWriter(), const TrainHooks& hooks = {}) {
  reward.validate();
  if (B < 2) throw ConfigError("task.samples (B) must be >= 2");
  ExampleSource s = src;
  s.proposal = Proposal::TruePosterior;
  OptimizerConfig oc = ocfg;
  oc.total_steps = o.steps;
  Optimizer opt(oc, model.param_count());
  return run_loop(model, opt, o, [&](long step, Gradient& g) {
    const auto base = s.batch(o.batch, rng);
    const double inv = 1.0 / static_cast<double>(base.size());
    LossOutput total;
    for (auto ex : base) {
      std::vector<Sequence> xs;
      std::vector<double> w;
      for (int attempt = 0; w.empty(); ++attempt) {
        if (attempt == kMaxResample)
          throw NumericalAbort("all importance weights underflowed after " + std::to_string(kMaxResample) +
                               " redraws at step " + std::to_string(step));
        // An x_t with no reward mass has zero probability under the tilted
        // path, so the whole example is redrawn, not only the proposals.
        if (attempt > 0) ex = s.batch(1, rng).front();
        xs.clear();
        std::vector<double> r;
        for (int b = 0; b < B; ++b) {
          xs.push_back(pre.sample(ex.xt, ex.t, rng));
          r.push_back(reward.scaled(xs.back()));
        }
        w = importance_weights(r);
      }
      const auto out = model.forward(ex.xt, ex.t);
      std::vector<double> d(out.logits.size(), 0.0);
      for (int b = 0; b < B; ++b) {
        const double wb = w[static_cast<std::size_t>(b)];
        if (wb == 0.0) continue;
        total.value -= inv * wb * model_log_prob(out, xs[static_cast<std::size_t>(b)]);
        add_log_prob_grad(out, xs[static_cast<std::size_t>(b)], -inv * wb, d);
      }
      model.backward(out, d, g);
    }
    return total;
  }, writer, hooks);
}

// p1^R ∝ p1 exp(R / beta) on an enumerable joint.
inline TabularJoint tilt_joint(const TabularJoint& joint, const RewardFn& reward) {
  std::vector<double> lw(joint.size(), kNegInf);
  for (std::uint64_t c = 0; c < joint.size(); ++c)
    if (joint[c] > 0.0) lw[c] = std::log(joint[c]) + reward.scaled(joint.sequence(c));
  const double m = *std::max_element(lw.begin(), lw.end());
  for (auto& v : lw) v = v == kNegInf ? 0.0 : std::exp(v - m);
  return TabularJoint::from_weights(joint.vocab(), joint.length(), std::move(lw));
}

}  // namespace tcsm
