#pragma once

// Training losses for factorized denoisers. Each loss works per position on
// the model's logits; batch losses average over examples and accumulate the
// parameter gradient.

#include <string>

#include "tcsm/divergences.hpp"
#include "tcsm/models/denoiser.hpp"
#include "tcsm/parallel.hpp"

namespace tcsm {

struct TrainExample {
  double t = 0.5;
  Sequence x1;
  Sequence xt;
  double weight = 1.0;
};

// Supplies p_{1|t}(x1^i = . | x1^{≠i}, x_t).
class ConditionalTarget {
 public:
  virtual ~ConditionalTarget() = default;
  virtual Categorical conditional(int i, const Sequence& x1, const Sequence& xt, double t) const = 0;
};

// Conditionals read off a posterior model (the oracle gives exact ones).
class ModelTarget : public ConditionalTarget {
 public:
  explicit ModelTarget(const PosteriorModel& m) : m_(&m) {}
  Categorical conditional(int i, const Sequence& x1, const Sequence& xt, double t) const override {
    return m_->conditional(i, x1, xt, t);
  }

 private:
  const PosteriorModel* m_;
};

enum class LossFamily { ScoreN1, DistribN1, McPseudoEntropy, CrossEntropy, CfmJointCe };
enum class Proposal { TruePosterior, ModelPosterior, ReferenceModel };

inline std::string_view to_string(LossFamily f) {
  switch (f) {
    case LossFamily::ScoreN1: return "score_n1";
    case LossFamily::DistribN1: return "distrib_n1";
    case LossFamily::McPseudoEntropy: return "mc_pseudo_entropy";
    case LossFamily::CrossEntropy: return "cross_entropy";
    case LossFamily::CfmJointCe: return "cfm_joint_ce";
  }
  return "?";
}

inline LossFamily loss_family_from_string(std::string_view s) {
  for (auto f : {LossFamily::ScoreN1, LossFamily::DistribN1, LossFamily::McPseudoEntropy, LossFamily::CrossEntropy,
                 LossFamily::CfmJointCe})
    if (s == to_string(f)) return f;
  throw ConfigError("unknown loss family \"" + std::string(s) + "\"");
}

inline std::string_view to_string(Proposal p) {
  switch (p) {
    case Proposal::TruePosterior: return "true_posterior";
    case Proposal::ModelPosterior: return "model_posterior";
    case Proposal::ReferenceModel: return "reference_model";
  }
  return "?";
}

inline Proposal proposal_from_string(std::string_view s) {
  for (auto p : {Proposal::TruePosterior, Proposal::ModelPosterior, Proposal::ReferenceModel})
    if (s == to_string(p)) return p;
  throw ConfigError("unknown proposal \"" + std::string(s) + "\"");
}

struct LossSpec {
  LossFamily family = LossFamily::CrossEntropy;
  Bregman bregman = Bregman::GKL;           // score_n1
  StatDivergence stat = StatDivergence::KL;  // distrib_n1
  Proposal proposal = Proposal::TruePosterior;
  NeighborhoodSpec neighborhood{1};

  void validate() const {
    if (family == LossFamily::ScoreN1 && neighborhood.k != 1)
      throw ConfigError("score_n1 requires loss.neighborhood_k = 1");
  }
  bool needs_target() const { return family == LossFamily::ScoreN1 || family == LossFamily::DistribN1; }
};

struct LossOutput {
  double value = 0.0;
  long clamped = 0;  // probabilities floored at 1e-12
};

// ---------------------------------------------------------------------------
// Per-position losses. `lg`, `lp`, `q` are one position's logits, log-probs
// and probs; `active` marks tokens the model can emit. Each adds
// d(loss)/d(logits) into `d` and returns the loss.

struct PositionView {
  std::span<const double> lp;
  std::span<const double> q;
  const Denoiser* model;
  int V() const { return static_cast<int>(q.size()); }
  bool active(int v) const { return model->emits(v); }
};

// sum_{y != x} D_F(w_y, v_y) with v_y = q(y)/q(x).
inline double score_position(Bregman g, const PositionView& pv, int x, std::span<const double> target,
                             std::span<double> d) {
  const double px = target[static_cast<std::size_t>(x)];
  if (!(px > 0.0) || !std::isfinite(px)) throw TargetError("target gives zero mass to the observed token");
  double loss = 0.0;
  for (int y = 0; y < pv.V(); ++y) {
    if (y == x || !pv.active(y)) continue;
    const double w = target[static_cast<std::size_t>(y)] / px;
    if (!std::isfinite(w)) throw TargetError("non-finite target ratio");
    const double v = std::exp(pv.lp[static_cast<std::size_t>(y)] - pv.lp[static_cast<std::size_t>(x)]);
    loss += bregman_term(g, w, v);
    const double gv = bregman_term_dv(g, w, v) * v;
    d[static_cast<std::size_t>(y)] += gv;
    d[static_cast<std::size_t>(x)] -= gv;
  }
  return loss;
}

inline double distrib_position(StatDivergence kind, const PositionView& pv, std::span<const double> p,
                               std::span<double> d) {
  const double loss = stat_divergence(kind, p, pv.q);
  const int V = pv.V();
  if (kind == StatDivergence::IS) {
    std::vector<double> g(static_cast<std::size_t>(V), 0.0);
    double qg = 0.0;
    for (int k = 0; k < V; ++k) {
      const double qk = pv.q[static_cast<std::size_t>(k)], pk = p[static_cast<std::size_t>(k)];
      if (qk > 0.0) g[static_cast<std::size_t>(k)] = -pk / (qk * qk) + 1.0 / qk;
      qg += qk * g[static_cast<std::size_t>(k)];
    }
    for (int k = 0; k < V; ++k)
      if (pv.active(k)) d[static_cast<std::size_t>(k)] += pv.q[static_cast<std::size_t>(k)] * (g[static_cast<std::size_t>(k)] - qg);
  } else {
    // KL and the unnormalized KL share q - p (up to the target's mass).
    double mass = 0.0;
    for (double pk : p) mass += pk;
    for (int k = 0; k < V; ++k)
      if (pv.active(k)) d[static_cast<std::size_t>(k)] += pv.q[static_cast<std::size_t>(k)] * mass - p[static_cast<std::size_t>(k)];
  }
  return loss;
}

// -log q(x) + 1/(V_A q(x)) + (1/V_A) sum_{y active} log q(y), with V_A the
// number of tokens the model can emit.
inline double mc_position(const PositionView& pv, int x, std::span<double> d, long& clamped) {
  const int V = pv.V();
  int VA = 0;
  for (int y = 0; y < V; ++y) VA += pv.active(y) ? 1 : 0;
  const double inv = 1.0 / VA;
  const double floor = std::log(kProbFloor);
  double sx = pv.lp[static_cast<std::size_t>(x)];
  const bool clamp = sx < floor;
  if (clamp) {
    sx = floor;
    ++clamped;
  }
  double ent = 0.0;
  for (int y = 0; y < V; ++y)
    if (pv.active(y)) ent += pv.lp[static_cast<std::size_t>(y)];
  const double recip = std::exp(-sx) * inv;
  const double loss = -sx + recip + inv * ent;
  for (int y = 0; y < V; ++y) {
    if (!pv.active(y)) continue;
    const double qy = pv.q[static_cast<std::size_t>(y)];
    const double ex = y == x ? 1.0 : 0.0;
    double g = inv - qy;  // entropy term
    if (!clamp) g += (qy - ex) - recip * (ex - qy);
    d[static_cast<std::size_t>(y)] += g;
  }
  return loss;
}

inline double ce_position(const PositionView& pv, int x, std::span<double> d, long& clamped) {
  double lx = pv.lp[static_cast<std::size_t>(x)];
  const double floor = std::log(kProbFloor);
  if (lx < floor) {
    ++clamped;
    return -floor;
  }
  for (int y = 0; y < pv.V(); ++y)
    if (pv.active(y)) d[static_cast<std::size_t>(y)] += pv.q[static_cast<std::size_t>(y)] - (y == x ? 1.0 : 0.0);
  return -lx;
}

// Loss of one example summed over positions that are not pinned by
// carry-over. `dlogits` (size L*V) receives the unweighted gradient.
inline LossOutput example_loss(const Denoiser& model, const Denoiser::Output& fw, const ConditionalTarget* target,
                               const TrainExample& ex, const LossSpec& spec, std::span<double> dlogits) {
  const int V = fw.V;
  LossOutput out;
  if (spec.needs_target() && target == nullptr) throw UsageError("this loss family needs a conditional target");
  for (int i = 0; i < fw.L; ++i) {
    if (fw.fixed[static_cast<std::size_t>(i)]) continue;
    const std::size_t off = static_cast<std::size_t>(i * V);
    PositionView pv{std::span<const double>(fw.logp).subspan(off, static_cast<std::size_t>(V)),
                    std::span<const double>(fw.probs).subspan(off, static_cast<std::size_t>(V)), &model};
    auto d = dlogits.subspan(off, static_cast<std::size_t>(V));
    const int x = ex.x1[static_cast<std::size_t>(i)];
    switch (spec.family) {
      case LossFamily::ScoreN1: {
        const auto c = target->conditional(i, ex.x1, ex.xt, ex.t);
        out.value += score_position(spec.bregman, pv, x, c.span(), d);
        break;
      }
      case LossFamily::DistribN1: {
        const auto c = target->conditional(i, ex.x1, ex.xt, ex.t);
        out.value += distrib_position(spec.stat, pv, c.span(), d);
        break;
      }
      case LossFamily::McPseudoEntropy:
        out.value += mc_position(pv, x, d, out.clamped);
        break;
      case LossFamily::CrossEntropy:
      case LossFamily::CfmJointCe:
        // For a factorized model -log p(x1 | x_t) is the sum of the
        // per-position terms, so both families share the arithmetic.
        out.value += ce_position(pv, x, d, out.clamped);
        break;
    }
  }
  return out;
}

// Weighted mean over the batch. Forward passes and targets are evaluated in
// parallel; gradients are reduced in example order.
inline LossOutput batch_loss(const Denoiser& model, const ConditionalTarget* target,
                             std::span<const TrainExample> batch, const LossSpec& spec, Gradient* grad,
                             int workers = 1) {
  spec.validate();
  const std::size_t B = batch.size();
  if (B == 0) throw UsageError("empty batch");
  const std::size_t LV = static_cast<std::size_t>(model.length() * model.vocab().size());
  std::vector<Denoiser::Output> fws(B);
  std::vector<std::vector<double>> dl(B);
  std::vector<LossOutput> parts(B);
  parallel_for(B, workers, [&](std::size_t b) {
    fws[b] = model.forward(batch[b].xt, batch[b].t, grad != nullptr);
    dl[b].assign(LV, 0.0);
    parts[b] = example_loss(model, fws[b], target, batch[b], spec, dl[b]);
  });
  double wsum = 0.0;
  for (const auto& ex : batch) wsum += ex.weight;
  if (!(wsum > 0.0)) throw UsageError("batch weights sum to zero");
  LossOutput total;
  for (std::size_t b = 0; b < B; ++b) {
    const double c = batch[b].weight / wsum;
    total.value += c * parts[b].value;
    total.clamped += parts[b].clamped;
    if (grad) {
      for (auto& v : dl[b]) v *= c;
      model.backward(fws[b], dl[b], *grad);
    }
  }
  if (!std::isfinite(total.value)) throw NumericalAbort("loss is not finite");
  return total;
}

// E_{x1 ~ p_{1|t}(.|x_t)} of the per-example loss, by enumerating the exact
// posterior of `joint`.
inline LossOutput expected_loss(const Denoiser& model, const ConditionalTarget* target, const TabularJoint& joint,
                                const PathSpec& path, double t, const Sequence& xt, const LossSpec& spec,
                                Gradient* grad) {
  const auto post = sparse_posterior(joint, path, t, xt);
  std::vector<TrainExample> batch;
  batch.reserve(post.codes.size());
  for (std::size_t k = 0; k < post.codes.size(); ++k)
    batch.push_back(TrainExample{t, joint.sequence(post.codes[k]), xt, post.probs[k]});
  return batch_loss(model, target, batch, spec, grad);
}

// Right-hand side of the score/divergence identity for the GKL score loss:
// E_{x1} sum_i [ n KL(p_i || q_i) + sum_{y in supp p_i} (p/q - log(p/q) - 1) ]
// with p_i the exact conditionals and n = |supp p_i|.
inline double gkl_score_identity_rhs(const Denoiser& model, const TabularJoint& joint, const PathSpec& path, double t,
                                     const Sequence& xt) {
  const auto post = sparse_posterior(joint, path, t, xt);
  const auto fw = model.forward(xt, t, false);
  double total = 0.0;
  for (std::size_t k = 0; k < post.codes.size(); ++k) {
    const Sequence x1 = joint.sequence(post.codes[k]);
    double s = 0.0;
    for (int i = 0; i < fw.L; ++i) {
      if (fw.fixed[static_cast<std::size_t>(i)]) continue;
      const auto p = conditional_given_rest(joint, path, t, i, x1, xt);
      const auto q = fw.categorical(i);
      int n = 0;
      double is = 0.0;
      for (int y = 0; y < p.size(); ++y) {
        const double py = p[static_cast<std::size_t>(y)];
        if (py <= 0.0) continue;
        ++n;
        const double r = py / q[static_cast<std::size_t>(y)];
        is += r - std::log(r) - 1.0;
      }
      s += n * kl_divergence(p, q) + is;
    }
    total += post.probs[k] * s;
  }
  return total;
}

}  // namespace tcsm
