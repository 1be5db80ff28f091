#pragma once

// Anything that predicts clean sequences from noisy ones: trained denoisers,
// the exact oracle, frozen references.

#include <memory>

#include "tcsm/oracle.hpp"

namespace tcsm {

class PosteriorModel {
 public:
  virtual ~PosteriorModel() = default;

  virtual const Vocabulary& vocab() const = 0;
  virtual int length() const = 0;

  // Per-position distributions q_i(. | x_t) of the factorized model.
  virtual std::vector<Categorical> marginals(const Sequence& xt, double t) const = 0;

  // q(x1^i = . | x1^{≠i}, x_t). A factorized model ignores x1.
  virtual Categorical conditional(int i, const Sequence& x1, const Sequence& xt, double t) const {
    (void)x1;
    return marginals(xt, t)[static_cast<std::size_t>(i)];
  }

  // log q(x1 | x_t); -inf outside the support.
  virtual double log_prob(const Sequence& x1, const Sequence& xt, double t) const {
    const auto m = marginals(xt, t);
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) s += safe_log(m[i][static_cast<std::size_t>(x1[i])]);
    return s;
  }

  virtual Sequence sample(const Sequence& xt, double t, Rng& rng) const {
    const auto m = marginals(xt, t);
    std::vector<int> out;
    out.reserve(m.size());
    for (const auto& c : m) out.push_back(c.sample(rng));
    return Sequence(std::move(out));
  }
};

// Exact posterior of a tabular joint. marginals() is the factorized
// projection; conditional(), log_prob() and sample() use the full joint
// posterior.
class OraclePosterior : public PosteriorModel {
 public:
  OraclePosterior(std::shared_ptr<const TabularJoint> joint, PathSpec path)
      : joint_(std::move(joint)), path_(std::move(path)) {
    if (path_.vocab.size() != joint_->V()) throw ConfigError("oracle path vocabulary does not match the joint");
  }

  const Vocabulary& vocab() const override { return joint_->vocab(); }
  int length() const override { return joint_->length(); }
  const TabularJoint& joint() const { return *joint_; }
  const PathSpec& path() const { return path_; }

  std::vector<Categorical> marginals(const Sequence& xt, double t) const override {
    return posterior_marginals(*joint_, path_, t, xt);
  }

  Categorical conditional(int i, const Sequence& x1, const Sequence& xt, double t) const override {
    return conditional_given_rest(*joint_, path_, t, i, x1, xt);
  }

  double log_prob(const Sequence& x1, const Sequence& xt, double t) const override {
    const double lj = safe_log(joint_->prob(x1));
    if (lj == kNegInf) return kNegInf;
    const double lk = log_kernel(path_, t, x1, xt);
    if (lk == kNegInf) return kNegInf;
    return lj + lk - sparse_posterior(*joint_, path_, t, xt).log_evidence;
  }

  Sequence sample(const Sequence& xt, double t, Rng& rng) const override {
    const auto post = sparse_posterior(*joint_, path_, t, xt);
    return joint_->sequence(post.codes[sample_index(post.probs, rng)]);
  }

 private:
  std::shared_ptr<const TabularJoint> joint_;
  PathSpec path_;
};

}  // namespace tcsm
