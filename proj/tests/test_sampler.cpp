#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "tcsm/data_eval.hpp"
#include "tcsm/sampler.hpp"

using namespace tcsm;

namespace {

// Puts all mass on the current noisy token.
class StayModel : public PosteriorModel {
 public:
  explicit StayModel(Vocabulary v, int L) : v_(std::move(v)), L_(L) {}
  const Vocabulary& vocab() const override { return v_; }
  int length() const override { return L_; }
  std::vector<Categorical> marginals(const Sequence& xt, double) const override {
    std::vector<Categorical> m;
    for (int tok : xt) m.push_back(Categorical::one_hot(v_.size(), tok));
    return m;
  }

 private:
  Vocabulary v_;
  int L_;
};

std::shared_ptr<TabularJoint> shared(TabularJoint j) { return std::make_shared<TabularJoint>(std::move(j)); }

}  // namespace

TEST(ModelVelocity, StayModelHasZeroRates) {
  const Vocabulary v(4);
  const PathSpec path(Source::Uniform, NoiseSchedule::linear(), v);
  StayModel m(v, 3);
  const auto r = model_velocity(m, path, 0.3, Sequence{1, 2, 3});
  for (double x : r.rates) EXPECT_EQ(x, 0.0);
}

TEST(ModelVelocity, OracleMatchesExactVelocity) {
  Rng rng(3);
  for (auto src : {Source::Uniform, Source::Mask}) {
    const Vocabulary v = src == Source::Mask ? Vocabulary::with_mask(3) : Vocabulary(4);
    auto joint = shared(TabularJoint::random(v, 2, rng));
    const PathSpec path(src, NoiseSchedule::linear(), v);
    OraclePosterior oracle(joint, path);
    for (double t : {0.1, 0.5, 0.9}) {
      const Sequence xt = sample_xt(path, t, joint->sample(rng), rng);
      const auto a = model_velocity(oracle, path, t, xt);
      const auto b = exact_velocity(*joint, path, t, xt);
      for (std::size_t k = 0; k < a.rates.size(); ++k) EXPECT_NEAR(a.rates[k], b.rates[k], 1e-10);
      // Rows sum to zero including the diagonal.
      EXPECT_LT(rate_condition_violation(a, xt), 1e-12);
    }
  }
}

TEST(EulerSample, DeterministicTargetRecovered) {
  const auto v = Vocabulary::with_mask(3);
  const Sequence target{2, 0, 1};
  auto joint = shared(TabularJoint::point_mass(v, target));
  const PathSpec path(Source::Mask, NoiseSchedule::linear(), v);
  OraclePosterior oracle(joint, path);
  EulerConfig cfg;
  cfg.steps = 256;
  cfg.seed = 100;
  const auto xs = euler_sample_many(oracle, path, cfg, 10000);
  std::size_t hits = 0;
  for (const auto& x : xs) hits += x == target ? 1 : 0;
  EXPECT_GT(static_cast<double>(hits) / 1e4, 0.99);
}

TEST(EulerSample, UniformTarget) {
  const Vocabulary v(3);
  auto joint = shared(TabularJoint::uniform_over_clean(v, 2));
  const PathSpec path(Source::Uniform, NoiseSchedule::linear(), v);
  OraclePosterior oracle(joint, path);
  EulerConfig cfg;
  cfg.steps = 128;
  cfg.seed = 7;
  const auto xs = euler_sample_many(oracle, path, cfg, 100000);
  EXPECT_LT(tv_distance(empirical_counts(xs, 3, 2), joint->probs()), 0.02);
}

TEST(EulerSample, FidelityOnRandomJoint) {
  Rng rng(8);
  const Vocabulary v(4);
  auto joint = shared(TabularJoint::random(v, 2, rng));
  const PathSpec path(Source::Uniform, NoiseSchedule::linear(), v);
  OraclePosterior oracle(joint, path);
  EulerConfig cfg;
  cfg.steps = 512;
  cfg.seed = 1;
  const auto xs = euler_sample_many(oracle, path, cfg, 100000);
  EXPECT_LT(tv_distance(empirical_counts(xs, 4, 2), joint->probs()), 0.03);
}

TEST(EulerSample, SeedDeterminismAndWorkerIndependence) {
  Rng rng(9);
  const auto v = Vocabulary::with_mask(3);
  auto joint = shared(TabularJoint::random(v, 3, rng));
  const PathSpec path(Source::Mask, NoiseSchedule::linear(), v);
  OraclePosterior oracle(joint, path);
  EulerConfig cfg;
  cfg.steps = 64;
  cfg.seed = 42;
  EXPECT_EQ(euler_sample(oracle, path, cfg), euler_sample(oracle, path, cfg));
  const auto a = euler_sample_many(oracle, path, cfg, 300, 1, 64);
  const auto b = euler_sample_many(oracle, path, cfg, 300, 3, 64);
  EXPECT_EQ(a, b);
}

TEST(EulerSample, MaskPathNeverOverwritesRevealedTokens) {
  Rng rng(10);
  const auto v = Vocabulary::with_mask(3);
  auto joint = shared(TabularJoint::random(v, 3, rng));
  const PathSpec path(Source::Mask, NoiseSchedule::linear(), v);
  OraclePosterior oracle(joint, path);
  detail::VelocityCache cache(oracle, path);
  for (int chain = 0; chain < 200; ++chain) {
    Sequence x(3, 3);
    const int steps = 32;
    const double dt = (1.0 - 2 * kTimeEps) / steps;
    for (int k = 0; k < steps; ++k) {
      const Sequence before = x;
      detail::euler_step(x, kTimeEps + k * dt, dt, cache, rng, 8);
      for (std::size_t i = 0; i < 3; ++i)
        if (before[i] != 3) {
          EXPECT_EQ(x[i], before[i]);
        }
    }
  }
}

TEST(AncestralSample, DeterministicTargetUniformTargetAndSeed) {
  const auto v = Vocabulary::with_mask(3);
  const PathSpec path(Source::Mask, NoiseSchedule::linear(), v);
  EulerConfig cfg;
  cfg.steps = 256;
  cfg.seed = 5;
  {
    const Sequence target{1, 1, 2};
    OraclePosterior oracle(shared(TabularJoint::point_mass(v, target)), path);
    const auto xs = ancestral_sample_many(oracle, path, cfg, 10000);
    std::size_t hits = 0;
    for (const auto& x : xs) hits += x == target ? 1 : 0;
    EXPECT_GT(static_cast<double>(hits) / 1e4, 0.99);
  }
  {
    auto joint = shared(TabularJoint::uniform_over_clean(v, 2));
    OraclePosterior oracle(joint, path);
    const auto xs = ancestral_sample_many(oracle, path, cfg, 100000);
    EXPECT_LT(tv_distance(empirical_counts(xs, 4, 2), joint->probs()), 0.02);
    EXPECT_EQ(ancestral_mask_sample(oracle, path, cfg), ancestral_mask_sample(oracle, path, cfg));
  }
  OraclePosterior u(shared(TabularJoint::uniform_over_clean(Vocabulary(3), 2)),
                    PathSpec(Source::Uniform, NoiseSchedule::linear(), Vocabulary(3)));
  EXPECT_THROW(ancestral_mask_sample(u, u.path(), cfg), ConfigError);
}

TEST(Samples, FileRoundTrip) {
  const std::vector<Sequence> xs{{1, 2, 3}, {0, 0, 7}};
  const auto p = (std::filesystem::temp_directory_path() / "tcsm_samples.txt").string();
  write_samples(xs, p);
  EXPECT_EQ(read_samples(p), xs);
  std::remove(p.c_str());
}

TEST(EulerConfig, Validation) {
  EulerConfig c;
  c.steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
