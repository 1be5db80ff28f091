#include <gtest/gtest.h>

#include "tcsm/models/optimizer.hpp"
#include "tcsm/objectives.hpp"

using namespace tcsm;

namespace {

// Independent brute-force posterior: p(x1) * prod_i K(x1^i -> xt^i),
// normalized, with the kernel written out from its definition.
std::vector<double> brute_posterior(const TabularJoint& joint, Source src, double alpha, const Sequence& xt) {
  const int V = joint.V(), L = joint.length();
  std::vector<double> w(joint.size());
  double z = 0.0;
  for (std::uint64_t c = 0; c < joint.size(); ++c) {
    const Sequence x1 = decode(c, V, L);
    double p = joint[c];
    for (int i = 0; i < L; ++i) {
      const int a = x1[static_cast<std::size_t>(i)], b = xt[static_cast<std::size_t>(i)];
      const double source = src == Source::Uniform ? 1.0 / V : (b == V - 1 ? 1.0 : 0.0);
      p *= alpha * (a == b ? 1.0 : 0.0) + (1.0 - alpha) * source;
    }
    w[c] = p;
    z += p;
  }
  for (auto& x : w) x /= z;
  return w;
}

std::vector<double> brute_conditional(const std::vector<double>& post, int V, int i, const Sequence& x1) {
  std::vector<double> c(static_cast<std::size_t>(V));
  double z = 0.0;
  for (int y = 0; y < V; ++y) {
    c[static_cast<std::size_t>(y)] = post[encode(x1.with(i, y), V)];
    z += c[static_cast<std::size_t>(y)];
  }
  for (auto& x : c) x /= z;
  return c;
}

DenoiserConfig tab(const Vocabulary& v, int L, Source src, int bins = 1) {
  DenoiserConfig c;
  c.vocab = v;
  c.length = L;
  c.source = src;
  c.time_bins = bins;
  return c;
}

DenoiserConfig mlp(const Vocabulary& v, int L, Source src) {
  DenoiserConfig c;
  c.kind = "mlp";
  c.vocab = v;
  c.length = L;
  c.source = src;
  c.hidden = {12, 12};
  c.time_frequencies = 2;
  c.carry_over = false;
  return c;
}

void randomize(Denoiser& m, Rng& rng, double scale) {
  for (auto& p : m.params()) p = scale * standard_normal(rng);
}

// Single-position model with the given logits (V = logits.size(), L = 1).
Denoiser single(std::vector<double> logits) {
  Denoiser m(tab(Vocabulary(static_cast<int>(logits.size())), 1, Source::Uniform));
  std::copy(logits.begin(), logits.end(), m.params().begin());
  return m;
}

LossSpec spec_of(LossFamily f) {
  LossSpec s;
  s.family = f;
  return s;
}

// Mean KL(oracle marginals || model) over the noisy states reachable at t.
double posterior_gap(const Denoiser& m, const TabularJoint& joint, const PathSpec& path, double t) {
  const auto pt = marginal_pt(joint, path, t);
  double kl = 0.0;
  for (std::uint64_t c = 0; c < pt.size(); ++c) {
    if (pt[c] <= 0.0) continue;
    const Sequence xt = decode(c, joint.V(), joint.length());
    const auto truth = posterior_marginals(joint, path, t, xt);
    const auto q = m.marginals(xt, t);
    for (std::size_t i = 0; i < q.size(); ++i) kl += pt[c] * kl_divergence(truth[i], q[i]);
  }
  return kl;
}

// Full-batch descent on sum_{x_t} p_t(x_t) E_post[loss]; exact gradients.
void fit_exact(Denoiser& m, const ConditionalTarget* target, const TabularJoint& joint, const PathSpec& path, double t,
               const LossSpec& spec, int steps, double lr) {
  OptimizerConfig oc;
  oc.lr = lr;
  oc.warmup_fraction = 0.0;
  Optimizer opt(oc, m.param_count());
  auto g = m.make_gradient();
  const auto pt = marginal_pt(joint, path, t);
  for (int s = 0; s < steps; ++s) {
    g.clear();
    for (std::uint64_t c = 0; c < pt.size(); ++c) {
      if (pt[c] <= 0.0) continue;
      Gradient part = m.make_gradient();
      expected_loss(m, target, joint, path, t, decode(c, joint.V(), joint.length()), spec, &part);
      for (std::size_t r : part.touched_rows()) {
        auto row = g.row(r);
        for (std::size_t k = 0; k < row.size(); ++k) row[k] += pt[c] * part.values()[r * row.size() + k];
      }
    }
    opt.step(m.params(), g);
  }
}

}  // namespace

TEST(McPseudoEntropy, ClosedForms) {
  LossSpec s = spec_of(LossFamily::McPseudoEntropy);
  const TrainExample ex{0.5, Sequence{0}, Sequence{0}, 1.0};
  {
    auto m = single({0.0, 0.0});
    const std::vector<TrainExample> b{ex};
    EXPECT_NEAR(batch_loss(m, nullptr, b, s, nullptr).value, 1.0, 1e-15);
  }
  {
    auto m = single({std::log(0.8), std::log(0.2)});
    const std::vector<TrainExample> b{ex};
    const double expect = -std::log(0.8) + 1.0 / (2 * 0.8) + 0.5 * (std::log(0.8) + std::log(0.2));
    EXPECT_NEAR(batch_loss(m, nullptr, b, s, nullptr).value, expect, 1e-14);
    EXPECT_NEAR(batch_loss(m, nullptr, b, s, nullptr).value, -0.06815, 5e-6);
  }
}

TEST(McPseudoEntropy, ClampCounted) {
  auto m = single({0.0, -40.0});
  const std::vector<TrainExample> b{{0.5, Sequence{1}, Sequence{0}, 1.0}};
  const auto out = batch_loss(m, nullptr, b, spec_of(LossFamily::McPseudoEntropy), nullptr);
  EXPECT_EQ(out.clamped, 1);
  EXPECT_TRUE(std::isfinite(out.value));
}

TEST(CrossEntropy, ClosedForms) {
  const std::vector<TrainExample> b{{0.5, Sequence{0}, Sequence{0}, 1.0}};
  for (auto f : {LossFamily::CrossEntropy, LossFamily::CfmJointCe}) {
    EXPECT_NEAR(batch_loss(single({60.0, 0.0}), nullptr, b, spec_of(f), nullptr).value, 0.0, 1e-15);
    EXPECT_NEAR(batch_loss(single({std::log(0.8), std::log(0.2)}), nullptr, b, spec_of(f), nullptr).value, 0.223144, 5e-7);
  }
}

TEST(ScoreN1, ModelEqualsTargetGivesZero) {
  Rng rng(5);
  const Vocabulary v(3);
  const auto joint = TabularJoint::product(v, {Categorical::normalized({1, 2, 3}), Categorical::normalized({4, 1, 1})});
  const PathSpec path(Source::Uniform, NoiseSchedule::linear(), v);
  const double t = 0.5;
  Denoiser m(tab(v, 2, Source::Uniform));
  auto jp = std::make_shared<TabularJoint>(joint);
  OraclePosterior oracle(jp, path);
  m.copy_from(oracle);
  ModelTarget target(oracle);
  for (auto g : {Bregman::GKL, Bregman::LSIF, Bregman::BCE}) {
    LossSpec s = spec_of(LossFamily::ScoreN1);
    s.bregman = g;
    auto grad = m.make_gradient();
    const auto out = expected_loss(m, &target, joint, path, t, Sequence{2, 0}, s, &grad);
    EXPECT_NEAR(out.value, 0.0, 1e-12);
    EXPECT_LT(grad.norm(), 1e-12);
  }
  LossSpec d = spec_of(LossFamily::DistribN1);
  EXPECT_NEAR(expected_loss(m, &target, joint, path, t, Sequence{1, 1}, d, nullptr).value, 0.0, 1e-12);
}

TEST(ScoreN1, AllOnesTargetUniformModel) {
  struct Flat : ConditionalTarget {
    Categorical conditional(int, const Sequence&, const Sequence&, double) const override { return Categorical::uniform(4); }
  } flat;
  Denoiser m(tab(Vocabulary(4), 3, Source::Uniform));
  const std::vector<TrainExample> b{{0.3, Sequence{0, 3, 1}, Sequence{2, 2, 2}, 1.0}};
  EXPECT_EQ(batch_loss(m, &flat, b, spec_of(LossFamily::ScoreN1), nullptr).value, 0.0);
}

TEST(ScoreN1, GklMatchesTermByTermExpansion) {
  Rng rng(17);
  const Vocabulary v(4);
  const auto joint = TabularJoint::random(v, 2, rng);
  const PathSpec path(Source::Uniform, NoiseSchedule::linear(), v);
  Denoiser m(tab(v, 2, Source::Uniform, 2));
  randomize(m, rng, 1.0);
  auto jp = std::make_shared<TabularJoint>(joint);
  OraclePosterior oracle(jp, path);
  ModelTarget target(oracle);
  const double t = 0.4;
  const Sequence xt{3, 1};
  const auto post = brute_posterior(joint, Source::Uniform, t, xt);
  const auto q = m.marginals(xt, t);
  for (std::uint64_t c = 0; c < joint.size(); ++c) {
    const Sequence x1 = decode(c, 4, 2);
    const std::vector<TrainExample> b{{t, x1, xt, 1.0}};
    double expect = 0.0;
    for (int i = 0; i < 2; ++i) {
      const auto p = brute_conditional(post, 4, i, x1);
      const int x = x1[static_cast<std::size_t>(i)];
      for (int y = 0; y < 4; ++y) {
        if (y == x) continue;
        const double w = p[static_cast<std::size_t>(y)] / p[static_cast<std::size_t>(x)];
        const double r = q[static_cast<std::size_t>(i)][static_cast<std::size_t>(y)] / q[static_cast<std::size_t>(i)][static_cast<std::size_t>(x)];
        expect += w * std::log(w / r) - w + r;
      }
    }
    EXPECT_NEAR(batch_loss(m, &target, b, spec_of(LossFamily::ScoreN1), nullptr).value, expect, 1e-10);
  }
}

TEST(DistribN1, ExpectedLossMatchesEnumeration) {
  Rng rng(23);
  const auto v = Vocabulary::with_mask(3);
  const auto joint = TabularJoint::random(v, 3, rng);
  const PathSpec path(Source::Mask, NoiseSchedule::linear(), v);
  auto cfg = tab(v, 3, Source::Mask, 2);
  cfg.carry_over = false;
  Denoiser m(cfg);
  randomize(m, rng, 0.7);
  auto jp = std::make_shared<TabularJoint>(joint);
  OraclePosterior oracle(jp, path);
  ModelTarget target(oracle);
  const double t = 0.6;
  const Sequence xt{3, 1, 3};
  const auto post = brute_posterior(joint, Source::Mask, t, xt);
  const auto q = m.marginals(xt, t);
  double expect = 0.0;
  for (std::uint64_t c = 0; c < post.size(); ++c) {
    if (post[c] == 0.0) continue;
    const Sequence x1 = decode(c, 4, 3);
    for (int i = 0; i < 3; ++i) {
      const auto p = brute_conditional(post, 4, i, x1);
      double kl = 0.0;
      for (int y = 0; y < 4; ++y)
        if (p[static_cast<std::size_t>(y)] > 0) kl += p[static_cast<std::size_t>(y)] * std::log(p[static_cast<std::size_t>(y)] / q[static_cast<std::size_t>(i)][static_cast<std::size_t>(y)]);
      expect += post[c] * kl;
    }
  }
  EXPECT_NEAR(expected_loss(m, &target, joint, path, t, xt, spec_of(LossFamily::DistribN1), nullptr).value, expect, 1e-10);
}

TEST(DistribN1, OneStepDecreasesLoss) {
  Rng rng(31);
  const Vocabulary v(3);
  const auto joint = TabularJoint::random(v, 2, rng);
  const PathSpec path(Source::Uniform, NoiseSchedule::linear(), v);
  auto jp = std::make_shared<TabularJoint>(joint);
  OraclePosterior oracle(jp, path);
  ModelTarget target(oracle);
  Denoiser m(tab(v, 2, Source::Uniform, 4));
  std::vector<TrainExample> batch;
  for (int b = 0; b < 32; ++b) {
    const double t = TimeDistribution::uniform().sample(rng);
    const auto x1 = joint.sample(rng);
    batch.push_back({t, x1, sample_xt(path, t, x1, rng), 1.0});
  }
  const auto spec = spec_of(LossFamily::DistribN1);
  auto g = m.make_gradient();
  const double before = batch_loss(m, &target, batch, spec, &g).value;
  OptimizerConfig oc;
  oc.kind = "sgd";
  oc.lr = 0.1;
  Optimizer opt(oc, m.param_count());
  opt.step(m.params(), g);
  EXPECT_LT(batch_loss(m, &target, batch, spec, nullptr).value, before);
}

TEST(DistribN1, KlSupportMismatch) {
  struct Spike : ConditionalTarget {
    Categorical conditional(int, const Sequence&, const Sequence&, double) const override { return Categorical::one_hot(4, 3); }
  } spike;
  // Mask token 3 can never be emitted, so the model has q = 0 where p > 0.
  auto cfg = tab(Vocabulary::with_mask(3), 1, Source::Mask);
  Denoiser m(cfg);
  const std::vector<TrainExample> b{{0.5, Sequence{0}, Sequence{3}, 1.0}};
  EXPECT_THROW(batch_loss(m, &spike, b, spec_of(LossFamily::DistribN1), nullptr), SupportError);
}

TEST(Losses, CarryOverPositionsSkipped) {
  const auto v = Vocabulary::with_mask(2);
  Denoiser m(tab(v, 2, Source::Mask));
  const std::vector<TrainExample> b{{0.5, Sequence{0, 1}, Sequence{0, 2}, 1.0}};
  // Only position 1 counts: -log(1/2).
  EXPECT_NEAR(batch_loss(m, nullptr, b, spec_of(LossFamily::CrossEntropy), nullptr).value, std::log(2.0), 1e-15);
}

TEST(Losses, ScoreN1RequiresUnitNeighborhood) {
  auto s = spec_of(LossFamily::ScoreN1);
  s.neighborhood.k = 2;
  EXPECT_THROW(s.validate(), ConfigError);
}

// Every family, three seeds, 20 coordinates, central differences.
class LossGradient : public ::testing::TestWithParam<std::tuple<int, int>> {};

TEST_P(LossGradient, MatchesFiniteDifferences) {
  const auto [family_index, seed] = GetParam();
  Rng rng(static_cast<std::uint64_t>(seed));
  const Vocabulary v(4);
  const auto joint = TabularJoint::random(v, 2, rng);
  const PathSpec path(Source::Uniform, NoiseSchedule::linear(), v);
  auto jp = std::make_shared<TabularJoint>(joint);
  OraclePosterior oracle(jp, path);
  ModelTarget target(oracle);

  std::vector<LossSpec> specs;
  const auto family = static_cast<LossFamily>(family_index);
  if (family == LossFamily::ScoreN1) {
    for (auto g : {Bregman::GKL, Bregman::LSIF, Bregman::BCE}) {
      auto s = spec_of(family);
      s.bregman = g;
      specs.push_back(s);
    }
  } else if (family == LossFamily::DistribN1) {
    for (auto d : {StatDivergence::KL, StatDivergence::IS, StatDivergence::GKLvec}) {
      auto s = spec_of(family);
      s.stat = d;
      specs.push_back(s);
    }
  } else {
    specs.push_back(spec_of(family));
  }

  Denoiser m(mlp(v, 2, Source::Uniform), static_cast<std::uint64_t>(seed));
  randomize(m, rng, 0.5);
  std::vector<TrainExample> batch;
  for (int b = 0; b < 4; ++b) {
    const double t = TimeDistribution::uniform().sample(rng);
    const auto x1 = joint.sample(rng);
    batch.push_back({t, x1, sample_xt(path, t, x1, rng), 0.5 + uniform01(rng)});
  }
  for (const auto& spec : specs) {
    auto g = m.make_gradient();
    batch_loss(m, &target, batch, spec, &g);
    const double h = 1e-5;
    for (int k = 0; k < 20; ++k) {
      const std::size_t idx = static_cast<std::size_t>(rng() % m.param_count());
      const double old = m.params()[idx];
      m.params()[idx] = old + h;
      const double up = batch_loss(m, &target, batch, spec, nullptr).value;
      m.params()[idx] = old - h;
      const double dn = batch_loss(m, &target, batch, spec, nullptr).value;
      m.params()[idx] = old;
      const double fd = (up - dn) / (2 * h), an = g.values()[idx];
      if (an == 0.0 && std::abs(fd) < 1e-9) continue;
      EXPECT_LT(std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)), 1e-5)
          << to_string(spec.family) << " param " << idx << " fd " << fd << " an " << an;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllFamilies, LossGradient, ::testing::Combine(::testing::Range(0, 5), ::testing::Values(1, 2, 3)));

TEST(Identities, GklScoreEqualsSupportKlPlusIs) {
  Rng rng(41);
  for (int inst = 0; inst < 10; ++inst) {
    const bool mask = inst % 2 == 1;
    const Vocabulary v = mask ? Vocabulary::with_mask(3) : Vocabulary(4);
    const auto joint = TabularJoint::random(v, 2, rng);
    const PathSpec path(mask ? Source::Mask : Source::Uniform, NoiseSchedule::linear(), v);
    auto cfg = tab(v, 2, path.source, 2);
    cfg.carry_over = false;
    Denoiser m(cfg);
    randomize(m, rng, 1.0);
    auto jp = std::make_shared<TabularJoint>(joint);
    OraclePosterior oracle(jp, path);
    ModelTarget target(oracle);
    const double t = 0.2 + 0.15 * (inst % 5);
    Sequence xt = sample_xt(path, t, joint.sample(rng), rng);
    const double lhs = expected_loss(m, &target, joint, path, t, xt, spec_of(LossFamily::ScoreN1), nullptr).value;
    EXPECT_NEAR(lhs, gkl_score_identity_rhs(m, joint, path, t, xt), 1e-8);
  }
}

TEST(Identities, McGradientIsScaledGklScoreGradient) {
  Rng rng(43);
  for (int inst = 0; inst < 6; ++inst) {
    const bool mask = inst % 2 == 1;
    const Vocabulary v = mask ? Vocabulary::with_mask(3) : Vocabulary(3);
    const auto joint = TabularJoint::random(v, 2, rng);
    const PathSpec path(mask ? Source::Mask : Source::Uniform, NoiseSchedule::linear(), v);
    auto cfg = tab(v, 2, path.source, 1);
    cfg.carry_over = false;
    Denoiser m(cfg);
    randomize(m, rng, 1.0);
    auto jp = std::make_shared<TabularJoint>(joint);
    OraclePosterior oracle(jp, path);
    ModelTarget target(oracle);
    const double t = 0.5;
    const Sequence xt = mask ? Sequence{3, 3} : Sequence{1, 2};
    auto gs = m.make_gradient(), gm = m.make_gradient();
    expected_loss(m, &target, joint, path, t, xt, spec_of(LossFamily::ScoreN1), &gs);
    expected_loss(m, nullptr, joint, path, t, xt, spec_of(LossFamily::McPseudoEntropy), &gm);
    const double VA = v.clean_count();
    for (std::size_t k = 0; k < m.param_count(); ++k) EXPECT_NEAR(gs.values()[k], VA * gm.values()[k], 1e-8);
  }
}

TEST(FixedPoints, TabularMinimizersMatchOracle) {
  Rng rng(47);
  const auto v = Vocabulary::with_mask(2);
  const auto joint = TabularJoint::random(v, 2, rng);
  const PathSpec path(Source::Mask, NoiseSchedule::linear(), v);
  auto jp = std::make_shared<TabularJoint>(joint);
  OraclePosterior oracle(jp, path);
  ModelTarget target(oracle);
  const double t = 0.5;
  for (auto f : {LossFamily::ScoreN1, LossFamily::DistribN1, LossFamily::McPseudoEntropy, LossFamily::CrossEntropy,
                 LossFamily::CfmJointCe}) {
    Denoiser m(tab(v, 2, Source::Mask));
    fit_exact(m, &target, joint, path, t, spec_of(f), 3000, 0.02);
    EXPECT_LT(posterior_gap(m, joint, path, t), 1e-4) << to_string(f);
  }
}
