#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "tcsm/data_eval.hpp"
#include "tcsm/models/denoiser.hpp"

using namespace tcsm;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("tcsm_de_" + name)).string();
}

}  // namespace

TEST(Grid, JointNormalizedAndModesPlaced) {
  GridDataset g(128);
  EXPECT_EQ(g.vocab().size(), 129);
  double total = 0.0, right = 0.0;
  for (std::uint64_t c = 0; c < g.joint().size(); ++c) {
    total += g.joint()[c];
    if (g.right_half(g.joint().sequence(c))) right += g.joint()[c];
  }
  EXPECT_NEAR(total, 1.0, 1e-10);
  // Bump tails cross the midline only beyond four radii.
  EXPECT_NEAR(right, 0.5, 1e-3);
  // Mass on the mask token is zero.
  EXPECT_EQ(g.joint().prob(Sequence{128, 5}), 0.0);
  EXPECT_GT(g.joint().prob(Sequence{32, 32}), g.joint().prob(Sequence{64, 64}));
  EXPECT_THROW(GridDataset(16, true, {{20.0, 1.0, 1.0, 1.0}}), ConfigError);
}

TEST(Grid, SamplesMatchJoint) {
  GridDataset g(128, false);
  Rng rng(1);
  std::vector<double> counts(g.joint().size(), 0.0);
  for (int n = 0; n < 1000000; ++n) counts[encode(g.sample(rng), 128)] += 1.0;
  // TV over 16384 cells at 10^6 draws has a sizeable noise floor; compare on
  // 8x8 blocks, where it is small.
  std::vector<double> bc(256, 0.0), bp(256, 0.0);
  for (std::uint64_t c = 0; c < counts.size(); ++c) {
    const auto x = decode(c, 128, 2);
    bc[static_cast<std::size_t>((x[0] / 8) * 16 + x[1] / 8)] += counts[c];
    bp[static_cast<std::size_t>((x[0] / 8) * 16 + x[1] / 8)] += g.joint()[c];
  }
  EXPECT_LT(tv_distance(bc, bp), 0.01);
}

TEST(Char, ChainRowsAndJoint) {
  CharDataset d;
  EXPECT_EQ(d.vocab().size(), 8);
  EXPECT_EQ(d.length(), 6);
  double total = 0.0;
  for (double p : d.joint().probs()) total += p;
  EXPECT_NEAR(total, 1.0, 1e-10);
  for (std::uint64_t c = 0; c < d.chain().context_count(); ++c) {
    double s = 0.0;
    for (double p : d.chain().next(c)) s += p;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  Rng a(3), b(3);
  EXPECT_EQ(d.sample(a), d.sample(b));
}

TEST(Tv, ClosedForms) {
  const std::vector<double> p{0.2, 0.3, 0.5};
  EXPECT_EQ(tv_distance(std::vector<double>{20, 30, 50}, p), 0.0);
  EXPECT_EQ(tv_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 1.0);
  EXPECT_NEAR(tv_distance(std::vector<double>{3, 1}, std::vector<double>{0.25, 0.75}), 0.5, 1e-15);
}

TEST(RegionMass, ClosedForms) {
  GridDataset g(8, false);
  auto right = [&](const Sequence& x) { return g.right_half(x); };
  EXPECT_EQ(region_mass({{0, 1}, {3, 7}}, right), 0.0);
  EXPECT_EQ(region_mass({{4, 1}, {7, 7}}, right), 1.0);
  EXPECT_EQ(region_mass({{4, 1}, {7, 7}, {5, 0}, {1, 1}}, right), 0.75);
}

TEST(RewardEntropy, ClosedFormsAndCounting) {
  auto r = [](const Sequence& x) { return static_cast<double>(x[0]); };
  const auto one = reward_entropy_stats({{1, 1}, {1, 1}, {1, 1}}, r);
  EXPECT_EQ(one.entropy, 0.0);
  EXPECT_EQ(one.mean_reward, 1.0);
  const auto four = reward_entropy_stats({{0, 0}, {0, 1}, {1, 0}, {1, 1}}, r);
  EXPECT_NEAR(four.entropy, std::log(4.0), 1e-15);
  // Mixed: counts 3, 1 -> -(3/4 ln 3/4 + 1/4 ln 1/4).
  const auto mixed = reward_entropy_stats({{2, 0}, {2, 0}, {2, 0}, {0, 1}}, r);
  EXPECT_NEAR(mixed.entropy, -(0.75 * std::log(0.75) + 0.25 * std::log(0.25)), 1e-15);
  EXPECT_NEAR(mixed.mean_reward, 1.5, 1e-15);
}

TEST(ExactNll, OracleGivesPosteriorEntropy) {
  Rng rng(4);
  const auto v = Vocabulary::with_mask(2);
  auto joint = std::make_shared<TabularJoint>(TabularJoint::random(v, 2, rng));
  const PathSpec path(Source::Mask, NoiseSchedule::linear(), v);
  OraclePosterior oracle(joint, path);
  const auto grid = default_t_grid(3);
  // Independent: average posterior entropy by direct enumeration.
  double h = 0.0;
  for (double t : grid) {
    const auto pt = marginal_pt(*joint, path, t);
    for (std::uint64_t c = 0; c < pt.size(); ++c) {
      if (pt[c] <= 0) continue;
      const auto post = posterior(*joint, path, t, decode(c, 3, 2));
      for (double p : post.probs)
        if (p > 0) h -= pt[c] * p * std::log(p);
    }
  }
  h /= 3.0;
  EXPECT_NEAR(exact_nll(oracle, *joint, path, grid), h, 1e-12);
  EXPECT_NEAR(posterior_kl(oracle, *joint, path, grid), 0.0, 1e-12);
}

TEST(ExactNll, UniformModelSinglePosition) {
  // V = 2, L = 1, uniform source at t close to 0: posterior ~ p1.
  const Vocabulary v(2);
  const auto joint = TabularJoint(v, 1, {0.7, 0.3});
  const PathSpec path(Source::Uniform, NoiseSchedule::linear(), v);
  DenoiserConfig cfg;
  cfg.vocab = v;
  cfg.length = 1;
  Denoiser m(cfg);
  const std::vector<double> grid{1e-9};
  const double H = -(0.7 * std::log(0.7) + 0.3 * std::log(0.3));
  const double KL = 0.7 * std::log(0.7 / 0.5) + 0.3 * std::log(0.3 / 0.5);
  EXPECT_NEAR(exact_nll(m, joint, path, grid), H + KL, 1e-8);
  EXPECT_NEAR(H + KL, std::log(2.0), 1e-15);
}

TEST(ExactNll, RandomInstanceMatchesEnumeration) {
  Rng rng(6);
  const Vocabulary v(3);
  const auto joint = TabularJoint::random(v, 2, rng);
  const PathSpec path(Source::Uniform, NoiseSchedule::linear(), v);
  DenoiserConfig cfg;
  cfg.vocab = v;
  cfg.length = 2;
  cfg.time_bins = 2;
  Denoiser m(cfg);
  for (auto& p : m.params()) p = standard_normal(rng);
  const std::vector<double> grid{0.3, 0.8};
  double expect = 0.0;
  for (double t : grid) {
    const double a = t;
    for (std::uint64_t c = 0; c < 9; ++c) {
      const Sequence xt = decode(c, 3, 2);
      // Direct: p(x1, xt) = p(x1) prod_i (a [x1=xt] + (1-a)/3).
      std::vector<double> w(9);
      double pxt = 0.0;
      for (std::uint64_t k = 0; k < 9; ++k) {
        const Sequence x1 = decode(k, 3, 2);
        double p = joint[k];
        for (int i = 0; i < 2; ++i) p *= a * (x1[static_cast<std::size_t>(i)] == xt[static_cast<std::size_t>(i)]) + (1 - a) / 3.0;
        w[k] = p;
        pxt += p;
      }
      const auto q = m.marginals(xt, t);
      for (std::uint64_t k = 0; k < 9; ++k) {
        const Sequence x1 = decode(k, 3, 2);
        expect -= w[k] * (std::log(q[0][static_cast<std::size_t>(x1[0])]) + std::log(q[1][static_cast<std::size_t>(x1[1])]));
      }
    }
  }
  expect /= 2.0;
  EXPECT_NEAR(exact_nll(m, joint, path, grid), expect, 1e-10);
}

TEST(Csv, MetricsAndHistogram) {
  const auto mp = temp_path("metrics.csv");
  write_metric_rows({}, mp);
  {
    std::ifstream in(mp);
    std::string all((std::istreambuf_iterator<char>(in)), {});
    EXPECT_EQ(all, "step,name,value\n");
  }
  write_metric_rows({{10, "kl", 0.125}, {20, "tv", 1.0 / 3.0}}, mp);
  write_metric_rows({{30, "kl", 2.5}}, mp, true);
  const auto rows = read_metric_rows(mp);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].name, "tv");
  EXPECT_EQ(rows[1].value, 1.0 / 3.0);
  EXPECT_EQ(rows[2].step, 30);

  const auto hp = temp_path("hist.csv");
  std::vector<double> h{0, 1, 2, 3, 4, 5};
  write_histogram(h, 3, hp);
  EXPECT_EQ(read_histogram(hp, 3, 2), h);
  std::remove(mp.c_str());
  std::remove(hp.c_str());
}
