#include <gtest/gtest.h>

#include <set>

#include "tcsm/core.hpp"

using namespace tcsm;

namespace {

PathSpec mask_path(int clean) { return PathSpec(Source::Mask, NoiseSchedule::linear(), Vocabulary::with_mask(clean)); }
PathSpec uniform_path(int V) { return PathSpec(Source::Uniform, NoiseSchedule::linear(), Vocabulary(V)); }

}  // namespace

TEST(ForwardKernel, MaskSourceHalfway) {
  const auto k = forward_kernel(mask_path(2), 0.5, Sequence{0});
  ASSERT_EQ(k.size(), 1u);
  EXPECT_DOUBLE_EQ(k[0][0], 0.5);
  EXPECT_DOUBLE_EQ(k[0][1], 0.0);
  EXPECT_DOUBLE_EQ(k[0][2], 0.5);
}

TEST(ForwardKernel, UniformSourceHalfway) {
  const auto k = forward_kernel(uniform_path(2), 0.5, Sequence{0});
  EXPECT_DOUBLE_EQ(k[0][0], 0.75);
  EXPECT_DOUBLE_EQ(k[0][1], 0.25);
}

TEST(ForwardKernel, UnitMassAtOne) {
  for (auto path : {mask_path(3), uniform_path(4)}) {
    const Sequence x1{0, 2, 1};
    const auto k = forward_kernel(path, 1.0, x1);
    for (std::size_t i = 0; i < x1.size(); ++i)
      for (int v = 0; v < path.vocab.size(); ++v) EXPECT_EQ(k[i][static_cast<std::size_t>(v)], v == x1[i] ? 1.0 : 0.0);
  }
}

TEST(ForwardKernel, RowsNormalizedOnGrid) {
  for (auto path : {mask_path(4), uniform_path(5)}) {
    for (int n = 0; n < 50; ++n) {
      const double t = n / 49.0;
      for (int tok = 0; tok < path.vocab.clean_count(); ++tok) {
        const auto k = forward_kernel(path, t, Sequence{tok});
        EXPECT_NEAR(k[0].total(), 1.0, 1e-12);
        // carry-over: the clean token keeps probability alpha_t under the mask source
        if (path.source == Source::Mask) {
          EXPECT_EQ(k[0][static_cast<std::size_t>(tok)], path.schedule.alpha(t));
        }
      }
    }
  }
}

TEST(ForwardKernel, MaskSourceNeedsMaskId) {
  PathSpec p;
  p.source = Source::Mask;
  p.vocab = Vocabulary(3);
  EXPECT_THROW(forward_kernel(p, 0.5, Sequence{0}), ConfigError);
  EXPECT_THROW(PathSpec(Source::Mask, NoiseSchedule::linear(), Vocabulary(3)), ConfigError);
}

TEST(SampleXt, DeterministicKernels) {
  Rng rng(1);
  std::vector<Categorical> k{Categorical::one_hot(3, 2), Categorical::one_hot(3, 0)};
  EXPECT_EQ(sample_xt(k, rng), (Sequence{2, 0}));
}

TEST(SampleXt, AllMaskAtTimeZero) {
  Rng rng(2);
  const auto path = mask_path(3);
  const auto k = forward_kernel(path, 0.0, Sequence{0, 1, 2});
  EXPECT_EQ(sample_xt(k, rng), (Sequence{3, 3, 3}));
  EXPECT_EQ(sample_xt(path, 0.0, Sequence{0, 1, 2}, rng), (Sequence{3, 3, 3}));
}

TEST(SampleXt, LawOfLargeNumbers) {
  Rng rng(3);
  const std::vector<Categorical> k{Categorical({0.75, 0.25})};
  int zeros = 0;
  const int n = 1000000;
  for (int r = 0; r < n; ++r) zeros += sample_xt(k, rng)[0] == 0;
  EXPECT_NEAR(zeros / static_cast<double>(n), 0.75, 0.005);
}

TEST(SampleXt, DirectSamplerMatchesKernel) {
  Rng rng(4);
  const auto path = uniform_path(3);
  std::vector<int> counts(3, 0);
  const int n = 200000;
  for (int r = 0; r < n; ++r) ++counts[static_cast<std::size_t>(sample_xt(path, 0.4, Sequence{1}, rng)[0])];
  const auto k = forward_kernel(path, 0.4, Sequence{1});
  for (int v = 0; v < 3; ++v) EXPECT_NEAR(counts[static_cast<std::size_t>(v)] / static_cast<double>(n), k[0][static_cast<std::size_t>(v)], 0.005);
}

TEST(Neighbors, TwoByTwo) {
  const auto n = neighbors(Sequence{0, 0}, 2, {1});
  ASSERT_EQ(n.size(), 2u);
  EXPECT_EQ(n[0].sequence, (Sequence{1, 0}));
  EXPECT_EQ(n[1].sequence, (Sequence{0, 1}));
}

TEST(Neighbors, SinglePosition) {
  const auto n = neighbors(Sequence{2}, 3, {1});
  ASSERT_EQ(n.size(), 2u);
  EXPECT_EQ(n[0].sequence, Sequence{0});
  EXPECT_EQ(n[1].sequence, Sequence{1});
}

TEST(Neighbors, FullSpace) { EXPECT_EQ(neighbors(Sequence{0, 1, 0}, 2, {3}).size(), 7u); }

TEST(Neighbors, OneHammingCountAndDistinct) {
  const Sequence x{1, 3, 0, 2};
  const auto n = neighbors(x, 5, {1});
  EXPECT_EQ(n.size(), 4u * 4u);
  std::set<Sequence> seen;
  for (const auto& nb : n) {
    EXPECT_NE(nb.sequence, x);
    int d = 0;
    for (std::size_t i = 0; i < x.size(); ++i) d += nb.sequence[i] != x[i];
    EXPECT_EQ(d, 1);
    seen.insert(nb.sequence);
  }
  EXPECT_EQ(seen.size(), n.size());
}

TEST(Neighbors, CapacityError) {
  EXPECT_THROW(neighbors(Sequence(std::size_t{21}, 0), 2, {21}), CapacityError);
  EXPECT_THROW(neighbors(Sequence{0, 0}, 2, {3}), ConfigError);
}

TEST(Schedule, TabulatedInterpolation) {
  const auto s = NoiseSchedule::tabulated({0.0, 0.5, 1.0}, {0.0, 0.2, 1.0});
  EXPECT_DOUBLE_EQ(s.alpha(0.25), 0.1);
  EXPECT_DOUBLE_EQ(s.alpha(0.75), 0.6);
  EXPECT_NEAR(s.alpha_dot(0.25), 0.4, 1e-8);
  EXPECT_NEAR(s.alpha_dot(0.75), 1.6, 1e-8);
  EXPECT_THROW(NoiseSchedule::tabulated({0.0, 1.0}, {0.0, 0.9}), ConfigError);
  EXPECT_THROW(NoiseSchedule::tabulated({0.0, 0.5, 1.0}, {0.0, 0.6, 0.5}), ConfigError);
}

TEST(TimeDistribution, ClampedToOpenInterval) {
  Rng rng(5);
  const auto w = TimeDistribution::uniform();
  for (int n = 0; n < 10000; ++n) {
    const double t = w.sample(rng);
    EXPECT_GE(t, kTimeEps);
    EXPECT_LE(t, 1.0 - kTimeEps);
  }
  const auto s = TimeDistribution::stratified(4).sample_batch(8, rng);
  for (std::size_t b = 0; b < s.size(); ++b) {
    EXPECT_GE(s[b], (b % 4) / 4.0 - 1e-12);
    EXPECT_LE(s[b], (b % 4 + 1) / 4.0 + 1e-12);
  }
}

TEST(Encoding, RoundTrip) {
  for (std::uint64_t c = 0; c < 125; ++c) EXPECT_EQ(encode(decode(c, 5, 3), 5), c);
  EXPECT_EQ(encode(Sequence{1, 0}, 2), 2u);
}

TEST(Random, GammaMean) {
  Rng rng(6);
  for (double shape : {0.3, 1.0, 4.5}) {
    double s = 0.0;
    const int n = 200000;
    for (int k = 0; k < n; ++k) s += gamma_variate(shape, rng);
    EXPECT_NEAR(s / n, shape, 0.02 * std::max(1.0, shape));
  }
}
