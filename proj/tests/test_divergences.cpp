#include <gtest/gtest.h>

#include "tcsm/divergences.hpp"

using namespace tcsm;

TEST(Bregman, IdentityIsZero) {
  const std::vector<double> u{0.3, 1.7, 4.0};
  for (auto g : {Bregman::GKL, Bregman::LSIF, Bregman::BCE}) EXPECT_NEAR(bregman(g, u, u), 0.0, 1e-15);
}

TEST(Bregman, ClosedForms) {
  const std::vector<double> two{2.0}, one{1.0}, three{3.0};
  EXPECT_NEAR(bregman(Bregman::GKL, two, one), 2.0 * std::log(2.0) - 1.0, 1e-15);
  EXPECT_NEAR(bregman(Bregman::GKL, two, one), 0.386294, 1e-6);
  EXPECT_NEAR(bregman(Bregman::LSIF, three, one), 2.0, 1e-15);
}

TEST(Bregman, BceMatchesDefinition) {
  // F(r) = r log r - (r+1) log(r+1), written out independently.
  auto F = [](double r) { return r * std::log(r) - (r + 1.0) * std::log(r + 1.0); };
  auto dF = [](double r) { return std::log(r / (1.0 + r)); };
  const double u = 0.7, v = 2.5;
  const std::vector<double> a{u}, b{v};
  EXPECT_NEAR(bregman(Bregman::BCE, a, b), F(u) - F(v) - dF(v) * (u - v), 1e-14);
}

TEST(Bregman, DomainErrors) {
  const std::vector<double> bad{-1.0}, ok{1.0}, zero{0.0};
  EXPECT_THROW(bregman(Bregman::GKL, ok, bad), DomainError);
  EXPECT_THROW(bregman(Bregman::BCE, bad, ok), DomainError);
  EXPECT_THROW(bregman(Bregman::GKL, ok, zero), DomainError);
  EXPECT_NO_THROW(bregman(Bregman::LSIF, bad, ok));
  // u = 0 is allowed through the continuous extension of F.
  EXPECT_NEAR(bregman(Bregman::GKL, zero, ok), 1.0, 1e-15);
}

TEST(Bregman, EmptyIsZero) {
  const std::vector<double> e;
  EXPECT_EQ(bregman(Bregman::GKL, e, e), 0.0);
  EXPECT_EQ(stat_divergence(StatDivergence::KL, e, e), 0.0);
}

TEST(Bregman, NonNegativeOnRandomPairs) {
  Rng rng(1);
  for (int n = 0; n < 10000; ++n) {
    std::vector<double> u(3), v(3);
    for (int j = 0; j < 3; ++j) {
      u[static_cast<std::size_t>(j)] = std::exp(4.0 * (uniform01(rng) - 0.5));
      v[static_cast<std::size_t>(j)] = std::exp(4.0 * (uniform01(rng) - 0.5));
    }
    for (auto g : {Bregman::GKL, Bregman::LSIF, Bregman::BCE}) {
      EXPECT_GT(bregman(g, u, v), 0.0);
      EXPECT_NEAR(bregman(g, v, v), 0.0, 1e-14);
    }
  }
}

TEST(Bregman, DerivativeMatchesFiniteDifference) {
  for (auto g : {Bregman::GKL, Bregman::LSIF, Bregman::BCE}) {
    for (double v : {0.3, 1.0, 2.7}) {
      const double u = 1.4, h = 1e-6;
      const double fd = (bregman_term(g, u, v + h) - bregman_term(g, u, v - h)) / (2 * h);
      EXPECT_NEAR(bregman_term_dv(g, u, v), fd, 1e-7);
    }
  }
}

TEST(StatDivergence, IdentityIsZero) {
  const Categorical p({0.2, 0.5, 0.3});
  for (auto k : {StatDivergence::KL, StatDivergence::IS, StatDivergence::GKLvec}) EXPECT_NEAR(stat_divergence(k, p, p), 0.0, 1e-15);
}

TEST(StatDivergence, KlExample) {
  EXPECT_NEAR(stat_divergence(StatDivergence::KL, Categorical({1.0, 0.0}), Categorical({0.5, 0.5})), std::log(2.0), 1e-15);
}

TEST(StatDivergence, IsExample) {
  const double expected = (2.0 - std::log(2.0) - 1.0) + (2.0 / 3.0 - std::log(2.0 / 3.0) - 1.0);
  EXPECT_NEAR(stat_divergence(StatDivergence::IS, Categorical({0.5, 0.5}), Categorical({0.25, 0.75})), expected, 1e-15);
  EXPECT_NEAR(expected, 0.378, 1e-3);
}

TEST(StatDivergence, SupportErrors) {
  EXPECT_THROW(stat_divergence(StatDivergence::KL, Categorical({0.5, 0.5}), Categorical({1.0, 0.0})), SupportError);
  EXPECT_THROW(stat_divergence(StatDivergence::IS, Categorical({1.0, 0.0}), Categorical({0.5, 0.5})), SupportError);
}

TEST(StatDivergence, GeneralizedKlOnUnnormalized) {
  const std::vector<double> p{2.0, 0.0}, q{1.0, 3.0};
  EXPECT_NEAR(stat_divergence(StatDivergence::GKLvec, p, q), 2.0 * std::log(2.0) - 2.0 + 1.0 + 3.0, 1e-15);
}
