#pragma once

// Numeric identity checks on random enumerable instances. Each identity
// reports the largest deviation seen across instances, times and states.

#include <chrono>

#include "tcsm/objectives.hpp"

namespace tcsm {

struct IdentityResult {
  std::string name;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  long checks = 0;
  bool passed() const { return checks > 0 && max_deviation < tolerance; }
};

struct IdentitySuiteOptions {
  int instances = 20;
  int max_vocab = 6;   // including the mask token when present
  int max_length = 3;
  std::vector<double> times{0.1, 0.3, 0.5, 0.7, 0.9};
  int states_per_time = 4;
  std::uint64_t seed = 1;
};

struct IdentitySuiteReport {
  std::vector<IdentityResult> results;
  int instances = 0;
  double seconds = 0.0;
  bool passed() const {
    return std::all_of(results.begin(), results.end(), [](const IdentityResult& r) { return r.passed(); });
  }
};

inline IdentitySuiteReport run_identity_suite(const IdentitySuiteOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  IdentitySuiteReport rep;
  IdentityResult norm{"posterior_normalization", 0.0, 1e-10},
      decomp{"score_decomposition", 0.0, 1e-10},
      soft{"softmax_conditional", 0.0, 1e-10},
      rates{"velocity_rate_conditions", 0.0, 1e-10},
      gkl{"gkl_score_equals_kl_plus_is", 0.0, 1e-8};
  auto bump = [](IdentityResult& r, double d) {
    r.max_deviation = std::max(r.max_deviation, std::isnan(d) ? std::numeric_limits<double>::infinity() : d);
    ++r.checks;
  };
  Rng rng(o.seed);

  for (int inst = 0; inst < o.instances; ++inst) {
    const bool mask = inst % 2 == 1;
    const int V = 2 + inst % (o.max_vocab - 1);  // 2..max_vocab
    const int L = 1 + (inst / 2) % o.max_length;
    const Vocabulary vocab = mask ? Vocabulary::with_mask(V - 1) : Vocabulary(V);
    const PathSpec path(mask ? Source::Mask : Source::Uniform, NoiseSchedule::linear(), vocab);
    auto joint = std::make_shared<TabularJoint>(TabularJoint::random(vocab, L, rng, 0.7));
    OraclePosterior oracle(joint, path);
    ModelTarget target(oracle);

    DenoiserConfig dc;
    dc.vocab = vocab;
    dc.length = L;
    dc.source = path.source;
    dc.time_bins = 2;
    dc.carry_over = false;
    Denoiser model(dc);
    for (auto& p : model.params()) p = standard_normal(rng);
    LossSpec score;
    score.family = LossFamily::ScoreN1;
    score.bregman = Bregman::GKL;

    for (double t : o.times) {
      for (int s = 0; s < o.states_per_time; ++s) {
        const Sequence x1 = joint->sample(rng);
        const Sequence xt = sample_xt(path, t, x1, rng);
        const auto post = posterior(*joint, path, t, xt);
        bump(norm, std::abs(std::accumulate(post.probs.begin(), post.probs.end(), 0.0) - 1.0));
        bump(decomp, score_decomposition_check(*joint, path, t, xt, x1));
        const auto cs = concrete_score(post, x1, NeighborhoodSpec{1});
        for (int i = 0; i < L; ++i) {
          const auto a = conditional_from_score(cs, V, i);
          const auto b = conditional_given_rest(*joint, path, t, i, x1, xt);
          double d = 0.0;
          for (int y = 0; y < V; ++y) d = std::max(d, std::abs(a[static_cast<std::size_t>(y)] - b[static_cast<std::size_t>(y)]));
          bump(soft, d);
        }
        bump(rates, rate_condition_violation(exact_velocity(*joint, path, t, xt), xt));
        const double lhs = expected_loss(model, &target, *joint, path, t, xt, score, nullptr).value;
        const double rhs = gkl_score_identity_rhs(model, *joint, path, t, xt);
        bump(gkl, std::abs(lhs - rhs));
      }
    }
    ++rep.instances;
  }
  rep.results = {norm, decomp, soft, rates, gkl};
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline std::string format_report(const IdentitySuiteReport& rep) {
  std::ostringstream out;
  out << "instances " << rep.instances << "\n";
  for (const auto& r : rep.results)
    out << r.name << " max_deviation " << format_double(r.max_deviation) << " tolerance " << format_double(r.tolerance)
        << " checks " << r.checks << ' ' << (r.passed() ? "PASS" : "FAIL") << "\n";
  out << "seconds " << rep.seconds << "\n";
  return out.str();
}

}  // namespace tcsm
