// Walks through the exact posterior on a tiny instance, runs the identity
// suite and samples the oracle with the Euler sampler.

#include <cstdio>

#include "tcsm/data_eval.hpp"
#include "tcsm/identity_suite.hpp"
#include "tcsm/sampler.hpp"

using namespace tcsm;

int main() {
  Rng rng(1);
  const auto v = Vocabulary::with_mask(3);
  auto joint = std::make_shared<TabularJoint>(TabularJoint::random(v, 2, rng));
  const PathSpec path(Source::Mask, NoiseSchedule::linear(), v);

  std::printf("joint over %d clean tokens, length 2\n", v.clean_count());
  for (double t : {0.25, 0.75}) {
    const Sequence xt{0, *v.mask_id()};
    const auto m = posterior_marginals(*joint, path, t, xt);
    std::printf("t=%.2f  x_t=%s  p(x1^1 | x_t) =", t, xt.str().c_str());
    for (double p : m[1].probs()) std::printf(" %.4f", p);
    std::printf("\n");
  }
  std::printf("(under the mask path the posterior given x_t does not move with t)\n");

  std::printf("\n%s", format_report(run_identity_suite(IdentitySuiteOptions{})).c_str());

  OraclePosterior oracle(joint, path);
  EulerConfig cfg;
  cfg.steps = 256;
  cfg.seed = 2;
  const auto xs = euler_sample_many(oracle, path, cfg, 20000);
  std::printf("\neuler samples: TV to p1 = %.4f\n", tv_distance(empirical_counts(xs, v.size(), 2), joint->probs()));
}
