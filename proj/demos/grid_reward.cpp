// Reward fine-tuning on the two-dimensional grid: the right half is penalized
// and the fine-tuned sampler should drop it while keeping the left modes.
// Usage: demo_grid_reward [steps] [B]

#include <cstdio>
#include <cstdlib>

#include "tcsm/posttrain.hpp"

using namespace tcsm;

int main(int argc, char** argv) {
  const long steps = argc > 1 ? std::atol(argv[1]) : 2000;
  const int B = argc > 2 ? std::atoi(argv[2]) : 8;
  const int side = 64;

  GridDataset grid(side);
  const PathSpec path(Source::Mask, NoiseSchedule::linear(), grid.vocab());
  auto joint = std::make_shared<TabularJoint>(grid.joint());
  OraclePosterior oracle(joint, path);
  DenoiserConfig dc;
  dc.vocab = grid.vocab();
  dc.length = 2;
  dc.source = Source::Mask;
  dc.time_bins = 1;
  Denoiser pre(dc);
  pre.copy_from(oracle);

  EulerConfig ec;
  ec.seed = 5;
  auto right = [&](const Sequence& x) { return grid.right_half(x); };
  std::printf("before: right-half mass %.3f\n", region_mass(ancestral_sample_many(pre, path, ec, 20000), right));

  Denoiser m = pre;
  ExampleSource src;
  src.path = &path;
  src.data = [&](Rng& r) { return grid.sample(r); };
  TrainOptions o;
  o.steps = steps;
  o.eval_every = 0;
  Rng rng(3);
  reward_finetune_full(m, pre, grid_left_half(side), B, src, OptimizerConfig{}, o, rng);

  const auto xs = ancestral_sample_many(m, path, ec, 20000);
  const auto left = grid.left_target();
  std::printf("after %ld steps, B=%d: right-half mass %.4f, block TV to left target %.3f\n", steps, B,
              region_mass(xs, right), tv_distance(block_histogram(xs, side, 8), block_histogram(left, side, 8)));
}
