#pragma once

// Pre-training loops and the run directory they write.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>

#include "tcsm/data_eval.hpp"
#include "tcsm/log.hpp"
#include "tcsm/models/checkpoint.hpp"
#include "tcsm/models/masked_target.hpp"
#include "tcsm/models/optimizer.hpp"
#include "tcsm/objectives.hpp"
#include "tcsm/sampler.hpp"

namespace tcsm {

inline constexpr double kDivergenceLimit = 1e6;

using DataSampler = std::function<Sequence(Rng&)>;

// ---------------------------------------------------------------------------
// Run directory: config.json, metrics.csv, eval.csv, checkpoints/, samples/.

class RunWriter {
 public:
  RunWriter() = default;
  explicit RunWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_ / "checkpoints");
    std::filesystem::create_directories(dir_ / "samples");
    std::ofstream(dir_ / "metrics.csv") << "step,loss,grad_norm,wall_ms\n";
    write_metric_rows({}, (dir_ / "eval.csv").string());
  }

  bool active() const { return !dir_.empty(); }
  const std::filesystem::path& dir() const { return dir_; }

  void write_config(const nlohmann::json& resolved) const {
    if (!active()) return;
    std::ofstream(dir_ / "config.json") << resolved.dump(2) << '\n';
  }

  void metric(long step, double loss, double grad_norm, double wall_ms) const {
    if (!active()) return;
    std::ofstream out(dir_ / "metrics.csv", std::ios::app);
    out << step << ',' << format_double(loss) << ',' << format_double(grad_norm) << ',' << format_double(wall_ms) << '\n';
  }

  void eval(long step, const std::string& name, double value) const {
    if (!active()) return;
    write_metric_rows({{step, name, value}}, (dir_ / "eval.csv").string(), true);
  }

  template <class Model>
  void checkpoint(long step, const Model& m) const {
    if (!active()) return;
    save_checkpoint(m, (dir_ / "checkpoints" / ("step_" + std::to_string(step) + ".json")).string());
  }

  void samples(long step, const std::vector<Sequence>& xs) const {
    if (!active()) return;
    write_samples(xs, (dir_ / "samples" / ("step_" + std::to_string(step) + ".txt")).string());
  }

 private:
  std::filesystem::path dir_;
};

struct TrainOptions {
  long steps = 10000;
  int batch = 64;
  int workers = 1;
  long eval_every = 500;
  long checkpoint_every = 0;  // 0: final checkpoint only
  bool record_wall_time = false;
};

struct StepStats {
  long step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainHooks {
  std::function<void(long step)> on_eval;        // called every eval_every steps and at the end
  std::function<void(long step)> on_checkpoint;  // called at checkpoint steps and at the end
};

// Mean of the last `window` losses ending at index k (inclusive).
inline double smoothed_loss(const std::vector<StepStats>& m, std::size_t k, std::size_t window = 200) {
  const std::size_t lo = k + 1 >= window ? k + 1 - window : 0;
  double s = 0.0;
  for (std::size_t j = lo; j <= k; ++j) s += m[j].loss;
  return s / static_cast<double>(k + 1 - lo);
}

// Generic loop: step_fn fills the gradient for one step and returns its loss.
template <class Model>
std::vector<StepStats> run_loop(Model& model, Optimizer& opt, const TrainOptions& o,
                                const std::function<LossOutput(long, Gradient&)>& step_fn, const RunWriter& writer,
                                const TrainHooks& hooks = {}) {
  std::vector<StepStats> metrics;
  metrics.reserve(static_cast<std::size_t>(o.steps));
  auto grad = model.make_gradient();
  long clamp_total = 0;
  for (long s = 0; s < o.steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    grad.clear();
    const LossOutput out = step_fn(s, grad);
    clamp_total += out.clamped;
    if (!std::isfinite(out.value) || std::abs(out.value) > kDivergenceLimit) {
      char msg[160];
      std::snprintf(msg, sizeof msg, "training diverged at step %ld: loss %.6g, gradient norm %.6g", s, out.value,
                    grad.norm());
      throw NumericalAbort(msg);
    }
    const double norm = opt.step(model.params(), grad);
    const double ms = o.record_wall_time
                          ? std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()
                          : 0.0;
    metrics.push_back({s + 1, out.value, norm});
    writer.metric(s + 1, out.value, norm, ms);
    const bool last = s + 1 == o.steps;
    if (hooks.on_eval && ((o.eval_every > 0 && (s + 1) % o.eval_every == 0) || last)) hooks.on_eval(s + 1);
    if ((o.checkpoint_every > 0 && (s + 1) % o.checkpoint_every == 0) || last) {
      writer.checkpoint(s + 1, model);
      if (hooks.on_checkpoint) hooks.on_checkpoint(s + 1);
    }
  }
  if (clamp_total > 0) log_info("probability floor applied " + std::to_string(clamp_total) + " times");
  return metrics;
}

// ---------------------------------------------------------------------------
// Example generation: t ~ omega, x1 ~ data, x_t ~ p_{t|1}; then x1 is
// optionally replaced by a draw from a proposal model given x_t.

struct ExampleSource {
  const PathSpec* path = nullptr;
  TimeDistribution omega = TimeDistribution::uniform();
  DataSampler data;
  Proposal proposal = Proposal::TruePosterior;
  const PosteriorModel* proposal_model = nullptr;  // model or reference, as the proposal requires

  std::vector<TrainExample> batch(int n, Rng& rng) const {
    const auto ts = omega.sample_batch(static_cast<std::size_t>(n), rng);
    std::vector<TrainExample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) {
      TrainExample ex;
      ex.t = ts[static_cast<std::size_t>(b)];
      ex.x1 = data(rng);
      ex.xt = sample_xt(*path, ex.t, ex.x1, rng);
      if (proposal != Proposal::TruePosterior) {
        if (!proposal_model) throw UsageError("proposal needs a model");
        ex.x1 = proposal_model->sample(ex.xt, ex.t, rng);
      }
      out.push_back(std::move(ex));
    }
    return out;
  }
};

// Pre-training from data samples. The target is needed by the score and
// distribution families (e.g. an oracle on enumerable instances).
inline std::vector<StepStats> pretrain_from_data(Denoiser& model, const ExampleSource& src, const LossSpec& spec,
                                                 const OptimizerConfig& ocfg, const TrainOptions& o, Rng& rng,
                                                 const ConditionalTarget* target = nullptr,
                                                 const RunWriter& writer = RunWriter(), const TrainHooks& hooks = {}) {
  spec.validate();
  if (spec.needs_target() && !target) throw ConfigError("loss family " + std::string(to_string(spec.family)) + " needs a target");
  OptimizerConfig oc = ocfg;
  oc.total_steps = o.steps;
  Optimizer opt(oc, model.param_count());
  ExampleSource s = src;
  if (s.proposal == Proposal::ModelPosterior) s.proposal_model = &model;
  return run_loop(model, opt, o, [&](long, Gradient& g) {
    const auto batch = s.batch(o.batch, rng);
    return batch_loss(model, target, batch, spec, &g, o.workers);
  }, writer, hooks);
}

// p_{1|t}(y | x1^{≠i}, x_t) ∝ p1_hat(y | x1^{≠i}) K_t(x_t^i | y): the fitted
// clean conditionals reweighted by the forward kernel at loss time.
class ParametricTarget : public ConditionalTarget {
 public:
  ParametricTarget(const MaskedTargetModel& p1, const PathSpec& path) : p1_(&p1), path_(&path) {}

  Categorical conditional(int i, const Sequence& x1, const Sequence& xt, double t) const override {
    const auto base = p1_->conditional(i, x1);
    const double a = path_->schedule.alpha(t);
    const int xi = xt[static_cast<std::size_t>(i)];
    std::vector<double> w(base.probs());
    for (int y = 0; y < base.size(); ++y) w[static_cast<std::size_t>(y)] *= kernel_prob_at(*path_, a, y, xi);
    double z = 0.0;
    for (double v : w) z += v;
    if (!(z > 0.0)) throw TargetError("parametric target has empty support at this position");
    for (auto& v : w) v /= z;
    return Categorical(std::move(w));
  }

 private:
  const MaskedTargetModel* p1_;
  const PathSpec* path_;
};

inline std::vector<StepStats> pretrain_with_parametric_p1(Denoiser& model, const MaskedTargetModel& p1,
                                                          const ExampleSource& src, const OptimizerConfig& ocfg,
                                                          const TrainOptions& o, Rng& rng,
                                                          const RunWriter& writer = RunWriter(),
                                                          const TrainHooks& hooks = {}) {
  ParametricTarget target(p1, *src.path);
  LossSpec spec;
  spec.family = LossFamily::DistribN1;
  spec.stat = StatDivergence::KL;
  return pretrain_from_data(model, src, spec, ocfg, o, rng, &target, writer, hooks);
}

}  // namespace tcsm
