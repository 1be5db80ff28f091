#pragma once

// Subcommand implementations behind the tcsm executable. Each writes the
// resolved config into the run directory before doing any work.

#include "tcsm/config.hpp"
#include "tcsm/identity_suite.hpp"

namespace tcsm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

// Data source plus its exact joint when the space is enumerable.
struct DataSetup {
  DataSampler sample;
  std::optional<TabularJoint> joint;
  std::function<double(const Sequence&)> reward;  // task-defined reward, if any
  std::function<bool(const Sequence&)> region;    // grid: right half
};

namespace app {

inline void require_vocab(const Vocabulary& want, const Vocabulary& have, const std::string& what) {
  if (want != have)
    throw ConfigError("vocab does not match the " + what + " data (expected size " + std::to_string(have.size()) +
                      (have.has_mask() ? " with mask_id " + std::to_string(*have.mask_id()) : " without a mask") + ")");
}

inline ARTeacher make_teacher(const Config& c) {
  const auto& t = c.task;
  if (t.teacher == "random") {
    Rng rng(c.data_seed());
    return ARTeacher::random(c.vocab, t.teacher_order, rng, t.teacher_concentration);
  }
  auto teacher = load_checkpoint<ARTeacher>(t.teacher);
  require_vocab(c.vocab, teacher.vocab(), "teacher");
  return teacher;
}

inline DataSetup make_data(const Config& c) {
  DataSetup d;
  const int L = c.model.length;
  const auto& t = c.task;
  if (t.data == "random") {
    Rng rng(c.data_seed());
    d.joint = TabularJoint::random(c.vocab, L, rng, t.concentration);
  } else if (t.data == "grid") {
    if (L != 2) throw ConfigError("model.length must be 2 for grid data");
    auto grid = std::make_shared<GridDataset>(c.vocab.clean_count(), c.vocab.has_mask());
    require_vocab(c.vocab, grid->vocab(), "grid");
    d.joint = grid->joint();
    d.region = [grid](const Sequence& x) { return grid->right_half(x); };
  } else if (t.data == "char") {
    CharDataset ds(c.vocab.size(), L, c.data_seed());
    require_vocab(c.vocab, ds.vocab(), "char");
    d.joint = ds.joint();
  } else if (t.data == "two_mode") {
    auto task = std::make_shared<TwoModeTask>(c.vocab.clean_count(), L);
    require_vocab(c.vocab, task->vocab(), "two_mode");
    d.joint = task->joint();
    d.reward = [task](const Sequence& x) { return task->reward(x); };
  } else if (t.data == "teacher") {
    auto teacher = std::make_shared<ARTeacher>(make_teacher(c));
    try {
      d.joint = teacher->to_joint(L);
    } catch (const CapacityError&) {
      d.sample = [teacher, L](Rng& r) { return teacher->sample(L, r); };
    }
  } else {
    if (t.samples_file.empty()) throw ConfigError("task.samples_file is required when task.data is \"file\"");
    auto xs = std::make_shared<std::vector<Sequence>>(read_samples(t.samples_file));
    if (xs->empty()) throw ConfigError("task.samples_file " + t.samples_file + " holds no sequences");
    for (const auto& x : *xs) {
      if (x.length() != L) throw ConfigError("task.samples_file sequences must have length model.length");
      validate(x, c.vocab);
    }
    d.sample = [xs](Rng& r) {
      return (*xs)[std::min(xs->size() - 1, static_cast<std::size_t>(uniform01(r) * static_cast<double>(xs->size())))];
    };
  }
  if (d.joint) {
    auto j = std::make_shared<TabularJoint>(*d.joint);
    d.sample = [j](Rng& r) { return j->sample(r); };
  }
  return d;
}

inline const TabularJoint& require_joint(const DataSetup& d, const std::string& why) {
  if (!d.joint) throw ConfigError(why + " needs an enumerable dataset (task.data)");
  return *d.joint;
}

inline Denoiser copy_of(const Config& c, const PosteriorModel& src) {
  if (c.model.kind != "tabular") throw ConfigError("oracle initialization needs model.kind \"tabular\"");
  Denoiser m(c.model);
  m.copy_from(src);
  return m;
}

inline Denoiser load_denoiser(const Config& c, const std::string& file) {
  auto m = load_checkpoint<Denoiser>(file);
  if (m.vocab() != c.vocab || m.length() != c.model.length)
    throw ConfigError("checkpoint " + file + " does not match vocab/model.length");
  return m;
}

inline TabularJoint perturbed(const TabularJoint& joint, double scale, Rng& rng) {
  std::vector<double> w(joint.probs());
  for (auto& v : w)
    if (v > 0.0) v *= std::exp(scale * standard_normal(rng));
  return TabularJoint::from_weights(joint.vocab(), joint.length(), std::move(w));
}

// Model the run starts from: random init, the data oracle, or a checkpoint.
inline Denoiser initial_model(const Config& c, const DataSetup& d, const std::string& spec) {
  if (spec.empty()) return Denoiser(c.model, c.init_seed());
  if (spec == "oracle") return copy_of(c, OraclePosterior(std::make_shared<TabularJoint>(require_joint(d, "oracle init")), c.path));
  if (spec == "perturbed_oracle") {
    Rng rng(c.init_seed());
    auto j = std::make_shared<TabularJoint>(perturbed(require_joint(d, "perturbed_oracle"), c.task.perturbation, rng));
    return copy_of(c, OraclePosterior(j, c.path));
  }
  return load_denoiser(c, spec);
}

inline Denoiser pretrained_model(const Config& c, const DataSetup& d, const std::string& cmd) {
  if (c.task.pretrained.empty()) throw ConfigError("task.pretrained is required for " + cmd);
  return initial_model(c, d, c.task.pretrained);
}

inline std::vector<Sequence> draw_samples(const Config& c, const PosteriorModel& m, int n) {
  const auto ec = c.sampler(c.sample_seed());
  if (c.run.sampler == "ancestral") return ancestral_sample_many(m, c.path, ec, static_cast<std::size_t>(n), c.run.workers);
  return euler_sample_many(m, c.path, ec, static_cast<std::size_t>(n), c.run.workers);
}

inline ExampleSource example_source(const Config& c, const DataSetup& d) {
  ExampleSource s;
  s.path = &c.path;
  s.omega = c.omega;
  s.data = d.sample;
  return s;
}

// Posterior KL to `target` on every eval step when the space is enumerable.
inline TrainHooks kl_hooks(const RunWriter& w, const PosteriorModel& m, const TabularJoint* target, const PathSpec& path) {
  TrainHooks h;
  if (!target) return h;
  h.on_eval = [&w, &m, target, &path](long step) {
    w.eval(step, "posterior_kl", posterior_kl(m, *target, path, default_t_grid(5)));
  };
  return h;
}

// Shared ending: final samples and a model.json next to the checkpoints.
template <class Model>
void finish_run(const Config& c, const RunWriter& w, const Model& model, const PosteriorModel& sampler_model,
                const DataSetup& d) {
  save_checkpoint(model, (w.dir() / "model.json").string());
  if (c.run.sample_count == 0) return;
  const auto xs = draw_samples(c, sampler_model, c.run.sample_count);
  w.samples(c.run.steps, xs);
  if (d.region) w.eval(c.run.steps, "right_half_mass", region_mass(xs, d.region));
  if (d.reward) {
    const auto st = reward_entropy_stats(xs, d.reward);
    w.eval(c.run.steps, "mean_reward", st.mean_reward);
    w.eval(c.run.steps, "sample_entropy", st.entropy);
  }
}

inline int cmd_oracle_check(const Config& c, const RunWriter& w) {
  IdentitySuiteOptions o;
  o.instances = c.task.instances;
  o.seed = c.eval_seed();
  const auto rep = run_identity_suite(o);
  std::ofstream(w.dir() / "oracle_report.txt") << format_report(rep);
  for (const auto& r : rep.results) w.eval(0, r.name, r.max_deviation);
  log_info(format_report(rep));
  if (!rep.passed()) {
    log_error("oracle identity suite failed; see oracle_report.txt");
    return kExitFailure;
  }
  return kExitOk;
}

inline int cmd_pretrain(const Config& c, const RunWriter& w) {
  const auto d = make_data(c);
  Denoiser m = initial_model(c, d, c.task.init);
  std::unique_ptr<OraclePosterior> oracle;
  std::unique_ptr<ModelTarget> target;
  if (c.loss.needs_target() || c.loss.proposal == Proposal::ReferenceModel) {
    oracle = std::make_unique<OraclePosterior>(std::make_shared<TabularJoint>(require_joint(d, "loss " + std::string(to_string(c.loss.family)))), c.path);
    target = std::make_unique<ModelTarget>(*oracle);
  }
  auto src = example_source(c, d);
  src.proposal = c.loss.proposal;
  if (c.loss.proposal == Proposal::ModelPosterior) src.proposal_model = &m;
  if (c.loss.proposal == Proposal::ReferenceModel) src.proposal_model = oracle.get();
  Rng rng(c.train_seed());
  pretrain_from_data(m, src, c.loss, c.optimizer, c.train_options(), rng, target.get(), w,
                     kl_hooks(w, m, d.joint ? &*d.joint : nullptr, c.path));
  finish_run(c, w, m, m, d);
  return kExitOk;
}

inline int cmd_pretrain_parametric(const Config& c, const RunWriter& w) {
  const auto d = make_data(c);
  MaskedTargetModel p1(c.vocab, c.model.length, c.task.smoothing);
  {
    Rng rng(c.data_seed() + 100);
    for (long k = 0; k < c.task.target_samples; ++k) p1.observe(d.sample(rng));
  }
  save_checkpoint(p1, (w.dir() / "masked_target.json").string());
  Denoiser m = initial_model(c, d, c.task.init);
  Rng rng(c.train_seed());
  pretrain_with_parametric_p1(m, p1, example_source(c, d), c.optimizer, c.train_options(), rng, w,
                              kl_hooks(w, m, d.joint ? &*d.joint : nullptr, c.path));
  finish_run(c, w, m, m, d);
  return kExitOk;
}

inline int cmd_posttrain_dre(const Config& c, const RunWriter& w) {
  const auto d = make_data(c);
  const Denoiser ref = pretrained_model(c, d, "posttrain-dre");
  const auto gen = bregman_from_string(c.task.generator);
  const auto strategy = dre_strategy_from_string(c.task.strategy);
  const TabularJoint* truth = d.joint ? &*d.joint : nullptr;
  Rng rng(c.train_seed());
  if (strategy == DreStrategy::ModelRatio) {
    Denoiser m = ref;
    dre_finetune_model(m, ref, gen, example_source(c, d), c.optimizer, c.train_options(), rng, w,
                       kl_hooks(w, m, truth, c.path));
    finish_run(c, w, m, m, d);
  } else {
    RatioModel f(c.ratio_config(), c.init_seed());
    TiltedPosterior q(ref, f);
    dre_finetune_ratio(f, ref, gen, example_source(c, d), c.optimizer, c.train_options(), rng, w,
                       kl_hooks(w, q, truth, c.path));
    finish_run(c, w, f, q, d);
  }
  return kExitOk;
}

inline int cmd_posttrain_reward(const Config& c, const RunWriter& w) {
  const auto d = make_data(c);
  const Denoiser pre = pretrained_model(c, d, "posttrain-reward");
  const auto reward = load_reward(c.task.reward, c.vocab, c.task.beta);
  std::optional<TabularJoint> tilted;
  if (d.joint) tilted = tilt_joint(*d.joint, reward);
  Denoiser m = pre;
  Rng rng(c.train_seed());
  const auto hooks = kl_hooks(w, m, tilted ? &*tilted : nullptr, c.path);
  if (c.task.estimator == "n1")
    reward_finetune_n1(m, pre, reward, example_source(c, d), c.optimizer, c.train_options(), rng, w, hooks);
  else
    reward_finetune_full(m, pre, reward, c.task.samples, example_source(c, d), c.optimizer, c.train_options(), rng,
                         w, hooks);
  finish_run(c, w, m, m, d);
  return kExitOk;
}

inline std::vector<PreferenceTriple> load_preferences(const Config& c) {
  std::vector<PreferenceTriple> out;
  if (c.task.preferences == "two_mode") {
    const TwoModeTask task(c.vocab.clean_count(), c.model.length);
    require_vocab(c.vocab, task.vocab(), "two_mode");
    Rng rng(c.data_seed() + 200);
    for (int k = 0; k < c.task.preference_pairs; ++k)
      out.push_back({Sequence{}, task.sample_mode(true, rng), task.sample_mode(false, rng)});
    return out;
  }
  std::ifstream in(c.task.preferences);
  if (!in) throw ConfigError("task.preferences: cannot read " + c.task.preferences);
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& r : j)
      out.push_back({Sequence(r.value("query", std::vector<int>{})), Sequence(r.at("winner").get<std::vector<int>>()),
                     Sequence(r.at("loser").get<std::vector<int>>())});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("task.preferences " + c.task.preferences + ": " + e.what());
  }
  return out;
}

inline int cmd_posttrain_dpo(const Config& c, const RunWriter& w) {
  const auto d = make_data(c);
  const Denoiser pre = pretrained_model(c, d, "posttrain-dpo");
  const auto triples = load_preferences(c);
  Denoiser m = pre;
  Rng rng(c.train_seed());
  dpo_finetune(m, pre, triples, c.task.beta, c.path, c.omega, c.optimizer, c.train_options(), rng, w);
  finish_run(c, w, m, m, d);
  return kExitOk;
}

inline int cmd_distill(const Config& c, const RunWriter& w) {
  const ARTeacher teacher = make_teacher(c);
  if (teacher.vocab() != c.vocab) throw ConfigError("teacher vocabulary does not match vocab");
  DistillTargetSpec spec;
  spec.method = distill_method_from_string(c.task.method);
  spec.K = c.task.K;
  spec.ngram_order = c.task.ngram_order;
  spec.tau = c.task.tau;
  spec.validate(c.vocab.size());
  std::optional<ARTeacher> ngram;
  if (spec.method == DistillMethod::TopKNgram) {
    Rng rng(c.data_seed() + 300);
    ngram = fit_right_ngram(teacher, spec.ngram_order, c.model.length, c.task.ngram_samples, rng);
  }
  DataSetup d;
  d.sample = [&teacher, L = c.model.length](Rng& r) { return teacher.sample(L, r); };
  try {
    d.joint = teacher.to_joint(c.model.length);
  } catch (const CapacityError&) {
  }
  Denoiser student = initial_model(c, d, c.task.init);
  Rng rng(c.train_seed());
  distill_finetune(student, teacher, spec, c.path, c.omega, c.optimizer, c.train_options(), rng,
                   ngram ? &*ngram : nullptr, w, kl_hooks(w, student, d.joint ? &*d.joint : nullptr, c.path));
  finish_run(c, w, student, student, d);
  return kExitOk;
}

inline int cmd_sample(const Config& c, const RunWriter& w) {
  if (c.task.checkpoint.empty()) throw ConfigError("task.checkpoint is required for sample");
  const Denoiser m = load_denoiser(c, c.task.checkpoint);
  write_samples(draw_samples(c, m, c.run.sample_count), (w.dir() / "samples.txt").string());
  return kExitOk;
}

inline int cmd_eval(const Config& c, const RunWriter& w) {
  if (c.task.checkpoint.empty()) throw ConfigError("task.checkpoint is required for eval");
  const Denoiser m = load_denoiser(c, c.task.checkpoint);
  const auto d = make_data(c);
  if (d.joint) {
    const auto grid = default_t_grid(5);
    w.eval(0, "posterior_kl", posterior_kl(m, *d.joint, c.path, grid));
    w.eval(0, "exact_nll", exact_nll(m, *d.joint, c.path, grid));
  }
  if (c.run.sample_count > 0) {
    const auto xs = draw_samples(c, m, c.run.sample_count);
    if (d.joint) w.eval(0, "sample_tv", tv_distance(empirical_counts(xs, c.vocab.size(), c.model.length), d.joint->probs()));
    if (d.region) w.eval(0, "right_half_mass", region_mass(xs, d.region));
    if (d.reward) {
      const auto st = reward_entropy_stats(xs, d.reward);
      w.eval(0, "mean_reward", st.mean_reward);
      w.eval(0, "sample_entropy", st.entropy);
    }
  }
  return kExitOk;
}

}  // namespace app

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"oracle-check", "pretrain",    "pretrain-parametric", "posttrain-dre",
                                              "posttrain-reward", "posttrain-dpo", "distill", "sample", "eval"};
  return names;
}

// Runs one subcommand with a parsed config. Exceptions propagate; see
// exit_code_for().
inline int run_subcommand(const std::string& name, const Config& c) {
  const RunWriter w(c.run.out);
  w.write_config(c.resolved);
  if (name == "oracle-check") return app::cmd_oracle_check(c, w);
  if (name == "pretrain") return app::cmd_pretrain(c, w);
  if (name == "pretrain-parametric") return app::cmd_pretrain_parametric(c, w);
  if (name == "posttrain-dre") return app::cmd_posttrain_dre(c, w);
  if (name == "posttrain-reward") return app::cmd_posttrain_reward(c, w);
  if (name == "posttrain-dpo") return app::cmd_posttrain_dpo(c, w);
  if (name == "distill") return app::cmd_distill(c, w);
  if (name == "sample") return app::cmd_sample(c, w);
  if (name == "eval") return app::cmd_eval(c, w);
  throw UsageError("unknown subcommand " + name);
}

// Config problems exit 2, numerical aborts exit 3, anything else 1.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const NumericalAbort*>(&e)) return kExitNumerical;
  return kExitFailure;
}

}  // namespace tcsm
