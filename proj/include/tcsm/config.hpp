#pragma once

// Run configuration: one JSON document with sections vocab, path, model,
// loss, optimizer, run and task. Every key has a default except vocab.size;
// unknown keys are rejected. resolved() returns the document with all
// defaults filled in.

#include <fstream>
#include <set>

#include "tcsm/posttrain.hpp"

namespace tcsm {

namespace detail {

// Reads one section, recording each value it hands out so the resolved
// section can be echoed back and leftovers reported.
class SectionReader {
 public:
  SectionReader(const nlohmann::json& root, std::string name) : name_(std::move(name)) {
    if (root.contains(name_)) {
      src_ = root.at(name_);
      if (!src_.is_object()) throw ConfigError(name_ + " must be a JSON object");
    } else {
      src_ = nlohmann::json::object();
    }
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    T v = fallback;
    if (src_.contains(key)) {
      try {
        v = src_.at(key).get<T>();
      } catch (const nlohmann::json::exception&) {
        throw ConfigError(field(key) + " has the wrong type");
      }
    }
    out_[key] = v;
    return v;
  }

  std::optional<int> get_optional_int(const std::string& key) {
    std::optional<int> v;
    if (src_.contains(key) && !src_.at(key).is_null()) {
      if (!src_.at(key).is_number_integer()) throw ConfigError(field(key) + " must be an integer or null");
      v = src_.at(key).get<int>();
    }
    out_[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    return v;
  }

  bool has(const std::string& key) const { return src_.contains(key); }
  std::string field(const std::string& key) const { return name_ + "." + key; }

  nlohmann::json finish() const {
    for (const auto& [k, v] : src_.items())
      if (!out_.contains(k)) throw ConfigError("unknown key " + field(k));
    return out_;
  }

 private:
  std::string name_;
  nlohmann::json src_;
  nlohmann::json out_ = nlohmann::json::object();
};

}  // namespace detail

struct RunConfig {
  long steps = 10000;
  int batch = 64;
  long eval_every = 500;
  long checkpoint_every = 0;
  bool record_wall_time = false;
  int sample_count = 1000;
  std::string sampler = "euler";  // euler | ancestral
  int sampler_steps = 256;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out = "runs/tcsm";
};

// Task keys are shared across subcommands; each subcommand reads the ones it
// needs and checks the required ones.
struct TaskConfig {
  std::string data = "random";  // random | grid | char | two_mode | teacher | file
  double concentration = 1.0;   // Dirichlet concentration of random joints
  std::string samples_file;     // data = file
  std::string init;             // "" | oracle | checkpoint path
  std::string pretrained;       // "" | oracle | perturbed_oracle | checkpoint path
  double perturbation = 0.5;    // log-normal scale for perturbed_oracle
  std::string checkpoint;       // sample / eval
  // oracle-check
  int instances = 20;
  // pretrain-parametric
  long target_samples = 100000;
  double smoothing = 1e-3;
  // posttrain-dre
  std::string generator = "gkl";
  std::string strategy = "i";
  // posttrain-reward / posttrain-dpo
  std::string reward = "grid_left_half";
  std::string estimator = "full";  // full | n1
  int samples = 8;
  double beta = 1.0;
  std::string preferences = "two_mode";
  int preference_pairs = 512;
  // distill
  std::string teacher = "random";  // random | checkpoint path
  int teacher_order = 2;
  double teacher_concentration = 0.5;
  std::string method = "exact";
  int K = 1;
  int ngram_order = 2;
  int ngram_samples = 2000;
  double tau = 1.0;
};

struct Config {
  Vocabulary vocab;
  PathSpec path;
  TimeDistribution omega = TimeDistribution::uniform();
  DenoiserConfig model;
  LossSpec loss;
  OptimizerConfig optimizer;
  RunConfig run;
  TaskConfig task;
  nlohmann::json resolved;

  TrainOptions train_options() const {
    TrainOptions o;
    o.steps = run.steps;
    o.batch = run.batch;
    o.workers = run.workers;
    o.eval_every = run.eval_every;
    o.checkpoint_every = run.checkpoint_every;
    o.record_wall_time = run.record_wall_time;
    return o;
  }

  RatioConfig ratio_config() const {
    RatioConfig r;
    r.kind = model.kind;
    r.vocab = vocab;
    r.length = model.length;
    r.time_bins = model.time_bins;
    r.hidden = model.hidden;
    r.time_frequencies = model.time_frequencies;
    return r;
  }

  EulerConfig sampler(std::uint64_t seed) const {
    EulerConfig e;
    e.steps = run.sampler_steps;
    e.seed = seed;
    return e;
  }

  // Module seeds are fixed offsets from the global seed.
  std::uint64_t data_seed() const { return run.seed + 1; }
  std::uint64_t init_seed() const { return run.seed + 2; }
  std::uint64_t train_seed() const { return run.seed + 3; }
  std::uint64_t sample_seed() const { return run.seed + 4; }
  std::uint64_t eval_seed() const { return run.seed + 5; }
};

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;
};

inline Config parse_config(const nlohmann::json& root, const ConfigOverrides& ov = {}) {
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> sections{"vocab", "path", "model", "loss", "optimizer", "run", "task"};
  for (const auto& [k, v] : root.items())
    if (!sections.count(k)) throw ConfigError("unknown config section " + k);

  Config c;
  nlohmann::json res;

  {
    detail::SectionReader r(root, "vocab");
    if (!r.has("size")) throw ConfigError("vocab.size is required");
    const int size = r.get<int>("size", 0);
    const auto mask = r.get_optional_int("mask_id");
    c.vocab = Vocabulary(size, mask);
    res["vocab"] = r.finish();
  }
  {
    detail::SectionReader r(root, "path");
    const auto source = source_from_string(r.get<std::string>("source", "uniform"));
    const auto sched = r.get<std::string>("schedule", "linear");
    const auto times = r.get<std::vector<double>>("schedule_times", {});
    const auto values = r.get<std::vector<double>>("schedule_values", {});
    NoiseSchedule ns;
    if (sched == "tabulated") ns = NoiseSchedule::tabulated(times, values);
    else if (sched != "linear") throw ConfigError("path.schedule must be \"linear\" or \"tabulated\"");
    if (source == Source::Mask && !c.vocab.has_mask())
      throw ConfigError("vocab.mask_id is required when path.source is \"mask\"");
    c.path = PathSpec(source, ns, c.vocab);
    const auto td = r.get<std::string>("time_distribution", "uniform");
    const int strata = r.get<int>("strata", 8);
    if (td == "stratified") c.omega = TimeDistribution::stratified(strata);
    else if (td != "uniform") throw ConfigError("path.time_distribution must be \"uniform\" or \"stratified\"");
    res["path"] = r.finish();
  }
  {
    detail::SectionReader r(root, "model");
    DenoiserConfig& m = c.model;
    m.vocab = c.vocab;
    m.source = c.path.source;
    m.kind = r.get<std::string>("kind", m.kind);
    m.length = r.get<int>("length", 2);
    m.time_bins = r.get<int>("time_bins", m.time_bins);
    m.hidden = r.get<std::vector<int>>("hidden", m.hidden);
    m.time_frequencies = r.get<int>("time_frequencies", m.time_frequencies);
    m.carry_over = r.get<bool>("carry_over", m.carry_over);
    m.validate();
    res["model"] = r.finish();
  }
  {
    detail::SectionReader r(root, "loss");
    LossSpec& l = c.loss;
    l.family = loss_family_from_string(r.get<std::string>("family", std::string(to_string(l.family))));
    l.bregman = bregman_from_string(r.get<std::string>("bregman", std::string(to_string(l.bregman))));
    l.stat = stat_divergence_from_string(r.get<std::string>("divergence", std::string(to_string(l.stat))));
    l.proposal = proposal_from_string(r.get<std::string>("proposal", std::string(to_string(l.proposal))));
    l.neighborhood.k = r.get<int>("neighborhood_k", 1);
    l.validate();
    res["loss"] = r.finish();
  }
  {
    detail::SectionReader r(root, "optimizer");
    OptimizerConfig& o = c.optimizer;
    o.kind = r.get<std::string>("kind", o.kind);
    o.lr = r.get<double>("lr", o.lr);
    o.beta1 = r.get<double>("beta1", o.beta1);
    o.beta2 = r.get<double>("beta2", o.beta2);
    o.eps = r.get<double>("eps", o.eps);
    o.clip = r.get<double>("clip", o.clip);
    o.warmup_fraction = r.get<double>("warmup_fraction", o.warmup_fraction);
    if (o.kind != "adam" && o.kind != "sgd") throw ConfigError("optimizer.kind must be \"adam\" or \"sgd\"");
    if (!(o.lr >= 0.0)) throw ConfigError("optimizer.lr must be >= 0");
    if (!(o.warmup_fraction >= 0.0 && o.warmup_fraction < 1.0)) throw ConfigError("optimizer.warmup_fraction must lie in [0, 1)");
    res["optimizer"] = r.finish();
  }
  {
    detail::SectionReader r(root, "run");
    RunConfig& u = c.run;
    u.steps = r.get<long>("steps", u.steps);
    u.batch = r.get<int>("batch", u.batch);
    u.eval_every = r.get<long>("eval_every", u.eval_every);
    u.checkpoint_every = r.get<long>("checkpoint_every", u.checkpoint_every);
    u.record_wall_time = r.get<bool>("record_wall_time", u.record_wall_time);
    u.sample_count = r.get<int>("sample_count", u.sample_count);
    u.sampler = r.get<std::string>("sampler", u.sampler);
    u.sampler_steps = r.get<int>("sampler_steps", u.sampler_steps);
    u.seed = r.get<std::uint64_t>("seed", u.seed);
    u.workers = r.get<int>("workers", u.workers);
    u.out = r.get<std::string>("out", u.out);
    if (u.steps < 0) throw ConfigError("run.steps must be >= 0");
    if (u.batch < 1) throw ConfigError("run.batch must be >= 1");
    if (u.sample_count < 0) throw ConfigError("run.sample_count must be >= 0");
    if (u.sampler != "euler" && u.sampler != "ancestral") throw ConfigError("run.sampler must be \"euler\" or \"ancestral\"");
    if (u.sampler == "ancestral" && c.path.source != Source::Mask) throw ConfigError("run.sampler \"ancestral\" needs the mask source");
    if (u.sampler_steps < 1) throw ConfigError("run.sampler_steps must be >= 1");
    auto out = r.finish();
    if (ov.seed) out["seed"] = u.seed = *ov.seed;
    if (ov.workers) out["workers"] = u.workers = *ov.workers;
    if (ov.out) out["out"] = u.out = *ov.out;
    if (u.workers < 1) throw ConfigError("run.workers must be >= 1");
    res["run"] = out;
  }
  {
    detail::SectionReader r(root, "task");
    TaskConfig& t = c.task;
    t.data = r.get<std::string>("data", t.data);
    t.concentration = r.get<double>("concentration", t.concentration);
    t.samples_file = r.get<std::string>("samples_file", t.samples_file);
    t.init = r.get<std::string>("init", t.init);
    t.pretrained = r.get<std::string>("pretrained", t.pretrained);
    t.perturbation = r.get<double>("perturbation", t.perturbation);
    t.checkpoint = r.get<std::string>("checkpoint", t.checkpoint);
    t.instances = r.get<int>("instances", t.instances);
    t.target_samples = r.get<long>("target_samples", t.target_samples);
    t.smoothing = r.get<double>("smoothing", t.smoothing);
    t.generator = r.get<std::string>("generator", t.generator);
    t.strategy = r.get<std::string>("strategy", t.strategy);
    t.reward = r.get<std::string>("reward", t.reward);
    t.estimator = r.get<std::string>("estimator", t.estimator);
    t.samples = r.get<int>("samples", t.samples);
    t.beta = r.get<double>("beta", t.beta);
    t.preferences = r.get<std::string>("preferences", t.preferences);
    t.preference_pairs = r.get<int>("preference_pairs", t.preference_pairs);
    t.teacher = r.get<std::string>("teacher", t.teacher);
    t.teacher_order = r.get<int>("teacher_order", t.teacher_order);
    t.teacher_concentration = r.get<double>("teacher_concentration", t.teacher_concentration);
    t.method = r.get<std::string>("method", t.method);
    t.K = r.get<int>("K", t.K);
    t.ngram_order = r.get<int>("ngram_order", t.ngram_order);
    t.ngram_samples = r.get<int>("ngram_samples", t.ngram_samples);
    t.tau = r.get<double>("tau", t.tau);
    static const std::set<std::string> data_kinds{"random", "grid", "char", "two_mode", "teacher", "file"};
    if (!data_kinds.count(t.data)) throw ConfigError("task.data must be one of random, grid, char, two_mode, teacher, file");
    if (!(t.concentration > 0.0)) throw ConfigError("task.concentration must be > 0");
    if (!(t.beta > 0.0) || !std::isfinite(t.beta)) throw ConfigError("task.beta must be a positive finite number");
    if (t.estimator != "full" && t.estimator != "n1") throw ConfigError("task.estimator must be \"full\" or \"n1\"");
    res["task"] = r.finish();
  }
  c.resolved = std::move(res);
  return c;
}

inline Config load_config(const std::string& file, const ConfigOverrides& ov = {}) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + file + " is not valid JSON: " + e.what());
  }
  return parse_config(j, ov);
}

}  // namespace tcsm
