#include "fssda/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include "fssda/errors.hpp"
#include "fssda/rng.hpp"

namespace fssda {
namespace {

constexpr std::uint64_t kTranslationTag = 0x7472616e736c6174ULL;

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t tag) { return mix64(seed ^ mix64(tag)); }

std::string lambda_label(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

std::string run_id(const std::string& method, const std::string& pair, const std::string& mode,
                   std::uint64_t seed) {
  return method + "__" + pair + "__" + mode + "__s" + std::to_string(seed);
}

std::uint64_t combine_hash(std::uint64_t a, std::uint64_t b) { return mix64(a ^ (b * 0x9e3779b97f4a7c15ULL)); }

FederationConfig job_config(const ExperimentConfig& config, std::uint64_t seed,
                            std::size_t num_sources) {
  FederationConfig f = config.federation;
  f.seed = seed;
  f.num_sources = num_sources;
  f.model.input_dim = config.benchmark.feature_dim;
  f.model.num_classes = config.benchmark.num_classes;
  return f;
}

// Training/test split of one domain into device shards.
struct SplitDomain {
  DomainDataset train;
  EvalSet test;
};

SplitDomain split_domain(const DomainDataset& ds, double test_fraction, std::uint64_t seed) {
  const TrainTestSplit split = split_test(ds, test_fraction, seed);
  return {subset(ds, split.train), EvalSet::from(subset(ds, split.test))};
}

}  // namespace

ShiftSpec PairSpec::shift(std::uint64_t seed, std::size_t feature_dim) const {
  ShiftSpec s;
  s.theta = theta;
  s.scale = scale;
  s.noise = noise;
  s.translation = random_translation(sub_seed(seed, kTranslationTag ^ std::hash<std::string>{}(name)),
                                     feature_dim, translation_norm);
  return s;
}

const PairSpec& ExperimentConfig::pair(const std::string& name) const {
  for (const auto& p : benchmark.pairs) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown domain pair '" + name + "'");
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("experiment.methods: at least one method is required");
  for (const auto& m : methods) {
    if (std::ranges::find(kKnownMethods, m) == kKnownMethods.end()) {
      throw ConfigError("experiment.methods: unknown method '" + m + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("experiment.seeds: at least one seed is required");
  if (pair_names.empty()) throw ConfigError("benchmark.pairs: at least one pair is required");
  for (const auto& name : pair_names) (void)pair(name);
  if (benchmark.modes.empty()) throw ConfigError("partition.modes: at least one mode is required");
  for (const auto& m : benchmark.modes) {
    if (!(m.beta > 0.0)) throw ConfigError("partition." + m.name + "_beta must be positive");
  }
  for (const auto& p : benchmark.pairs) {
    if (!(p.scale > 0.0)) throw ConfigError("pair." + p.name + ".scale must be positive");
    if (!(p.noise >= 0.0)) throw ConfigError("pair." + p.name + ".noise must be non-negative");
  }
  if (std::ranges::find(methods, std::string("fssda-multisource")) != methods.end() &&
      multisource_sources.size() < 2) {
    throw ConfigError("multisource.sources: multi-source runs need at least two source pairs");
  }
  for (const auto& name : multisource_sources) (void)pair(name);
  for (double l : lambda_sweep) {
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("experiment.lambda_sweep: values must lie in [0, 1]");
  }
  if (!(benchmark.test_fraction > 0.0 && benchmark.test_fraction < 1.0)) {
    throw ConfigError("benchmark.test_fraction must lie strictly between 0 and 1");
  }
  try {
    FederationConfig f = job_config(*this, seeds.front(), 1);
    f.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("federation: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  auto& b = c.benchmark;
  b.num_classes = 8;
  b.feature_dim = 64;
  b.source_per_device = 200;
  b.target_per_device = 200;
  b.labeled_per_class = 3;
  b.test_fraction = 0.25;
  b.mixture = MixtureSpec{3.0, 1.25, true};
  b.pairs = {
      PairSpec{"small", std::numbers::pi / 12, 1.0, 0.3, 0.0},
      PairSpec{"large", std::numbers::pi / 3, 1.5, 0.3, 0.0},
      PairSpec{"msA", std::numbers::pi / 4, 1.2, 0.3, 0.0},
      PairSpec{"msB", -std::numbers::pi / 4, 1.2, 0.3, 0.0},
  };
  b.modes = {PartitionMode{"iid", 1e6}, PartitionMode{"noniid", 0.1}};

  auto& f = c.federation;
  f.num_devices = 5;
  f.rounds = 100;
  f.local_epochs = 1;
  f.learning_rate = 0.5;
  f.temperature = kDefaultTemperature;
  f.model.hidden_dim = 0;

  c.pair_names = {"small", "large"};
  c.methods = {"fssda", "ssdaonly", "floly"};
  c.lambda_sweep = {0.1, 0.5, 0.9};
  c.seeds = {1, 2, 3, 4, 5};
  c.multisource_sources = {"msA", "msB"};
  c.output_dir = "results";
  return c;
}

ExperimentConfig ExperimentConfig::from_store(const ConfigStore& s) {
  ExperimentConfig c = defaults();
  auto& b = c.benchmark;
  b.num_classes = s.get_size("benchmark.num_classes", b.num_classes);
  b.feature_dim = s.get_size("benchmark.feature_dim", b.feature_dim);
  b.source_per_device = s.get_size("benchmark.source_per_device", b.source_per_device);
  b.target_per_device = s.get_size("benchmark.target_per_device", b.target_per_device);
  b.labeled_per_class = s.get_size("benchmark.labeled_per_class", b.labeled_per_class);
  b.test_fraction = s.get_double("benchmark.test_fraction", b.test_fraction);
  b.mixture.class_radius = s.get_double("benchmark.class_radius", b.mixture.class_radius);
  b.mixture.class_std = s.get_double("benchmark.class_std", b.mixture.class_std);
  b.mixture.plane_aligned = s.get_bool("benchmark.plane_aligned", b.mixture.plane_aligned);

  const auto names = s.get_list("benchmark.pairs", c.pair_names);
  // Pairs referenced by multisource.sources are defined the same way.
  c.multisource_sources = s.get_list("multisource.sources", c.multisource_sources);
  std::vector<std::string> all_names = names;
  for (const auto& n : c.multisource_sources) {
    if (std::ranges::find(all_names, n) == all_names.end()) all_names.push_back(n);
  }
  std::vector<PairSpec> pairs;
  for (const auto& name : all_names) {
    PairSpec p{name};
    for (const auto& d : b.pairs) {
      if (d.name == name) p = d;
    }
    const std::string prefix = "pair." + name + ".";
    p.theta = s.get_double(prefix + "theta", p.theta);
    p.scale = s.get_double(prefix + "scale", p.scale);
    p.noise = s.get_double(prefix + "noise", p.noise);
    p.translation_norm = s.get_double(prefix + "translation", p.translation_norm);
    pairs.push_back(p);
  }
  b.pairs = pairs;
  c.pair_names = names;

  std::vector<std::string> default_modes;
  for (const auto& m : b.modes) default_modes.push_back(m.name);
  std::vector<PartitionMode> modes;
  for (const auto& name : s.get_list("partition.modes", default_modes)) {
    PartitionMode m{name, name == "iid" ? 1e6 : 0.1};
    m.beta = s.get_double("partition." + name + "_beta", m.beta);
    modes.push_back(m);
  }
  b.modes = modes;

  auto& f = c.federation;
  f.num_devices = s.get_size("federation.num_devices", f.num_devices);
  f.rounds = s.get_size("federation.rounds", f.rounds);
  f.local_epochs = s.get_size("federation.local_epochs", f.local_epochs);
  f.learning_rate = s.get_double("federation.learning_rate", f.learning_rate);
  f.temperature = s.get_double("federation.temperature", f.temperature);
  f.model.hidden_dim = s.get_size("federation.hidden_dim", f.model.hidden_dim);
  f.batch_size = s.get_size("federation.batch_size", f.batch_size);
  f.threads = s.get_size("federation.threads", f.threads);
  const std::string lambda = s.get_string("federation.lambda", "adaptive");
  if (lambda == "adaptive") {
    f.lambda = LambdaMode::make_adaptive();
  } else {
    try {
      f.lambda = LambdaMode::make_fixed(std::stod(lambda));
    } catch (const std::exception&) {
      throw ConfigError("field 'federation.lambda': expected 'adaptive' or a number in [0, 1]");
    }
  }
  const std::string hls = s.get_string("federation.hard_loss_scale", "labeled_rows");
  if (hls == "labeled_rows") {
    f.hard_loss_scale = HardLossScale::labeled_rows;
  } else if (hls == "all_rows") {
    f.hard_loss_scale = HardLossScale::all_rows;
  } else {
    throw ConfigError("field 'federation.hard_loss_scale': expected 'labeled_rows' or 'all_rows'");
  }
  const std::string agg = s.get_string("federation.aggregation", "uniform");
  if (agg == "uniform") {
    f.aggregation = Aggregation::uniform;
  } else if (agg == "weighted") {
    f.aggregation = Aggregation::sample_weighted;
  } else {
    throw ConfigError("field 'federation.aggregation': expected 'uniform' or 'weighted'");
  }
  f.serial_max_source_rounds =
      s.get_size("federation.serial_max_source_rounds", f.serial_max_source_rounds);
  f.serial_patience = s.get_size("federation.serial_patience", f.serial_patience);
  f.serial_tolerance = s.get_double("federation.serial_tolerance", f.serial_tolerance);
  f.frank_wolfe.max_iters = s.get_size("frank_wolfe.max_iters", f.frank_wolfe.max_iters);
  f.frank_wolfe.tol = s.get_double("frank_wolfe.tol", f.frank_wolfe.tol);
  f.frank_wolfe.normalize = s.get_bool("frank_wolfe.normalize", f.frank_wolfe.normalize);

  c.methods = s.get_list("experiment.methods", c.methods);
  c.lambda_sweep = s.get_doubles("experiment.lambda_sweep", c.lambda_sweep);
  c.seeds = s.get_u64s("experiment.seeds", c.seeds);
  c.output_dir = s.get_string("experiment.output_dir", c.output_dir.string());
  c.record_timing = s.get_bool("experiment.record_timing", c.record_timing);
  c.jobs = s.get_size("experiment.jobs", c.jobs);

  const auto unused = s.unused_keys();
  if (!unused.empty()) {
    throw ConfigError("unknown field '" + unused.front().first + "'", unused.front().second);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path,
                                        std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  ConfigStore store = ConfigStore::parse(in);
  for (const auto& o : overrides) store.apply_override(o);
  return from_store(store);
}

std::string default_config_text() {
  const ExperimentConfig c = ExperimentConfig::defaults();
  const auto& b = c.benchmark;
  const auto& f = c.federation;
  auto join = [](const auto& items) {
    std::ostringstream s;
    for (std::size_t i = 0; i < items.size(); ++i) s << (i ? ", " : "") << items[i];
    return s.str();
  };
  std::ostringstream o;
  o << std::setprecision(17);
  o << "# fssda experiment configuration. Any key can be overridden on the command\n"
       "# line with --set section.key=value.\n\n";
  o << "[benchmark]\n"
    << "num_classes = " << b.num_classes << "\n"
    << "feature_dim = " << b.feature_dim << "\n"
    << "# training pool per device (the target pool is split into train/test)\n"
    << "source_per_device = " << b.source_per_device << "\n"
    << "target_per_device = " << b.target_per_device << "\n"
    << "# labeled target samples per class, across all devices together\n"
    << "labeled_per_class = " << b.labeled_per_class << "\n"
    << "test_fraction = " << b.test_fraction << "\n"
    << "# class means lie on a sphere of this radius; within-class std\n"
    << "class_radius = " << b.mixture.class_radius << "\n"
    << "class_std = " << b.mixture.class_std << "\n"
    << "# one coordinate plane per class mean (needs feature_dim >= 2 * num_classes)\n"
    << "plane_aligned = " << (b.mixture.plane_aligned ? "true" : "false") << "\n"
    << "# domain pairs run by `run` and `sweep-lambda`\n"
    << "pairs = " << join(c.pair_names) << "\n\n";
  o << "# Domain shifts: rotation angle (radians, applied in every coordinate plane),\n"
       "# scale factor, additive noise std, translation norm.\n";
  for (const auto& p : b.pairs) {
    o << "[pair." << p.name << "]\n"
      << "theta = " << p.theta << "\n"
      << "scale = " << p.scale << "\n"
      << "noise = " << p.noise << "\n"
      << "translation = " << p.translation_norm << "\n\n";
  }
  std::vector<std::string> mode_names;
  for (const auto& m : b.modes) mode_names.push_back(m.name);
  o << "[partition]\n"
    << "modes = " << join(mode_names) << "\n";
  for (const auto& m : b.modes) o << m.name << "_beta = " << m.beta << "\n";
  o << "\n[federation]\n"
    << "num_devices = " << f.num_devices << "\n"
    << "rounds = " << f.rounds << "\n"
    << "local_epochs = " << f.local_epochs << "\n"
    << "learning_rate = " << f.learning_rate << "\n"
    << "temperature = " << f.temperature << "\n"
    << "# 0 = softmax regression, >0 = one tanh hidden layer\n"
    << "hidden_dim = " << f.model.hidden_dim << "\n"
    << "# 0 = full-batch local epochs\n"
    << "batch_size = " << f.batch_size << "\n"
    << "# adaptive, or a fixed value in [0, 1]\n"
    << "lambda = adaptive\n"
    << "# labeled_rows: hard loss is a mean over labeled rows; all_rows: over all rows\n"
    << "hard_loss_scale = labeled_rows\n"
    << "# uniform or weighted (by local sample count)\n"
    << "aggregation = uniform\n"
    << "# worker threads for device updates within a round\n"
    << "threads = " << f.threads << "\n"
    << "serial_max_source_rounds = " << f.serial_max_source_rounds << "\n"
    << "serial_patience = " << f.serial_patience << "\n"
    << "serial_tolerance = " << f.serial_tolerance << "\n\n";
  o << "[frank_wolfe]\n"
    << "max_iters = " << f.frank_wolfe.max_iters << "\n"
    << "tol = " << f.frank_wolfe.tol << "\n"
    << "normalize = " << (f.frank_wolfe.normalize ? "true" : "false") << "\n\n";
  o << "[multisource]\n"
    << "sources = " << join(c.multisource_sources) << "\n\n";
  o << "[experiment]\n"
    << "# fssda, fssda-serial, floly, ssdaonly (fssda-multisource: see `multisource`)\n"
    << "methods = " << join(c.methods) << "\n"
    << "lambda_sweep = " << join(c.lambda_sweep) << "\n"
    << "seeds = " << join(c.seeds) << "\n"
    << "# FSSDA_OUTPUT_DIR overrides this\n"
    << "output_dir = " << c.output_dir.string() << "\n"
    << "# write measured wall_ms (makes outputs differ between runs)\n"
    << "record_timing = " << (c.record_timing ? "true" : "false") << "\n"
    << "# concurrent runs\n"
    << "jobs = " << c.jobs << "\n";
  return o.str();
}

Federation make_federation(const BenchmarkSpec& bench, const PairSpec& pair, double beta,
                           std::size_t num_devices, std::uint64_t seed) {
  const DomainPair domains = make_domain_pair(
      seed, bench.num_classes, bench.feature_dim, bench.source_per_device * num_devices,
      bench.target_per_device * num_devices, pair.shift(seed, bench.feature_dim), bench.mixture);
  const SplitDomain source = split_domain(domains.source, bench.test_fraction, seed);
  const SplitDomain target = split_domain(domains.target, bench.test_fraction, sub_seed(seed, 1));
  const MaskedPool pool = mask_labels(target.train, bench.labeled_per_class, seed);
  const PartitionPlan source_plan =
      dirichlet_partition(source.train.labels, num_devices, beta, seed);
  const PartitionPlan target_plan =
      dirichlet_partition(target.train.labels, num_devices, beta, sub_seed(seed, 2));

  Federation fed;
  for (std::size_t k = 0; k < num_devices; ++k) {
    std::vector<LabeledSet> shards{LabeledSet::from(subset(source.train, source_plan.assignments[k]))};
    fed.devices.emplace_back(k, std::move(shards),
                             make_target_shard(pool, target_plan.assignments[k]), seed);
  }
  fed.source_tests = {source.test};
  fed.target_test = target.test;
  fed.partition_hash = combine_hash(partition_hash(source_plan), partition_hash(target_plan));
  return fed;
}

Federation make_multi_source_federation(const BenchmarkSpec& bench,
                                        std::span<const PairSpec> sources, double beta,
                                        std::size_t num_devices, std::uint64_t seed,
                                        std::span<const std::size_t> source_indices) {
  std::vector<ShiftSpec> shifts;
  for (const auto& p : sources) shifts.push_back(p.shift(seed, bench.feature_dim));
  const MultiSourceDomains domains =
      make_multi_source(seed, bench.num_classes, bench.feature_dim,
                        bench.source_per_device * num_devices, bench.target_per_device * num_devices,
                        shifts, bench.mixture);
  const SplitDomain target = split_domain(domains.target, bench.test_fraction, sub_seed(seed, 1));
  const MaskedPool pool = mask_labels(target.train, bench.labeled_per_class, seed);
  const PartitionPlan target_plan =
      dirichlet_partition(target.train.labels, num_devices, beta, sub_seed(seed, 2));

  std::vector<SplitDomain> split_sources;
  std::vector<PartitionPlan> source_plans;
  for (std::size_t j = 0; j < domains.sources.size(); ++j) {
    split_sources.push_back(split_domain(domains.sources[j], bench.test_fraction, sub_seed(seed, 100 + j)));
    source_plans.push_back(dirichlet_partition(split_sources.back().train.labels, num_devices, beta,
                                               sub_seed(seed, 200 + j)));
  }

  Federation fed;
  std::uint64_t hash = partition_hash(target_plan);
  for (std::size_t j : source_indices) {
    if (j >= sources.size()) throw ParameterError("source index out of range");
    fed.source_tests.push_back(split_sources[j].test);
    hash = combine_hash(hash, partition_hash(source_plans[j]));
  }
  for (std::size_t k = 0; k < num_devices; ++k) {
    std::vector<LabeledSet> shards;
    for (std::size_t j : source_indices) {
      shards.push_back(LabeledSet::from(subset(split_sources[j].train, source_plans[j].assignments[k])));
    }
    fed.devices.emplace_back(k, std::move(shards),
                             make_target_shard(pool, target_plan.assignments[k]), seed);
  }
  fed.target_test = target.test;
  fed.partition_hash = hash;
  return fed;
}

RunResult run_method(const std::string& method, const FederationConfig& config,
                     Federation& federation) {
  if (method == "fssda" || method == "fssda-multisource") return run_fssda(config, federation);
  if (method == "fssda-serial") return run_serial(config, federation);
  if (method == "floly") return run_floly(config, federation);
  if (method == "ssdaonly") return run_ssdaonly(config, federation);
  throw ParameterError("unknown method '" + method + "'");
}

const SummaryRow* SummaryTable::find(const std::string& method, const std::string& pair,
                                     const std::string& mode) const {
  for (const auto& r : rows) {
    if (r.method == method && r.pair == pair && r.mode == mode) return &r;
  }
  return nullptr;
}

SummaryTable summarize(std::span<const RunRecord> runs) {
  SummaryTable table;
  std::vector<std::vector<double>> finals;
  for (const auto& run : runs) {
    std::size_t i = 0;
    while (i < table.rows.size() && !(table.rows[i].method == run.method &&
                                      table.rows[i].pair == run.pair &&
                                      table.rows[i].mode == run.mode)) {
      ++i;
    }
    if (i == table.rows.size()) {
      table.rows.push_back({run.method, run.pair, run.mode});
      finals.emplace_back();
    }
    finals[i].push_back(run.result.final_target_acc());
  }
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& v = finals[i];
    double sum = 0.0;
    for (double x : v) sum += x;
    const double mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    table.rows[i].runs = v.size();
    table.rows[i].mean = mean;
    table.rows[i].std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  }
  return table;
}

namespace {

struct Job {
  std::string method;
  std::string pair;
  std::string mode;
  double beta = 0.0;
  std::uint64_t seed = 0;
  std::string label;                // method name written to outputs
  std::optional<double> fixed_lambda;
  std::vector<std::size_t> source_indices;  // multi-source jobs only
};

ExperimentOutcome execute(const ExperimentConfig& config, const std::vector<Job>& jobs) {
  std::vector<RunRecord> records(jobs.size());
  std::vector<PairSpec> ms_pairs;
  for (const auto& name : config.multisource_sources) ms_pairs.push_back(config.pair(name));
  parallel_for(jobs.size(), config.jobs, [&](std::size_t i) {
    const Job& job = jobs[i];
    Federation fed = job.source_indices.empty()
                         ? make_federation(config.benchmark, config.pair(job.pair), job.beta,
                                           config.federation.num_devices, job.seed)
                         : make_multi_source_federation(config.benchmark, ms_pairs, job.beta,
                                                        config.federation.num_devices, job.seed,
                                                        job.source_indices);
    FederationConfig fc =
        job_config(config, job.seed, std::max<std::size_t>(1, job.source_indices.size()));
    if (job.fixed_lambda) fc.lambda = LambdaMode::make_fixed(*job.fixed_lambda);
    if (job.method == "fssda-adaptive") fc.lambda = LambdaMode::make_adaptive();
    const std::string method = job.method == "fssda-adaptive" ? "fssda" : job.method;
    RunRecord& rec = records[i];
    rec.method = job.label;
    rec.pair = job.pair;
    rec.mode = job.mode;
    rec.seed = job.seed;
    rec.run_id = run_id(job.label, job.pair, job.mode, job.seed);
    rec.partition_hash = fed.partition_hash;
    rec.result = run_method(method, fc, fed);
  });
  ExperimentOutcome out;
  out.runs = std::move(records);
  out.summary = summarize(out.runs);
  return out;
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& config) {
  config.validate();
  std::vector<Job> jobs;
  for (const auto& method : config.methods) {
    if (method == "fssda-multisource") continue;
    for (const auto& pair : config.pair_names) {
      for (const auto& mode : config.benchmark.modes) {
        for (auto seed : config.seeds) jobs.push_back({method, pair, mode.name, mode.beta, seed, method, std::nullopt, {}});
      }
    }
  }
  ExperimentOutcome out = execute(config, jobs);
  if (std::ranges::find(config.methods, std::string("fssda-multisource")) != config.methods.end()) {
    ExperimentOutcome ms = run_multisource(config);
    for (auto& r : ms.runs) {
      if (r.method == "fssda-multisource") out.runs.push_back(std::move(r));
    }
    out.summary = summarize(out.runs);
  }
  return out;
}

ExperimentOutcome run_lambda_sweep(const ExperimentConfig& config, std::span<const double> lambdas) {
  config.validate();
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw ParameterError("sweep lambda must lie in [0, 1]");
  }
  std::vector<Job> jobs;
  for (const auto& pair : config.pair_names) {
    for (const auto& mode : config.benchmark.modes) {
      for (auto seed : config.seeds) {
        for (double l : lambdas) {
          Job j{"fssda", pair, mode.name, mode.beta, seed, "fssda-lambda-" + lambda_label(l), std::nullopt, {}};
          j.fixed_lambda = l;
          jobs.push_back(j);
        }
        jobs.push_back({"fssda-adaptive", pair, mode.name, mode.beta, seed, "fssda-adaptive", std::nullopt, {}});
      }
    }
  }
  return execute(config, jobs);
}

ExperimentOutcome run_multisource(const ExperimentConfig& config) {
  config.validate();
  if (config.multisource_sources.empty()) {
    throw ConfigError("multisource.sources: at least one source pair is required");
  }
  const std::size_t S = config.multisource_sources.size();
  std::string combined;
  for (const auto& n : config.multisource_sources) combined += (combined.empty() ? "" : "+") + n;
  std::vector<Job> jobs;
  for (const auto& mode : config.benchmark.modes) {
    for (auto seed : config.seeds) {
      Job multi{"fssda-multisource", combined, mode.name, mode.beta, seed, "fssda-multisource", std::nullopt, {}};
      for (std::size_t j = 0; j < S; ++j) multi.source_indices.push_back(j);
      jobs.push_back(multi);
      for (std::size_t j = 0; j < S; ++j) {
        Job single{"fssda", combined, mode.name, mode.beta, seed,
                   "fssda-single-" + config.multisource_sources[j], std::nullopt, {}};
        single.source_indices = {j};
        jobs.push_back(single);
      }
    }
  }
  return execute(config, jobs);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_round_csv(std::ostream& out, const RunRecord& run, bool record_timing) {
  out << "run_id,method,seed,round,source_acc,target_acc,target_loss,mean_lambda,min_lambda,"
         "max_lambda,wall_ms,partition_hash\n";
  for (const auto& m : run.result.rounds) {
    out << run.run_id << ',' << run.method << ',' << run.seed << ',' << m.round << ','
        << format_double(m.source_acc) << ',' << format_double(m.target_acc) << ','
        << format_double(m.target_loss) << ',' << format_double(m.mean_lambda()) << ','
        << format_double(m.min_lambda()) << ',' << format_double(m.max_lambda()) << ','
        << format_double(record_timing ? m.wall_ms : 0.0) << ',' << hex64(run.partition_hash)
        << '\n';
  }
}

void write_weights_csv(std::ostream& out, const RunRecord& run) {
  std::size_t width = 0;
  for (const auto& m : run.result.rounds) {
    for (const auto& w : m.device_weights) width = std::max(width, w.size());
  }
  out << "run_id,round,device";
  for (std::size_t i = 0; i < width; ++i) out << ",w" << i;
  out << '\n';
  for (const auto& m : run.result.rounds) {
    for (std::size_t k = 0; k < m.device_weights.size(); ++k) {
      const auto& w = m.device_weights[k];
      if (w.empty()) continue;
      out << run.run_id << ',' << m.round << ',' << k;
      for (double v : w) out << ',' << format_double(v);
      out << '\n';
    }
  }
}

void write_summary_csv(std::ostream& out, const SummaryTable& table) {
  out << "method,pair,mode,runs,mean_target_acc,std_target_acc\n";
  for (const auto& r : table.rows) {
    out << r.method << ',' << r.pair << ',' << r.mode << ',' << r.runs << ','
        << format_double(r.mean) << ',' << format_double(r.std) << '\n';
  }
}

void write_summary_text(std::ostream& out, const SummaryTable& table) {
  std::size_t wm = 6, wp = 4, wd = 4;
  for (const auto& r : table.rows) {
    wm = std::max(wm, r.method.size());
    wp = std::max(wp, r.pair.size());
    wd = std::max(wd, r.mode.size());
  }
  out << std::left << std::setw(static_cast<int>(wm)) << "method" << "  "
      << std::setw(static_cast<int>(wp)) << "pair" << "  " << std::setw(static_cast<int>(wd))
      << "mode" << "  runs  final target accuracy\n";
  for (const auto& r : table.rows) {
    char acc[64];
    std::snprintf(acc, sizeof acc, "%6.2f%% +/- %5.2f", 100.0 * r.mean, 100.0 * r.std);
    out << std::left << std::setw(static_cast<int>(wm)) << r.method << "  "
        << std::setw(static_cast<int>(wp)) << r.pair << "  " << std::setw(static_cast<int>(wd))
        << r.mode << "  " << std::right << std::setw(4) << r.runs << "  " << acc << '\n';
  }
}

std::vector<std::filesystem::path> write_outputs(const ExperimentOutcome& outcome,
                                                 const std::filesystem::path& dir,
                                                 bool record_timing) {
  namespace fs = std::filesystem;
  std::vector<fs::path> written;
  fs::create_directories(dir / "runs");
  auto open = [&](const fs::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
    return f;
  };
  auto close = [&](std::ofstream& f, const fs::path& p) {
    f.close();
    if (!f) throw std::runtime_error("failed writing '" + p.string() + "'");
    written.push_back(p);
  };
  for (const auto& run : outcome.runs) {
    const fs::path p = dir / "runs" / (run.run_id + ".csv");
    auto f = open(p);
    write_round_csv(f, run, record_timing);
    close(f, p);
    const bool has_weights = std::ranges::any_of(run.result.rounds, [](const RoundMetrics& m) {
      return std::ranges::any_of(m.device_weights, [](const auto& w) { return w.size() > 2; });
    });
    if (has_weights) {
      const fs::path wp = dir / "runs" / (run.run_id + "_weights.csv");
      auto wf = open(wp);
      write_weights_csv(wf, run);
      close(wf, wp);
    }
  }
  {
    const fs::path p = dir / "summary.csv";
    auto f = open(p);
    write_summary_csv(f, outcome.summary);
    close(f, p);
  }
  {
    const fs::path p = dir / "summary.txt";
    auto f = open(p);
    write_summary_text(f, outcome.summary);
    close(f, p);
  }
  return written;
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& config) {
  if (const char* env = std::getenv("FSSDA_OUTPUT_DIR"); env && *env) return env;
  return config.output_dir;
}

}  // namespace fssda
