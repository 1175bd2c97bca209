#include "fssda/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "fssda/errors.hpp"

namespace fssda {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Runs E epochs of cross-entropy SGD on (features, targets) at temperature 1.
ParamVector train_supervised(ParamVector params, const Matrix& features, const Matrix& targets,
                             const FederationConfig& config, Rng& rng) {
  const std::size_t n = features.rows();
  const bool full_batch = config.batch_size == 0 || config.batch_size >= n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < config.local_epochs; ++e) {
    if (full_batch) {
      params = sgd_step(params, grad(params, Batch{features, targets}, 1.0), config.learning_rate);
      continue;
    }
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Batch batch{features.select_rows(idx), targets.select_rows(idx)};
      params = sgd_step(params, grad(params, batch, 1.0), config.learning_rate);
    }
  }
  return params;
}

ImitationWeights choose_weights(std::span<const ParamVector> term_grads,
                                const FederationConfig& config) {
  const std::size_t sources = term_grads.size() - 1;
  if (!config.lambda.adaptive) {
    if (sources == 1) return ImitationWeights::single(config.lambda.fixed);
    ImitationWeights w;
    w.lambdas.assign(sources + 1, (1.0 - config.lambda.fixed) / static_cast<double>(sources));
    w.lambdas[0] = config.lambda.fixed;
    return w;
  }
  if (sources == 1) return ImitationWeights::single(adaptive_lambda(term_grads[0], term_grads[1]));
  return frank_wolfe_simplex(term_grads, config.frank_wolfe).weights;
}

double mean_accuracy(std::span<const ParamVector> models, std::span<const EvalSet> sets) {
  double acc = 0.0;
  for (std::size_t j = 0; j < models.size(); ++j) {
    acc += accuracy(models[j], sets[j].features, sets[j].labels);
  }
  return acc / static_cast<double>(models.size());
}

double eval_loss(const ParamVector& model, const EvalSet& set) {
  const Matrix probs = softmax_t(forward_logits(model, set.features), 1.0);
  return cross_entropy(one_hot(set.labels, model.spec().num_classes), probs);
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

void check_federation(const FederationConfig& config, const Federation& fed) {
  config.validate();
  if (fed.devices.empty()) throw ParameterError("federation has no devices");
  for (const auto& d : fed.devices) {
    if (d.num_sources() != config.num_sources) {
      throw ParameterError("device " + std::to_string(d.id()) + " holds " +
                           std::to_string(d.num_sources()) + " source shards, config expects " +
                           std::to_string(config.num_sources));
    }
  }
  if (fed.source_tests.size() != config.num_sources) {
    throw ParameterError("one source test set per source domain is required");
  }
}

// Shared round engine for the federated schedules.
class Engine {
 public:
  Engine(const FederationConfig& config, Federation& fed) : config_(config), fed_(fed) {
    check_federation(config, fed);
  }

  // Returns the aggregated source models, or the inputs for skipped sources.
  std::vector<ParamVector> source_round(const std::vector<ParamVector>& globals,
                                        RoundMetrics& m, std::size_t& aggregations) {
    std::vector<ParamVector> next = globals;
    const std::size_t K = fed_.devices.size();
    for (std::size_t s = 0; s < globals.size(); ++s) {
      std::vector<std::optional<ParamVector>> locals(K);
      parallel_for(K, config_.threads, [&](std::size_t k) {
        locals[k] = device_source_update(globals[s], fed_.devices[k], config_, s);
      });
      std::vector<ParamVector> ok;
      std::vector<double> counts;
      for (std::size_t k = 0; k < K; ++k) {
        if (!locals[k]) {
          ++m.skipped_source_devices;
          continue;
        }
        ok.push_back(std::move(*locals[k]));
        counts.push_back(static_cast<double>(fed_.devices[k].source_size(s)));
      }
      if (!ok.empty()) next[s] = aggregate(ok, counts, config_.aggregation);
      ++aggregations;
    }
    return next;
  }

  ParamVector target_round(const ParamVector& global, std::span<const ParamVector> sources,
                           RoundMetrics& m, std::size_t& aggregations) {
    const std::size_t K = fed_.devices.size();
    std::vector<std::optional<TargetUpdate>> locals(K);
    parallel_for(K, config_.threads, [&](std::size_t k) {
      locals[k] = device_target_update(global, sources, fed_.devices[k], config_);
    });
    std::vector<ParamVector> ok;
    std::vector<double> counts;
    m.device_lambda.assign(K, kNaN);
    m.device_weights.assign(K, {});
    for (std::size_t k = 0; k < K; ++k) {
      if (!locals[k]) {
        ++m.skipped_target_devices;
        continue;
      }
      record_weights(*locals[k], k, m);
      ok.push_back(std::move(locals[k]->params));
      counts.push_back(static_cast<double>(fed_.devices[k].target_size()));
    }
    ++aggregations;
    return ok.empty() ? global : aggregate(ok, counts, config_.aggregation);
  }

  ParamVector labeled_round(const ParamVector& global, RoundMetrics& m,
                            std::size_t& aggregations) {
    const std::size_t K = fed_.devices.size();
    std::vector<std::optional<ParamVector>> locals(K);
    parallel_for(K, config_.threads, [&](std::size_t k) {
      locals[k] = device_labeled_update(global, fed_.devices[k], config_);
    });
    std::vector<ParamVector> ok;
    std::vector<double> counts;
    m.device_lambda.assign(K, kNaN);
    for (std::size_t k = 0; k < K; ++k) {
      if (!locals[k]) {
        ++m.skipped_target_devices;
        continue;
      }
      ok.push_back(std::move(*locals[k]));
      counts.push_back(static_cast<double>(fed_.devices[k].target_view().num_labeled()));
    }
    ++aggregations;
    return ok.empty() ? global : aggregate(ok, counts, config_.aggregation);
  }

  static void record_weights(const TargetUpdate& u, std::size_t k, RoundMetrics& m) {
    double sum = 0.0;
    for (const auto& w : u.epoch_weights) sum += w.hard();
    m.device_lambda[k] =
        u.epoch_weights.empty() ? kNaN : sum / static_cast<double>(u.epoch_weights.size());
    if (!u.epoch_weights.empty()) m.device_weights[k] = u.epoch_weights.back().lambdas;
    m.hard_weight_zero += u.hard_weight_zero;
  }

  void evaluate(RoundMetrics& m, std::span<const ParamVector> sources,
                const ParamVector& target) const {
    m.source_acc = sources.empty() ? kNaN : mean_accuracy(sources, fed_.source_tests);
    m.target_acc = accuracy(target, fed_.target_test.features, fed_.target_test.labels);
    m.target_loss = eval_loss(target, fed_.target_test);
  }

  void reset_locals(const InitialModels& init) {
    for (auto& d : fed_.devices) {
      d.local_source = init.sources;
      d.local_target = init.target;
    }
  }

 private:
  const FederationConfig& config_;
  Federation& fed_;
};

RunResult start_result(const InitialModels& init, const Federation& fed) {
  RunResult r;
  r.initial_sources = init.sources;
  r.initial_target = init.target;
  r.global_sources = init.sources;
  r.global_target = init.target;
  r.initial_target_acc =
      accuracy(init.target, fed.target_test.features, fed.target_test.labels);
  return r;
}

}  // namespace

LabeledSet LabeledSet::from(const DomainDataset& ds) {
  return {ds.features, one_hot(ds.labels, ds.num_classes)};
}

void FederationConfig::validate() const {
  model.validate();
  if (num_devices < 1) throw ParameterError("num_devices must be at least 1");
  if (local_epochs < 1) throw ParameterError("local_epochs must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ParameterError("learning_rate must be finite and non-negative");
  }
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
  if (!lambda.adaptive && !(lambda.fixed >= 0.0 && lambda.fixed <= 1.0)) {
    throw ParameterError("fixed lambda must lie in [0, 1]");
  }
  if (num_sources < 1) throw ParameterError("num_sources must be at least 1");
  if (serial_patience < 1) throw ParameterError("serial_patience must be at least 1");
}

DeviceState::DeviceState(std::size_t id, std::vector<LabeledSet> source_shards,
                         TargetShard target_shard, std::uint64_t seed)
    : rng(make_stream(seed, streams::kDevices + id)),
      id_(id),
      source_shards_(std::move(source_shards)),
      target_shard_(std::move(target_shard)) {}

const LabeledSet& DeviceState::source_shard(std::size_t s) const {
  ++source_reads_;
  return source_shards_.at(s);
}

TargetTrainingView DeviceState::target_view() const {
  ++target_reads_;
  return target_shard_.training_view();
}

double RoundMetrics::mean_lambda() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (double l : device_lambda) {
    if (std::isnan(l)) continue;
    sum += l;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : kNaN;
}

double RoundMetrics::min_lambda() const {
  double out = kNaN;
  for (double l : device_lambda) {
    if (!std::isnan(l) && !(out <= l)) out = l;
  }
  return out;
}

double RoundMetrics::max_lambda() const {
  double out = kNaN;
  for (double l : device_lambda) {
    if (!std::isnan(l) && !(out >= l)) out = l;
  }
  return out;
}

double RunResult::final_target_acc() const {
  return rounds.empty() ? initial_target_acc : rounds.back().target_acc;
}

std::optional<ParamVector> device_source_update(const ParamVector& global_source,
                                                DeviceState& device, const FederationConfig& config,
                                                std::size_t source_index) {
  if (device.source_size(source_index) == 0) return std::nullopt;
  const LabeledSet& shard = device.source_shard(source_index);
  ParamVector local = train_supervised(global_source, shard.features, shard.targets, config,
                                       device.rng);
  device.local_source.resize(device.num_sources(), global_source);
  device.local_source[source_index] = local;
  return local;
}

std::optional<TargetUpdate> device_target_update(const ParamVector& global_target,
                                                 std::span<const ParamVector> source_models,
                                                 DeviceState& device,
                                                 const FederationConfig& config) {
  if (source_models.empty()) throw ParameterError("device_target_update: no source models");
  if (device.target_size() == 0) return std::nullopt;
  const TargetTrainingView view = device.target_view();

  std::vector<SoftLabelSet> soft;
  soft.reserve(source_models.size());
  for (std::size_t j = 0; j < source_models.size(); ++j) {
    soft.push_back(gen_soft_labels(source_models[j], view.features, config.temperature,
                                   "source" + std::to_string(j)));
  }

  TargetUpdate out{global_target, {}, 0};
  ParamVector& w = out.params;
  const std::size_t n = view.features.rows();
  const bool full_batch = config.batch_size == 0 || config.batch_size >= n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t e = 0; e < config.local_epochs; ++e) {
    // Weights come from the full shard once per epoch.
    std::vector<ParamVector> term_grads =
        loss_term_gradients(w, view.features, view.hard_labels, soft);
    const std::size_t n_lab = view.num_labeled();
    if (config.hard_loss_scale == HardLossScale::labeled_rows && n_lab > 0) {
      const double boost = static_cast<double>(n) / static_cast<double>(n_lab);
      for (double& v : term_grads[0].values()) v *= boost;
    }
    ImitationWeights weights = choose_weights(term_grads, config);
    if (weights.hard() == 0.0) ++out.hard_weight_zero;
    if (full_batch) {
      w = sgd_step(w, linear_combination(term_grads, weights.lambdas), config.learning_rate);
    } else {
      std::shuffle(order.begin(), order.end(), device.rng);
      for (std::size_t start = 0; start < n; start += config.batch_size) {
        const std::size_t stop = std::min(n, start + config.batch_size);
        const std::span<const std::size_t> idx(order.data() + start, stop - start);
        std::vector<SoftLabelSet> batch_soft;
        for (const auto& s : soft) {
          batch_soft.push_back({s.probs.select_rows(idx), s.temperature, s.source_id});
        }
        const auto batch_grads = loss_term_gradients(w, view.features.select_rows(idx),
                                                     view.hard_labels.select_rows(idx), batch_soft);
        w = sgd_step(w, linear_combination(batch_grads, weights.lambdas), config.learning_rate);
      }
    }
    out.epoch_weights.push_back(std::move(weights));
  }
  device.local_target = w;
  return out;
}

std::optional<ParamVector> device_labeled_update(const ParamVector& global_target,
                                                 DeviceState& device,
                                                 const FederationConfig& config) {
  const TargetTrainingView view = device.target_view();
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < view.labeled.size(); ++i) {
    if (view.labeled[i]) rows.push_back(i);
  }
  if (rows.empty()) return std::nullopt;
  ParamVector local = train_supervised(global_target, view.features.select_rows(rows),
                                       view.hard_labels.select_rows(rows), config, device.rng);
  device.local_target = local;
  return local;
}

ParamVector aggregate(std::span<const ParamVector> locals, std::span<const double> sample_counts,
                      Aggregation rule) {
  if (rule == Aggregation::uniform) return average_params(locals);
  return weighted_average_params(locals, sample_counts);
}

InitialModels initial_models(const FederationConfig& config) {
  Rng rng = make_stream(config.seed, streams::kInit);
  InitialModels init;
  for (std::size_t s = 0; s < config.num_sources; ++s) {
    init.sources.push_back(init_params(config.model, rng));
  }
  init.target = init_params(config.model, rng);
  return init;
}

RunResult run_fssda(const FederationConfig& config, Federation& federation) {
  Engine engine(config, federation);
  const InitialModels init = initial_models(config);
  engine.reset_locals(init);
  RunResult result = start_result(init, federation);
  for (std::size_t r = 1; r <= config.rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundMetrics m;
    m.round = r;
    result.global_sources = engine.source_round(result.global_sources, m, result.source_aggregations);
    result.global_target =
        engine.target_round(result.global_target, result.global_sources, m, result.target_aggregations);
    engine.evaluate(m, result.global_sources, result.global_target);
    m.wall_ms = elapsed_ms(t0);
    result.rounds.push_back(std::move(m));
  }
  return result;
}

RunResult run_target_only(const FederationConfig& config, Federation& federation,
                          std::span<const ParamVector> frozen_sources,
                          const ParamVector& initial_target) {
  Engine engine(config, federation);
  InitialModels init{{frozen_sources.begin(), frozen_sources.end()}, initial_target};
  engine.reset_locals(init);
  RunResult result = start_result(init, federation);
  for (std::size_t r = 1; r <= config.rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundMetrics m;
    m.round = r;
    result.global_target =
        engine.target_round(result.global_target, result.global_sources, m, result.target_aggregations);
    engine.evaluate(m, result.global_sources, result.global_target);
    m.wall_ms = elapsed_ms(t0);
    result.rounds.push_back(std::move(m));
  }
  return result;
}

RunResult run_serial(const FederationConfig& config, Federation& federation) {
  Engine engine(config, federation);
  const InitialModels init = initial_models(config);
  engine.reset_locals(init);
  RunResult result = start_result(init, federation);

  // Phase 1: source-only federation until the accuracy plateaus.
  double previous = mean_accuracy(result.global_sources, federation.source_tests);
  std::size_t calm = 0;
  for (std::size_t r = 1; r <= config.serial_max_source_rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundMetrics m;
    m.round = r;
    result.global_sources = engine.source_round(result.global_sources, m, result.source_aggregations);
    engine.evaluate(m, result.global_sources, result.global_target);
    m.device_lambda.assign(federation.devices.size(), kNaN);
    m.wall_ms = elapsed_ms(t0);
    calm = std::abs(m.source_acc - previous) < config.serial_tolerance ? calm + 1 : 0;
    previous = m.source_acc;
    result.rounds.push_back(std::move(m));
    ++result.source_phase_rounds;
    if (calm >= config.serial_patience) break;
  }

  // Phase 2: target federation with the frozen source models.
  RunResult phase2 =
      run_target_only(config, federation, result.global_sources, result.global_target);
  for (auto& m : phase2.rounds) {
    m.round += result.source_phase_rounds;
    result.rounds.push_back(std::move(m));
  }
  result.global_target = phase2.global_target;
  result.target_aggregations = phase2.target_aggregations;
  return result;
}

RunResult run_floly(const FederationConfig& config, Federation& federation) {
  Engine engine(config, federation);
  const InitialModels init = initial_models(config);
  engine.reset_locals(init);
  RunResult result = start_result(init, federation);
  for (std::size_t r = 1; r <= config.rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundMetrics m;
    m.round = r;
    result.global_target = engine.labeled_round(result.global_target, m, result.target_aggregations);
    engine.evaluate(m, {}, result.global_target);
    m.wall_ms = elapsed_ms(t0);
    result.rounds.push_back(std::move(m));
  }
  return result;
}

RunResult run_ssdaonly(const FederationConfig& config, Federation& federation) {
  Engine engine(config, federation);
  const InitialModels init = initial_models(config);
  engine.reset_locals(init);
  RunResult result = start_result(init, federation);
  const std::size_t K = federation.devices.size();
  for (std::size_t r = 1; r <= config.rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundMetrics m;
    m.round = r;
    m.device_lambda.assign(K, kNaN);
    m.device_weights.assign(K, {});
    std::vector<std::size_t> skipped_source(K, 0);
    std::vector<std::optional<TargetUpdate>> updates(K);
    parallel_for(K, config.threads, [&](std::size_t k) {
      DeviceState& d = federation.devices[k];
      for (std::size_t s = 0; s < d.num_sources(); ++s) {
        if (!device_source_update(d.local_source[s], d, config, s)) ++skipped_source[k];
      }
      const ParamVector start = d.local_target;
      updates[k] = device_target_update(start, d.local_source, d, config);
    });
    double src = 0.0, tgt = 0.0, loss = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      m.skipped_source_devices += skipped_source[k];
      if (updates[k]) {
        Engine::record_weights(*updates[k], k, m);
      } else {
        ++m.skipped_target_devices;
      }
      const DeviceState& d = federation.devices[k];
      src += mean_accuracy(d.local_source, federation.source_tests);
      tgt += accuracy(d.local_target, federation.target_test.features, federation.target_test.labels);
      loss += eval_loss(d.local_target, federation.target_test);
    }
    m.source_acc = src / static_cast<double>(K);
    m.target_acc = tgt / static_cast<double>(K);
    m.target_loss = loss / static_cast<double>(K);
    m.wall_ms = elapsed_ms(t0);
    result.rounds.push_back(std::move(m));
  }
  if (K == 1) {
    result.global_sources = federation.devices[0].local_source;
    result.global_target = federation.devices[0].local_target;
  }
  return result;
}

}  // namespace fssda
