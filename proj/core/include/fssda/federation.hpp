#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fssda/data.hpp"
#include "fssda/distill.hpp"
#include "fssda/matrix.hpp"
#include "fssda/model.hpp"
#include "fssda/rng.hpp"

namespace fssda {

// Fully labeled data: features plus one-hot targets.
struct LabeledSet {
  Matrix features;
  Matrix targets;

  std::size_t size() const noexcept { return features.rows(); }
  static LabeledSet from(const DomainDataset& ds);
};

// Pooled held-out data used only for server-side evaluation.
struct EvalSet {
  Matrix features;
  std::vector<int> labels;

  static EvalSet from(const DomainDataset& ds) { return {ds.features, ds.labels}; }
};

enum class Schedule { parallel, serial };
enum class Aggregation { uniform, sample_weighted };

struct LambdaMode {
  bool adaptive = true;
  double fixed = 0.5;  // used when !adaptive

  static LambdaMode make_adaptive() { return {true, 0.5}; }
  static LambdaMode make_fixed(double v) { return {false, v}; }
};

// How the hard-label loss term is averaged on a device. all_rows is the plain
// mean over every target row, so fake-label rows dilute it by n_labeled / n;
// labeled_rows averages over the rows that carry a real label.
enum class HardLossScale { all_rows, labeled_rows };

struct FederationConfig {
  ModelSpec model;
  std::size_t num_devices = 5;
  std::size_t rounds = 100;
  std::size_t local_epochs = 1;
  double learning_rate = 0.001;
  double temperature = kDefaultTemperature;
  LambdaMode lambda;
  Schedule schedule = Schedule::parallel;
  Aggregation aggregation = Aggregation::uniform;
  std::size_t num_sources = 1;
  std::uint64_t seed = 1;
  std::size_t batch_size = 0;  // 0: full-batch local epochs
  std::size_t threads = 1;
  HardLossScale hard_loss_scale = HardLossScale::labeled_rows;
  FrankWolfeOptions frank_wolfe;
  // Serial schedule, phase 1 stopping rule: source accuracy moves less than
  // serial_tolerance for serial_patience consecutive rounds, or the cap.
  std::size_t serial_max_source_rounds = 40;
  std::size_t serial_patience = 5;
  double serial_tolerance = 0.001;

  void validate() const;
};

// One simulated end device. Its shards never leave it: the update functions
// below return parameter vectors and scalars only. Shard accessors count reads
// so tests can audit which phases touch which data.
class DeviceState {
 public:
  DeviceState(std::size_t id, std::vector<LabeledSet> source_shards, TargetShard target_shard,
              std::uint64_t seed);

  std::size_t id() const noexcept { return id_; }
  std::size_t num_sources() const noexcept { return source_shards_.size(); }

  const LabeledSet& source_shard(std::size_t s) const;
  TargetTrainingView target_view() const;

  std::size_t source_size(std::size_t s) const { return source_shards_.at(s).size(); }
  std::size_t target_size() const noexcept { return target_shard_.size(); }

  std::size_t source_reads() const noexcept { return source_reads_; }
  std::size_t target_reads() const noexcept { return target_reads_; }
  // Held-out ground truth of the target shard, exposed only for audits.
  const TargetShard& audit_target_shard() const noexcept { return target_shard_; }

  std::vector<ParamVector> local_source;
  ParamVector local_target;
  Rng rng;

 private:
  std::size_t id_;
  std::vector<LabeledSet> source_shards_;
  TargetShard target_shard_;
  mutable std::size_t source_reads_ = 0;
  mutable std::size_t target_reads_ = 0;
};

// The simulated world: devices plus the server's evaluation sets.
struct Federation {
  std::vector<DeviceState> devices;
  std::vector<EvalSet> source_tests;  // one per source domain
  EvalSet target_test;
  std::uint64_t partition_hash = 0;
};

struct RoundMetrics {
  std::size_t round = 0;
  double source_acc = 0.0;  // NaN when the method trains no source model
  double target_acc = 0.0;
  double target_loss = 0.0;
  std::vector<double> device_lambda;  // mean hard-label weight per device; NaN if none
  std::vector<std::vector<double>> device_weights;  // last-epoch simplex weights per device
  std::size_t hard_weight_zero = 0;  // epochs where the hard-label weight hit 0
  std::size_t skipped_source_devices = 0;
  std::size_t skipped_target_devices = 0;
  double wall_ms = 0.0;

  double mean_lambda() const;
  double min_lambda() const;
  double max_lambda() const;
};

struct RunResult {
  std::vector<RoundMetrics> rounds;
  std::vector<ParamVector> global_sources;
  ParamVector global_target;
  std::vector<ParamVector> initial_sources;
  ParamVector initial_target;
  double initial_target_acc = 0.0;
  std::size_t source_aggregations = 0;
  std::size_t target_aggregations = 0;
  std::size_t source_phase_rounds = 0;  // serial schedule only

  double final_target_acc() const;
};

struct TargetUpdate {
  ParamVector params;
  std::vector<ImitationWeights> epoch_weights;
  std::size_t hard_weight_zero = 0;
};

// Local source training from `global_source` (E epochs of cross-entropy SGD).
// Returns nullopt, leaving the device untouched, when the shard is empty.
std::optional<ParamVector> device_source_update(const ParamVector& global_source,
                                                DeviceState& device, const FederationConfig& config,
                                                std::size_t source_index = 0);

// Local target training: soft labels from every source model once, then E
// epochs of weighted hard/soft SGD. Weights are the closed-form lambda for one
// source, Frank-Wolfe for several, or the configured fixed lambda.
std::optional<TargetUpdate> device_target_update(const ParamVector& global_target,
                                                 std::span<const ParamVector> source_models,
                                                 DeviceState& device,
                                                 const FederationConfig& config);

// Supervised target training on the labeled rows only.
std::optional<ParamVector> device_labeled_update(const ParamVector& global_target,
                                                 DeviceState& device,
                                                 const FederationConfig& config);

// Server rule: uniform mean or shard-size-weighted mean.
ParamVector aggregate(std::span<const ParamVector> locals, std::span<const double> sample_counts,
                      Aggregation rule);

// Initial global models, drawn from the run's init stream: sources first, then
// the target.
struct InitialModels {
  std::vector<ParamVector> sources;
  ParamVector target;
};
InitialModels initial_models(const FederationConfig& config);

RunResult run_fssda(const FederationConfig& config, Federation& federation);
RunResult run_serial(const FederationConfig& config, Federation& federation);
RunResult run_floly(const FederationConfig& config, Federation& federation);
RunResult run_ssdaonly(const FederationConfig& config, Federation& federation);

// Target federation against frozen source models, starting from
// `initial_target`, for config.rounds rounds.
RunResult run_target_only(const FederationConfig& config, Federation& federation,
                          std::span<const ParamVector> frozen_sources,
                          const ParamVector& initial_target);

// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn);

}  // namespace fssda

#include "fssda/detail/parallel_for.hpp"
