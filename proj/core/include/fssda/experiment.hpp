#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fssda/config.hpp"
#include "fssda/data.hpp"
#include "fssda/federation.hpp"

namespace fssda {

// A named domain shift. The translation is given by its norm; its direction is
// drawn deterministically from the run seed.
struct PairSpec {
  std::string name;
  double theta = 0.0;
  double scale = 1.0;
  double noise = 0.0;
  double translation_norm = 0.0;

  ShiftSpec shift(std::uint64_t seed, std::size_t feature_dim) const;
};

struct PartitionMode {
  std::string name;
  double beta = 0.1;
};

struct BenchmarkSpec {
  std::size_t num_classes = 8;
  std::size_t feature_dim = 64;
  std::size_t source_per_device = 200;
  std::size_t target_per_device = 200;
  std::size_t labeled_per_class = 3;
  double test_fraction = 0.25;
  MixtureSpec mixture;
  std::vector<PairSpec> pairs;  // every named shift, including multi-source ones
  std::vector<PartitionMode> modes;
};

inline const std::vector<std::string> kKnownMethods = {"fssda", "fssda-serial", "floly",
                                                       "ssdaonly", "fssda-multisource"};

struct ExperimentConfig {
  BenchmarkSpec benchmark;
  FederationConfig federation;
  std::vector<std::string> pair_names;  // pairs run by `run` and `sweep-lambda`
  std::vector<std::string> methods;
  std::vector<double> lambda_sweep;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> multisource_sources;  // pair names used as source shifts
  std::filesystem::path output_dir = "results";
  bool record_timing = false;  // wall_ms is written as 0 unless enabled
  std::size_t jobs = 1;        // concurrent (method, seed) runs

  void validate() const;
  const PairSpec& pair(const std::string& name) const;

  static ExperimentConfig defaults();
  static ExperimentConfig from_store(const ConfigStore& store);
  static ExperimentConfig load(const std::filesystem::path& path,
                               std::span<const std::string> overrides = {});
};

// Complete annotated default configuration in the text format read by
// ConfigStore.
std::string default_config_text();

// Single-source world: source and shifted target domain, held-out test splits,
// global label mask, Dirichlet partitions of both training pools.
Federation make_federation(const BenchmarkSpec& bench, const PairSpec& pair, double beta,
                           std::size_t num_devices, std::uint64_t seed);

// Multi-source world on shared data; `source_indices` picks which of the
// generated sources the devices hold (in that order). Target data and
// partitions do not depend on the selection.
Federation make_multi_source_federation(const BenchmarkSpec& bench,
                                        std::span<const PairSpec> sources, double beta,
                                        std::size_t num_devices, std::uint64_t seed,
                                        std::span<const std::size_t> source_indices);

// Dispatches fssda, fssda-serial, floly, ssdaonly (and fssda-multisource, which
// is run_fssda with num_sources taken from the federation).
RunResult run_method(const std::string& method, const FederationConfig& config,
                     Federation& federation);

struct RunRecord {
  std::string run_id;
  std::string method;
  std::string pair;
  std::string mode;
  std::uint64_t seed = 0;
  std::uint64_t partition_hash = 0;
  RunResult result;
};

struct SummaryRow {
  std::string method;
  std::string pair;
  std::string mode;
  std::size_t runs = 0;
  double mean = 0.0;  // final target accuracy
  double std = 0.0;   // sample standard deviation over seeds
};

struct SummaryTable {
  std::vector<SummaryRow> rows;

  const SummaryRow* find(const std::string& method, const std::string& pair,
                         const std::string& mode) const;
};

struct ExperimentOutcome {
  std::vector<RunRecord> runs;
  SummaryTable summary;
};

SummaryTable summarize(std::span<const RunRecord> runs);

// Runs every (method, pair, mode, seed) combination.
ExperimentOutcome run_experiment(const ExperimentConfig& config);

// Per (pair, mode, seed): one FSSDA run per fixed lambda plus one adaptive run,
// all on the same generated data.
ExperimentOutcome run_lambda_sweep(const ExperimentConfig& config, std::span<const double> lambdas);

// Per (mode, seed): multi-source FSSDA over config.multisource_sources plus a
// single-source FSSDA run for each of those sources, on identical data.
ExperimentOutcome run_multisource(const ExperimentConfig& config);

// Round-level CSV. Columns: run_id, method, seed, round, source_acc,
// target_acc, target_loss, mean_lambda, min_lambda, max_lambda, wall_ms,
// partition_hash.
void write_round_csv(std::ostream& out, const RunRecord& run, bool record_timing);
// Per-round, per-device simplex weights: run_id, round, device, w0..wS.
void write_weights_csv(std::ostream& out, const RunRecord& run);
void write_summary_csv(std::ostream& out, const SummaryTable& table);
void write_summary_text(std::ostream& out, const SummaryTable& table);

// Writes runs/<run_id>.csv (+ weights for multi-source runs), summary.csv and
// summary.txt under `dir`. Returns the list of files written.
std::vector<std::filesystem::path> write_outputs(const ExperimentOutcome& outcome,
                                                 const std::filesystem::path& dir,
                                                 bool record_timing);

// FSSDA_OUTPUT_DIR overrides the configured directory when set and non-empty.
std::filesystem::path resolve_output_dir(const ExperimentConfig& config);

std::string format_double(double v);
std::string hex64(std::uint64_t v);

}  // namespace fssda
