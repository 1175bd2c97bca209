#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fssda/config.hpp"
#include "fssda/data.hpp"
#include "fssda/errors.hpp"
#include "fssda/experiment.hpp"

namespace fs = std::filesystem;
using namespace fssda;

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("-c,--config", opts.config_path, "configuration file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", opts.overrides, "override a key: section.key=value")
      ->allow_extra_args(false);
}

ExperimentConfig load_config(const CommonOptions& opts) {
  if (!opts.config_path.empty()) return ExperimentConfig::load(opts.config_path, opts.overrides);
  ConfigStore store;
  for (const auto& o : opts.overrides) store.apply_override(o);
  return ExperimentConfig::from_store(store);
}

void report(const std::vector<fs::path>& files, const fs::path& dir) {
  std::printf("wrote %zu files under %s\n", files.size(), dir.string().c_str());
}

int run_outcome(const ExperimentConfig& config, const ExperimentOutcome& outcome) {
  write_summary_text(std::cout, outcome.summary);
  const fs::path dir = resolve_output_dir(config);
  report(write_outputs(outcome, dir, config.record_timing), dir);
  return 0;
}

int gen_data(const ExperimentConfig& config) {
  const fs::path dir = resolve_output_dir(config) / "data";
  fs::create_directories(dir);
  const auto& b = config.benchmark;
  const std::size_t k = config.federation.num_devices;
  std::vector<fs::path> files;
  auto dump = [&](const fs::path& path, const DomainDataset& data) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    write_dataset_csv(out, data);
    out.close();
    if (!out) throw std::runtime_error("failed writing " + path.string());
    files.push_back(path);
  };
  for (const auto& name : config.pair_names) {
    const PairSpec& pair = config.pair(name);
    for (auto seed : config.seeds) {
      const DomainPair d =
          make_domain_pair(seed, b.num_classes, b.feature_dim, b.source_per_device * k,
                           b.target_per_device * k, pair.shift(seed, b.feature_dim), b.mixture);
      const std::string stem = name + "__s" + std::to_string(seed);
      dump(dir / (stem + "__source.csv"), d.source);
      dump(dir / (stem + "__target.csv"), d.target);
    }
  }
  report(files, dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated semi-supervised domain adaptation experiments"};
  app.require_subcommand(1);

  CommonOptions opts;
  auto* run = app.add_subcommand("run", "run every configured method, pair, mode and seed");
  auto* sweep = app.add_subcommand("sweep-lambda", "fixed-lambda sweep against adaptive lambda");
  auto* multi = app.add_subcommand("multisource", "multi-source FSSDA versus each single source");
  auto* gen = app.add_subcommand("gen-data", "write the synthetic domains to CSV");
  auto* print = app.add_subcommand("print-default-config", "print the annotated default config");
  for (auto* cmd : {run, sweep, multi, gen}) add_common(cmd, opts);
  std::vector<double> lambdas;
  sweep->add_option("--lambdas", lambdas, "fixed values (default: experiment.lambda_sweep)")
      ->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (print->parsed()) {
      std::cout << default_config_text();
      return 0;
    }
    const ExperimentConfig config = load_config(opts);
    if (run->parsed()) return run_outcome(config, run_experiment(config));
    if (sweep->parsed()) {
      return run_outcome(config,
                         run_lambda_sweep(config, lambdas.empty() ? config.lambda_sweep : lambdas));
    }
    if (multi->parsed()) return run_outcome(config, run_multisource(config));
    if (gen->parsed()) return gen_data(config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
