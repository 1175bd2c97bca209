#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fssda/matrix.hpp"

namespace fssda {

// Class-preserving affine map applied to a domain: rotate by `theta` in every
// consecutive coordinate plane (0,1), (2,3), ..., scale, translate, then add
// isotropic Gaussian noise with standard deviation `noise`.
struct ShiftSpec {
  double theta = 0.0;
  std::vector<double> translation;  // empty means zero
  double scale = 1.0;
  double noise = 0.0;

  void validate(std::size_t feature_dim) const;
  // Applies rotation, scale and translation (no noise) to one point in place.
  void apply(std::span<double> x) const;
};

// Shape of the class-conditional Gaussian mixture shared by all domains.
struct MixtureSpec {
  double class_radius = 3.0;  // norm of every class mean
  double class_std = 1.0;     // isotropic within-class standard deviation
  // Place each class mean in its own coordinate plane (2c, 2c+1), in a random
  // plane order and at a random angle, so shifts rotate classes without mixing
  // them. Needs feature_dim >= 2 * num_classes; otherwise directions are random.
  bool plane_aligned = false;
};

struct DomainDataset {
  Matrix features;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string domain_id;
  Matrix class_means;  // num_classes x d, generator metadata

  std::size_t size() const noexcept { return labels.size(); }
};

struct DomainPair {
  DomainDataset source;
  DomainDataset target;
};

// Source: Gaussian mixture with class means on a sphere. Target: fresh samples
// of the source distribution pushed through `shift`.
DomainPair make_domain_pair(std::uint64_t seed, std::size_t num_classes, std::size_t feature_dim,
                            std::size_t n_source, std::size_t n_target, const ShiftSpec& shift,
                            const MixtureSpec& mixture = {});

// Several shifted source domains around one unshifted target domain; all share
// the class means of the target mixture.
struct MultiSourceDomains {
  std::vector<DomainDataset> sources;
  DomainDataset target;
};
MultiSourceDomains make_multi_source(std::uint64_t seed, std::size_t num_classes,
                                     std::size_t feature_dim, std::size_t n_source_each,
                                     std::size_t n_target, std::span<const ShiftSpec> source_shifts,
                                     const MixtureSpec& mixture = {});

// Deterministic translation vector of the given norm (zero norm gives an empty
// vector).
std::vector<double> random_translation(std::uint64_t seed, std::size_t feature_dim, double norm);

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;  // per device, ascending
  double beta = 0.0;
  Matrix proportions;  // num_classes x num_devices, before rounding

  std::size_t num_devices() const noexcept { return assignments.size(); }
};

// Per class, draws device proportions from Dirichlet(beta, ..., beta) and
// hands out that class's (shuffled) samples with largest-remainder rounding.
// Redraws when some device would end up empty.
PartitionPlan dirichlet_partition(std::span<const int> labels, std::size_t num_devices,
                                  double beta, std::uint64_t seed, std::size_t max_retries = 100);

// Splits integer counts proportional to `weights` (summing to 1) so that they
// sum to `total`; ties in remainders go to the lower index.
std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights);

// Global labeled/unlabeled assignment over a target pool.
struct MaskedPool {
  Matrix features;
  Matrix hard_labels;  // one-hot for labeled rows, all-zero otherwise
  std::vector<bool> labeled;
  std::vector<int> true_labels;
  std::size_t num_classes = 0;
};

MaskedPool mask_labels(const DomainDataset& dataset, std::size_t labeled_per_class,
                       std::uint64_t seed);

// What a training path may see of a target shard. Deliberately has no true
// labels.
struct TargetTrainingView {
  const Matrix& features;
  const Matrix& hard_labels;
  const std::vector<bool>& labeled;

  std::size_t num_labeled() const noexcept;
};

// One device's target data. Ground truth is kept for evaluation only and every
// read of it is counted so tests can audit training paths.
class TargetShard {
 public:
  TargetShard() = default;
  TargetShard(Matrix features, Matrix hard_labels, std::vector<bool> labeled,
              std::vector<int> true_labels);

  TargetTrainingView training_view() const { return {features_, hard_labels_, labeled_}; }

  std::span<const int> true_labels() const;
  std::size_t true_label_reads() const noexcept { return true_label_reads_; }

  std::size_t size() const noexcept { return labeled_.size(); }
  std::size_t num_labeled() const noexcept;

 private:
  Matrix features_;
  Matrix hard_labels_;
  std::vector<bool> labeled_;
  std::vector<int> true_labels_;
  mutable std::size_t true_label_reads_ = 0;
};

TargetShard make_target_shard(const MaskedPool& pool, std::span<const std::size_t> indices);

struct TrainTestSplit {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> test;   // ascending
};

// Stratified by class: each class sends round(test_fraction * count) samples
// to the test side.
TrainTestSplit split_test(const DomainDataset& dataset, double test_fraction, std::uint64_t seed);

DomainDataset subset(const DomainDataset& dataset, std::span<const std::size_t> indices);

// CSV: header "f0,...,f{d-1},label,domain_id" then one row per sample.
void write_dataset_csv(std::ostream& out, const DomainDataset& dataset);
DomainDataset read_dataset_csv(std::istream& in, std::size_t num_classes = 0);

// FNV-1a over device assignment lists; identifies a partition in output files.
std::uint64_t partition_hash(const PartitionPlan& plan, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace fssda
