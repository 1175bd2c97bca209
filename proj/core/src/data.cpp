#include "fssda/data.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "fssda/errors.hpp"
#include "fssda/rng.hpp"

namespace fssda {
namespace {

Matrix random_class_means(Rng& rng, std::size_t num_classes, std::size_t dim,
                          const MixtureSpec& mixture) {
  const double radius = mixture.class_radius;
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix means(num_classes, dim);
  if (mixture.plane_aligned && dim >= 2 * num_classes) {
    std::vector<std::size_t> planes(dim / 2);
    std::iota(planes.begin(), planes.end(), 0);
    std::shuffle(planes.begin(), planes.end(), rng);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double phi = angle(rng);
      means(c, 2 * planes[c]) = radius * std::cos(phi);
      means(c, 2 * planes[c] + 1) = radius * std::sin(phi);
    }
    return means;
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto m = means.row(c);
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (double& v : m) {
        v = normal(rng);
        norm2 += v * v;
      }
    } while (norm2 == 0.0);
    const double k = radius / std::sqrt(norm2);
    for (double& v : m) v *= k;
  }
  return means;
}

// Balanced labels (i mod C), shuffled.
std::vector<int> balanced_labels(Rng& rng, std::size_t n, std::size_t num_classes) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % num_classes);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

DomainDataset sample_mixture(Rng& rng, const Matrix& means, std::size_t n, double class_std,
                             const ShiftSpec* shift, std::string domain_id) {
  const std::size_t num_classes = means.rows();
  const std::size_t dim = means.cols();
  std::normal_distribution<double> normal(0.0, 1.0);
  DomainDataset ds;
  ds.num_classes = num_classes;
  ds.domain_id = std::move(domain_id);
  ds.labels = balanced_labels(rng, n, num_classes);
  ds.features = Matrix(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = ds.features.row(i);
    const auto mu = means.row(static_cast<std::size_t>(ds.labels[i]));
    for (std::size_t j = 0; j < dim; ++j) x[j] = mu[j] + class_std * normal(rng);
    if (shift) {
      shift->apply(x);
      if (shift->noise > 0.0) {
        for (double& v : x) v += shift->noise * normal(rng);
      }
    }
  }
  ds.class_means = means;
  if (shift) {
    for (std::size_t c = 0; c < num_classes; ++c) shift->apply(ds.class_means.row(c));
  }
  return ds;
}

void check_sizes(std::size_t num_classes, std::size_t feature_dim, std::size_t n, const char* what) {
  if (num_classes < 2) throw ParameterError("num_classes must be at least 2");
  if (feature_dim < 2) throw ParameterError("feature_dim must be at least 2");
  if (n < num_classes) {
    throw ParameterError(std::string(what) + " sample count must be at least num_classes");
  }
}

std::vector<std::vector<std::size_t>> indices_by_class(std::span<const int> labels,
                                                       std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ParameterError("label out of range");
    }
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  return by_class;
}

std::size_t infer_num_classes(std::span<const int> labels) {
  int top = -1;
  for (int l : labels) {
    if (l < 0) throw ParameterError("negative label");
    top = std::max(top, l);
  }
  return static_cast<std::size_t>(top + 1);
}

}  // namespace

void ShiftSpec::validate(std::size_t feature_dim) const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ParameterError("shift scale must be positive");
  if (!(noise >= 0.0)) throw ParameterError("shift noise must be non-negative");
  if (!std::isfinite(theta)) throw ParameterError("shift angle must be finite");
  if (!translation.empty() && translation.size() != feature_dim) {
    throw ShapeError("shift translation length does not match feature_dim");
  }
}

void ShiftSpec::apply(std::span<double> x) const {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  for (std::size_t j = 0; j + 1 < x.size(); j += 2) {
    const double a = x[j];
    const double b = x[j + 1];
    x[j] = c * a - s * b;
    x[j + 1] = s * a + c * b;
  }
  for (std::size_t j = 0; j < x.size(); ++j) {
    x[j] *= scale;
    if (!translation.empty()) x[j] += translation[j];
  }
}

DomainPair make_domain_pair(std::uint64_t seed, std::size_t num_classes, std::size_t feature_dim,
                            std::size_t n_source, std::size_t n_target, const ShiftSpec& shift,
                            const MixtureSpec& mixture) {
  check_sizes(num_classes, feature_dim, n_source, "source");
  check_sizes(num_classes, feature_dim, n_target, "target");
  shift.validate(feature_dim);
  Rng rng = make_stream(seed, streams::kDomains);
  const Matrix means = random_class_means(rng, num_classes, feature_dim, mixture);
  DomainPair pair;
  pair.source = sample_mixture(rng, means, n_source, mixture.class_std, nullptr, "source");
  pair.target = sample_mixture(rng, means, n_target, mixture.class_std, &shift, "target");
  return pair;
}

MultiSourceDomains make_multi_source(std::uint64_t seed, std::size_t num_classes,
                                     std::size_t feature_dim, std::size_t n_source_each,
                                     std::size_t n_target, std::span<const ShiftSpec> source_shifts,
                                     const MixtureSpec& mixture) {
  check_sizes(num_classes, feature_dim, n_source_each, "source");
  check_sizes(num_classes, feature_dim, n_target, "target");
  if (source_shifts.empty()) throw ParameterError("at least one source shift is required");
  for (const auto& s : source_shifts) s.validate(feature_dim);
  Rng rng = make_stream(seed, streams::kDomains);
  const Matrix means = random_class_means(rng, num_classes, feature_dim, mixture);
  MultiSourceDomains out;
  out.target = sample_mixture(rng, means, n_target, mixture.class_std, nullptr, "target");
  for (std::size_t j = 0; j < source_shifts.size(); ++j) {
    out.sources.push_back(sample_mixture(rng, means, n_source_each, mixture.class_std,
                                         &source_shifts[j], "source" + std::to_string(j)));
  }
  return out;
}

std::vector<double> random_translation(std::uint64_t seed, std::size_t feature_dim, double norm) {
  if (norm == 0.0) return {};
  Rng rng(mix64(seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> t(feature_dim);
  double n2 = 0.0;
  while (n2 == 0.0) {
    n2 = 0.0;
    for (double& v : t) {
      v = normal(rng);
      n2 += v * v;
    }
  }
  const double k = norm / std::sqrt(n2);
  for (double& v : t) v *= k;
  return t;
}

std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights) {
  std::vector<std::size_t> counts(weights.size(), 0);
  std::vector<double> remainders(weights.size(), 0.0);
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double exact = weights[k] * static_cast<double>(total);
    const double whole = std::floor(exact);
    counts[k] = static_cast<std::size_t>(whole);
    remainders[k] = exact - whole;
    assigned += counts[k];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  // Floating error can push the floor sum one past or short of total.
  while (assigned > total) {
    auto it = std::ranges::max_element(counts);
    --*it;
    --assigned;
  }
  for (std::size_t i = 0; assigned < total; i = (i + 1) % order.size()) {
    ++counts[order[i]];
    ++assigned;
  }
  return counts;
}

PartitionPlan dirichlet_partition(std::span<const int> labels, std::size_t num_devices,
                                  double beta, std::uint64_t seed, std::size_t max_retries) {
  if (num_devices == 0) throw ParameterError("num_devices must be at least 1");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ParameterError("beta must be positive");
  if (labels.size() < num_devices) {
    throw ParameterError("fewer samples than devices; some device would be empty");
  }
  const std::size_t num_classes = infer_num_classes(labels);
  const auto by_class = indices_by_class(labels, num_classes);
  Rng rng = make_stream(seed, streams::kPartition);
  std::gamma_distribution<double> gamma(beta, 1.0);

  for (std::size_t attempt = 0; attempt <= max_retries; ++attempt) {
    PartitionPlan plan;
    plan.beta = beta;
    plan.assignments.assign(num_devices, {});
    plan.proportions = Matrix(num_classes, num_devices);
    for (std::size_t c = 0; c < num_classes; ++c) {
      auto p = plan.proportions.row(c);
      double sum = 0.0;
      while (!(sum > 0.0)) {
        sum = 0.0;
        for (double& v : p) {
          v = gamma(rng);
          sum += v;
        }
      }
      for (double& v : p) v /= sum;
      std::vector<std::size_t> members = by_class[c];
      std::shuffle(members.begin(), members.end(), rng);
      const auto counts = largest_remainder(members.size(), p);
      std::size_t cursor = 0;
      for (std::size_t k = 0; k < num_devices; ++k) {
        for (std::size_t i = 0; i < counts[k]; ++i) plan.assignments[k].push_back(members[cursor++]);
      }
    }
    const bool any_empty =
        std::ranges::any_of(plan.assignments, [](const auto& a) { return a.empty(); });
    if (any_empty) continue;
    for (auto& a : plan.assignments) std::ranges::sort(a);
    return plan;
  }
  throw ParameterError("dirichlet_partition: a device stayed empty after " +
                       std::to_string(max_retries) + " redraws");
}

MaskedPool mask_labels(const DomainDataset& dataset, std::size_t labeled_per_class,
                       std::uint64_t seed) {
  const std::size_t num_classes =
      dataset.num_classes ? dataset.num_classes : infer_num_classes(dataset.labels);
  const auto by_class = indices_by_class(dataset.labels, num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (by_class[c].size() < labeled_per_class) {
      throw ParameterError("class " + std::to_string(c) + " has only " +
                           std::to_string(by_class[c].size()) + " samples, " +
                           std::to_string(labeled_per_class) + " labeled requested");
    }
  }
  Rng rng = make_stream(seed, streams::kMask);
  MaskedPool pool;
  pool.features = dataset.features;
  pool.true_labels = dataset.labels;
  pool.num_classes = num_classes;
  pool.labeled.assign(dataset.size(), false);
  pool.hard_labels = Matrix(dataset.size(), num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> members = by_class[c];
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < labeled_per_class; ++i) {
      pool.labeled[members[i]] = true;
      pool.hard_labels(members[i], c) = 1.0;
    }
  }
  return pool;
}

std::size_t TargetTrainingView::num_labeled() const noexcept {
  return static_cast<std::size_t>(std::ranges::count(labeled, true));
}

TargetShard::TargetShard(Matrix features, Matrix hard_labels, std::vector<bool> labeled,
                         std::vector<int> true_labels)
    : features_(std::move(features)),
      hard_labels_(std::move(hard_labels)),
      labeled_(std::move(labeled)),
      true_labels_(std::move(true_labels)) {
  const std::size_t n = labeled_.size();
  if (features_.rows() != n || hard_labels_.rows() != n || true_labels_.size() != n) {
    throw ShapeError("target shard components disagree on row count");
  }
}

std::span<const int> TargetShard::true_labels() const {
  ++true_label_reads_;
  return true_labels_;
}

std::size_t TargetShard::num_labeled() const noexcept {
  return static_cast<std::size_t>(std::ranges::count(labeled_, true));
}

TargetShard make_target_shard(const MaskedPool& pool, std::span<const std::size_t> indices) {
  std::vector<bool> labeled(indices.size());
  std::vector<int> truth(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    labeled[i] = pool.labeled.at(indices[i]);
    truth[i] = pool.true_labels.at(indices[i]);
  }
  return TargetShard(pool.features.select_rows(indices), pool.hard_labels.select_rows(indices),
                     std::move(labeled), std::move(truth));
}

TrainTestSplit split_test(const DomainDataset& dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ParameterError("test_fraction must lie strictly between 0 and 1");
  }
  const std::size_t num_classes =
      dataset.num_classes ? dataset.num_classes : infer_num_classes(dataset.labels);
  const auto by_class = indices_by_class(dataset.labels, num_classes);
  Rng rng = make_stream(seed, streams::kSplit);
  TrainTestSplit split;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> members = by_class[c];
    if (members.empty()) continue;
    const auto n_test =
        static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    if (n_test == 0 || n_test >= members.size()) {
      throw ParameterError("test_fraction leaves class " + std::to_string(c) +
                           " empty on one side of the split");
    }
    std::shuffle(members.begin(), members.end(), rng);
    split.test.insert(split.test.end(), members.begin(), members.begin() + n_test);
    split.train.insert(split.train.end(), members.begin() + n_test, members.end());
  }
  std::ranges::sort(split.train);
  std::ranges::sort(split.test);
  return split;
}

DomainDataset subset(const DomainDataset& dataset, std::span<const std::size_t> indices) {
  DomainDataset out;
  out.features = dataset.features.select_rows(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(dataset.labels.at(i));
  out.num_classes = dataset.num_classes;
  out.domain_id = dataset.domain_id;
  out.class_means = dataset.class_means;
  return out;
}

void write_dataset_csv(std::ostream& out, const DomainDataset& dataset) {
  const std::size_t d = dataset.features.cols();
  for (std::size_t j = 0; j < d; ++j) out << 'f' << j << ',';
  out << "label,domain_id\n";
  std::ostringstream cell;
  cell.precision(17);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (double v : dataset.features.row(i)) {
      cell.str({});
      cell << v;
      out << cell.str() << ',';
    }
    out << dataset.labels[i] << ',' << dataset.domain_id << '\n';
  }
}

DomainDataset read_dataset_csv(std::istream& in, std::size_t num_classes) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset csv: missing header");
  std::size_t d = 0;
  {
    std::istringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) {
      if (!col.empty() && col.front() == 'f') ++d;
    }
  }
  if (d == 0) throw ConfigError("dataset csv: header has no feature columns", 1);
  DomainDataset ds;
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::getline(ls, cell, ',')) throw ConfigError("dataset csv: short row", line_no);
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError("dataset csv: bad number '" + cell + "'", line_no);
      }
    }
    if (!std::getline(ls, cell, ',')) throw ConfigError("dataset csv: missing label", line_no);
    try {
      ds.labels.push_back(std::stoi(cell));
    } catch (const std::exception&) {
      throw ConfigError("dataset csv: bad label '" + cell + "'", line_no);
    }
    std::getline(ls, cell);
    if (ds.domain_id.empty()) ds.domain_id = cell;
  }
  const std::size_t n = ds.labels.size();
  ds.features = Matrix(n, d, std::move(values));
  ds.num_classes = num_classes ? num_classes : infer_num_classes(ds.labels);
  return ds;
}

std::uint64_t partition_hash(const PartitionPlan& plan, std::uint64_t seed) {
  std::uint64_t h = seed;
  auto feed = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  feed(plan.assignments.size());
  for (const auto& a : plan.assignments) {
    feed(a.size());
    for (std::size_t i : a) feed(i);
  }
  return h;
}

}  // namespace fssda
