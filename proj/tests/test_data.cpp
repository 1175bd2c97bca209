#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <vector>

#include "fssda/data.hpp"
#include "fssda/errors.hpp"
#include "fssda/model.hpp"

namespace fssda {
namespace {

std::vector<int> class_counts(std::span<const int> labels, std::size_t c) {
  std::vector<int> counts(c, 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

std::vector<double> empirical_mean(const DomainDataset& ds, int cls) {
  std::vector<double> m(ds.features.cols(), 0.0);
  int n = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] != cls) continue;
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += ds.features(i, j);
    ++n;
  }
  for (double& v : m) v /= n;
  return m;
}

// Plain full-batch softmax regression, enough to measure a domain gap.
ParamVector train_linear(const DomainDataset& ds, std::size_t steps, double lr) {
  ParamVector p(ModelSpec{ds.features.cols(), 0, ds.num_classes});
  const Batch b{ds.features, one_hot(ds.labels, ds.num_classes)};
  for (std::size_t s = 0; s < steps; ++s) p = sgd_step(p, grad(p, b, 1.0), lr);
  return p;
}

TEST(DomainPair, IdentityShiftKeepsDistribution) {
  const DomainPair d = make_domain_pair(1, 3, 4, 3000, 3000, ShiftSpec{});
  EXPECT_EQ(d.source.class_means, d.target.class_means);
  for (int c = 0; c < 3; ++c) {
    const auto ms = empirical_mean(d.source, c);
    const auto mt = empirical_mean(d.target, c);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(ms[j], mt[j], 0.15);
  }
}

TEST(DomainPair, HalfTurnNegatesMeansIn2D) {
  const DomainPair d = make_domain_pair(2, 4, 2, 40, 40, ShiftSpec{std::numbers::pi, {}, 1.0, 0.0});
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_NEAR(d.target.class_means(c, j), -d.source.class_means(c, j), 1e-12);
    }
  }
}

TEST(DomainPair, EveryClassPresentAndBalanced) {
  const DomainPair d = make_domain_pair(3, 5, 6, 103, 50, ShiftSpec{0.2, {}, 1.1, 0.1});
  for (int n : class_counts(d.source.labels, 5)) EXPECT_GE(n, 20);
  for (int n : class_counts(d.target.labels, 5)) EXPECT_EQ(n, 10);
  EXPECT_EQ(d.source.size(), 103u);
  EXPECT_EQ(d.source.domain_id, "source");
  EXPECT_EQ(d.target.domain_id, "target");
}

TEST(DomainPair, ShiftMovesTargetAwayFromSourceClassifier) {
  const MixtureSpec mixture{3.0, 1.25, true};
  double src = 0.0, tgt = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ShiftSpec shift{std::numbers::pi / 6, {}, 1.2, 0.3};
    const DomainPair d = make_domain_pair(seed, 8, 64, 1000, 500, shift, mixture);
    const TrainTestSplit split = split_test(d.source, 0.25, seed);
    const ParamVector p = train_linear(subset(d.source, split.train), 100, 0.5);
    const DomainDataset held = subset(d.source, split.test);
    src += accuracy(p, held.features, held.labels);
    tgt += accuracy(p, d.target.features, d.target.labels);
  }
  EXPECT_LT(tgt / 5, src / 5);
}

TEST(DomainPair, Errors) {
  EXPECT_THROW(make_domain_pair(1, 3, 4, 30, 30, ShiftSpec{0.0, {}, 0.0, 0.0}), ParameterError);
  EXPECT_THROW(make_domain_pair(1, 3, 4, 30, 30, ShiftSpec{0.0, {}, -1.0, 0.0}), ParameterError);
  EXPECT_THROW(make_domain_pair(1, 3, 4, 30, 30, ShiftSpec{0.0, {1.0}, 1.0, 0.0}), ShapeError);
  EXPECT_THROW(make_domain_pair(1, 3, 1, 30, 30, ShiftSpec{}), ParameterError);
  EXPECT_THROW(make_domain_pair(1, 3, 4, 2, 30, ShiftSpec{}), ParameterError);
}

TEST(DomainPair, DeterministicPerSeed) {
  const ShiftSpec s{0.4, random_translation(9, 5, 1.0), 1.3, 0.2};
  const DomainPair a = make_domain_pair(9, 3, 5, 30, 30, s);
  const DomainPair b = make_domain_pair(9, 3, 5, 30, 30, s);
  EXPECT_EQ(a.source.features, b.source.features);
  EXPECT_EQ(a.target.features, b.target.features);
  EXPECT_EQ(a.target.labels, b.target.labels);
  const DomainPair c = make_domain_pair(10, 3, 5, 30, 30, s);
  EXPECT_NE(a.source.features, c.source.features);
}

TEST(DomainPair, PlaneAlignedMeansStayInTheirPlanes) {
  const MixtureSpec mixture{2.5, 1.0, true};
  const DomainPair d = make_domain_pair(4, 4, 10, 40, 40, ShiftSpec{1.0, {}, 1.5, 0.0}, mixture);
  std::set<std::size_t> planes;
  for (std::size_t c = 0; c < 4; ++c) {
    double norm2 = 0.0;
    std::size_t plane = 99;
    for (std::size_t j = 0; j < 10; ++j) {
      const double v = d.source.class_means(c, j);
      norm2 += v * v;
      if (v != 0.0) plane = j / 2;
    }
    EXPECT_NEAR(std::sqrt(norm2), 2.5, 1e-12);
    planes.insert(plane);
    for (std::size_t j = 0; j < 10; ++j) {
      if (j / 2 != plane) EXPECT_EQ(d.target.class_means(c, j), 0.0);
    }
  }
  EXPECT_EQ(planes.size(), 4u);
}

TEST(DomainPair, RandomMeansLieOnSphere) {
  const DomainPair d = make_domain_pair(5, 6, 7, 60, 60, ShiftSpec{}, MixtureSpec{4.0, 1.0});
  for (std::size_t c = 0; c < 6; ++c) {
    double norm2 = 0.0;
    for (double v : d.source.class_means.row(c)) norm2 += v * v;
    EXPECT_NEAR(std::sqrt(norm2), 4.0, 1e-12);
  }
}

TEST(MultiSource, SourcesAreShiftedTargetIsNot) {
  const std::vector<ShiftSpec> shifts{{0.5, {}, 1.0, 0.0}, {-0.5, {}, 2.0, 0.0}};
  const MultiSourceDomains m = make_multi_source(3, 3, 4, 30, 40, shifts);
  ASSERT_EQ(m.sources.size(), 2u);
  EXPECT_EQ(m.target.size(), 40u);
  for (std::size_t j = 0; j < 2; ++j) {
    Matrix expected = m.target.class_means;
    for (std::size_t c = 0; c < 3; ++c) shifts[j].apply(expected.row(c));
    EXPECT_EQ(m.sources[j].class_means, expected);
  }
  EXPECT_THROW(make_multi_source(3, 3, 4, 30, 40, std::vector<ShiftSpec>{}), ParameterError);
}

TEST(RandomTranslation, HasRequestedNorm) {
  const auto t = random_translation(5, 8, 2.0);
  double n2 = 0.0;
  for (double v : t) n2 += v * v;
  EXPECT_NEAR(std::sqrt(n2), 2.0, 1e-12);
  EXPECT_TRUE(random_translation(5, 8, 0.0).empty());
}

std::vector<int> balanced(std::size_t n, std::size_t c) {
  std::vector<int> l(n);
  for (std::size_t i = 0; i < n; ++i) l[i] = static_cast<int>(i % c);
  return l;
}

void expect_exact_partition(const PartitionPlan& plan, std::size_t n) {
  std::vector<std::size_t> all;
  for (const auto& a : plan.assignments) {
    EXPECT_FALSE(a.empty());
    EXPECT_TRUE(std::ranges::is_sorted(a));
    all.insert(all.end(), a.begin(), a.end());
  }
  std::ranges::sort(all);
  std::vector<std::size_t> expected(n);
  for (std::size_t i = 0; i < n; ++i) expected[i] = i;
  EXPECT_EQ(all, expected);
}

TEST(Dirichlet, SingleDeviceGetsEverything) {
  const auto labels = balanced(37, 4);
  for (double beta : {0.01, 1.0, 1e6}) {
    const PartitionPlan p = dirichlet_partition(labels, 1, beta, 3);
    ASSERT_EQ(p.num_devices(), 1u);
    EXPECT_EQ(p.assignments[0].size(), 37u);
  }
}

TEST(Dirichlet, HugeBetaSplitsEvenly) {
  const std::vector<int> one_class(1000, 0);
  const PartitionPlan p = dirichlet_partition(one_class, 2, 1e6, 1);
  EXPECT_EQ(p.assignments[0].size(), 500u);
  EXPECT_EQ(p.assignments[1].size(), 500u);
  // At beta = 1e6 the proportion still has a standard deviation of about 3.5e-4,
  // i.e. a third of a sample, so across seeds the split is 500 +/- 1.
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const PartitionPlan q = dirichlet_partition(one_class, 2, 1e6, seed);
    EXPECT_LE(std::abs(static_cast<long>(q.assignments[0].size()) - 500), 1);
  }
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const PartitionPlan q = dirichlet_partition(one_class, 2, 1e12, seed);
    EXPECT_EQ(q.assignments[0].size(), 500u);
  }
}

double mean_max_class_share(double beta) {
  const auto labels = balanced(800, 8);
  double total = 0.0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const PartitionPlan p = dirichlet_partition(labels, 5, beta, seed);
    double worst = 0.0;
    for (const auto& a : p.assignments) {
      const auto counts = class_counts(
          [&] {
            std::vector<int> l;
            for (auto i : a) l.push_back(labels[i]);
            return l;
          }(),
          8);
      worst = std::max(worst, static_cast<double>(*std::ranges::max_element(counts)) /
                                  static_cast<double>(a.size()));
    }
    total += worst;
  }
  return total / 50;
}

TEST(Dirichlet, SmallBetaIsMoreSkewed) { EXPECT_GT(mean_max_class_share(0.1), mean_max_class_share(100.0)); }

TEST(DirichletProperty, ExactPartitionsAndNormalizedProportions) {
  Rng rng(77);
  // At most one device per class: with beta = 0.1 and many more devices than
  // classes, nearly every draw starves some device and the redraw budget runs out.
  std::uniform_int_distribution<std::size_t> classes(2, 10), extra(0, 300);
  std::uniform_real_distribution<double> log_beta(-1.0, 6.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = classes(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, c)(rng);
    const std::size_t n = 20 * k + extra(rng);
    const auto labels = balanced(n, c);
    const double beta = std::pow(10.0, log_beta(rng));
    const PartitionPlan p = dirichlet_partition(labels, k, beta, rng());
    expect_exact_partition(p, n);
    for (std::size_t r = 0; r < c; ++r) {
      double s = 0.0;
      for (double v : p.proportions.row(r)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Dirichlet, DeterministicAndHashed) {
  const auto labels = balanced(200, 4);
  const PartitionPlan a = dirichlet_partition(labels, 5, 0.1, 11);
  const PartitionPlan b = dirichlet_partition(labels, 5, 0.1, 11);
  const PartitionPlan c = dirichlet_partition(labels, 5, 0.1, 12);
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_EQ(partition_hash(a), partition_hash(b));
  EXPECT_NE(partition_hash(a), partition_hash(c));
}

TEST(Dirichlet, Errors) {
  const auto labels = balanced(10, 2);
  EXPECT_THROW(dirichlet_partition(labels, 0, 1.0, 1), ParameterError);
  EXPECT_THROW(dirichlet_partition(labels, 2, 0.0, 1), ParameterError);
  EXPECT_THROW(dirichlet_partition(labels, 11, 1.0, 1), ParameterError);
  // Two samples over two devices at tiny beta: almost every draw starves a device.
  EXPECT_THROW(dirichlet_partition(std::vector<int>{0, 0}, 2, 1e-3, 1, 3), ParameterError);
}

TEST(LargestRemainder, SumsToTotalAndBreaksTiesLow) {
  const std::vector<double> w{0.5, 0.5};
  EXPECT_EQ(largest_remainder(3, w), (std::vector<std::size_t>{2, 1}));
  const std::vector<double> t{0.2, 0.3, 0.5};
  EXPECT_EQ(largest_remainder(10, t), (std::vector<std::size_t>{2, 3, 5}));
  Rng rng(5);
  std::gamma_distribution<double> g(0.3, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(7);
    double s = 0.0;
    for (double& v : p) s += v = g(rng) + 1e-300;
    for (double& v : p) v /= s;
    const auto counts = largest_remainder(static_cast<std::size_t>(trial), p);
    std::size_t sum = 0;
    for (auto c : counts) sum += c;
    EXPECT_EQ(sum, static_cast<std::size_t>(trial));
  }
}

DomainDataset pool_of(std::size_t per_class, std::size_t c) {
  return make_domain_pair(21, c, 3, per_class * c, per_class * c, ShiftSpec{}).target;
}

TEST(MaskLabels, CountsPerClass) {
  const DomainDataset ds = pool_of(20, 8);
  const MaskedPool m = mask_labels(ds, 3, 4);
  std::vector<int> per_class(8, 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!m.labeled[i]) continue;
    ++total;
    ++per_class[static_cast<std::size_t>(m.true_labels[i])];
  }
  EXPECT_EQ(total, 24u);
  for (int n : per_class) EXPECT_EQ(n, 3);
}

TEST(MaskLabels, NoneAndAll) {
  const DomainDataset ds = pool_of(5, 3);
  const MaskedPool none = mask_labels(ds, 0, 1);
  EXPECT_TRUE(std::ranges::none_of(none.labeled, [](bool b) { return b; }));
  for (double v : none.hard_labels.values()) EXPECT_EQ(v, 0.0);
  const MaskedPool all = mask_labels(ds, 5, 1);
  EXPECT_TRUE(std::ranges::all_of(all.labeled, [](bool b) { return b; }));
  EXPECT_THROW(mask_labels(ds, 6, 1), ParameterError);
}

TEST(MaskLabelsProperty, FakeRowsZeroLabeledRowsOneHot) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const DomainDataset ds = pool_of(10, 4);
    const MaskedPool m = mask_labels(ds, seed % 11, seed);
    std::size_t labeled = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      double sum = 0.0;
      for (double v : m.hard_labels.row(i)) sum += v;
      EXPECT_EQ(sum, m.labeled[i] ? 1.0 : 0.0);
      if (m.labeled[i]) {
        ++labeled;
        EXPECT_EQ(m.hard_labels(i, static_cast<std::size_t>(ds.labels[i])), 1.0);
      }
      EXPECT_EQ(m.true_labels[i], ds.labels[i]);
    }
    EXPECT_EQ(labeled, (seed % 11) * 4);
  }
}

TEST(TargetShard, TrueLabelReadsAreCounted) {
  const DomainDataset ds = pool_of(4, 3);
  const MaskedPool m = mask_labels(ds, 1, 2);
  const std::vector<std::size_t> idx{0, 2, 4, 6, 8};
  const TargetShard shard = make_target_shard(m, idx);
  EXPECT_EQ(shard.size(), 5u);
  const TargetTrainingView v = shard.training_view();
  EXPECT_EQ(v.features.rows(), 5u);
  EXPECT_EQ(v.num_labeled(), shard.num_labeled());
  EXPECT_EQ(shard.true_label_reads(), 0u);
  EXPECT_EQ(shard.true_labels()[1], ds.labels[2]);
  EXPECT_EQ(shard.true_label_reads(), 1u);
}

TEST(SplitTest, KnownCasesAndDeterminism) {
  const DomainDataset ds = pool_of(2, 3);
  const TrainTestSplit s = split_test(ds, 0.5, 1);
  EXPECT_EQ(s.train.size(), 3u);
  EXPECT_EQ(s.test.size(), 3u);
  std::vector<int> test_classes;
  for (auto i : s.test) test_classes.push_back(ds.labels[i]);
  EXPECT_EQ(class_counts(test_classes, 3), (std::vector<int>{1, 1, 1}));
  const TrainTestSplit again = split_test(ds, 0.5, 1);
  EXPECT_EQ(s.train, again.train);
  EXPECT_EQ(s.test, again.test);
}

TEST(SplitTest, PartsCoverTheDataset) {
  const DomainDataset ds = pool_of(17, 4);
  for (double f : {0.1, 0.25, 0.5, 0.9}) {
    const TrainTestSplit s = split_test(ds, f, 8);
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::ranges::sort(all);
    for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
    EXPECT_EQ(all.size(), ds.size());
  }
}

TEST(SplitTest, Errors) {
  const DomainDataset ds = pool_of(2, 3);
  EXPECT_THROW(split_test(ds, 0.0, 1), ParameterError);
  EXPECT_THROW(split_test(ds, 1.0, 1), ParameterError);
  EXPECT_THROW(split_test(ds, 0.1, 1), ParameterError);  // no test sample for any class
}

TEST(DatasetCsv, RoundTripsBitExactly) {
  const DomainPair d = make_domain_pair(31, 3, 4, 12, 12, ShiftSpec{0.3, {}, 1.2, 0.1});
  std::stringstream io;
  write_dataset_csv(io, d.target);
  const DomainDataset back = read_dataset_csv(io, 3);
  EXPECT_EQ(back.features, d.target.features);
  EXPECT_EQ(back.labels, d.target.labels);
  EXPECT_EQ(back.domain_id, "target");
  std::stringstream header(io.str());
  std::string first;
  std::getline(header, first);
  EXPECT_EQ(first, "f0,f1,f2,f3,label,domain_id");
}

TEST(DatasetCsv, MalformedInputReportsLine) {
  std::stringstream io("f0,f1,label,domain_id\n1,2,0,a\n1,x,0,a\n");
  try {
    read_dataset_csv(io);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

}  // namespace
}  // namespace fssda
