#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fssda/distill.hpp"
#include "fssda/errors.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace fssda {
namespace {

using test::gaussian_vector;
using test::random_matrix;
using test::random_params;
using test::random_targets;
using test::spec_with_size;

struct Problem {
  ParamVector params;
  Matrix features;
  Matrix hard;
  std::vector<SoftLabelSet> soft;
};

Problem random_problem(Rng& rng, std::size_t sources = 1, std::size_t hidden = 0) {
  const ModelSpec spec{4, hidden, 3};
  Problem p{random_params(spec, rng), random_matrix(rng, 9, 4), Matrix(9, 3), {}};
  for (std::size_t r = 0; r < 9; r += 3) p.hard(r, r % 3) = 1.0;  // every third row labeled
  for (std::size_t j = 0; j < sources; ++j) {
    p.soft.push_back(gen_soft_labels(random_params(spec, rng), p.features, 2.0));
  }
  return p;
}

TEST(SoftLabels, ZeroSourceGivesUniformRows) {
  Rng rng(1);
  const SoftLabelSet s = gen_soft_labels(ParamVector(ModelSpec{3, 0, 4}), random_matrix(rng, 5, 3), 2.0);
  for (double v : s.probs.values()) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_EQ(s.temperature, 2.0);
}

TEST(SoftLabels, HugeTemperatureApproachesUniform) {
  Rng rng(2);
  const ModelSpec spec{3, 4, 5};
  const SoftLabelSet s =
      gen_soft_labels(random_params(spec, rng, 2.0), random_matrix(rng, 6, 3, 3.0), 1e6);
  for (double v : s.probs.values()) EXPECT_NEAR(v, 0.2, 1e-4);
}

TEST(SoftLabels, ComposesForwardAndSoftmax) {
  Rng rng(3);
  const ModelSpec spec{3, 2, 3};
  const ParamVector p = random_params(spec, rng);
  const Matrix x = random_matrix(rng, 4, 3);
  EXPECT_EQ(gen_soft_labels(p, x, 1.0).probs, softmax_t(forward_logits(p, x), 1.0));
  EXPECT_EQ(gen_soft_labels(p, x, 3.0).probs, softmax_t(forward_logits(p, x), 3.0));
}

TEST(MixedLoss, EndpointsAndFakeLabels) {
  Rng rng(4);
  const Problem p = random_problem(rng);
  const Matrix logits = forward_logits(p.params, p.features);
  const double hard = cross_entropy(p.hard, softmax_t(logits, 1.0));
  const double soft = cross_entropy(p.soft[0].probs, softmax_t(logits, 2.0));
  EXPECT_EQ(mixed_loss(p.params, p.features, p.hard, p.soft[0], 1.0), hard);
  EXPECT_EQ(mixed_loss(p.params, p.features, p.hard, p.soft[0], 0.0), soft);
  const Matrix fake(9, 3);
  for (double l : {0.0, 0.3, 0.8, 1.0}) {
    EXPECT_DOUBLE_EQ(mixed_loss(p.params, p.features, fake, p.soft[0], l), (1.0 - l) * soft);
  }
}

TEST(MixedLoss, LambdaOutOfRangeThrows) {
  Rng rng(5);
  const Problem p = random_problem(rng);
  EXPECT_THROW(mixed_loss(p.params, p.features, p.hard, p.soft[0], -0.1), ParameterError);
  EXPECT_THROW(mixed_loss(p.params, p.features, p.hard, p.soft[0], 1.1), ParameterError);
  EXPECT_THROW(mixed_loss(p.params, p.features, Matrix(8, 3), p.soft[0], 0.5), ShapeError);
}

TEST(MixedLossProperty, AffineInLambda) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Problem p = random_problem(rng, 1, trial % 2 ? 3 : 0);
    const double h = mixed_loss(p.params, p.features, p.hard, p.soft[0], 1.0);
    const double s = mixed_loss(p.params, p.features, p.hard, p.soft[0], 0.0);
    for (double l = 0.0; l <= 1.0; l += 0.125) {
      EXPECT_EQ(mixed_loss(p.params, p.features, p.hard, p.soft[0], l), l * h + (1.0 - l) * s);
    }
  }
}

TEST(MultiSourceLoss, ReducesToMixedLossBitExactly) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Problem p = random_problem(rng);
    for (double l : {0.0, 0.25, 0.6, 1.0}) {
      EXPECT_EQ(multi_source_loss(p.params, p.features, p.hard, p.soft, ImitationWeights::single(l)),
                mixed_loss(p.params, p.features, p.hard, p.soft[0], l));
    }
  }
}

TEST(MultiSourceLoss, VertexAndDuplicateSources) {
  Rng rng(8);
  const Problem p = random_problem(rng);
  const double hard = mixed_loss(p.params, p.features, p.hard, p.soft[0], 1.0);
  const double soft = mixed_loss(p.params, p.features, p.hard, p.soft[0], 0.0);
  const std::vector<SoftLabelSet> twice{p.soft[0], p.soft[0]};
  EXPECT_EQ(multi_source_loss(p.params, p.features, p.hard, twice, {{1.0, 0.0, 0.0}}), hard);
  EXPECT_DOUBLE_EQ(multi_source_loss(p.params, p.features, p.hard, twice, {{0.0, 0.5, 0.5}}), soft);
}

TEST(MultiSourceLoss, WeightCountMismatchThrows) {
  Rng rng(9);
  const Problem p = random_problem(rng, 2);
  EXPECT_THROW(multi_source_loss(p.params, p.features, p.hard, p.soft, ImitationWeights::single(0.5)),
               ParameterError);
  EXPECT_THROW(multi_source_loss(p.params, p.features, p.hard, p.soft, {{0.5, 0.5, 0.5}}),
               ParameterError);
}

TEST(LossTermGradients, MatchFiniteDifferencesOfEachTerm) {
  Rng rng(10);
  const Problem p = random_problem(rng, 2, 3);
  const auto g = loss_term_gradients(p.params, p.features, p.hard, p.soft);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_LT(oracle::fd_max_relative_error(p.params, {p.features, p.hard}, 1.0, g[0]), 1e-4);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_LT(oracle::fd_max_relative_error(p.params, {p.features, p.soft[j].probs}, 2.0, g[j + 1]),
              1e-4);
  }
}

TEST(AdaptiveLambda, KnownCases) {
  Rng rng(11);
  const ModelSpec spec = spec_with_size(10);
  const ParamVector g = gaussian_vector(spec, rng);
  ParamVector neg = g;
  for (double& v : neg.values()) v = -v;
  EXPECT_DOUBLE_EQ(adaptive_lambda(g, neg), 0.5);

  const ParamVector zero(spec);
  EXPECT_EQ(adaptive_lambda(g, zero), 0.0);
  EXPECT_EQ(lambda_objective(g, zero, 0.0), 0.0);

  // No labeled rows: the hard gradient vanishes and all weight goes to the soft term.
  EXPECT_EQ(adaptive_lambda(zero, g), 0.0);
  // Identical gradients: the objective is flat in lambda.
  EXPECT_EQ(adaptive_lambda(g, g), 0.5);
}

TEST(AdaptiveLambda, SpecMismatchThrows) {
  EXPECT_THROW(adaptive_lambda(ParamVector(spec_with_size(10)), ParamVector(spec_with_size(12))),
               ShapeError);
}

TEST(AdaptiveLambdaProperty, MatchesGridArgmin) {
  Rng rng(12);
  const ModelSpec spec = spec_with_size(50);
  for (int trial = 0; trial < 200; ++trial) {
    const ParamVector h = gaussian_vector(spec, rng);
    const ParamVector s = gaussian_vector(spec, rng);
    const double l = adaptive_lambda(h, s);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1.0);
    const auto grid = oracle::lambda_grid(oracle::to_vector(h), oracle::to_vector(s));
    EXPECT_NEAR(l, grid.argmin, 1e-3);
    const double at_l = lambda_objective(h, s, l);
    for (double v : grid.values) ASSERT_LE(at_l, v + 1e-12);
  }
}

TEST(AdaptiveLambdaProperty, ClipsWhenOneGradientDominates) {
  Rng rng(13);
  const ModelSpec spec = spec_with_size(20);
  for (int trial = 0; trial < 50; ++trial) {
    const ParamVector s = gaussian_vector(spec, rng);
    ParamVector h = s;
    for (double& v : h.values()) v *= 3.0;  // same direction, larger: all weight on soft
    EXPECT_EQ(adaptive_lambda(h, s), 0.0);
    EXPECT_EQ(adaptive_lambda(s, h), 1.0);
  }
}

TEST(FrankWolfe, AntipodalPairCancels) {
  Rng rng(14);
  const ModelSpec spec = spec_with_size(10);
  const ParamVector g = gaussian_vector(spec, rng);
  ParamVector neg = g;
  for (double& v : neg.values()) v = -v;
  const std::vector<ParamVector> gs{g, neg};
  const auto r = frank_wolfe_simplex(gs);
  EXPECT_NEAR(r.weights.lambdas[0], 0.5, 1e-12);
  EXPECT_NEAR(r.weights.lambdas[1], 0.5, 1e-12);
  EXPECT_NEAR(squared_norm(linear_combination(gs, r.weights.lambdas)), 0.0, 1e-20);
}

TEST(FrankWolfe, IdenticalGradientsKeepTheirNorm) {
  Rng rng(15);
  const ParamVector g = gaussian_vector(spec_with_size(10), rng);
  const std::vector<ParamVector> gs{g, g, g};
  const auto r = frank_wolfe_simplex(gs);
  EXPECT_NEAR(std::sqrt(squared_norm(linear_combination(gs, r.weights.lambdas))),
              std::sqrt(squared_norm(g)), 1e-6);
}

TEST(FrankWolfe, EmptyInputThrows) {
  EXPECT_THROW(frank_wolfe_simplex(std::vector<ParamVector>{}), ParameterError);
  EXPECT_THROW(frank_wolfe_gram(std::vector<double>(3), 2), ShapeError);
}

TEST(FrankWolfe, NormalizationBalancesScales) {
  const ModelSpec spec = spec_with_size(4);
  const ParamVector a(spec, {1.0, 0.0, 0.0, 0.0});
  const ParamVector b(spec, {0.0, 100.0, 0.0, 0.0});
  const std::vector<ParamVector> gs{a, b};
  const auto raw = frank_wolfe_simplex(gs);
  EXPECT_GT(raw.weights.lambdas[1], 0.0);
  EXPECT_LT(raw.weights.lambdas[1], 0.01);
  const auto norm = frank_wolfe_simplex(gs, {100, 1e-9, true});
  EXPECT_NEAR(norm.weights.lambdas[0], 0.5, 1e-6);
}

TEST(FrankWolfeProperty, NearGridOptimumFeasibleAndMonotone) {
  Rng rng(16);
  const ModelSpec spec = spec_with_size(50);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ParamVector> gs;
    std::vector<std::vector<double>> raw;
    for (int j = 0; j < 3; ++j) {
      gs.push_back(gaussian_vector(spec, rng));
      raw.push_back(oracle::to_vector(gs.back()));
    }
    const auto r = frank_wolfe_simplex(gs);
    for (const auto& w : r.iterates) {
      double sum = 0.0;
      for (double v : w) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
      EXPECT_LE(r.objective_trace[i], r.objective_trace[i - 1]);
    }
    r.weights.validate();
    EXPECT_NEAR(oracle::combined_sq_norm(raw, r.weights.lambdas), oracle::simplex_grid_min(raw),
                1e-3);
  }
}

TEST(FrankWolfeProperty, TwoGradientsAgreeWithClosedForm) {
  Rng rng(17);
  const ModelSpec spec = spec_with_size(30);
  for (int trial = 0; trial < 100; ++trial) {
    const ParamVector h = gaussian_vector(spec, rng), s = gaussian_vector(spec, rng);
    const std::vector<ParamVector> gs{h, s};
    const auto r = frank_wolfe_simplex(gs, {1000, 1e-14, false});
    EXPECT_NEAR(r.weights.hard(), adaptive_lambda(h, s), 1e-6);
  }
}

TEST(ImitationWeights, Validation) {
  EXPECT_NO_THROW(ImitationWeights::single(0.3).validate());
  EXPECT_THROW((ImitationWeights{{0.5}}.validate()), ParameterError);
  EXPECT_THROW((ImitationWeights{{0.5, 0.6}}.validate()), ParameterError);
  EXPECT_THROW((ImitationWeights{{-0.1, 1.1}}.validate()), ParameterError);
  EXPECT_EQ((ImitationWeights{{0.2, 0.3, 0.5}}.num_sources()), 2u);
}

}  // namespace
}  // namespace fssda
