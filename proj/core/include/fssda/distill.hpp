#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fssda/matrix.hpp"
#include "fssda/model.hpp"

namespace fssda {

inline constexpr double kDefaultTemperature = 2.0;

// Class-probability rows a source model assigns to target samples.
struct SoftLabelSet {
  Matrix probs;
  double temperature = kDefaultTemperature;
  std::string source_id;
};

// Convex weights over the S+1 loss terms: index 0 is the hard-label term,
// index j >= 1 the soft-label term of source j.
struct ImitationWeights {
  std::vector<double> lambdas;

  double hard() const { return lambdas.at(0); }
  std::size_t num_sources() const noexcept { return lambdas.empty() ? 0 : lambdas.size() - 1; }

  static ImitationWeights single(double lambda) { return {{lambda, 1.0 - lambda}}; }
  // Throws ParameterError unless entries are >= 0 and sum to 1 within tol.
  void validate(double tol = 1e-9) const;
};

SoftLabelSet gen_soft_labels(const ParamVector& source_params, const Matrix& target_features,
                             double temperature, std::string source_id = {});

// lambda * CE(hard, softmax(z)) + (1 - lambda) * CE(soft, softmax(z / T)),
// where T is the soft set's temperature.
double mixed_loss(const ParamVector& target_params, const Matrix& features,
                  const Matrix& hard_labels, const SoftLabelSet& soft_labels, double lambda);

double multi_source_loss(const ParamVector& target_params, const Matrix& features,
                         const Matrix& hard_labels, std::span<const SoftLabelSet> soft_label_sets,
                         const ImitationWeights& weights);

// Gradients of the individual loss terms on one batch: [hard, soft_1, ..., soft_S].
std::vector<ParamVector> loss_term_gradients(const ParamVector& target_params,
                                             const Matrix& features, const Matrix& hard_labels,
                                             std::span<const SoftLabelSet> soft_label_sets);

inline constexpr double kLambdaDenominatorEps = 1e-12;
inline constexpr double kLambdaGradEps = 1e-12;

// Minimizer over [0,1] of ||lambda * g_hard + (1 - lambda) * g_soft||^2:
//
//   lambda = g_soft . (g_soft - g_hard) / ||g_hard - g_soft||^2, clipped.
//
// When ||g_hard|| < kLambdaGradEps (a device with no labeled rows) this returns
// 0 so the device still learns from the soft labels; when the two gradients
// coincide the objective is flat and 0.5 is returned.
double adaptive_lambda(const ParamVector& grad_hard, const ParamVector& grad_soft);

// ||lambda * g_hard + (1 - lambda) * g_soft||^2
double lambda_objective(const ParamVector& grad_hard, const ParamVector& grad_soft, double lambda);

struct FrankWolfeOptions {
  std::size_t max_iters = 100;
  double tol = 1e-6;
  bool normalize = false;  // rescale each gradient to unit norm first
};

struct FrankWolfeResult {
  ImitationWeights weights;
  std::vector<double> objective_trace;          // ||G lambda||^2 at start and after each step
  std::vector<std::vector<double>> iterates;    // simplex point at start and after each step
  std::size_t iterations = 0;
  double duality_gap = 0.0;
};

// Min-norm point of the convex hull of `gradients` via Frank-Wolfe with exact
// line search, started from the uniform weights.
FrankWolfeResult frank_wolfe_simplex(std::span<const ParamVector> gradients,
                                     const FrankWolfeOptions& options = {});

// Same solver on a precomputed Gram matrix (row-major, n x n).
FrankWolfeResult frank_wolfe_gram(std::span<const double> gram, std::size_t n,
                                  const FrankWolfeOptions& options = {});

}  // namespace fssda
