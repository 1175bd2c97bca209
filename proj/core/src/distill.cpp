#include "fssda/distill.hpp"

#include <algorithm>
#include <cmath>

#include "fssda/errors.hpp"

namespace fssda {
namespace {

void check_labels(const Matrix& features, const Matrix& labels, const ParamVector& params,
                  const char* what) {
  if (labels.rows() != features.rows() || labels.cols() != params.spec().num_classes) {
    throw ShapeError(std::string(what) + ": label matrix shape mismatch");
  }
}

}  // namespace

void ImitationWeights::validate(double tol) const {
  if (lambdas.size() < 2) throw ParameterError("imitation weights need at least two entries");
  double sum = 0.0;
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw ParameterError("imitation weights must be non-negative");
    sum += l;
  }
  if (std::abs(sum - 1.0) > tol) throw ParameterError("imitation weights must sum to 1");
}

SoftLabelSet gen_soft_labels(const ParamVector& source_params, const Matrix& target_features,
                             double temperature, std::string source_id) {
  return {softmax_t(forward_logits(source_params, target_features), temperature), temperature,
          std::move(source_id)};
}

double mixed_loss(const ParamVector& target_params, const Matrix& features,
                  const Matrix& hard_labels, const SoftLabelSet& soft_labels, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1]");
  check_labels(features, hard_labels, target_params, "mixed_loss");
  check_labels(features, soft_labels.probs, target_params, "mixed_loss");
  const Matrix logits = forward_logits(target_params, features);
  const double hard = cross_entropy(hard_labels, softmax_t(logits, 1.0));
  const double soft = cross_entropy(soft_labels.probs, softmax_t(logits, soft_labels.temperature));
  return lambda * hard + (1.0 - lambda) * soft;
}

double multi_source_loss(const ParamVector& target_params, const Matrix& features,
                         const Matrix& hard_labels, std::span<const SoftLabelSet> soft_label_sets,
                         const ImitationWeights& weights) {
  if (weights.lambdas.size() != soft_label_sets.size() + 1) {
    throw ParameterError("multi_source_loss: " + std::to_string(weights.lambdas.size()) +
                         " weights for " + std::to_string(soft_label_sets.size()) + " sources");
  }
  weights.validate();
  check_labels(features, hard_labels, target_params, "multi_source_loss");
  const Matrix logits = forward_logits(target_params, features);
  double loss = weights.lambdas[0] * cross_entropy(hard_labels, softmax_t(logits, 1.0));
  for (std::size_t j = 0; j < soft_label_sets.size(); ++j) {
    const auto& soft = soft_label_sets[j];
    check_labels(features, soft.probs, target_params, "multi_source_loss");
    loss += weights.lambdas[j + 1] * cross_entropy(soft.probs, softmax_t(logits, soft.temperature));
  }
  return loss;
}

std::vector<ParamVector> loss_term_gradients(const ParamVector& target_params,
                                             const Matrix& features, const Matrix& hard_labels,
                                             std::span<const SoftLabelSet> soft_label_sets) {
  std::vector<ParamVector> out;
  out.reserve(soft_label_sets.size() + 1);
  out.push_back(grad(target_params, Batch{features, hard_labels}, 1.0));
  for (const auto& soft : soft_label_sets) {
    out.push_back(grad(target_params, Batch{features, soft.probs}, soft.temperature));
  }
  return out;
}

double lambda_objective(const ParamVector& grad_hard, const ParamVector& grad_soft, double lambda) {
  double acc = 0.0;
  for (std::size_t i = 0; i < grad_hard.size(); ++i) {
    const double v = lambda * grad_hard[i] + (1.0 - lambda) * grad_soft[i];
    acc += v * v;
  }
  return acc;
}

double adaptive_lambda(const ParamVector& grad_hard, const ParamVector& grad_soft) {
  if (!(grad_hard.spec() == grad_soft.spec())) throw ShapeError("adaptive_lambda: specs differ");
  if (squared_norm(grad_hard) < kLambdaGradEps * kLambdaGradEps) return 0.0;
  double numerator = 0.0;
  double denominator = 0.0;
  for (std::size_t i = 0; i < grad_hard.size(); ++i) {
    const double diff = grad_soft[i] - grad_hard[i];
    numerator += grad_soft[i] * diff;
    denominator += diff * diff;
  }
  if (denominator < kLambdaDenominatorEps) return 0.5;
  return std::clamp(numerator / denominator, 0.0, 1.0);
}

FrankWolfeResult frank_wolfe_gram(std::span<const double> gram, std::size_t n,
                                  const FrankWolfeOptions& options) {
  if (n == 0) throw ParameterError("frank_wolfe: no gradients");
  if (gram.size() != n * n) throw ShapeError("frank_wolfe: gram matrix size");
  auto G = [&](std::size_t i, std::size_t j) { return gram[i * n + j]; };

  std::vector<double> lambda(n, 1.0 / static_cast<double>(n));
  std::vector<double> m_lambda(n);  // gram * lambda
  auto refresh = [&] {
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += G(i, j) * lambda[j];
      m_lambda[i] = acc;
      obj += lambda[i] * acc;
    }
    return obj;
  };

  FrankWolfeResult result;
  double objective = refresh();
  result.objective_trace.push_back(objective);
  result.iterates.push_back(lambda);
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    const std::size_t vertex =
        static_cast<std::size_t>(std::ranges::min_element(m_lambda) - m_lambda.begin());
    // <grad f, lambda - e_v> / 2 with grad f = 2 * gram * lambda.
    result.duality_gap = objective - m_lambda[vertex];
    if (result.duality_gap < options.tol) break;

    // Exact line search on ||(1 - g) a + g b||^2 with a = G lambda, b = g_v.
    const double aa = objective;
    const double ab = m_lambda[vertex];
    const double bb = G(vertex, vertex);
    const double denom = aa - 2.0 * ab + bb;
    if (denom <= 0.0) break;
    const double step = std::clamp((aa - ab) / denom, 0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) lambda[i] *= 1.0 - step;
    lambda[vertex] += step;
    const double next = refresh();
    ++result.iterations;
    // Rounding can make a converged step tick upward by an ulp; keep the best.
    if (next > objective) {
      for (std::size_t i = 0; i < n; ++i) lambda[i] = result.iterates.back()[i];
      refresh();
      break;
    }
    objective = next;
    result.objective_trace.push_back(objective);
    result.iterates.push_back(lambda);
  }
  result.weights.lambdas = lambda;
  return result;
}

FrankWolfeResult frank_wolfe_simplex(std::span<const ParamVector> gradients,
                                     const FrankWolfeOptions& options) {
  if (gradients.empty()) throw ParameterError("frank_wolfe_simplex: empty gradient list");
  const std::size_t n = gradients.size();
  std::vector<double> scales(n, 1.0);
  if (options.normalize) {
    for (std::size_t i = 0; i < n; ++i) {
      const double norm = std::sqrt(squared_norm(gradients[i]));
      if (norm > 0.0) scales[i] = 1.0 / norm;
    }
  }
  std::vector<double> gram(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double v = dot(gradients[i], gradients[j]) * scales[i] * scales[j];
      gram[i * n + j] = v;
      gram[j * n + i] = v;
    }
  }
  return frank_wolfe_gram(gram, n, options);
}

}  // namespace fssda
