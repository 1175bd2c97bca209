#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fssda/matrix.hpp"
#include "fssda/rng.hpp"

namespace fssda {

// Classifier architecture. hidden_dim == 0 is multinomial logistic regression,
// otherwise one tanh hidden layer feeds the softmax output layer.
struct ModelSpec {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 2;

  // Parameter layout: [W1 row-major | b1 | W2 row-major | b2]. For the linear
  // model only [W | b] is present, with W of shape num_classes x input_dim.
  std::size_t param_count() const noexcept;
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Flat parameter vector tied to the spec that defines its layout.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(const ModelSpec& spec);  // zeros
  ParamVector(const ModelSpec& spec, std::vector<double> values);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool all_finite() const noexcept;

  // Bit-identical comparison (value equality on every coordinate).
  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  ModelSpec spec_;
  std::vector<double> values_;
};

// Features with a target distribution per row: one-hot, soft, or all-zero
// (fake label for an unlabeled sample).
struct Batch {
  Matrix features;
  Matrix targets;
};

inline constexpr double kLogEpsilon = 1e-12;

// Uniform(-0.1, 0.1) initialization.
ParamVector init_params(const ModelSpec& spec, Rng& rng);

Matrix forward_logits(const ParamVector& params, const Matrix& features);

// Row-wise softmax of logits / temperature, max-subtracted.
Matrix softmax_t(const Matrix& logits, double temperature);

// Mean over rows of -sum_c targets[c] * log(max(probs[c], kLogEpsilon)).
// Zero target entries contribute nothing, so fake-label rows add exactly 0.
double cross_entropy(const Matrix& targets, const Matrix& probs);

// Analytic gradient of cross_entropy(targets, softmax_t(forward_logits(p, x), T)).
ParamVector grad(const ParamVector& params, const Batch& batch, double temperature);

// Back-propagates d(loss)/d(logits) through the network. `dlogits` already
// carries any 1/N and 1/T factors.
ParamVector backprop_logits(const ParamVector& params, const Matrix& features,
                            const Matrix& dlogits);

ParamVector sgd_step(const ParamVector& params, const ParamVector& gradient,
                     double learning_rate);

// Unweighted elementwise mean, accumulated in list order.
ParamVector average_params(std::span<const ParamVector> locals);

// Weighted mean; weights need not be normalized but must be non-negative with
// a positive sum.
ParamVector weighted_average_params(std::span<const ParamVector> locals,
                                    std::span<const double> weights);

// Fraction of rows whose argmax logit equals the label.
double accuracy(const ParamVector& params, const Matrix& features, std::span<const int> labels);

// Squared L2 norm and dot product over parameter coordinates.
double dot(const ParamVector& a, const ParamVector& b);
double squared_norm(const ParamVector& a);

// sum_i weights[i] * vectors[i], accumulated left to right.
ParamVector linear_combination(std::span<const ParamVector> vectors,
                               std::span<const double> weights);

}  // namespace fssda
