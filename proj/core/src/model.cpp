#include "fssda/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fssda/errors.hpp"

namespace fssda {
namespace {

// Offsets of the four parameter blocks. For the linear model only the "output"
// block (W2, b2) is populated and reads directly from the input.
struct Layout {
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
  std::size_t out_in = 0;  // fan-in of the output layer

  explicit Layout(const ModelSpec& s) {
    if (s.hidden_dim == 0) {
      w2 = 0;
      b2 = s.num_classes * s.input_dim;
      out_in = s.input_dim;
    } else {
      w1 = 0;
      b1 = s.hidden_dim * s.input_dim;
      w2 = b1 + s.hidden_dim;
      b2 = w2 + s.num_classes * s.hidden_dim;
      out_in = s.hidden_dim;
    }
  }
};

void require_same_spec(const ParamVector& a, const ParamVector& b, const char* what) {
  if (!(a.spec() == b.spec()) || a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": parameter specs differ");
  }
}

void check_features(const ModelSpec& spec, const Matrix& features) {
  if (features.cols() != spec.input_dim) {
    throw ShapeError("feature width " + std::to_string(features.cols()) +
                     " does not match model input_dim " + std::to_string(spec.input_dim));
  }
}

// out = in * W^T + b, W is (out_dim x in_dim) row-major at `w`.
Matrix affine(const Matrix& in, const double* w, const double* b, std::size_t out_dim) {
  const std::size_t in_dim = in.cols();
  Matrix out(in.rows(), out_dim);
  for (std::size_t n = 0; n < in.rows(); ++n) {
    const auto x = in.row(n);
    auto y = out.row(n);
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = w + o * in_dim;
      double acc = b[o];
      for (std::size_t i = 0; i < in_dim; ++i) acc += wr[i] * x[i];
      y[o] = acc;
    }
  }
  return out;
}

// Accumulates dW = delta^T * in and db = column sums of delta.
void accumulate_affine_grad(const Matrix& delta, const Matrix& in, double* dw, double* db) {
  const std::size_t out_dim = delta.cols();
  const std::size_t in_dim = in.cols();
  for (std::size_t n = 0; n < delta.rows(); ++n) {
    const auto d = delta.row(n);
    const auto x = in.row(n);
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double g = d[o];
      if (g == 0.0) continue;
      double* wr = dw + o * in_dim;
      for (std::size_t i = 0; i < in_dim; ++i) wr[i] += g * x[i];
      db[o] += g;
    }
  }
}

Matrix hidden_activations(const ParamVector& params, const Matrix& features) {
  const auto& s = params.spec();
  const Layout L(s);
  const double* p = params.values().data();
  Matrix h = affine(features, p + L.w1, p + L.b1, s.hidden_dim);
  for (double& v : h.values()) v = std::tanh(v);
  return h;
}

}  // namespace

std::size_t ModelSpec::param_count() const noexcept {
  if (hidden_dim == 0) return num_classes * input_dim + num_classes;
  return hidden_dim * input_dim + hidden_dim + num_classes * hidden_dim + num_classes;
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw ParameterError("input_dim must be positive");
  if (num_classes < 2) throw ParameterError("num_classes must be at least 2");
}

ParamVector::ParamVector(const ModelSpec& spec) : spec_(spec), values_(spec.param_count(), 0.0) {
  spec.validate();
}

ParamVector::ParamVector(const ModelSpec& spec, std::vector<double> values)
    : spec_(spec), values_(std::move(values)) {
  spec.validate();
  if (values_.size() != spec.param_count()) {
    throw ShapeError("parameter vector has " + std::to_string(values_.size()) +
                     " entries, spec requires " + std::to_string(spec.param_count()));
  }
}

bool ParamVector::all_finite() const noexcept {
  return std::ranges::all_of(values_, [](double v) { return std::isfinite(v); });
}

ParamVector init_params(const ModelSpec& spec, Rng& rng) {
  ParamVector p(spec);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (double& v : p.values()) v = u(rng);
  return p;
}

Matrix forward_logits(const ParamVector& params, const Matrix& features) {
  const auto& s = params.spec();
  check_features(s, features);
  const Layout L(s);
  const double* p = params.values().data();
  if (s.hidden_dim == 0) return affine(features, p + L.w2, p + L.b2, s.num_classes);
  const Matrix h = hidden_activations(params, features);
  return affine(h, p + L.w2, p + L.b2, s.num_classes);
}

Matrix softmax_t(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t n = 0; n < logits.rows(); ++n) {
    const auto z = logits.row(n);
    auto p = out.row(n);
    const double zmax = *std::ranges::max_element(z);
    double sum = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      p[c] = std::exp((z[c] - zmax) / temperature);
      sum += p[c];
    }
    for (double& v : p) v /= sum;
  }
  return out;
}

double cross_entropy(const Matrix& targets, const Matrix& probs) {
  if (targets.rows() != probs.rows() || targets.cols() != probs.cols()) {
    throw ShapeError("cross_entropy: targets and probs shapes differ");
  }
  if (targets.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t n = 0; n < targets.rows(); ++n) {
    const auto t = targets.row(n);
    const auto p = probs.row(n);
    for (std::size_t c = 0; c < t.size(); ++c) {
      if (t[c] == 0.0) continue;
      total -= t[c] * std::log(std::max(p[c], kLogEpsilon));
    }
  }
  return total / static_cast<double>(targets.rows());
}

ParamVector backprop_logits(const ParamVector& params, const Matrix& features,
                            const Matrix& dlogits) {
  const auto& s = params.spec();
  check_features(s, features);
  if (dlogits.rows() != features.rows() || dlogits.cols() != s.num_classes) {
    throw ShapeError("backprop_logits: dlogits shape mismatch");
  }
  const Layout L(s);
  ParamVector g(s);
  double* gp = g.values().data();
  if (s.hidden_dim == 0) {
    accumulate_affine_grad(dlogits, features, gp + L.w2, gp + L.b2);
    return g;
  }
  const Matrix h = hidden_activations(params, features);
  accumulate_affine_grad(dlogits, h, gp + L.w2, gp + L.b2);

  // dh = dlogits * W2, then through tanh'.
  const double* w2 = params.values().data() + L.w2;
  Matrix dpre(h.rows(), s.hidden_dim);
  for (std::size_t n = 0; n < h.rows(); ++n) {
    const auto d = dlogits.row(n);
    auto out = dpre.row(n);
    for (std::size_t c = 0; c < s.num_classes; ++c) {
      const double dc = d[c];
      if (dc == 0.0) continue;
      const double* wr = w2 + c * s.hidden_dim;
      for (std::size_t j = 0; j < s.hidden_dim; ++j) out[j] += dc * wr[j];
    }
    const auto hr = h.row(n);
    for (std::size_t j = 0; j < s.hidden_dim; ++j) out[j] *= 1.0 - hr[j] * hr[j];
  }
  accumulate_affine_grad(dpre, features, gp + L.w1, gp + L.b1);
  return g;
}

ParamVector grad(const ParamVector& params, const Batch& batch, double temperature) {
  const auto& s = params.spec();
  if (batch.features.rows() == 0) throw ParameterError("grad: empty batch");
  if (batch.targets.rows() != batch.features.rows() || batch.targets.cols() != s.num_classes) {
    throw ShapeError("grad: targets shape mismatch");
  }
  const Matrix probs = softmax_t(forward_logits(params, batch.features), temperature);
  // d/dz of -sum_c t_c log softmax(z/T)_c  =  (sum(t) * p - t) / T
  const double scale = 1.0 / (temperature * static_cast<double>(batch.features.rows()));
  Matrix dlogits(probs.rows(), probs.cols());
  for (std::size_t n = 0; n < probs.rows(); ++n) {
    const auto t = batch.targets.row(n);
    const auto p = probs.row(n);
    double mass = 0.0;
    for (double v : t) mass += v;
    if (mass == 0.0) continue;
    auto d = dlogits.row(n);
    for (std::size_t c = 0; c < p.size(); ++c) d[c] = (mass * p[c] - t[c]) * scale;
  }
  return backprop_logits(params, batch.features, dlogits);
}

ParamVector sgd_step(const ParamVector& params, const ParamVector& gradient,
                     double learning_rate) {
  require_same_spec(params, gradient, "sgd_step");
  if (!(learning_rate >= 0.0)) throw ParameterError("learning rate must be non-negative");
  ParamVector out = params;
  auto v = out.values();
  const auto g = gradient.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= learning_rate * g[i];
  return out;
}

// Both averages accumulate offsets from the first local so that averaging
// identical parameters returns them bit for bit.
ParamVector average_params(std::span<const ParamVector> locals) {
  if (locals.empty()) throw ParameterError("average_params: empty list");
  ParamVector out = locals.front();
  const auto anchor = locals.front().values();
  std::vector<double> offset(anchor.size(), 0.0);
  for (std::size_t k = 1; k < locals.size(); ++k) {
    require_same_spec(locals.front(), locals[k], "average_params");
    const auto v = locals[k].values();
    for (std::size_t i = 0; i < offset.size(); ++i) offset[i] += v[i] - anchor[i];
  }
  const double n = static_cast<double>(locals.size());
  auto acc = out.values();
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += offset[i] / n;
  return out;
}

ParamVector weighted_average_params(std::span<const ParamVector> locals,
                                    std::span<const double> weights) {
  if (locals.empty()) throw ParameterError("weighted_average_params: empty list");
  if (weights.size() != locals.size()) throw ShapeError("weighted_average_params: weight count");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ParameterError("aggregation weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw ParameterError("aggregation weights sum to zero");
  ParamVector out = locals.front();
  const auto anchor = locals.front().values();
  std::vector<double> offset(anchor.size(), 0.0);
  for (std::size_t k = 1; k < locals.size(); ++k) {
    require_same_spec(locals.front(), locals[k], "weighted_average_params");
    const double w = weights[k] / total;
    const auto v = locals[k].values();
    for (std::size_t i = 0; i < offset.size(); ++i) offset[i] += w * (v[i] - anchor[i]);
  }
  auto acc = out.values();
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += offset[i];
  return out;
}

double accuracy(const ParamVector& params, const Matrix& features, std::span<const int> labels) {
  if (labels.size() != features.rows()) throw ShapeError("accuracy: label count mismatch");
  if (labels.empty()) return 0.0;
  const Matrix logits = forward_logits(params, features);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < logits.rows(); ++n) {
    const auto z = logits.row(n);
    const auto best = std::ranges::max_element(z) - z.begin();
    if (best == labels[n]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double dot(const ParamVector& a, const ParamVector& b) {
  require_same_spec(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double squared_norm(const ParamVector& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v * v;
  return acc;
}

ParamVector linear_combination(std::span<const ParamVector> vectors,
                               std::span<const double> weights) {
  if (vectors.empty()) throw ParameterError("linear_combination: empty list");
  if (weights.size() != vectors.size()) throw ShapeError("linear_combination: weight count");
  ParamVector out(vectors.front().spec());
  auto acc = out.values();
  {
    const auto v = vectors.front().values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = weights[0] * v[i];
  }
  for (std::size_t k = 1; k < vectors.size(); ++k) {
    require_same_spec(vectors.front(), vectors[k], "linear_combination");
    const auto v = vectors[k].values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weights[k] * v[i];
  }
  return out;
}

}  // namespace fssda
