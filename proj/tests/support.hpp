#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "fssda/experiment.hpp"
#include "fssda/matrix.hpp"
#include "fssda/model.hpp"
#include "fssda/rng.hpp"

namespace fssda::test {

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = n(rng);
  return m;
}

inline ParamVector random_params(const ModelSpec& spec, Rng& rng, double scale = 0.5) {
  std::normal_distribution<double> n(0.0, scale);
  ParamVector p(spec);
  for (double& v : p.values()) v = n(rng);
  return p;
}

// Rows are a mix of one-hot, soft and all-zero (fake) targets.
inline Matrix random_targets(Rng& rng, std::size_t rows, std::size_t classes) {
  Matrix t(rows, classes);
  std::uniform_int_distribution<int> kind(0, 2);
  std::uniform_int_distribution<std::size_t> cls(0, classes - 1);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    switch (kind(rng)) {
      case 0:
        t(r, cls(rng)) = 1.0;
        break;
      case 1: {
        double sum = 0.0;
        for (std::size_t c = 0; c < classes; ++c) sum += t(r, c) = u(rng);
        for (std::size_t c = 0; c < classes; ++c) t(r, c) /= sum;
        break;
      }
      default:
        break;
    }
  }
  return t;
}

// A two-class linear spec with exactly `dim` parameters (dim even, >= 4), for
// tests that treat parameter vectors as plain vectors.
inline ModelSpec spec_with_size(std::size_t dim) { return ModelSpec{dim / 2 - 1, 0, 2}; }

inline ParamVector gaussian_vector(const ModelSpec& spec, Rng& rng) {
  return random_params(spec, rng, 1.0);
}

// A small benchmark that keeps federation tests fast.
inline BenchmarkSpec tiny_benchmark() {
  BenchmarkSpec b;
  b.num_classes = 3;
  b.feature_dim = 6;
  b.source_per_device = 40;
  b.target_per_device = 40;
  b.labeled_per_class = 2;
  b.test_fraction = 0.25;
  b.mixture = MixtureSpec{3.0, 1.0, true};
  return b;
}

inline PairSpec tiny_pair() { return PairSpec{"p", 0.3, 1.1, 0.2, 0.5}; }

inline FederationConfig tiny_config(const BenchmarkSpec& b, std::size_t devices,
                                    std::uint64_t seed = 7) {
  FederationConfig c;
  c.model = ModelSpec{b.feature_dim, 0, b.num_classes};
  c.num_devices = devices;
  c.rounds = 6;
  c.learning_rate = 0.3;
  c.seed = seed;
  return c;
}

}  // namespace fssda::test
