#pragma once

#include <cstdlib>
#include <string>

#include "kip/common.hpp"
#include "kip/dataset.hpp"

namespace kip::test {

inline std::string mnist_dir() {
  if (const char* env = std::getenv("KIPD_MNIST_DIR")) return env;
  return "data/mnist";
}

inline Mat random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

// Small labeled dataset with Gaussian class clusters.
inline Dataset synthetic_blobs(Index n, Index d, int classes, Rng& rng,
                               double spread = 0.5) {
  Dataset ds;
  ds.num_classes = classes;
  ds.X.resize(n, d);
  ds.labels.resize(static_cast<std::size_t>(n));
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat centers = random_matrix(classes, d, rng, 1.5);
  for (Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i) % classes;
    ds.labels[static_cast<std::size_t>(i)] = c;
    for (Index j = 0; j < d; ++j)
      ds.X(i, j) = centers(c, j) + spread * normal(rng);
  }
  ds.y = one_hot_centered(ds.labels, classes);
  return ds;
}

}  // namespace kip::test
