#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kip/common.hpp"

namespace kip {

// Labeled dataset: features X (n x d), mean-centered one-hot labels y (n x C),
// integer class indices, and the class count.
struct Dataset {
  Mat X;
  Mat y;
  std::vector<int> labels;
  int num_classes = 0;

  Index size() const { return X.rows(); }
  Index dim() const { return X.cols(); }
};

// Frozen-coordinate mask for KIP_rho. Frozen entries carry fixed values drawn
// at construction time, independent of any target data.
enum class CorruptionScheme { UniformNoise, Zero };

struct CorruptionMask {
  BoolMat frozen;   // n x d, true = never updated
  Mat values;       // n x d, meaningful at frozen coordinates
  double rho = 0.0;
  CorruptionScheme scheme = CorruptionScheme::UniformNoise;

  Index frozen_per_row() const;
};

// Raw IDX container contents: decoded dimensions plus the uint8 payload.
struct IdxData {
  std::vector<Index> shape;
  std::vector<std::uint8_t> data;
};

// Reads an IDX file (images magic 0x00000803, labels 0x00000801), gzipped or
// plain. Throws FormatError on bad magic, truncation, or dimension overflow.
IdxData load_idx(const std::string& path);

// Loads the four canonical MNIST IDX files from a directory (grabs the .gz
// variants when the plain files are absent). Features in [0,1], labels as
// centered one-hots. No preprocessing beyond the 1/255 scale.
struct TrainTestSplit {
  Dataset train;
  Dataset test;
};
TrainTestSplit load_mnist(const std::string& dir);

// CSV with a header row, one sample per line, integer label in the last column.
Dataset load_csv(const std::string& path, int num_classes = 0);

// Affine per-channel map fitted on the training set.
struct Standardizer {
  Vec mean;  // one entry per channel
  Vec std;   // entries < 1e-12 become 1 (shift-only channels)

  Mat apply(const Mat& X, int channels) const;
};

// Channel-wise standardization: statistics from X_train only, the same map
// applied to every matrix in others. Channels with vanishing std are shifted
// but not divided. Columns are grouped round-robin style: channel of column j
// is j % channels (row-major HxWxC layouts keep channels interleaved; for
// channels == 1 the grouping is immaterial).
Standardizer standardize(Mat& X_train, std::vector<Mat*> others, int channels = 1);

// ZCA whitening with covariance regularization eps * tr(Sigma)/d * I fitted on
// X_train; the identical map is applied to others.
void zca_whiten(Mat& X_train, std::vector<Mat*> others, double eps = 1e-5);

// Row i = e_{labels[i]} - (1/C) * 1. Rows sum to zero.
Mat one_hot_centered(const std::vector<int>& labels, int num_classes);

// Class-balanced subset of m points sampled without replacement; per-class
// counts differ by at most one. Deterministic given the generator state.
Dataset class_balanced_sample(const Dataset& d, Index m, Rng& rng);
std::vector<Index> class_balanced_indices(const std::vector<int>& labels,
                                          int num_classes, Index m, Rng& rng);

// Freezes ceil(rho * d) coordinates per row; frozen values are uniform in
// [-1, 1] or exactly zero depending on the scheme.
CorruptionMask make_corruption(Index n, Index d, double rho,
                               CorruptionScheme scheme, Rng& rng);

// Image augmentation over flattened HxWxC rows.
struct AugmentOptions {
  bool flip = false;      // horizontal, p = 0.5
  int shift_px = 0;       // integer shift in [-shift_px, shift_px], zero pad
  double rot_deg = 0.0;   // rotation in [-rot_deg, rot_deg], nearest neighbor
  int height = 0;
  int width = 0;
  int channels = 1;

  bool enabled() const { return flip || shift_px > 0 || rot_deg > 0.0; }
};

Dataset augment(const Dataset& batch, Rng& rng, const AugmentOptions& opts);

// True if two rows of X coincide exactly (hash-based; used by tests guarding
// the distinct-datapoints invariant).
bool has_duplicate_rows(const Mat& X);

}  // namespace kip
