#pragma once

#include <functional>
#include <vector>

#include "kip/common.hpp"
#include "kip/dataset.hpp"
#include "kip/kernels.hpp"
#include "kip/krr.hpp"

namespace kip::eval {

enum class LossKind { ZeroOne, Mse };

// Any map from a feature matrix to prediction rows.
using Predictor = std::function<Mat(const Mat&)>;

struct EpsReport {
  double weak_eps = 0.0;    // |E l(f(x),y) - E l(g(x),y)|
  double strong_eps = 0.0;  // E l(f(x), g(x))
  double loss_a = 0.0;
  double loss_b = 0.0;
  Index n_eval = 0;
  LossKind loss_kind = LossKind::ZeroOne;
};

// Empirical weak/strong epsilon-closeness over the test set. Zero-one uses
// argmax with ties toward the lowest class; mse uses l(z, z') = 0.5 |z-z'|^2.
EpsReport measure_eps(const Predictor& model_a, const Predictor& model_b,
                      const Dataset& testset, LossKind kind);

// |D| / |D_tilde|.
double compression_ratio(Index d_size, Index d_tilde_size);

struct BaselinePoint {
  Index size = 0;
  double mean_acc = 0.0;
  double std_acc = 0.0;
};

// KRR accuracy over class-balanced random subsets of each size; mean and
// sample standard deviation over `resamples` draws.
std::vector<BaselinePoint> baseline_curve(const Dataset& train,
                                          const Dataset& testset,
                                          const KernelSpec& kernel,
                                          const std::vector<Index>& sizes,
                                          int resamples, double lambda, Rng& rng);

// Finite-width ReLU MLP in NTK parameterization with sqrt(2)-scaled
// activations, matching the fc kernel convention.
struct FcNetwork {
  int depth = 1;
  Index width = 1024;
  double sigma_w2 = 2.0;
  double sigma_b2 = 1e-4;
  std::vector<Mat> weights;              // fan_in x fan_out
  std::vector<Eigen::RowVectorXd> biases;

  void init(Index input_dim, Index output_dim, Rng& rng);
  Mat predict(const Mat& X) const;
};

struct FcOptimizer {
  enum class Kind { Adam, Sgd } kind = Kind::Adam;
  double lr = 4e-4;
  double momentum = 0.9;  // sgd only
};

struct FcTrainResult {
  FcNetwork net;
  std::vector<double> loss_history;
  bool diverged = false;
};

// Trains with mse (centered one-hot targets) or cross-entropy (plain one-hot)
// loss; batch_size 0 means full batch. Deterministic given the generator.
FcTrainResult train_fc(const Dataset& trainset, const FcNetwork& config,
                       const FcOptimizer& opt, long iterations, Rng& rng,
                       LossKind loss = LossKind::Mse, Index batch_size = 0);

// Tape-built loss and parameter gradients for one batch; the train_fc update
// path uses exactly this (exposed for gradient checking).
struct FcGradients {
  double loss = 0.0;
  std::vector<Mat> d_weights;
  std::vector<Eigen::RowVectorXd> d_biases;
};
FcGradients fc_loss_gradients(const FcNetwork& net, const Mat& X,
                              const Mat& targets, LossKind loss);

}  // namespace kip::eval
