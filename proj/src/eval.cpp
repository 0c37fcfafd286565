#include "kip/eval.hpp"

#include <cmath>
#include <numeric>

#include "kip/autodiff.hpp"

namespace kip::eval {

namespace {

int argmax_row(const Mat& M, Index i) {
  int best = 0;
  for (Index j = 1; j < M.cols(); ++j)
    if (M(i, j) > M(i, best)) best = static_cast<int>(j);
  return best;
}

}  // namespace

EpsReport measure_eps(const Predictor& model_a, const Predictor& model_b,
                      const Dataset& testset, LossKind kind) {
  require(testset.size() > 0, "measure_eps: empty test set");
  const Mat pa = model_a(testset.X);
  const Mat pb = model_b(testset.X);
  require(pa.rows() == testset.size() && pb.rows() == testset.size(),
          "measure_eps: predictor output row mismatch");

  EpsReport rep;
  rep.n_eval = testset.size();
  rep.loss_kind = kind;
  const double n = static_cast<double>(testset.size());

  if (kind == LossKind::ZeroOne) {
    Index err_a = 0, err_b = 0, disagree = 0;
    for (Index i = 0; i < testset.size(); ++i) {
      const int ca = argmax_row(pa, i);
      const int cb = argmax_row(pb, i);
      const int truth = testset.labels[static_cast<std::size_t>(i)];
      if (ca != truth) ++err_a;
      if (cb != truth) ++err_b;
      if (ca != cb) ++disagree;
    }
    rep.loss_a = err_a / n;
    rep.loss_b = err_b / n;
    rep.strong_eps = disagree / n;
  } else {
    rep.loss_a = 0.5 * (pa - testset.y).squaredNorm() / n;
    rep.loss_b = 0.5 * (pb - testset.y).squaredNorm() / n;
    rep.strong_eps = 0.5 * (pa - pb).squaredNorm() / n;
  }
  rep.weak_eps = std::abs(rep.loss_a - rep.loss_b);
  return rep;
}

double compression_ratio(Index d_size, Index d_tilde_size) {
  require(d_size >= 1 && d_tilde_size >= 1, "compression_ratio: sizes must be >= 1");
  require(d_tilde_size <= d_size,
          "compression_ratio: distilled set larger than original");
  return static_cast<double>(d_size) / static_cast<double>(d_tilde_size);
}

std::vector<BaselinePoint> baseline_curve(const Dataset& train,
                                          const Dataset& testset,
                                          const KernelSpec& kernel,
                                          const std::vector<Index>& sizes,
                                          int resamples, double lambda, Rng& rng) {
  require(resamples >= 2, "baseline_curve: need at least 2 resamples");
  std::vector<BaselinePoint> out;
  out.reserve(sizes.size());
  for (const Index size : sizes) {
    std::vector<double> accs;
    accs.reserve(static_cast<std::size_t>(resamples));
    for (int r = 0; r < resamples; ++r) {
      const Dataset sub = class_balanced_sample(train, size, rng);
      const RidgeModel model = fit(sub.X, sub.y, kernel, lambda);
      accs.push_back(accuracy(model.predict(testset.X), testset.labels));
    }
    const double mean =
        std::accumulate(accs.begin(), accs.end(), 0.0) / accs.size();
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean);
    var /= static_cast<double>(accs.size() - 1);
    out.push_back({size, mean, std::sqrt(var)});
  }
  return out;
}

void FcNetwork::init(Index input_dim, Index output_dim, Rng& rng) {
  require(depth >= 1 && width >= 1, "fc network: bad depth/width");
  weights.clear();
  biases.clear();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Index> fan{input_dim};
  for (int l = 0; l < depth; ++l) fan.push_back(width);
  fan.push_back(output_dim);
  for (std::size_t l = 0; l + 1 < fan.size(); ++l) {
    Mat W(fan[l], fan[l + 1]);
    for (Index i = 0; i < W.size(); ++i) W.data()[i] = normal(rng);
    Eigen::RowVectorXd b(fan[l + 1]);
    for (Index i = 0; i < b.size(); ++i) b[i] = normal(rng);
    weights.push_back(std::move(W));
    biases.push_back(std::move(b));
  }
}

Mat FcNetwork::predict(const Mat& X) const {
  require(!weights.empty(), "fc network: not initialized");
  const double sw = std::sqrt(sigma_w2);
  const double sb = std::sqrt(sigma_b2);
  Mat h = X;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const double scale = sw / std::sqrt(static_cast<double>(weights[l].rows()));
    h = scale * (h * weights[l]);
    h.rowwise() += sb * biases[l];
    if (l + 1 < weights.size()) h = std::sqrt(2.0) * h.cwiseMax(0.0);
  }
  return h;
}

FcGradients fc_loss_gradients(const FcNetwork& net, const Mat& X,
                              const Mat& targets, LossKind loss) {
  const double sw = std::sqrt(net.sigma_w2);
  const double sb = std::sqrt(net.sigma_b2);

  ad::Tape tape;
  std::vector<int> w_ids, b_ids;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    w_ids.push_back(tape.leaf(net.weights[l]));
    b_ids.push_back(tape.leaf(net.biases[l]));
  }
  int h = tape.constant(X);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const double scale = sw / std::sqrt(static_cast<double>(net.weights[l].rows()));
    const int z = tape.scale(tape.matmul(h, w_ids[l]), scale);
    const int bias = tape.broadcast_row(tape.scale(b_ids[l], sb), X.rows());
    h = tape.add(z, bias);
    if (l + 1 < net.weights.size())
      h = tape.scale(tape.relu(h), std::sqrt(2.0));
  }

  int loss_id;
  if (loss == LossKind::Mse) {
    const int resid = tape.sub(h, tape.constant(targets));
    loss_id = tape.scale(tape.sq_frob(resid), 0.5 / static_cast<double>(X.rows()));
  } else {
    loss_id = tape.softmax_xent(h, targets);
  }
  tape.backward(loss_id);

  FcGradients out;
  out.loss = tape.value(loss_id)(0, 0);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    out.d_weights.push_back(tape.adjoint(w_ids[l]));
    out.d_biases.push_back(tape.adjoint(b_ids[l]).row(0));
  }
  return out;
}

FcTrainResult train_fc(const Dataset& trainset, const FcNetwork& config,
                       const FcOptimizer& opt, long iterations, Rng& rng,
                       LossKind loss, Index batch_size) {
  require(trainset.size() > 0, "train_fc: empty training set");
  FcTrainResult result;
  result.net = config;
  result.net.init(trainset.dim(), trainset.num_classes, rng);

  // mse trains against the centered one-hots; cross-entropy against one-hots.
  Mat targets;
  if (loss == LossKind::Mse) {
    targets = trainset.y;
  } else {
    targets = Mat::Zero(trainset.size(), trainset.num_classes);
    for (Index i = 0; i < trainset.size(); ++i)
      targets(i, trainset.labels[static_cast<std::size_t>(i)]) = 1.0;
  }

  std::vector<Mat> m_w, v_w;
  std::vector<Eigen::RowVectorXd> m_b, v_b;
  for (std::size_t l = 0; l < result.net.weights.size(); ++l) {
    m_w.push_back(Mat::Zero(result.net.weights[l].rows(), result.net.weights[l].cols()));
    v_w.push_back(m_w.back());
    m_b.push_back(Eigen::RowVectorXd::Zero(result.net.biases[l].size()));
    v_b.push_back(m_b.back());
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  std::vector<Index> order(static_cast<std::size_t>(trainset.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::size_t cursor = order.size();  // forces an initial shuffle

  for (long t = 1; t <= iterations; ++t) {
    Mat Xb, Tb;
    if (batch_size <= 0 || batch_size >= trainset.size()) {
      Xb = trainset.X;
      Tb = targets;
    } else {
      Xb.resize(batch_size, trainset.dim());
      Tb.resize(batch_size, targets.cols());
      for (Index i = 0; i < batch_size; ++i) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        const Index row = order[cursor++];
        Xb.row(i) = trainset.X.row(row);
        Tb.row(i) = targets.row(row);
      }
    }

    const FcGradients g = fc_loss_gradients(result.net, Xb, Tb, loss);
    result.loss_history.push_back(g.loss);
    if (!std::isfinite(g.loss)) {
      result.diverged = true;
      break;
    }

    if (opt.kind == FcOptimizer::Kind::Adam) {
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
      for (std::size_t l = 0; l < result.net.weights.size(); ++l) {
        m_w[l] = b1 * m_w[l] + (1.0 - b1) * g.d_weights[l];
        v_w[l] = b2 * v_w[l] + (1.0 - b2) * g.d_weights[l].cwiseProduct(g.d_weights[l]);
        result.net.weights[l].array() -=
            opt.lr * (m_w[l].array() / bc1) / ((v_w[l].array() / bc2).sqrt() + eps);
        m_b[l] = b1 * m_b[l] + (1.0 - b1) * g.d_biases[l];
        v_b[l] = b2 * v_b[l] + (1.0 - b2) * g.d_biases[l].cwiseProduct(g.d_biases[l]);
        result.net.biases[l].array() -=
            opt.lr * (m_b[l].array() / bc1) / ((v_b[l].array() / bc2).sqrt() + eps);
      }
    } else {
      for (std::size_t l = 0; l < result.net.weights.size(); ++l) {
        m_w[l] = opt.momentum * m_w[l] - opt.lr * g.d_weights[l];
        result.net.weights[l] += m_w[l];
        m_b[l] = opt.momentum * m_b[l] - opt.lr * g.d_biases[l];
        result.net.biases[l] += m_b[l];
      }
    }
  }
  return result;
}

}  // namespace kip::eval
