#include "kip/kip.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace kip {

void KipConfig::validate(const Dataset& target) const {
  require(!kernels.empty(), "kip: need at least one kernel");
  for (const KernelSpec& k : kernels) k.validate();
  require(lambda >= 0, "kip: lambda must be nonnegative");
  require(lr >= 0, "kip: learning rate must be nonnegative");
  require(support_size >= 1, "kip: support size must be positive");
  require(target_batch >= 1 && target_batch <= target.size(),
          "kip: target batch must lie in [1, n_t]");
  require(support_batch >= 0 && support_batch <= support_size,
          "kip: support batch must lie in [0, n_s]");
  require(iterations >= 0, "kip: iterations must be nonnegative");
  require(rho >= 0.0 && rho < 1.0, "kip: rho must lie in [0, 1)");
  require(checkpoint_count >= 1, "kip: checkpoint count must be positive");
}

AdamState AdamState::make(const SupportSet& s) {
  AdamState a;
  a.m_x = Mat::Zero(s.X_s.rows(), s.X_s.cols());
  a.v_x = Mat::Zero(s.X_s.rows(), s.X_s.cols());
  if (s.learn_labels) {
    a.m_y = Mat::Zero(s.y_s.rows(), s.y_s.cols());
    a.v_y = Mat::Zero(s.y_s.rows(), s.y_s.cols());
  }
  return a;
}

TargetSampler::TargetSampler(const Dataset& target) {
  require(target.num_classes >= 1, "target sampler: dataset has no classes");
  by_class_.resize(static_cast<std::size_t>(target.num_classes));
  for (Index i = 0; i < target.size(); ++i)
    by_class_[static_cast<std::size_t>(target.labels[static_cast<std::size_t>(i)])]
        .push_back(i);
  for (const auto& pool : by_class_)
    require(!pool.empty(), "target sampler: a class has no points");
  queue_.resize(by_class_.size());
}

std::vector<Index> TargetSampler::sample(Index batch, Rng& rng) {
  const int C = static_cast<int>(by_class_.size());
  const Index base = batch / C;
  Index extra = batch % C;
  std::vector<int> order(static_cast<std::size_t>(C));
  std::iota(order.begin(), order.end(), 0);
  if (extra > 0) std::shuffle(order.begin(), order.end(), rng);

  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int rank = 0; rank < C; ++rank) {
    const int c = order[static_cast<std::size_t>(rank)];
    Index want = base + (rank < extra ? 1 : 0);
    auto& q = queue_[static_cast<std::size_t>(c)];
    while (want > 0) {
      if (q.empty()) {
        q = by_class_[static_cast<std::size_t>(c)];
        std::shuffle(q.begin(), q.end(), rng);
      }
      const Index take = std::min<Index>(want, static_cast<Index>(q.size()));
      out.insert(out.end(), q.end() - take, q.end());
      q.erase(q.end() - take, q.end());
      want -= take;
    }
  }
  return out;
}

SupportSet init_support(const Dataset& target, Index n_s, SupportInit init,
                        double rho, CorruptionScheme scheme, Rng& rng,
                        bool learn_labels) {
  require(n_s >= 1, "init_support: support size must be positive");
  SupportSet s;
  s.learn_labels = learn_labels;

  if (init == SupportInit::Image) {
    Dataset subset = class_balanced_sample(target, n_s, rng);
    s.X_s = std::move(subset.X);
    s.y_s = std::move(subset.y);
    s.labels = std::move(subset.labels);
  } else {
    const int C = target.num_classes;
    s.X_s.resize(n_s, target.dim());
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (Index i = 0; i < s.X_s.size(); ++i) s.X_s.data()[i] = uni(rng);
    s.labels.resize(static_cast<std::size_t>(n_s));
    for (Index i = 0; i < n_s; ++i)
      s.labels[static_cast<std::size_t>(i)] = static_cast<int>(i) % C;
    std::sort(s.labels.begin(), s.labels.end());
    s.y_s = one_hot_centered(s.labels, C);
  }

  if (rho > 0.0) {
    CorruptionMask mask = make_corruption(n_s, target.dim(), rho, scheme, rng);
    s.X_s = mask.frozen.select(mask.values, s.X_s);
    s.mask = std::move(mask);
  }
  return s;
}

namespace {

// Adam update restricted to the given rows; moments live at full shape.
void adam_update_rows(Mat& param, Mat& m, Mat& v, const Mat& grad,
                      const std::vector<Index>& rows, const AdamState& a,
                      double lr, long t) {
  const double bc1 = 1.0 - std::pow(a.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(a.beta2, static_cast<double>(t));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Index i = rows[r];
    for (Index j = 0; j < param.cols(); ++j) {
      const double g = grad(static_cast<Index>(r), j);
      m(i, j) = a.beta1 * m(i, j) + (1.0 - a.beta1) * g;
      v(i, j) = a.beta2 * v(i, j) + (1.0 - a.beta2) * g * g;
      const double mhat = m(i, j) / bc1;
      const double vhat = v(i, j) / bc2;
      param(i, j) -= lr * mhat / (std::sqrt(vhat) + a.eps);
    }
  }
}

Mat gather_rows(const Mat& src, const std::vector<Index>& rows) {
  Mat out(static_cast<Index>(rows.size()), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    out.row(static_cast<Index>(r)) = src.row(rows[r]);
  return out;
}

}  // namespace

StepResult kip_step(SupportSet& state, AdamState& adam, const Dataset& target,
                    TargetSampler& sampler, const KipConfig& config, Rng& rng) {
  StepResult result;

  // Draw order is fixed: kernel, support batch, target batch, augmentations.
  std::uniform_int_distribution<std::size_t> pick(0, config.kernels.size() - 1);
  result.kernel_index = static_cast<int>(pick(rng));
  const KernelSpec& kernel = config.kernels[static_cast<std::size_t>(result.kernel_index)];

  const Index n_s = state.X_s.rows();
  std::vector<Index> srows(static_cast<std::size_t>(n_s));
  std::iota(srows.begin(), srows.end(), Index{0});
  if (config.support_batch > 0 && config.support_batch < n_s) {
    std::shuffle(srows.begin(), srows.end(), rng);
    srows.resize(static_cast<std::size_t>(config.support_batch));
    std::sort(srows.begin(), srows.end());
  }

  const std::vector<Index> trows = sampler.sample(config.target_batch, rng);
  Dataset batch;
  batch.X = gather_rows(target.X, trows);
  batch.y = gather_rows(target.y, trows);
  batch.labels.reserve(trows.size());
  for (Index i : trows) batch.labels.push_back(target.labels[static_cast<std::size_t>(i)]);
  batch.num_classes = target.num_classes;
  if (config.augment && config.augment->enabled())
    batch = augment(batch, rng, *config.augment);

  const bool full_support = srows.size() == static_cast<std::size_t>(n_s);
  const Mat Xb = full_support ? state.X_s : gather_rows(state.X_s, srows);
  const Mat yb = full_support ? state.y_s : gather_rows(state.y_s, srows);

  // Frozen-coordinate mask restricted to the sampled rows.
  const CorruptionMask* mask = nullptr;
  CorruptionMask row_mask;
  if (state.mask) {
    if (full_support) {
      mask = &*state.mask;
    } else {
      row_mask.rho = state.mask->rho;
      row_mask.scheme = state.mask->scheme;
      row_mask.frozen.resize(static_cast<Index>(srows.size()), state.X_s.cols());
      row_mask.values.resize(static_cast<Index>(srows.size()), state.X_s.cols());
      for (std::size_t r = 0; r < srows.size(); ++r) {
        row_mask.frozen.row(static_cast<Index>(r)) = state.mask->frozen.row(srows[r]);
        row_mask.values.row(static_cast<Index>(r)) = state.mask->values.row(srows[r]);
      }
      mask = &row_mask;
    }
  }

  ad::KipGradients grads;
  try {
    grads = ad::grad_kip_loss(Xb, yb, batch.X, batch.y, kernel, config.lambda,
                              config.reg_mode,
                              state.learn_labels ? ad::GradWrt::Both : ad::GradWrt::Xs,
                              mask);
  } catch (const NumericError&) {
    result.ok = false;
    result.loss = std::numeric_limits<double>::quiet_NaN();
    return result;
  }

  result.loss = grads.loss;
  if (config.lr == 0.0) return result;

  const long t = ++adam.step;
  adam_update_rows(state.X_s, adam.m_x, adam.v_x, grads.d_xs, srows, adam,
                   config.lr, t);
  if (state.learn_labels)
    adam_update_rows(state.y_s, adam.m_y, adam.v_y, grads.d_ys, srows, adam,
                     config.lr, t);
  return result;
}

KipRunResult run_kip(const Dataset& target, const KipConfig& config,
                     const KipObserver& observer) {
  config.validate(target);
  Rng rng(config.seed);
  SupportSet state = init_support(target, config.support_size, config.init,
                                  config.rho, config.corruption_scheme, rng,
                                  config.learn_labels);
  AdamState adam = AdamState::make(state);
  TargetSampler sampler(target);

  KipRunResult out;
  out.history.reserve(static_cast<std::size_t>(config.iterations));

  auto worst_checkpoint = [&]() {
    std::size_t worst = 0;
    for (std::size_t i = 1; i < out.checkpoints.size(); ++i)
      if (out.checkpoints[i].loss > out.checkpoints[worst].loss) worst = i;
    return worst;
  };

  for (long step = 1; step <= config.iterations; ++step) {
    const StepResult r = kip_step(state, adam, target, sampler, config, rng);
    if (!r.ok) continue;  // step rolled back, state unchanged
    out.history.emplace_back(step, r.loss);
    if (out.checkpoints.size() < static_cast<std::size_t>(config.checkpoint_count)) {
      out.checkpoints.push_back({step, r.loss, state});
    } else if (const std::size_t w = worst_checkpoint();
               r.loss < out.checkpoints[w].loss) {
      out.checkpoints[w] = {step, r.loss, state};
    }
    if (observer) observer(step, r.loss, state);
  }

  if (out.checkpoints.empty()) {
    out.best = std::move(state);
    out.best_loss = std::numeric_limits<double>::quiet_NaN();
    out.best_step = 0;
    return out;
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.checkpoints.size(); ++i)
    if (out.checkpoints[i].loss < out.checkpoints[best].loss) best = i;
  out.best = out.checkpoints[best].state;
  out.best_loss = out.checkpoints[best].loss;
  out.best_step = out.checkpoints[best].step;
  return out;
}

}  // namespace kip
