#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "kip/autodiff.hpp"
#include "kip/common.hpp"
#include "kip/dataset.hpp"
#include "kip/kernels.hpp"
#include "kip/krr.hpp"

namespace kip {

// Trainable distilled dataset. Mask-frozen coordinates of X_s keep their
// initialization values bit-for-bit across all optimization steps; y_s moves
// only when learn_labels is set.
struct SupportSet {
  Mat X_s;
  Mat y_s;
  std::vector<int> labels;  // class indices at initialization
  std::optional<CorruptionMask> mask;
  bool learn_labels = false;
};

enum class SupportInit { Image, Noise };

struct KipConfig {
  std::vector<KernelSpec> kernels;  // sampled uniformly per step
  double lambda = 1e-6;
  RegMode reg_mode = RegMode::ScaleInvariant;
  double lr = 0.01;
  Index support_size = 10;
  Index target_batch = 0;   // required
  Index support_batch = 0;  // 0 = sample the entire support
  Index iterations = 100;
  SupportInit init = SupportInit::Image;
  double rho = 0.0;
  CorruptionScheme corruption_scheme = CorruptionScheme::UniformNoise;
  bool learn_labels = false;
  std::optional<AugmentOptions> augment;
  std::uint64_t seed = 0;
  int checkpoint_count = 5;

  void validate(const Dataset& target) const;
};

struct AdamState {
  Mat m_x, v_x;  // moments for X_s, full support shape
  Mat m_y, v_y;  // moments for y_s (allocated when labels are learned)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;

  static AdamState make(const SupportSet& s);
};

// Class-balanced target batches without replacement: per-class shuffled
// queues, reshuffled when a class is exhausted (epoch-style traversal).
class TargetSampler {
 public:
  explicit TargetSampler(const Dataset& target);
  std::vector<Index> sample(Index batch, Rng& rng);

 private:
  std::vector<std::vector<Index>> by_class_;
  std::vector<std::vector<Index>> queue_;
};

// Builds the initial support set: a class-balanced subset of the target
// (image init) or uniform noise in [-1,1] with class-balanced centered
// one-hot labels (noise init); then corruption freezes ceil(rho d)
// coordinates per row.
SupportSet init_support(const Dataset& target, Index n_s, SupportInit init,
                        double rho, CorruptionScheme scheme, Rng& rng,
                        bool learn_labels = false);

struct StepResult {
  double loss = 0.0;
  int kernel_index = 0;
  bool ok = true;  // false when a numeric error rolled the step back
};

// One Algorithm-1 step: sample kernel / support batch / target batch,
// differentiate the KRR loss, apply Adam to the trainable coordinates.
StepResult kip_step(SupportSet& state, AdamState& adam, const Dataset& target,
                    TargetSampler& sampler, const KipConfig& config, Rng& rng);

struct Checkpoint {
  long step = 0;
  double loss = 0.0;
  SupportSet state;
};

struct KipRunResult {
  SupportSet best;
  double best_loss = 0.0;
  long best_step = 0;
  std::vector<std::pair<long, double>> history;  // (step, loss)
  std::vector<Checkpoint> checkpoints;           // lowest running train losses
};

using KipObserver =
    std::function<void(long step, double loss, const SupportSet& state)>;

// Runs `iterations` steps from a fresh initialization, retaining the
// checkpoint_count states with lowest train loss; best is the lowest of those.
KipRunResult run_kip(const Dataset& target, const KipConfig& config,
                     const KipObserver& observer = nullptr);

}  // namespace kip
