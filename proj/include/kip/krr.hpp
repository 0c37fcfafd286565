#pragma once

#include <vector>

#include "kip/common.hpp"
#include "kip/kernels.hpp"

namespace kip {

enum class RegMode { ScaleInvariant, Absolute };

// Effective regularizer: lambda * tr(K_ss) / n in scale-invariant mode,
// lambda unchanged in absolute mode.
double effective_lambda(double lambda, const Mat& K_ss, RegMode mode);

// Fitted kernel ridge regression: prediction K(X, X_s) * alpha.
struct RidgeModel {
  Mat X_s;
  KernelSpec kernel;
  double lambda = 1e-6;
  RegMode reg_mode = RegMode::ScaleInvariant;
  double lambda_eff = 0.0;
  Mat alpha;  // n_s x C

  Mat predict(const Mat& X) const;
};

// Solves (K_ss + lambda_eff I) alpha = y_s via LDLT with iterative refinement;
// throws NumericError when the system stays indefinite after jitter or the
// residual exceeds 1e-8 * |y_s|.
RidgeModel fit(const Mat& X_s, const Mat& y_s, const KernelSpec& kernel,
               double lambda, RegMode mode = RegMode::ScaleInvariant);

// Gram-level entry points (used by tests and the theory module).
Mat solve_regularized(const Mat& K_ss, const Mat& y_s, double lambda_eff);

// KIP objective: 0.5 |y_t - K_ts (K_ss + lambda_eff I)^-1 y_s|_F^2.
double kip_loss(const Mat& X_s, const Mat& y_s, const Mat& X_t, const Mat& y_t,
                const KernelSpec& kernel, double lambda,
                RegMode mode = RegMode::ScaleInvariant);

// Fraction of rows whose argmax matches the label; ties break toward the
// lowest class index.
double accuracy(const Mat& predictions, const std::vector<int>& labels);

}  // namespace kip
