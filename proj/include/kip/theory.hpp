#pragma once

#include <map>
#include <string>

#include "kip/common.hpp"
#include "kip/dataset.hpp"
#include "kip/kernels.hpp"

namespace kip::theory {

// Linear ridge coefficients w = X^T (X X^T + lambda I)^-1 y; the inverse is a
// pseudo-inverse at lambda = 0.
struct LinearRidgeCoeffs {
  Mat w;  // d x C
};
LinearRidgeCoeffs ridge_coeffs(const Mat& X, const Mat& y, double lambda);

// The ridge operator Phi_lambda(X) = X^T (X X^T + lambda I)^-1 itself.
Mat ridge_operator(const Mat& X, double lambda);

enum class CheckStatus { Pass, Fail, Gated };

struct CheckReport {
  std::string name;
  CheckStatus status = CheckStatus::Gated;
  std::map<std::string, double> quantities;
  std::string note;

  std::string to_string() const;
  std::string to_csv_row() const;  // name,status,key=value;...
};

// Linear-kernel convergence: full-gradient KIP on the linear kernel from a
// generic Gaussian init; after convergence the ridge coefficients of the
// learned support must match the target's least-squares classifier.
// PASS iff |w_tilde - w_0|_2 <= 1e-3 |w_0|_2 (spectral norms). Gated when
// n_s < C with rank-deficient y_s (theorem precondition unmet).
CheckReport check_linear_kip_convergence(const Dataset& target, Index n_s,
                                         double lambda, Rng& rng);

// Label-solve theorem at lambda = 0: when rank(X_s) = rank(X_t) = d, the
// solved labels равны X_s w_0 (the 0-RR predictions on the support points).
CheckReport check_ls_theorem(const Mat& X_s, const Dataset& target,
                             double tol = 1e-6);

// Optimal-output bound: converged KIP loss (labels polished by an exact
// label solve at the converged X_s) must equal 0.5 |Pi_perp y_t|^2 where the
// projection is onto the column space of the converged K_ts.
CheckReport check_optimal_loss_bound(const Dataset& target, Index n_s,
                                     const KernelSpec& kernel, Rng& rng);

// 0.5 |Pi_perp_S y_t|^2 with S = col(K_ts); shared with tests.
double projection_bound(const Mat& K_ts, const Mat& y_t, double rcond = 1e-10);

}  // namespace kip::theory
