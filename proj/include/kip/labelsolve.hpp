#pragma once

#include "kip/common.hpp"
#include "kip/kernels.hpp"
#include "kip/krr.hpp"

namespace kip {

// Closed-form Label Solve: y_s* = pinv(A) y_t with A = K_ts (K_ss + lam I)^-1,
// the minimum-Frobenius-norm minimizer of the KIP loss in y_s. The
// pseudo-inverse drops singular values below rcond * sigma_max. At
// lambda_eff = 0 the inner inverse is itself a pseudo-inverse.
Mat solve_labels(const Mat& X_s, const Mat& X_t, const Mat& y_t,
                 const KernelSpec& kernel, double lambda,
                 RegMode mode = RegMode::ScaleInvariant, double rcond = 1e-10);

// Rewrite valid when K_ts has full column rank:
// y_s* = (K_ss + lam I) pinv(K_ts) y_t. Throws ArgumentError when the rank
// precondition fails (sigma_min <= rcond * sigma_max).
Mat ls_injective_form(const Mat& X_s, const Mat& X_t, const Mat& y_t,
                      const KernelSpec& kernel, double lambda,
                      RegMode mode = RegMode::ScaleInvariant,
                      double rcond = 1e-10);

// Moore-Penrose pseudo-inverse via SVD with a relative singular-value cut.
Mat pinv(const Mat& A, double rcond = 1e-10);

// C x C covariance between natural target labels (as centered one-hots per
// class) and solved support labels, for label-structure inspection dumps.
Mat label_covariance(const Mat& y_nat, const Mat& y_solved);

}  // namespace kip
