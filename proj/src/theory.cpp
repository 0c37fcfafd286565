#include "kip/theory.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "kip/autodiff.hpp"
#include "kip/krr.hpp"
#include "kip/labelsolve.hpp"

namespace kip::theory {

namespace {

double spectral_norm(const Mat& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(M);
  return svd.singularValues()(0);
}

double rank_ratio(const Mat& M) {
  Eigen::JacobiSVD<Mat> svd(M);
  const Vec& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0.0;
  return sv(sv.size() - 1) / sv(0);
}

const char* status_name(CheckStatus s) {
  switch (s) {
    case CheckStatus::Pass: return "PASS";
    case CheckStatus::Fail: return "FAIL";
    case CheckStatus::Gated: return "GATED";
  }
  return "?";
}

}  // namespace

std::string CheckReport::to_string() const {
  std::ostringstream os;
  os << name << ": " << status_name(status);
  for (const auto& [k, v] : quantities) os << "  " << k << "=" << v;
  if (!note.empty()) os << "  (" << note << ")";
  return os.str();
}

std::string CheckReport::to_csv_row() const {
  std::ostringstream os;
  os << name << "," << status_name(status) << ",";
  bool first = true;
  for (const auto& [k, v] : quantities) {
    if (!first) os << ";";
    os << k << "=" << v;
    first = false;
  }
  return os.str();
}

LinearRidgeCoeffs ridge_coeffs(const Mat& X, const Mat& y, double lambda) {
  require(X.rows() == y.rows(), "ridge_coeffs: row mismatch");
  require(lambda >= 0, "ridge_coeffs: lambda must be nonnegative");
  LinearRidgeCoeffs out;
  out.w = ridge_operator(X, lambda) * y;
  return out;
}

Mat ridge_operator(const Mat& X, double lambda) {
  if (lambda == 0.0) return pinv(X);
  Mat G = X * X.transpose();
  G.diagonal().array() += lambda;
  Eigen::LDLT<Mat> ldlt(G);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("ridge_operator: factorization failed");
  // X^T G^-1 computed as (G^-1 X)^T since G is symmetric.
  return ldlt.solve(X).transpose();
}

namespace {

struct ConvergedKip {
  Mat X_s;
  Mat y_s;
  double loss = 0.0;
  double grad_norm = 0.0;
  long steps = 0;
  bool converged = false;
};

// Full-gradient KIP (entire support and target every step) with Adam and
// plateau-halved learning rate. The theorem is asymptotic; this is the
// operational stopping rule: |grad| < grad_tol or the step cap.
ConvergedKip run_full_gradient_kip(const Mat& X_s0, const Mat& y_s0,
                                   const Dataset& target,
                                   const KernelSpec& kernel, double lambda,
                                   RegMode mode, bool learn_labels,
                                   double grad_tol, long max_steps) {
  ConvergedKip st;
  st.X_s = X_s0;
  st.y_s = y_s0;

  Mat m_x = Mat::Zero(X_s0.rows(), X_s0.cols());
  Mat v_x = m_x, m_y, v_y;
  if (learn_labels) {
    m_y = Mat::Zero(y_s0.rows(), y_s0.cols());
    v_y = m_y;
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double lr = 0.01;
  double best = std::numeric_limits<double>::infinity();
  long since_best = 0;

  for (long t = 1; t <= max_steps; ++t) {
    const ad::KipGradients g = ad::grad_kip_loss(
        st.X_s, st.y_s, target.X, target.y, kernel, lambda, mode,
        learn_labels ? ad::GradWrt::Both : ad::GradWrt::Xs, nullptr);
    st.loss = g.loss;
    st.steps = t;
    st.grad_norm = g.d_xs.norm();
    if (learn_labels) st.grad_norm = std::hypot(st.grad_norm, g.d_ys.norm());
    if (st.grad_norm < grad_tol) {
      st.converged = true;
      break;
    }

    if (g.loss < best - 1e-13 * std::max(1.0, best)) {
      best = g.loss;
      since_best = 0;
    } else if (++since_best >= 250) {
      lr *= 0.5;
      since_best = 0;
      if (lr < 1e-13) break;
    }

    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
    auto adam = [&](Mat& p, Mat& m, Mat& v, const Mat& grad) {
      m = b1 * m + (1.0 - b1) * grad;
      v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
      p.array() -=
          lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    };
    adam(st.X_s, m_x, v_x, g.d_xs);
    if (learn_labels) adam(st.y_s, m_y, v_y, g.d_ys);
  }
  return st;
}

}  // namespace

CheckReport check_linear_kip_convergence(const Dataset& target, Index n_s,
                                         double lambda, Rng& rng) {
  CheckReport report;
  report.name = "linear-kip-convergence";
  const int C = target.num_classes;
  const Index d = target.dim();

  if (rank_ratio(target.X) < 1e-10) {
    report.status = CheckStatus::Gated;
    report.note = "X_t not full column rank; least-squares classifier not unique";
    return report;
  }
  if (n_s < C) {
    report.status = CheckStatus::Gated;
    report.note = "n_s < C: y_s cannot reach rank C, theorem precondition unmet";
    return report;
  }

  // Generic init: Gaussian support points at unit row scale, Gaussian labels.
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat X_s0(n_s, d), y_s0(n_s, C);
  for (Index i = 0; i < X_s0.size(); ++i)
    X_s0.data()[i] = normal(rng) / std::sqrt(static_cast<double>(d));
  for (Index i = 0; i < y_s0.size(); ++i) y_s0.data()[i] = normal(rng);

  const ConvergedKip fin = run_full_gradient_kip(
      X_s0, y_s0, target, linear_kernel(), lambda, RegMode::Absolute,
      /*learn_labels=*/false, /*grad_tol=*/1e-7, /*max_steps=*/100000);

  const Mat w0 = ridge_coeffs(target.X, target.y, 0.0).w;
  const Mat wt = ridge_coeffs(fin.X_s, fin.y_s, lambda).w;
  const double dist = spectral_norm(wt - w0);
  const double w0n = spectral_norm(w0);

  report.quantities["w_dist_spectral"] = dist;
  report.quantities["w0_norm"] = w0n;
  report.quantities["eps_bound"] = 0.5 * dist * dist;
  report.quantities["grad_norm"] = fin.grad_norm;
  report.quantities["steps"] = static_cast<double>(fin.steps);
  report.quantities["final_loss"] = fin.loss;
  report.status = dist <= 1e-3 * w0n ? CheckStatus::Pass : CheckStatus::Fail;
  if (report.status == CheckStatus::Fail && !fin.converged)
    report.note = "not converged within step cap";
  return report;
}

CheckReport check_ls_theorem(const Mat& X_s, const Dataset& target, double tol) {
  CheckReport report;
  report.name = "ls-theorem";
  const Index d = target.dim();
  require(X_s.cols() == d, "check_ls_theorem: feature dimensions differ");

  const bool xs_full = X_s.rows() >= d && rank_ratio(X_s) > 1e-10;
  const bool xt_full = target.X.rows() >= d && rank_ratio(target.X) > 1e-10;
  if (!xs_full || !xt_full) {
    report.status = CheckStatus::Gated;
    report.note = "rank(X_s) = rank(X_t) = d precondition unmet";
    return report;
  }

  const Mat y_solved =
      solve_labels(X_s, target.X, target.y, linear_kernel(), 0.0, RegMode::Absolute);
  const Mat w0 = ridge_coeffs(target.X, target.y, 0.0).w;
  const Mat expected = X_s * w0;
  const double max_diff = (y_solved - expected).cwiseAbs().maxCoeff();

  report.quantities["max_abs_diff"] = max_diff;
  report.status = max_diff < tol ? CheckStatus::Pass : CheckStatus::Fail;
  return report;
}

double projection_bound(const Mat& K_ts, const Mat& y_t, double rcond) {
  Eigen::BDCSVD<Mat> svd(K_ts, Eigen::ComputeThinU);
  if (svd.info() != Eigen::Success)
    throw NumericError("projection_bound: SVD failed");
  const Vec& sv = svd.singularValues();
  const double cut = sv.size() > 0 ? rcond * sv(0) : 0.0;
  Index rank = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cut) ++rank;
  const Mat U = svd.matrixU().leftCols(rank);
  const Mat resid = y_t - U * (U.transpose() * y_t);
  return 0.5 * resid.squaredNorm();
}

CheckReport check_optimal_loss_bound(const Dataset& target, Index n_s,
                                     const KernelSpec& kernel, Rng& rng) {
  CheckReport report;
  report.name = "optimal-loss-bound";
  require(target.size() <= 200, "check_optimal_loss_bound: small instances only");

  std::normal_distribution<double> normal(0.0, 1.0);
  Mat X_s0(n_s, target.dim()), y_s0(n_s, target.num_classes);
  for (Index i = 0; i < X_s0.size(); ++i)
    X_s0.data()[i] = normal(rng) / std::sqrt(static_cast<double>(target.dim()));
  for (Index i = 0; i < y_s0.size(); ++i) y_s0.data()[i] = 0.1 * normal(rng);

  const double lambda = 1e-6;
  ConvergedKip fin = run_full_gradient_kip(
      X_s0, y_s0, target, kernel, lambda, RegMode::ScaleInvariant,
      /*learn_labels=*/true, /*grad_tol=*/1e-9, /*max_steps=*/20000);

  // Exact inner minimization over y_s at the converged support: the label
  // solve attains the infimum, which is what the bound describes.
  const Mat y_polished =
      solve_labels(fin.X_s, target.X, target.y, kernel, lambda, RegMode::ScaleInvariant);
  const double loss = kip_loss(fin.X_s, y_polished, target.X, target.y, kernel,
                               lambda, RegMode::ScaleInvariant);
  const Mat K_ts = kernel_matrix(kernel, target.X, fin.X_s);
  const double bound = projection_bound(K_ts, target.y);

  report.quantities["converged_loss"] = loss;
  report.quantities["projection_bound"] = bound;
  report.quantities["gap"] = loss - bound;
  report.quantities["steps"] = static_cast<double>(fin.steps);
  report.status = (loss <= bound + 1e-6 && loss >= bound - 1e-6)
                      ? CheckStatus::Pass
                      : CheckStatus::Fail;
  return report;
}

}  // namespace kip::theory
