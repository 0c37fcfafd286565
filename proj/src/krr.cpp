#include "kip/krr.hpp"

#include <cmath>

namespace kip {

double effective_lambda(double lambda, const Mat& K_ss, RegMode mode) {
  require(lambda >= 0, "lambda must be nonnegative");
  require(K_ss.rows() == K_ss.cols() && K_ss.rows() >= 1,
          "effective_lambda: K_ss must be square and nonempty");
  if (mode == RegMode::Absolute) return lambda;
  return lambda * K_ss.trace() / static_cast<double>(K_ss.rows());
}

Mat solve_regularized(const Mat& K_ss, const Mat& y_s, double lambda_eff) {
  require(K_ss.rows() == y_s.rows(), "solve: dimension mismatch");
  Mat S = K_ss;
  S.diagonal().array() += lambda_eff;

  const double ynorm = y_s.norm();
  const double tol = 1e-8 * std::max(ynorm, 1e-300);
  double jitter = 0.0;
  for (int attempt = 0; attempt < 4; ++attempt) {
    if (attempt > 0) {
      jitter = (jitter == 0.0 ? 1e-12 * K_ss.trace() / K_ss.rows() : jitter * 100.0);
      S = K_ss;
      S.diagonal().array() += lambda_eff + jitter;
    }
    Eigen::LDLT<Mat> ldlt(S);
    if (ldlt.info() != Eigen::Success) continue;
    Mat alpha = ldlt.solve(y_s);
    // Iterative refinement keeps the residual contract on ill-conditioned grams.
    for (int r = 0; r < 3; ++r) {
      Mat resid = y_s - S * alpha;
      if (resid.norm() <= tol) break;
      alpha += ldlt.solve(resid);
    }
    if (!alpha.allFinite()) continue;
    if ((y_s - S * alpha).norm() <= std::max(tol, 1e-12 * S.norm() * alpha.norm()))
      return alpha;
  }
  throw NumericError("ridge solve failed: system indefinite or residual too large");
}

Mat RidgeModel::predict(const Mat& X) const {
  require(alpha.rows() == X_s.rows() && X_s.rows() > 0,
          "predict: model has no support data");
  require(X.cols() == X_s.cols(), "predict: feature dimension mismatch");
  return kernel_matrix(kernel, X, X_s) * alpha;
}

RidgeModel fit(const Mat& X_s, const Mat& y_s, const KernelSpec& kernel,
               double lambda, RegMode mode) {
  require(X_s.rows() >= 1, "fit: empty support set");
  require(X_s.rows() == y_s.rows(), "fit: X_s and y_s row counts differ");
  RidgeModel model;
  model.X_s = X_s;
  model.kernel = kernel;
  model.lambda = lambda;
  model.reg_mode = mode;
  const Mat K_ss = kernel_matrix(kernel, model.X_s, model.X_s);
  model.lambda_eff = effective_lambda(lambda, K_ss, mode);
  model.alpha = solve_regularized(K_ss, y_s, model.lambda_eff);
  return model;
}

double kip_loss(const Mat& X_s, const Mat& y_s, const Mat& X_t, const Mat& y_t,
                const KernelSpec& kernel, double lambda, RegMode mode) {
  const RidgeModel model = fit(X_s, y_s, kernel, lambda, mode);
  return 0.5 * (y_t - model.predict(X_t)).squaredNorm();
}

double accuracy(const Mat& predictions, const std::vector<int>& labels) {
  require(predictions.rows() == static_cast<Index>(labels.size()),
          "accuracy: row/label count mismatch");
  if (predictions.rows() == 0) return 0.0;
  Index hits = 0;
  for (Index i = 0; i < predictions.rows(); ++i) {
    int best = 0;
    for (Index j = 1; j < predictions.cols(); ++j)
      if (predictions(i, j) > predictions(i, best)) best = static_cast<int>(j);
    if (best == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.rows());
}

}  // namespace kip
