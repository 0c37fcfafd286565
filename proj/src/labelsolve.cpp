#include "kip/labelsolve.hpp"

namespace kip {

Mat pinv(const Mat& A, double rcond) {
  require(rcond > 0, "pinv: rcond must be positive");
  Eigen::BDCSVD<Mat> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericError("pinv: SVD failed");
  const Vec& sv = svd.singularValues();
  const double cut = sv.size() > 0 ? rcond * sv[0] : 0.0;
  Vec inv = Vec::Zero(sv.size());
  for (Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cut) inv[i] = 1.0 / sv[i];
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

namespace {

// A = K_ts (K_ss + lam I)^-1; the inverse becomes a pseudo-inverse at lam = 0.
Mat response_matrix(const Mat& X_s, const Mat& X_t, const KernelSpec& kernel,
                    double lambda, RegMode mode, double rcond, double* lam_out) {
  require(X_s.rows() >= 1, "label solve: empty support set");
  require(X_s.cols() == X_t.cols(), "label solve: feature dimensions differ");
  const Mat K_ss = kernel_matrix(kernel, X_s, X_s);
  const Mat K_ts = kernel_matrix(kernel, X_t, X_s);
  const double lam = effective_lambda(lambda, K_ss, mode);
  if (lam_out != nullptr) *lam_out = lam;
  Mat S = K_ss;
  S.diagonal().array() += lam;
  if (lam == 0.0) return K_ts * pinv(S, rcond);
  Eigen::LDLT<Mat> ldlt(S);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("label solve: regularized gram factorization failed");
  return ldlt.solve(K_ts.transpose()).transpose();
}

}  // namespace

Mat solve_labels(const Mat& X_s, const Mat& X_t, const Mat& y_t,
                 const KernelSpec& kernel, double lambda, RegMode mode,
                 double rcond) {
  require(y_t.rows() == X_t.rows(), "label solve: target rows mismatch");
  const Mat A = response_matrix(X_s, X_t, kernel, lambda, mode, rcond, nullptr);
  return pinv(A, rcond) * y_t;
}

Mat ls_injective_form(const Mat& X_s, const Mat& X_t, const Mat& y_t,
                      const KernelSpec& kernel, double lambda, RegMode mode,
                      double rcond) {
  require(y_t.rows() == X_t.rows(), "label solve: target rows mismatch");
  const Mat K_ss = kernel_matrix(kernel, X_s, X_s);
  const Mat K_ts = kernel_matrix(kernel, X_t, X_s);

  Eigen::BDCSVD<Mat> svd(K_ts, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericError("ls_injective_form: SVD failed");
  const Vec& sv = svd.singularValues();
  require(sv.size() > 0 && sv[sv.size() - 1] > rcond * sv[0],
          "ls_injective_form: K_ts is not injective (rank deficient)");
  Mat pinv_kts =
      svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();

  Mat S = K_ss;
  S.diagonal().array() += effective_lambda(lambda, K_ss, mode);
  return S * (pinv_kts * y_t);
}

Mat label_covariance(const Mat& y_nat, const Mat& y_solved) {
  require(y_nat.rows() == y_solved.rows() && y_nat.rows() > 0,
          "label_covariance: row mismatch");
  const Eigen::RowVectorXd mu_a = y_nat.colwise().mean();
  const Eigen::RowVectorXd mu_b = y_solved.colwise().mean();
  const Mat ca = y_nat.rowwise() - mu_a;
  const Mat cb = y_solved.rowwise() - mu_b;
  return (ca.transpose() * cb) / static_cast<double>(y_nat.rows());
}

}  // namespace kip
