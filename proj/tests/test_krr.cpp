#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kip/krr.hpp"
#include "test_util.hpp"

using namespace kip;

TEST_CASE("effective_lambda") {
  const Mat I10 = Mat::Identity(10, 10);
  CHECK(effective_lambda(1e-6, I10, RegMode::ScaleInvariant) == doctest::Approx(1e-6));

  // scale covariance: lambda_eff(c K) = c lambda_eff(K)
  Rng rng(1);
  Mat X = test::random_matrix(8, 3, rng);
  const Mat K = X * X.transpose();
  const double l1 = effective_lambda(1e-6, K, RegMode::ScaleInvariant);
  const double l2 = effective_lambda(1e-6, (3.5 * K).eval(), RegMode::ScaleInvariant);
  CHECK(l2 == doctest::Approx(3.5 * l1));

  // unit-diagonal kernel: lambda_eff == lambda exactly
  const Mat Krbf = kernel_matrix(rbf_kernel(), X, X);
  CHECK(effective_lambda(1e-6, Krbf, RegMode::ScaleInvariant) == doctest::Approx(1e-6).epsilon(1e-12));

  CHECK(effective_lambda(0.25, K, RegMode::Absolute) == 0.25);
  CHECK_THROWS_AS(effective_lambda(-1.0, K, RegMode::Absolute), ArgumentError);
}

TEST_CASE("fit: identity system and interpolation") {
  Rng rng(2);
  const Mat y = test::random_matrix(6, 2, rng);

  // K = I, lambda = 0 -> alpha = y
  const Mat alpha = solve_regularized(Mat::Identity(6, 6), y, 0.0);
  CHECK((alpha - y).cwiseAbs().maxCoeff() < 1e-12);

  // linear kernel, support spanning R^d, lambda -> 0: interpolates support
  const Mat X = test::random_matrix(5, 5, rng);
  const RidgeModel model = fit(X, y.topRows(5), linear_kernel(), 1e-12, RegMode::Absolute);
  CHECK((model.predict(X) - y.topRows(5)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("predict errors") {
  RidgeModel empty;
  Rng rng(1);
  CHECK_THROWS_AS(empty.predict(test::random_matrix(2, 3, rng)), ArgumentError);

  const Mat X = test::random_matrix(4, 3, rng);
  const Mat y = test::random_matrix(4, 2, rng);
  const RidgeModel m = fit(X, y, rbf_kernel(), 1e-6);
  CHECK_THROWS_AS(m.predict(test::random_matrix(2, 5, rng)), ArgumentError);
}

TEST_CASE("kip_loss basics and dense-inverse oracle") {
  Rng rng(3);
  const Mat Xs = test::random_matrix(4, 3, rng);
  const Mat ys = test::random_matrix(4, 2, rng);
  const Mat Xt = test::random_matrix(8, 3, rng);
  const Mat yt = test::random_matrix(8, 2, rng);

  // target = support, lambda -> 0: loss -> 0
  const double self_loss = kip_loss(Xs, ys, Xs, ys, rbf_kernel(), 1e-13, RegMode::Absolute);
  CHECK(self_loss < 1e-10);

  // y_s = 0 -> loss = 0.5 |y_t|^2
  CHECK(kip_loss(Xs, Mat::Zero(4, 2), Xt, yt, rbf_kernel(), 1e-6) ==
        doctest::Approx(0.5 * yt.squaredNorm()));

  // brute-force evaluation via explicit dense inverse (independent route)
  const KernelSpec lin = linear_kernel();
  const Mat K_ss = Xs * Xs.transpose();
  const Mat K_ts = Xt * Xs.transpose();
  const double lam = 1e-6 * K_ss.trace() / 4.0;
  Mat S = K_ss + lam * Mat::Identity(4, 4);
  const Mat pred = K_ts * S.fullPivLu().inverse() * ys;
  const double oracle = 0.5 * (yt - pred).squaredNorm();
  CHECK(kip_loss(Xs, ys, Xt, yt, lin, 1e-6) == doctest::Approx(oracle).epsilon(1e-10));

  // nonnegative; zero iff prediction hits the target
  CHECK(oracle >= 0.0);
}

TEST_CASE("scale invariance of predictions under kernel rescaling") {
  Rng rng(4);
  const Mat X = test::random_matrix(10, 4, rng);
  const Mat y = test::random_matrix(10, 3, rng);
  const Mat Xq = test::random_matrix(5, 4, rng);

  const Mat K_ss = kernel_matrix(rbf_kernel(), X, X);
  const Mat K_qs = kernel_matrix(rbf_kernel(), Xq, X);
  for (const double c : {1.0, 7.0, 1e-3}) {
    const double lam = effective_lambda(1e-6, (c * K_ss).eval(), RegMode::ScaleInvariant);
    const Mat alpha = solve_regularized(c * K_ss, y, lam);
    const Mat pred = (c * K_qs) * alpha;

    const double lam1 = effective_lambda(1e-6, K_ss, RegMode::ScaleInvariant);
    const Mat pred1 = K_qs * solve_regularized(K_ss, y, lam1);
    CHECK((pred - pred1).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("solver matches dense inverse on small systems") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Index n = 5 + 3 * trial;
    const Mat X = test::random_matrix(n, 6, rng);
    const Mat y = test::random_matrix(n, 2, rng);
    const Mat K = kernel_matrix(rbf_kernel(), X, X);
    const double lam = effective_lambda(1e-6, K, RegMode::ScaleInvariant);
    const Mat alpha = solve_regularized(K, y, lam);
    Mat S = K + lam * Mat::Identity(n, n);
    const Mat dense = S.fullPivLu().inverse() * y;
    CHECK((alpha - dense).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("fit residual contract on an ill-conditioned gram") {
  Rng rng(6);
  // nearly-duplicated support rows make K badly conditioned
  Mat X = test::random_matrix(40, 8, rng);
  for (Index i = 20; i < 40; ++i)
    X.row(i) = X.row(i - 20) + 1e-7 * test::random_matrix(1, 8, rng);
  const Mat y = test::random_matrix(40, 3, rng);
  const Mat K = kernel_matrix(rbf_kernel(), X, X);
  const double lam = effective_lambda(1e-6, K, RegMode::ScaleInvariant);
  const Mat alpha = solve_regularized(K, y, lam);
  Mat S = K;
  S.diagonal().array() += lam;
  CHECK((S * alpha - y).norm() <= 1e-8 * y.norm());
}

TEST_CASE("accuracy argmax and tie rule") {
  // predictions equal to centered one-hots -> accuracy 1
  const std::vector<int> labels{0, 1, 2, 1};
  const Mat y = one_hot_centered(labels, 3);
  CHECK(accuracy(y, labels) == 1.0);

  // all-zero predictions: ties resolve to class 0
  const Mat zeros = Mat::Zero(4, 3);
  CHECK(accuracy(zeros, labels) == doctest::Approx(0.25));  // one label is 0

  // two-sample hand case
  Mat p(2, 2);
  p << 0.9, 0.1, 0.8, 0.2;
  CHECK(accuracy(p, {0, 1}) == doctest::Approx(0.5));
}
