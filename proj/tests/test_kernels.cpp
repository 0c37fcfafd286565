#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kip/kernels.hpp"
#include "test_util.hpp"

using namespace kip;

TEST_CASE("kernel spec parsing") {
  CHECK(parse_kernel("linear").family == KernelFamily::Linear);
  CHECK(parse_kernel("rbf").gamma == 1.0);
  CHECK(parse_kernel("rbf:gamma=0.5").gamma == 0.5);
  const KernelSpec fc = parse_kernel("fc3-nngp");
  CHECK(fc.depth == 3);
  CHECK(fc.mode == FcMode::Nngp);
  CHECK(parse_kernel("fc2").mode == FcMode::Ntk);
  CHECK(parse_kernel("fc1:sw2=1.5,sb2=0.01").sigma_w2 == 1.5);
  CHECK_THROWS_AS(parse_kernel("poly"), ArgumentError);
  CHECK_THROWS_AS(parse_kernel("fc0"), ArgumentError);
  CHECK(parse_kernel_list("fc1,fc2,fc3").size() == 3);
  CHECK(parse_kernel("fc2").to_string() == "fc2");
  CHECK(parse_kernel(parse_kernel("rbf:gamma=2").to_string()).gamma == 2.0);
}

TEST_CASE("linear kernel on orthonormal rows") {
  Mat U(2, 2);
  U << 1, 0, 0, 1;
  const Mat K = kernel_matrix(linear_kernel(), U, U);
  CHECK(K(0, 0) == doctest::Approx(1));
  CHECK(K(0, 1) == doctest::Approx(0));
  CHECK(K(1, 1) == doctest::Approx(1));
}

TEST_CASE("rbf kernel values") {
  Mat U(2, 2);
  U << 1, 0, 0, 1;
  const Mat K = kernel_matrix(rbf_kernel(), U, U);
  CHECK(K(0, 0) == 1.0);  // exp(0), exact on the self diagonal
  CHECK(K(1, 1) == 1.0);
  // |x - x'|^2 = 2, d = 2: exp(-2/2) = exp(-1)
  CHECK(K(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  // 0 < K <= 1 on random data
  Rng rng(1);
  const Mat X = test::random_matrix(20, 5, rng);
  const Mat KX = kernel_matrix(rbf_kernel(), X, X);
  CHECK(KX.minCoeff() > 0.0);
  CHECK(KX.maxCoeff() <= 1.0);
}

TEST_CASE("kernel matrices are symmetric PSD on the self case") {
  Rng rng(2);
  const Mat X = test::random_matrix(30, 7, rng);
  for (const char* name : {"linear", "rbf", "fc1", "fc2", "fc3-nngp"}) {
    const Mat K = kernel_matrix(parse_kernel(name), X, X);
    CAPTURE(name);
    CHECK((K - K.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat> eig(K);
    CHECK(eig.eigenvalues().minCoeff() >=
          -1e-8 * K.trace() / static_cast<double>(K.rows()));
  }
}

TEST_CASE("fc kernel closed-form identities") {
  const double sw2 = 2.0, sb2 = 1e-4;

  // x = x': the diagonal recursion is affine and exact
  Rng rng(3);
  const Mat X = test::random_matrix(6, 4, rng);
  Vec diag = (sw2 / 4.0) * X.rowwise().squaredNorm();
  diag.array() += sb2;
  for (int depth = 1; depth <= 3; ++depth) {
    diag = sw2 * diag;
    diag.array() += sb2;
    const Mat K = kernel_matrix(fc_kernel_spec(depth, FcMode::Nngp), X, X);
    for (Index i = 0; i < X.rows(); ++i)
      CHECK(K(i, i) == diag[i]);  // bit-exact
  }

  // increasing diagonal when sw2 Sigma + sb2 > Sigma
  const Mat K1 = kernel_matrix(fc_kernel_spec(1, FcMode::Nngp), X, X);
  const Mat K2 = kernel_matrix(fc_kernel_spec(2, FcMode::Nngp), X, X);
  for (Index i = 0; i < X.rows(); ++i) CHECK(K2(i, i) > K1(i, i));

  // NTK dominates NNGP on the diagonal
  for (int depth = 1; depth <= 3; ++depth) {
    const Mat ntk = kernel_matrix(fc_kernel_spec(depth, FcMode::Ntk), X, X);
    const Mat nngp = kernel_matrix(fc_kernel_spec(depth, FcMode::Nngp), X, X);
    for (Index i = 0; i < X.rows(); ++i) CHECK(ntk(i, i) >= nngp(i, i));
  }

  // orthogonal inputs with sb2 = 0: c = 0, Sigma^1 = sw2 sqrt(d_u d_v) / pi
  Mat O(2, 2);
  O << 1, 0, 0, 1;
  const KernelSpec orth = fc_kernel_spec(1, FcMode::Nngp, sw2, 0.0);
  const Mat KO = kernel_matrix(orth, O, O);
  const double du = sw2 * 0.5;  // sw2 |x|^2 / d
  CHECK(KO(0, 1) == doctest::Approx(sw2 * du / M_PI).epsilon(1e-12));

  // zero input with sb2 = 0 gives exactly zero
  Mat Z = Mat::Zero(2, 3);
  Z(1, 0) = 1.0;
  const Mat KZ = kernel_matrix(fc_kernel_spec(2, FcMode::Ntk, sw2, 0.0), Z, Z);
  CHECK(KZ(0, 0) == 0.0);
}

TEST_CASE("analytic fc kernel matches the Monte-Carlo oracle") {
  Rng rng(17);
  const Mat U = test::random_matrix(5, 3, rng);
  const Mat V = test::random_matrix(4, 3, rng);

  // depth-1 NTK per the spec example; depth-2 NTK and depth-1 NNGP for range.
  struct Case {
    int depth;
    FcMode mode;
  };
  for (const Case c : {Case{1, FcMode::Ntk}, Case{2, FcMode::Ntk}, Case{1, FcMode::Nngp}}) {
    const KernelSpec spec = fc_kernel_spec(c.depth, c.mode);
    const Mat analytic = kernel_matrix(spec, U, V);
    Rng mc_rng(100 + c.depth);
    const McKernelEstimate est = mc_kernel_oracle(spec, U, V, 2048, 48, mc_rng);
    const Mat dev = (analytic - est.mean).cwiseAbs();
    const Mat bound = 3.0 * est.se;
    CAPTURE(c.depth);
    for (Index i = 0; i < dev.rows(); ++i)
      for (Index j = 0; j < dev.cols(); ++j) CHECK(dev(i, j) <= bound(i, j) + 1e-12);
  }

  // zero inputs, sb2 = 0: analytic entry is exactly 0, MC mean within 3 SE of 0
  Mat Z = Mat::Zero(2, 3);
  Z(1, 1) = 1.0;
  const KernelSpec spec = fc_kernel_spec(1, FcMode::Nngp, 2.0, 0.0);
  CHECK(kernel_matrix(spec, Z, Z)(0, 0) == 0.0);
  Rng mc_rng(5);
  const McKernelEstimate est = mc_kernel_oracle(spec, Z, Z, 1024, 32, mc_rng);
  CHECK(std::abs(est.mean(0, 0)) <= 3.0 * est.se(0, 0) + 1e-12);
}

TEST_CASE("kernel_matrix input validation") {
  Rng rng(1);
  const Mat A = test::random_matrix(3, 4, rng);
  const Mat B = test::random_matrix(3, 5, rng);
  CHECK_THROWS_AS(kernel_matrix(rbf_kernel(), A, B), ArgumentError);
}
