#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kip/autodiff.hpp"
#include "test_util.hpp"

using namespace kip;
using ad::GradWrt;
using ad::Tape;

TEST_CASE("grad_check on a quadratic") {
  Rng rng(1);
  const Mat x = test::random_matrix(3, 4, rng);
  const auto f = [](const Mat& p) { return 0.5 * p.squaredNorm(); };
  CHECK(ad::grad_check(f, x, x, 1e-5) < 1e-8);
}

TEST_CASE("primitive op adjoints against finite differences") {
  Rng rng(2);
  const double h = 1e-5;

  SUBCASE("matmul/transpose/add/scale chain") {
    const Mat A = test::random_matrix(3, 4, rng);
    const Mat B = test::random_matrix(4, 2, rng);
    const auto f = [&](const Mat& P) {
      Tape t;
      const int a = t.leaf(P);
      const int z = t.matmul(a, t.constant(B));
      return t.value(t.sq_frob(t.scale(t.transpose(z), 0.5)))(0, 0);
    };
    Tape t;
    const int a = t.leaf(A);
    const int loss = t.sq_frob(t.scale(t.transpose(t.matmul(a, t.constant(B))), 0.5));
    t.backward(loss);
    CHECK(ad::grad_check(f, t.adjoint(a), A, h) < 1e-7);
  }

  SUBCASE("exp/sqrt/hadamard/cdiv") {
    const Mat A = test::random_matrix(3, 3, rng).array().abs().matrix() +
                  Mat::Constant(3, 3, 0.5);
    const Mat B = test::random_matrix(3, 3, rng).array().abs().matrix() +
                  Mat::Constant(3, 3, 0.5);
    const auto f = [&](const Mat& P) {
      Tape t;
      const int a = t.leaf(P);
      const int b = t.constant(B);
      const int z = t.cdiv(t.hadamard(t.exp(a), b), t.sqrt(a));
      return t.value(t.sq_frob(z))(0, 0);
    };
    Tape t;
    const int a = t.leaf(A);
    const int z = t.cdiv(t.hadamard(t.exp(a), t.constant(B)), t.sqrt(a));
    t.backward(t.sq_frob(z));
    CHECK(ad::grad_check(f, t.adjoint(a), A, h) < 1e-6);
  }

  SUBCASE("arccos with interior values") {
    const Mat C = 0.8 * test::random_matrix(2, 3, rng).array().tanh().matrix();
    const auto f = [&](const Mat& P) {
      Tape t;
      return t.value(t.sq_frob(t.acos(t.leaf(P))))(0, 0);
    };
    Tape t;
    const int c = t.leaf(C);
    t.backward(t.sq_frob(t.acos(c)));
    CHECK(ad::grad_check(f, t.adjoint(c), C, h) < 1e-6);
  }

  SUBCASE("rowsqnorm/broadcast/trace") {
    const Mat A = test::random_matrix(4, 3, rng);
    const auto f = [&](const Mat& P) {
      Tape t;
      const int a = t.leaf(P);
      const int r = t.broadcast_col(t.row_sqnorm(a), 4);
      return t.value(t.trace(r))(0, 0);
    };
    Tape t;
    const int a = t.leaf(A);
    t.backward(t.trace(t.broadcast_col(t.row_sqnorm(a), 4)));
    CHECK(ad::grad_check(f, t.adjoint(a), A, h) < 1e-7);
  }

  SUBCASE("softmax cross-entropy") {
    const Mat Z = test::random_matrix(5, 3, rng);
    Mat T = Mat::Zero(5, 3);
    for (Index i = 0; i < 5; ++i) T(i, i % 3) = 1.0;
    const auto f = [&](const Mat& P) {
      Tape t;
      return t.value(t.softmax_xent(t.leaf(P), T))(0, 0);
    };
    Tape t;
    const int z = t.leaf(Z);
    t.backward(t.softmax_xent(z, T));
    CHECK(ad::grad_check(f, t.adjoint(z), Z, h) < 1e-7);
  }
}

TEST_CASE("symmetric-solve adjoints validated by FD on free 4x4 systems") {
  Rng rng(3);
  Mat K = test::random_matrix(4, 4, rng);
  K = (0.5 * (K + K.transpose())).eval();
  K.diagonal().array() += 4.0;  // make it PD
  const Mat b = test::random_matrix(4, 2, rng);

  // wrt the right-hand side
  const auto f_b = [&](const Mat& P) {
    Tape t;
    return t.value(t.sq_frob(t.sym_solve(t.constant(K), t.leaf(P))))(0, 0);
  };
  Tape tb;
  const int bid = tb.leaf(b);
  tb.backward(tb.sq_frob(tb.sym_solve(tb.constant(K), bid)));
  CHECK(ad::grad_check(f_b, tb.adjoint(bid), b, 1e-5) < 1e-7);

  // wrt the (free) system matrix
  const auto f_k = [&](const Mat& P) {
    Tape t;
    return t.value(t.sq_frob(t.sym_solve(t.leaf(P), t.constant(b))))(0, 0);
  };
  Tape tk;
  const int kid = tk.leaf(K);
  tk.backward(tk.sq_frob(tk.sym_solve(kid, tk.constant(b))));
  CHECK(ad::grad_check(f_k, tk.adjoint(kid), K, 1e-5) < 1e-6);

  // add_scaled_identity chain: lambda enters through a trace
  const auto f_ki = [&](const Mat& P) {
    Tape t;
    const int k = t.leaf(P);
    const int lam = t.scale(t.trace(k), 0.25);
    return t.value(t.sq_frob(t.sym_solve(t.add_scaled_identity(k, lam), t.constant(b))))(0, 0);
  };
  Tape ti;
  const int kid2 = ti.leaf(K);
  const int lam = ti.scale(ti.trace(kid2), 0.25);
  ti.backward(ti.sq_frob(ti.sym_solve(ti.add_scaled_identity(kid2, lam), ti.constant(b))));
  CHECK(ad::grad_check(f_ki, ti.adjoint(kid2), K, 1e-5) < 1e-6);
}

TEST_CASE("kip loss graph values match the krr path") {
  Rng rng(4);
  const Mat Xs = test::random_matrix(5, 7, rng);
  const Mat ys = test::random_matrix(5, 3, rng);
  const Mat Xt = test::random_matrix(8, 7, rng);
  const Mat yt = test::random_matrix(8, 3, rng);

  for (const char* name : {"linear", "rbf", "fc1", "fc2", "fc1-nngp"}) {
    const KernelSpec spec = parse_kernel(name);
    Tape t;
    const int xs = t.leaf(Xs);
    const int ysn = t.leaf(ys);
    const int loss = ad::kip_loss_graph(t, spec, xs, ysn, Xt, yt, 1e-6,
                                        RegMode::ScaleInvariant);
    const double direct = kip_loss(Xs, ys, Xt, yt, spec, 1e-6);
    CAPTURE(name);
    CHECK(t.value(loss)(0, 0) ==
          doctest::Approx(direct).epsilon(1e-10));
  }
}

TEST_CASE("y_s gradient matches the closed-form adjoint of the quadratic") {
  Rng rng(5);
  const Mat Xs = test::random_matrix(3, 4, rng);
  const Mat ys = test::random_matrix(3, 2, rng);
  const Mat Xt = test::random_matrix(6, 4, rng);
  const Mat yt = test::random_matrix(6, 2, rng);
  const KernelSpec spec = rbf_kernel();

  const Mat K_ss = kernel_matrix(spec, Xs, Xs);
  const Mat K_ts = kernel_matrix(spec, Xt, Xs);
  const double lam = effective_lambda(1e-6, K_ss, RegMode::ScaleInvariant);
  Mat S = K_ss;
  S.diagonal().array() += lam;
  const Mat Amat = K_ts * S.fullPivLu().inverse();
  const Mat closed = -Amat.transpose() * (yt - Amat * ys);

  const ad::KipGradients g = ad::grad_kip_loss(Xs, ys, Xt, yt, spec, 1e-6,
                                               RegMode::ScaleInvariant, GradWrt::Ys);
  CHECK((g.d_ys - closed).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("kip gradients match central finite differences") {
  Rng rng(6);
  const Mat Xs = test::random_matrix(5, 6, rng);
  const Mat ys = test::random_matrix(5, 3, rng);
  const Mat Xt = test::random_matrix(8, 6, rng);
  const Mat yt = test::random_matrix(8, 3, rng);
  const double h = 1e-4;

  for (const char* name : {"linear", "rbf", "fc1", "fc2"}) {
    const KernelSpec spec = parse_kernel(name);
    const ad::KipGradients g = ad::grad_kip_loss(Xs, ys, Xt, yt, spec, 1e-6,
                                                 RegMode::ScaleInvariant, GradWrt::Both);
    CAPTURE(name);

    // FD through the independent krr evaluation path
    const auto f_x = [&](const Mat& P) {
      return kip_loss(P, ys, Xt, yt, spec, 1e-6);
    };
    CHECK(ad::grad_check(f_x, g.d_xs, Xs, h) < 1e-4);

    const auto f_y = [&](const Mat& P) {
      return kip_loss(Xs, P, Xt, yt, spec, 1e-6);
    };
    CHECK(ad::grad_check(f_y, g.d_ys, ys, h) < 1e-6);  // quadratic in y_s
  }
}

TEST_CASE("scale-invariant lambda trace term is differentiated") {
  Rng rng(7);
  const Mat Xs = test::random_matrix(4, 5, rng);
  const Mat ys = test::random_matrix(4, 2, rng);
  const Mat Xt = test::random_matrix(6, 5, rng);
  const Mat yt = test::random_matrix(6, 2, rng);

  // with a large lambda the trace dependence dominates; FD still has to agree
  const KernelSpec spec = rbf_kernel();
  const ad::KipGradients g = ad::grad_kip_loss(Xs, ys, Xt, yt, spec, 0.1,
                                               RegMode::ScaleInvariant, GradWrt::Xs);
  const auto f = [&](const Mat& P) { return kip_loss(P, ys, Xt, yt, spec, 0.1); };
  CHECK(ad::grad_check(f, g.d_xs, Xs, 1e-4) < 1e-4);
}

TEST_CASE("frozen mask zeroes gradients; full mask kills them all") {
  Rng rng(8);
  const Mat Xs = test::random_matrix(4, 6, rng);
  const Mat ys = test::random_matrix(4, 2, rng);
  const Mat Xt = test::random_matrix(7, 6, rng);
  const Mat yt = test::random_matrix(7, 2, rng);

  CorruptionMask mask = make_corruption(4, 6, 0.5, CorruptionScheme::Zero, rng);
  const ad::KipGradients g = ad::grad_kip_loss(Xs, ys, Xt, yt, rbf_kernel(), 1e-6,
                                               RegMode::ScaleInvariant, GradWrt::Xs, &mask);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 6; ++j)
      if (mask.frozen(i, j)) CHECK(g.d_xs(i, j) == 0.0);

  // everything frozen -> gradient identically zero
  CorruptionMask all;
  all.rho = 1.0;
  all.frozen = BoolMat::Constant(4, 6, true);
  all.values = Mat::Zero(4, 6);
  const ad::KipGradients gz = ad::grad_kip_loss(Xs, ys, Xt, yt, rbf_kernel(), 1e-6,
                                                RegMode::ScaleInvariant, GradWrt::Xs, &all);
  CHECK(gz.d_xs.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradient stays finite at coincident support/target points") {
  Rng rng(9);
  Mat Xs = test::random_matrix(4, 5, rng);
  Xs.row(1) = Xs.row(0);  // duplicate support pair: c = 1 on an off-diagonal
  const Mat ys = test::random_matrix(4, 2, rng);
  Mat Xt = test::random_matrix(6, 5, rng);
  Xt.row(2) = Xs.row(3);  // target point coincides with a support point
  const Mat yt = test::random_matrix(6, 2, rng);

  for (const char* name : {"fc1", "fc2", "fc3-nngp"}) {
    const ad::KipGradients g =
        ad::grad_kip_loss(Xs, ys, Xt, yt, parse_kernel(name), 1e-6,
                          RegMode::ScaleInvariant, GradWrt::Both);
    CAPTURE(name);
    CHECK(g.d_xs.allFinite());
    CHECK(g.d_ys.allFinite());
  }
}

TEST_CASE("tape replay determinism: bit-identical gradients") {
  Rng rng(10);
  const Mat Xs = test::random_matrix(5, 4, rng);
  const Mat ys = test::random_matrix(5, 3, rng);
  const Mat Xt = test::random_matrix(9, 4, rng);
  const Mat yt = test::random_matrix(9, 3, rng);

  const ad::KipGradients a = ad::grad_kip_loss(Xs, ys, Xt, yt, fc_kernel_spec(2), 1e-6,
                                               RegMode::ScaleInvariant, GradWrt::Both);
  const ad::KipGradients b = ad::grad_kip_loss(Xs, ys, Xt, yt, fc_kernel_spec(2), 1e-6,
                                               RegMode::ScaleInvariant, GradWrt::Both);
  CHECK(a.loss == b.loss);
  CHECK(a.d_xs == b.d_xs);
  CHECK(a.d_ys == b.d_ys);
}
