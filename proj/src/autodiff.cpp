#include "kip/autodiff.hpp"

#include <cmath>

namespace kip::ad {

namespace {
constexpr double kBoundaryGuard = 1e-9;  // arccos adjoint zeroed at |c| >= 1 - guard
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add-scalar";
    case Op::Hadamard: return "hadamard";
    case Op::CDiv: return "cdiv";
    case Op::Exp: return "exp";
    case Op::Sqrt: return "sqrt";
    case Op::Acos: return "arccos";
    case Op::ClampUnit: return "clamp-unit";
    case Op::Relu: return "relu";
    case Op::ArcT: return "arccos-t";
    case Op::ArcTdot: return "arccos-tdot";
    case Op::RowSqNorm: return "row-sqnorm";
    case Op::BroadcastCol: return "broadcast-col";
    case Op::BroadcastRow: return "broadcast-row";
    case Op::AddScaledIdentity: return "add-scaled-identity";
    case Op::SymSolve: return "symmetric-solve";
    case Op::Trace: return "trace";
    case Op::SqFrob: return "frobenius-norm-squared";
    case Op::SoftmaxXent: return "softmax-xent";
  }
  return "?";
}

int Tape::push(Node n) {
  if (n.op != Op::Leaf && n.op != Op::Constant) {
    n.needs_grad = (n.a >= 0 && nodes_[static_cast<std::size_t>(n.a)].needs_grad) ||
                   (n.b >= 0 && nodes_[static_cast<std::size_t>(n.b)].needs_grad);
  }
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Mat& Tape::value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
const Mat& Tape::adjoint(int id) const { return nodes_[static_cast<std::size_t>(id)].adjoint; }

int Tape::leaf(Mat value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

int Tape::constant(Mat value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

int Tape::scalar_constant(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

namespace {
void check_same_shape(const Mat& a, const Mat& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string("tape: shape mismatch in ") + what);
}
}  // namespace

int Tape::matmul(int a, int b) {
  const Mat& A = value(a);
  const Mat& B = value(b);
  require(A.cols() == B.rows(), "tape: matmul inner dimensions differ");
  Node n;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  n.value = A * B;
  return push(std::move(n));
}

int Tape::transpose(int a) {
  Node n;
  n.op = Op::Transpose;
  n.a = a;
  n.value = value(a).transpose();
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  check_same_shape(value(a), value(b), "add");
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  n.value = value(a) + value(b);
  return push(std::move(n));
}

int Tape::sub(int a, int b) {
  check_same_shape(value(a), value(b), "sub");
  Node n;
  n.op = Op::Sub;
  n.a = a;
  n.b = b;
  n.value = value(a) - value(b);
  return push(std::move(n));
}

int Tape::scale(int a, double s) {
  Node n;
  n.op = Op::Scale;
  n.a = a;
  n.s = s;
  n.value = s * value(a);
  return push(std::move(n));
}

int Tape::add_scalar(int a, double s) {
  Node n;
  n.op = Op::AddScalar;
  n.a = a;
  n.s = s;
  n.value = value(a).array() + s;
  return push(std::move(n));
}

int Tape::hadamard(int a, int b) {
  check_same_shape(value(a), value(b), "hadamard");
  Node n;
  n.op = Op::Hadamard;
  n.a = a;
  n.b = b;
  n.value = value(a).cwiseProduct(value(b));
  return push(std::move(n));
}

int Tape::cdiv(int a, int b) {
  check_same_shape(value(a), value(b), "cdiv");
  Node n;
  n.op = Op::CDiv;
  n.a = a;
  n.b = b;
  n.value = value(a).cwiseQuotient(value(b));
  return push(std::move(n));
}

int Tape::exp(int a) {
  Node n;
  n.op = Op::Exp;
  n.a = a;
  n.value = value(a).array().exp();
  return push(std::move(n));
}

int Tape::sqrt(int a) {
  Node n;
  n.op = Op::Sqrt;
  n.a = a;
  n.value = value(a).array().sqrt();
  return push(std::move(n));
}

int Tape::acos(int a) {
  Node n;
  n.op = Op::Acos;
  n.a = a;
  n.value = value(a).array().acos();
  return push(std::move(n));
}

int Tape::clamp_unit(int a) {
  Node n;
  n.op = Op::ClampUnit;
  n.a = a;
  n.value = value(a).array().min(1.0).max(-1.0);
  return push(std::move(n));
}

int Tape::relu(int a) {
  Node n;
  n.op = Op::Relu;
  n.a = a;
  n.value = value(a).cwiseMax(0.0);
  return push(std::move(n));
}

int Tape::arc_t(int a) {
  Node n;
  n.op = Op::ArcT;
  n.a = a;
  n.value = value(a).unaryExpr([](double c) { return arccos_t(c); });
  return push(std::move(n));
}

int Tape::arc_tdot(int a) {
  Node n;
  n.op = Op::ArcTdot;
  n.a = a;
  n.value = value(a).unaryExpr([](double c) { return arccos_tdot(c); });
  return push(std::move(n));
}

int Tape::row_sqnorm(int a) {
  Node n;
  n.op = Op::RowSqNorm;
  n.a = a;
  n.value = value(a).rowwise().squaredNorm();
  return push(std::move(n));
}

int Tape::broadcast_col(int a, Index cols) {
  require(value(a).cols() == 1, "tape: broadcast_col needs a column vector");
  Node n;
  n.op = Op::BroadcastCol;
  n.a = a;
  n.value = value(a).replicate(1, cols);
  return push(std::move(n));
}

int Tape::broadcast_row(int a, Index rows) {
  require(value(a).rows() == 1, "tape: broadcast_row needs a row vector");
  Node n;
  n.op = Op::BroadcastRow;
  n.a = a;
  n.value = value(a).replicate(rows, 1);
  return push(std::move(n));
}

int Tape::add_scaled_identity(int a, int s) {
  const Mat& A = value(a);
  require(A.rows() == A.cols(), "tape: add_scaled_identity needs a square matrix");
  require(value(s).size() == 1, "tape: identity scale must be 1x1");
  Node n;
  n.op = Op::AddScaledIdentity;
  n.a = a;
  n.b = s;
  n.value = A;
  n.value.diagonal().array() += value(s)(0, 0);
  return push(std::move(n));
}

int Tape::sym_solve(int s, int b) {
  const Mat& S = value(s);
  require(S.rows() == S.cols(), "tape: sym_solve needs a square system");
  require(S.rows() == value(b).rows(), "tape: sym_solve dimension mismatch");
  Node n;
  n.op = Op::SymSolve;
  n.a = s;
  n.b = b;
  // The op is defined as solving with the symmetric part, which makes the
  // symmetrized adjoint exact under arbitrary (asymmetric) perturbations.
  n.factor = std::make_shared<Eigen::LDLT<Mat>>(0.5 * (S + S.transpose()));
  if (n.factor->info() != Eigen::Success)
    throw NumericError("tape: symmetric-solve factorization failed");
  n.value = n.factor->solve(value(b));
  return push(std::move(n));
}

int Tape::trace(int a) {
  const Mat& A = value(a);
  require(A.rows() == A.cols(), "tape: trace needs a square matrix");
  Node n;
  n.op = Op::Trace;
  n.a = a;
  n.value = Mat::Constant(1, 1, A.trace());
  return push(std::move(n));
}

int Tape::sq_frob(int a) {
  Node n;
  n.op = Op::SqFrob;
  n.a = a;
  n.value = Mat::Constant(1, 1, value(a).squaredNorm());
  return push(std::move(n));
}

int Tape::softmax_xent(int logits, Mat targets) {
  const Mat& Z = value(logits);
  check_same_shape(Z, targets, "softmax_xent");
  Node n;
  n.op = Op::SoftmaxXent;
  n.a = logits;
  // Row-wise stable softmax, cached for the backward pass.
  Mat P = Z;
  double loss = 0.0;
  for (Index i = 0; i < Z.rows(); ++i) {
    const double m = Z.row(i).maxCoeff();
    P.row(i) = (Z.row(i).array() - m).exp();
    const double denom = P.row(i).sum();
    P.row(i) /= denom;
    for (Index j = 0; j < Z.cols(); ++j)
      if (targets(i, j) != 0.0)
        loss -= targets(i, j) * (Z(i, j) - m - std::log(denom));
  }
  n.value = Mat::Constant(1, 1, loss / static_cast<double>(Z.rows()));
  n.payload = P - targets;  // d(loss)/d(logits) * n
  return push(std::move(n));
}

void Tape::accumulate(int id, const Mat& g) {
  if (id < 0) return;
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return;
  if (n.adjoint.size() == 0) n.adjoint = Mat::Zero(n.value.rows(), n.value.cols());
  n.adjoint += g;
}

void Tape::backward(int loss_id) {
  Node& loss = nodes_[static_cast<std::size_t>(loss_id)];
  require(loss.value.size() == 1, "tape: backward seed must be scalar");
  for (Node& n : nodes_) n.adjoint.resize(0, 0);
  loss.adjoint = Mat::Constant(1, 1, 1.0);

  const auto needs = [&](int id) {
    return id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad;
  };
  for (int id = loss_id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.adjoint.size() == 0) continue;
    const Mat& g = n.adjoint;
    if (!g.allFinite())
      throw NumericError(std::string("tape: non-finite adjoint at op '") +
                         op_name(n.op) + "'");
    switch (n.op) {
      case Op::Leaf:
      case Op::Constant:
        break;
      case Op::MatMul:
        if (needs(n.a)) accumulate(n.a, g * value(n.b).transpose());
        if (needs(n.b)) accumulate(n.b, value(n.a).transpose() * g);
        break;
      case Op::Transpose:
        accumulate(n.a, g.transpose());
        break;
      case Op::Add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::Sub:
        accumulate(n.a, g);
        accumulate(n.b, -g);
        break;
      case Op::Scale:
        accumulate(n.a, n.s * g);
        break;
      case Op::AddScalar:
        accumulate(n.a, g);
        break;
      case Op::Hadamard:
        if (needs(n.a)) accumulate(n.a, g.cwiseProduct(value(n.b)));
        if (needs(n.b)) accumulate(n.b, g.cwiseProduct(value(n.a)));
        break;
      case Op::CDiv:
        if (needs(n.a)) accumulate(n.a, g.cwiseQuotient(value(n.b)));
        if (needs(n.b)) accumulate(n.b, -g.cwiseProduct(n.value).cwiseQuotient(value(n.b)));
        break;
      case Op::Exp:
        accumulate(n.a, g.cwiseProduct(n.value));
        break;
      case Op::Sqrt:
        // d sqrt(u) = 1/(2 sqrt(u)); zero subgradient at u = 0
        accumulate(n.a, g.binaryExpr(n.value, [](double gv, double sv) {
          return sv > 0.0 ? gv / (2.0 * sv) : 0.0;
        }));
        break;
      case Op::Acos:
        // -1/sqrt(1-c^2), zeroed at the post-clamp boundary
        accumulate(n.a, g.binaryExpr(value(n.a), [](double gv, double c) {
          if (std::abs(c) >= 1.0 - kBoundaryGuard) return 0.0;
          return -gv / std::sqrt(1.0 - c * c);
        }));
        break;
      case Op::ClampUnit:
        accumulate(n.a, g.binaryExpr(value(n.a), [](double gv, double a) {
          return std::abs(a) < 1.0 ? gv : 0.0;
        }));
        break;
      case Op::Relu:
        accumulate(n.a, g.binaryExpr(value(n.a), [](double gv, double a) {
          return a > 0.0 ? gv : 0.0;
        }));
        break;
      case Op::ArcT:
        // T'(c) = Tdot(c) exactly; bounded on [-1, 1]
        accumulate(n.a, g.binaryExpr(value(n.a), [](double gv, double c) {
          return gv * arccos_tdot(c);
        }));
        break;
      case Op::ArcTdot:
        // Tdot'(c) = 1/(pi sqrt(1-c^2)), zeroed at the boundary
        accumulate(n.a, g.binaryExpr(value(n.a), [](double gv, double c) {
          if (std::abs(c) >= 1.0 - kBoundaryGuard) return 0.0;
          return gv / (M_PI * std::sqrt(1.0 - c * c));
        }));
        break;
      case Op::RowSqNorm:
        accumulate(n.a, 2.0 * value(n.a).cwiseProduct(g.replicate(1, value(n.a).cols())));
        break;
      case Op::BroadcastCol:
        accumulate(n.a, g.rowwise().sum());
        break;
      case Op::BroadcastRow:
        accumulate(n.a, g.colwise().sum());
        break;
      case Op::AddScaledIdentity: {
        accumulate(n.a, g);
        accumulate(n.b, Mat::Constant(1, 1, g.trace()));
        break;
      }
      case Op::SymSolve: {
        // x = S^-1 b:  b_adj += S^-1 g,  S_adj -= (S^-1 g) x^T symmetrized
        const Mat G = n.factor->solve(g);
        if (needs(n.b)) accumulate(n.b, G);
        if (needs(n.a)) {
          const Mat full = G * n.value.transpose();
          accumulate(n.a, -0.5 * (full + full.transpose()));
        }
        break;
      }
      case Op::Trace: {
        Mat d = Mat::Zero(value(n.a).rows(), value(n.a).cols());
        d.diagonal().array() = g(0, 0);
        accumulate(n.a, d);
        break;
      }
      case Op::SqFrob:
        accumulate(n.a, 2.0 * g(0, 0) * value(n.a));
        break;
      case Op::SoftmaxXent:
        accumulate(n.a, (g(0, 0) / static_cast<double>(n.payload.rows())) * n.payload);
        break;
    }
  }
}

int kernel_graph(Tape& tape, const KernelSpec& spec, int u, int v) {
  spec.validate();
  const Index d = tape.value(u).cols();
  require(tape.value(v).cols() == d, "kernel_graph: feature dimensions differ");

  switch (spec.family) {
    case KernelFamily::Linear:
      return tape.matmul(u, tape.transpose(v));
    case KernelFamily::Rbf: {
      const Index a = tape.value(u).rows();
      const Index b = tape.value(v).rows();
      const int g = tape.matmul(u, tape.transpose(v));
      const int ru = tape.broadcast_col(tape.row_sqnorm(u), b);
      const int rv = tape.broadcast_row(tape.transpose(tape.row_sqnorm(v)), a);
      const int dist = tape.sub(tape.add(ru, rv), tape.scale(g, 2.0));
      return tape.exp(tape.scale(dist, -spec.gamma / static_cast<double>(d)));
    }
    case KernelFamily::Fc: {
      const double sw2 = spec.sigma_w2;
      const double sb2 = spec.sigma_b2;
      const double inv_d = 1.0 / static_cast<double>(d);
      int cross = tape.add_scalar(
          tape.scale(tape.matmul(u, tape.transpose(v)), sw2 * inv_d), sb2);
      int du = tape.add_scalar(tape.scale(tape.row_sqnorm(u), sw2 * inv_d), sb2);
      int dv = v == u ? du
                      : tape.add_scalar(tape.scale(tape.row_sqnorm(v), sw2 * inv_d), sb2);
      int theta = cross;
      const Index a = tape.value(u).rows();
      for (int layer = 0; layer < spec.depth; ++layer) {
        const int denom = tape.sqrt(tape.matmul(du, tape.transpose(dv)));
        const int c = tape.clamp_unit(tape.cdiv(cross, denom));
        const int sigma = tape.add_scalar(
            tape.scale(tape.hadamard(denom, tape.arc_t(c)), sw2), sb2);
        if (spec.mode == FcMode::Ntk)
          theta = tape.add(sigma, tape.scale(tape.hadamard(tape.arc_tdot(c), theta), sw2));
        cross = sigma;
        du = tape.add_scalar(tape.scale(du, sw2), sb2);
        dv = v == u ? du : tape.add_scalar(tape.scale(dv, sw2), sb2);
      }
      (void)a;
      return spec.mode == FcMode::Ntk ? theta : cross;
    }
  }
  throw ArgumentError("kernel_graph: unknown family");
}

int kip_loss_graph(Tape& tape, const KernelSpec& spec, int xs, int ys,
                   const Mat& X_t, const Mat& y_t, double lambda, RegMode mode) {
  require(lambda >= 0, "lambda must be nonnegative");
  const int xt = tape.constant(X_t);
  const int yt = tape.constant(y_t);
  const int k_ts = kernel_graph(tape, spec, xt, xs);
  const int k_ss = kernel_graph(tape, spec, xs, xs);

  int lam;
  if (mode == RegMode::ScaleInvariant) {
    // lambda_eff = lambda * tr(K_ss) / n_s; part of the differentiated graph
    lam = tape.scale(tape.trace(k_ss),
                     lambda / static_cast<double>(tape.value(xs).rows()));
  } else {
    lam = tape.scalar_constant(lambda);
  }
  const int system = tape.add_scaled_identity(k_ss, lam);
  const int alpha = tape.sym_solve(system, ys);
  const int pred = tape.matmul(k_ts, alpha);
  const int resid = tape.sub(yt, pred);
  return tape.scale(tape.sq_frob(resid), 0.5);
}

KipGradients grad_kip_loss(const Mat& X_s, const Mat& y_s, const Mat& X_t,
                           const Mat& y_t, const KernelSpec& kernel,
                           double lambda, RegMode mode, GradWrt wrt,
                           const CorruptionMask* mask) {
  Tape tape;
  const int xs = wrt == GradWrt::Ys ? tape.constant(X_s) : tape.leaf(X_s);
  const int ys = wrt == GradWrt::Xs ? tape.constant(y_s) : tape.leaf(y_s);
  const int loss = kip_loss_graph(tape, kernel, xs, ys, X_t, y_t, lambda, mode);
  if (!std::isfinite(tape.value(loss)(0, 0)))
    throw NumericError("kip loss is not finite at this point");
  tape.backward(loss);

  KipGradients out;
  out.loss = tape.value(loss)(0, 0);
  if (wrt == GradWrt::Xs || wrt == GradWrt::Both) {
    out.d_xs = tape.adjoint(xs).size() ? tape.adjoint(xs)
                                       : Mat::Zero(X_s.rows(), X_s.cols());
    if (mask != nullptr) {
      require(mask->frozen.rows() == X_s.rows() && mask->frozen.cols() == X_s.cols(),
              "corruption mask shape does not match support set");
      out.d_xs = mask->frozen.select(0.0, out.d_xs.array()).matrix();
    }
    if (!out.d_xs.allFinite())
      throw NumericError("non-finite gradient wrt X_s");
  }
  if (wrt == GradWrt::Ys || wrt == GradWrt::Both) {
    out.d_ys = tape.adjoint(ys).size() ? tape.adjoint(ys)
                                       : Mat::Zero(y_s.rows(), y_s.cols());
    if (!out.d_ys.allFinite())
      throw NumericError("non-finite gradient wrt y_s");
  }
  return out;
}

double grad_check(const std::function<double(const Mat&)>& f, const Mat& analytic,
                  const Mat& point, double h) {
  require(analytic.rows() == point.rows() && analytic.cols() == point.cols(),
          "grad_check: gradient/point shape mismatch");
  Mat fd(point.rows(), point.cols());
  Mat p = point;
  for (Index j = 0; j < point.cols(); ++j) {
    for (Index i = 0; i < point.rows(); ++i) {
      const double orig = p(i, j);
      p(i, j) = orig + h;
      const double up = f(p);
      p(i, j) = orig - h;
      const double down = f(p);
      p(i, j) = orig;
      fd(i, j) = (up - down) / (2.0 * h);
    }
  }
  const double scale =
      std::max({analytic.cwiseAbs().maxCoeff(), fd.cwiseAbs().maxCoeff(), 1e-12});
  double worst = 0.0;
  for (Index j = 0; j < point.cols(); ++j) {
    for (Index i = 0; i < point.rows(); ++i) {
      const double a = analytic(i, j);
      const double b = fd(i, j);
      if (std::abs(a) < 1e-6 * scale && std::abs(b) < 1e-6 * scale) continue;
      worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a), std::abs(b)));
    }
  }
  return worst;
}

}  // namespace kip::ad
