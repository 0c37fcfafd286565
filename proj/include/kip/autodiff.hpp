#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kip/common.hpp"
#include "kip/dataset.hpp"
#include "kip/kernels.hpp"
#include "kip/krr.hpp"

namespace kip::ad {

enum class Op {
  Leaf,
  Constant,
  MatMul,
  Transpose,
  Add,
  Sub,
  Scale,
  AddScalar,
  Hadamard,
  CDiv,
  Exp,
  Sqrt,
  Acos,
  ClampUnit,
  Relu,
  ArcT,      // T(c) = (sqrt(1-c^2) + (pi - acos c) c) / pi, exact derivative Tdot(c)
  ArcTdot,   // Tdot(c) = (pi - acos c) / pi, derivative guarded at |c| >= 1 - 1e-9
  RowSqNorm,
  BroadcastCol,
  BroadcastRow,
  AddScaledIdentity,
  SymSolve,
  Trace,
  SqFrob,
  SoftmaxXent,
};

const char* op_name(Op op);

// Append-only reverse-mode tape over dense matrices. Nodes are created in
// topological order with eagerly computed forward values; backward() fills
// adjoints for every node reachable from a trainable leaf.
class Tape {
 public:
  int leaf(Mat value);
  int constant(Mat value);
  int scalar_constant(double v);

  int matmul(int a, int b);
  int transpose(int a);
  int add(int a, int b);
  int sub(int a, int b);
  int scale(int a, double s);
  int add_scalar(int a, double s);
  int hadamard(int a, int b);
  int cdiv(int a, int b);
  int exp(int a);
  int sqrt(int a);
  int acos(int a);
  int clamp_unit(int a);
  int relu(int a);
  int arc_t(int a);
  int arc_tdot(int a);
  int row_sqnorm(int a);
  int broadcast_col(int a, Index cols);
  int broadcast_row(int a, Index rows);
  int add_scaled_identity(int a, int s);
  int sym_solve(int s, int b);
  int trace(int a);
  int sq_frob(int a);
  // Mean softmax cross-entropy of logits against fixed one-hot rows.
  int softmax_xent(int logits, Mat targets);

  const Mat& value(int id) const;
  const Mat& adjoint(int id) const;
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss) = 1 (loss must be 1x1) and sweeps in reverse order.
  // Throws NumericError naming the first op that produced a non-finite
  // adjoint.
  void backward(int loss_id);

 private:
  struct Node {
    Op op = Op::Leaf;
    int a = -1, b = -1;
    double s = 0.0;
    Mat value;
    Mat adjoint;
    bool needs_grad = false;
    std::shared_ptr<Eigen::LDLT<Mat>> factor;  // SymSolve
    Mat payload;                               // SoftmaxXent targets / cache
  };

  int push(Node n);
  void accumulate(int id, const Mat& g);

  std::vector<Node> nodes_;
};

// Kernel-matrix subgraph K(U_i, V_j); u and v may be the same node.
int kernel_graph(Tape& tape, const KernelSpec& spec, int u, int v);

// Full KIP objective subgraph, including the trace term of the
// scale-invariant regularizer (the loss is differentiated as computed).
int kip_loss_graph(Tape& tape, const KernelSpec& spec, int xs, int ys,
                   const Mat& X_t, const Mat& y_t, double lambda, RegMode mode);

enum class GradWrt { Xs, Ys, Both };

struct KipGradients {
  double loss = 0.0;
  Mat d_xs;  // empty unless requested
  Mat d_ys;
};

// Reverse-mode gradients of kip_loss; entries at mask-frozen coordinates of
// d_xs are zeroed.
KipGradients grad_kip_loss(const Mat& X_s, const Mat& y_s, const Mat& X_t,
                           const Mat& y_t, const KernelSpec& kernel,
                           double lambda, RegMode mode, GradWrt wrt,
                           const CorruptionMask* mask = nullptr);

// Central-difference check: worst relative disagreement between `analytic`
// and the finite-difference gradient of f at `point`. Coordinates where both
// are below 1e-6 of the gradient scale are treated as agreeing.
double grad_check(const std::function<double(const Mat&)>& f, const Mat& analytic,
                  const Mat& point, double h);

}  // namespace kip::ad
