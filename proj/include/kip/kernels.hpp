#pragma once

#include <string>
#include <vector>

#include "kip/common.hpp"

namespace kip {

enum class KernelFamily { Linear, Rbf, Fc };
enum class FcMode { Ntk, Nngp };

// Declarative kernel description.
//   linear:  K(x, x') = x . x'
//   rbf:     K(x, x') = exp(-gamma * |x - x'|^2 / d)
//   fc:      depth-m fully-connected ReLU NTK/NNGP closed form
struct KernelSpec {
  KernelFamily family = KernelFamily::Rbf;
  int depth = 1;             // fc only, number of hidden layers
  double gamma = 1.0;        // rbf only
  double sigma_w2 = 2.0;     // fc weight variance
  double sigma_b2 = 1e-4;    // fc bias variance
  FcMode mode = FcMode::Ntk; // fc only

  void validate() const;
  std::string to_string() const;
};

KernelSpec linear_kernel();
KernelSpec rbf_kernel(double gamma = 1.0);
KernelSpec fc_kernel_spec(int depth, FcMode mode = FcMode::Ntk,
                          double sigma_w2 = 2.0, double sigma_b2 = 1e-4);

// Parses "linear", "rbf", "rbf:gamma=0.5", "fc2", "fc3-nngp", "fc1:sw2=2,sb2=1e-4".
KernelSpec parse_kernel(const std::string& text);
std::vector<KernelSpec> parse_kernel_list(const std::string& csv);

// Dense kernel matrix with entries K(U_i, V_j). When U and V alias the same
// storage the result is exactly symmetric and the diagonal follows the exact
// closed form (for the fc family, the affine diagonal recursion).
Mat kernel_matrix(const KernelSpec& spec, const Mat& U, const Mat& V);

// Arc-cosine helpers shared with the autodiff graph.
//   T(c)    = (sqrt(1-c^2) + (pi - acos c) * c) / pi     (NNGP factor)
//   Tdot(c) = (pi - acos c) / pi                          (derivative kernel)
double arccos_t(double c);
double arccos_tdot(double c);

// Monte-Carlo estimate of the fc kernel from finite random networks:
// NTK-parameterized ReLU MLPs with sqrt(2)-scaled activations, weight variance
// sigma_w2 / fan_in and bias variance sigma_b2. Returns the sample mean and
// the standard error of the mean per entry. nngp averages f(u) f(v); ntk
// averages parameter-gradient inner products <grad f(u), grad f(v)>.
struct McKernelEstimate {
  Mat mean;
  Mat se;  // standard error of the mean
};
McKernelEstimate mc_kernel_oracle(const KernelSpec& spec, const Mat& U,
                                  const Mat& V, Index width, Index samples,
                                  Rng& rng);

}  // namespace kip
