#include "kip/kernels.hpp"

#include <cmath>
#include <sstream>

namespace kip {

void KernelSpec::validate() const {
  require(gamma > 0, "kernel: gamma must be positive");
  require(sigma_w2 > 0, "kernel: sigma_w2 must be positive");
  require(sigma_b2 >= 0, "kernel: sigma_b2 must be nonnegative");
  require(depth >= 1, "kernel: depth must be at least 1");
}

std::string KernelSpec::to_string() const {
  std::ostringstream os;
  switch (family) {
    case KernelFamily::Linear:
      os << "linear";
      break;
    case KernelFamily::Rbf:
      os << "rbf";
      if (gamma != 1.0) os << ":gamma=" << gamma;
      break;
    case KernelFamily::Fc:
      os << "fc" << depth;
      if (mode == FcMode::Nngp) os << "-nngp";
      if (sigma_w2 != 2.0 || sigma_b2 != 1e-4)
        os << ":sw2=" << sigma_w2 << ",sb2=" << sigma_b2;
      break;
  }
  return os.str();
}

KernelSpec linear_kernel() {
  KernelSpec s;
  s.family = KernelFamily::Linear;
  return s;
}

KernelSpec rbf_kernel(double gamma) {
  KernelSpec s;
  s.family = KernelFamily::Rbf;
  s.gamma = gamma;
  return s;
}

KernelSpec fc_kernel_spec(int depth, FcMode mode, double sigma_w2, double sigma_b2) {
  KernelSpec s;
  s.family = KernelFamily::Fc;
  s.depth = depth;
  s.mode = mode;
  s.sigma_w2 = sigma_w2;
  s.sigma_b2 = sigma_b2;
  s.validate();
  return s;
}

namespace {

double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ArgumentError("kernel spec: bad numeric value for " + what + ": " + text);
  }
}

}  // namespace

KernelSpec parse_kernel(const std::string& text) {
  std::string head = text;
  std::string params;
  if (const auto colon = text.find(':'); colon != std::string::npos) {
    head = text.substr(0, colon);
    params = text.substr(colon + 1);
  }

  KernelSpec spec;
  if (head == "linear") {
    spec = linear_kernel();
  } else if (head == "rbf") {
    spec = rbf_kernel();
  } else if (head.rfind("fc", 0) == 0) {
    std::string rest = head.substr(2);
    FcMode mode = FcMode::Ntk;
    if (const auto dash = rest.find('-'); dash != std::string::npos) {
      const std::string m = rest.substr(dash + 1);
      if (m == "ntk")
        mode = FcMode::Ntk;
      else if (m == "nngp")
        mode = FcMode::Nngp;
      else
        throw ArgumentError("kernel spec: unknown fc mode '" + m + "'");
      rest = rest.substr(0, dash);
    }
    if (rest.empty()) throw ArgumentError("kernel spec: fc needs a depth, e.g. fc2");
    int depth = 0;
    try {
      depth = std::stoi(rest);
    } catch (const std::exception&) {
      throw ArgumentError("kernel spec: bad fc depth '" + rest + "'");
    }
    spec = fc_kernel_spec(depth, mode);
  } else {
    throw ArgumentError("unknown kernel '" + head + "'");
  }

  std::stringstream ss(params);
  std::string kv;
  while (std::getline(ss, kv, ',')) {
    if (kv.empty()) continue;
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ArgumentError("kernel spec: expected key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    if (key == "gamma")
      spec.gamma = parse_double(val, key);
    else if (key == "sw2")
      spec.sigma_w2 = parse_double(val, key);
    else if (key == "sb2")
      spec.sigma_b2 = parse_double(val, key);
    else
      throw ArgumentError("kernel spec: unknown parameter '" + key + "'");
  }
  spec.validate();
  return spec;
}

std::vector<KernelSpec> parse_kernel_list(const std::string& csv) {
  std::vector<KernelSpec> specs;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    // Parameterized specs contain commas inside the parameter list; re-join
    // fragments that carry '=' without a kernel head.
    if (!specs.empty() && item.find('=') != std::string::npos &&
        item.find(':') == std::string::npos && item.rfind("fc", 0) != 0 &&
        item != "rbf" && item != "linear") {
      // belongs to the previous spec's parameter list
      throw ArgumentError(
          "kernel list: parameterized specs must be passed one per --kernel flag");
    }
    if (!item.empty()) specs.push_back(parse_kernel(item));
  }
  require(!specs.empty(), "kernel list is empty");
  return specs;
}

// A cosine within one ulp of +-1 is a coincident/antipodal pair whose ratio
// picked up roundoff; acos would amplify that ulp to ~1e-8, so snap first.
namespace {
double snap_unit(double c) {
  if (c >= 1.0 - 1e-12) return 1.0;
  if (c <= -1.0 + 1e-12) return -1.0;
  return c;
}
}  // namespace

double arccos_t(double c) {
  c = snap_unit(std::clamp(c, -1.0, 1.0));
  if (c == 1.0) return 1.0;
  if (c == -1.0) return 0.0;
  return (std::sqrt(1.0 - c * c) + (M_PI - std::acos(c)) * c) / M_PI;
}

double arccos_tdot(double c) {
  c = snap_unit(std::clamp(c, -1.0, 1.0));
  if (c == 1.0) return 1.0;
  if (c == -1.0) return 0.0;
  return (M_PI - std::acos(c)) / M_PI;
}

namespace {

Mat gram(const Mat& U, const Mat& V, bool self) {
  if (self) {
    Mat K = Mat::Zero(U.rows(), U.rows());
    K.selfadjointView<Eigen::Lower>().rankUpdate(U);
    K.triangularView<Eigen::Upper>() = K.transpose();
    return K;
  }
  return U * V.transpose();
}

Mat rbf_matrix(const KernelSpec& spec, const Mat& U, const Mat& V, bool self) {
  const double scale = spec.gamma / static_cast<double>(U.cols());
  const Vec ru = U.rowwise().squaredNorm();
  const Vec rv = self ? ru : V.rowwise().squaredNorm();
  Mat K = gram(U, V, self);
  K = (-scale *
       ((ru.replicate(1, K.cols()) + rv.transpose().replicate(K.rows(), 1)) - 2.0 * K))
          .array()
          .exp();
  if (self) K.diagonal().setOnes();
  return K;
}

Mat fc_matrix(const KernelSpec& spec, const Mat& U, const Mat& V, bool self) {
  const double sw2 = spec.sigma_w2;
  const double sb2 = spec.sigma_b2;
  const double inv_d = 1.0 / static_cast<double>(U.cols());

  Mat cross = sw2 * inv_d * gram(U, V, self);
  cross.array() += sb2;
  Vec du = (sw2 * inv_d) * U.rowwise().squaredNorm();
  du.array() += sb2;
  Vec dv;
  if (!self) {
    dv = (sw2 * inv_d) * V.rowwise().squaredNorm();
    dv.array() += sb2;
  }
  const Vec* dvp = self ? &du : &dv;

  Mat theta = cross;
  for (int layer = 0; layer < spec.depth; ++layer) {
    for (Index j = 0; j < cross.cols(); ++j) {
      const double dj = (*dvp)[j];
      for (Index i = 0; i < cross.rows(); ++i) {
        const double denom = std::sqrt(du[i] * dj);
        const double c = denom > 0 ? std::clamp(cross(i, j) / denom, -1.0, 1.0) : 0.0;
        const double sigma = sw2 * denom * arccos_t(c) + sb2;
        if (spec.mode == FcMode::Ntk)
          theta(i, j) = sigma + sw2 * arccos_tdot(c) * theta(i, j);
        cross(i, j) = sigma;
      }
    }
    // The diagonal recursion is affine and exact.
    du = sw2 * du;
    du.array() += sb2;
    if (!self) {
      dv = sw2 * dv;
      dv.array() += sb2;
    }
  }

  Mat K = spec.mode == FcMode::Ntk ? std::move(theta) : std::move(cross);
  if (self) {
    // Diagonal from the exact recursion: Sigma^m(x,x); for NTK additionally
    // Theta^m(x,x) = sum of the remaining Sigma levels scaled by sw2 powers.
    Vec diag_sigma = (sw2 * inv_d) * U.rowwise().squaredNorm();
    diag_sigma.array() += sb2;
    Vec diag_theta = diag_sigma;
    for (int layer = 0; layer < spec.depth; ++layer) {
      diag_sigma = sw2 * diag_sigma;
      diag_sigma.array() += sb2;
      diag_theta = diag_sigma + sw2 * diag_theta;
    }
    K.diagonal() = spec.mode == FcMode::Ntk ? diag_theta : diag_sigma;
  }
  if (!K.allFinite()) throw NumericError("fc kernel produced non-finite values");
  return K;
}

}  // namespace

Mat kernel_matrix(const KernelSpec& spec, const Mat& U, const Mat& V) {
  spec.validate();
  require(U.cols() == V.cols(), "kernel_matrix: feature dimensions differ");
  require(U.rows() > 0 && V.rows() > 0, "kernel_matrix: empty input");
  const bool self = U.data() == V.data() && U.rows() == V.rows();

  switch (spec.family) {
    case KernelFamily::Linear:
      return gram(U, V, self);
    case KernelFamily::Rbf:
      return rbf_matrix(spec, U, V, self);
    case KernelFamily::Fc:
      return fc_matrix(spec, U, V, self);
  }
  throw ArgumentError("kernel_matrix: unknown family");
}

namespace {

// One random NTK-parameterized ReLU MLP; accumulates the NNGP and NTK
// contributions of this draw for all rows of U against all rows of V.
struct McNet {
  std::vector<Mat> weights;  // fan_in x fan_out, N(0,1) entries
  std::vector<Vec> biases;   // fan_out, N(0,1) entries
};

void mc_accumulate(const KernelSpec& spec, const Mat& U, const Mat& V,
                   Index width, Rng& rng, Mat& nngp, Mat& ntk) {
  const Index d = U.cols();
  const int depth = spec.depth;
  const double sw = std::sqrt(spec.sigma_w2);
  const double sb = std::sqrt(spec.sigma_b2);
  std::normal_distribution<double> normal(0.0, 1.0);

  McNet net;
  std::vector<Index> fan{d};
  for (int l = 0; l < depth; ++l) fan.push_back(width);
  fan.push_back(1);
  for (std::size_t l = 0; l + 1 < fan.size(); ++l) {
    Mat W(fan[l], fan[l + 1]);
    for (Index i = 0; i < W.size(); ++i) W.data()[i] = normal(rng);
    Vec b(fan[l + 1]);
    for (Index i = 0; i < b.size(); ++i) b[i] = normal(rng);
    net.weights.push_back(std::move(W));
    net.biases.push_back(std::move(b));
  }

  auto forward = [&](const Mat& X, std::vector<Mat>& acts, std::vector<Mat>& pres) {
    acts.clear();
    pres.clear();
    acts.push_back(X);
    Mat h = X;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      const double scale = sw / std::sqrt(static_cast<double>(net.weights[l].rows()));
      h = scale * (h * net.weights[l]);
      h.rowwise() += sb * net.biases[l].transpose();
      pres.push_back(h);
      if (l + 1 < net.weights.size()) {
        h = std::sqrt(2.0) * h.cwiseMax(0.0);  // sqrt(2)-scaled ReLU
        acts.push_back(h);
      }
    }
  };

  std::vector<Mat> actsU, presU, actsV, presV;
  forward(U, actsU, presU);
  forward(V, actsV, presV);
  const Vec fu = presU.back().col(0);
  const Vec fv = presV.back().col(0);
  nngp += fu * fv.transpose();

  // NTK contribution: sum over layers of
  //   scale_l^2 (a_{l-1}(u) . a_{l-1}(v)) (delta_l(u) . delta_l(v))
  //   + sb^2 (delta_l(u) . delta_l(v))
  // where delta_l is the backprop signal at preactivation l.
  Mat deltaU = Mat::Ones(U.rows(), 1);
  Mat deltaV = Mat::Ones(V.rows(), 1);
  for (int l = static_cast<int>(net.weights.size()) - 1; l >= 0; --l) {
    const double scale = sw / std::sqrt(static_cast<double>(net.weights[static_cast<std::size_t>(l)].rows()));
    const Mat dd = deltaU * deltaV.transpose();
    const Mat aa = actsU[static_cast<std::size_t>(l)] * actsV[static_cast<std::size_t>(l)].transpose();
    ntk += (scale * scale) * dd.cwiseProduct(aa) + (sb * sb) * dd;
    if (l > 0) {
      // push through the activation and the linear layer
      Mat gU = (scale * (deltaU * net.weights[static_cast<std::size_t>(l)].transpose()));
      Mat gV = (scale * (deltaV * net.weights[static_cast<std::size_t>(l)].transpose()));
      deltaU = std::sqrt(2.0) *
               gU.cwiseProduct((presU[static_cast<std::size_t>(l) - 1].array() > 0.0).cast<double>().matrix());
      deltaV = std::sqrt(2.0) *
               gV.cwiseProduct((presV[static_cast<std::size_t>(l) - 1].array() > 0.0).cast<double>().matrix());
    }
  }
}

}  // namespace

McKernelEstimate mc_kernel_oracle(const KernelSpec& spec, const Mat& U,
                                  const Mat& V, Index width, Index samples,
                                  Rng& rng) {
  require(spec.family == KernelFamily::Fc, "mc_kernel_oracle: fc kernels only");
  require(width >= 1 && samples >= 2, "mc_kernel_oracle: need width >= 1, samples >= 2");
  spec.validate();

  Mat sum = Mat::Zero(U.rows(), V.rows());
  Mat sumsq = Mat::Zero(U.rows(), V.rows());
  for (Index s = 0; s < samples; ++s) {
    Mat nngp = Mat::Zero(U.rows(), V.rows());
    Mat ntk = Mat::Zero(U.rows(), V.rows());
    mc_accumulate(spec, U, V, width, rng, nngp, ntk);
    const Mat& draw = spec.mode == FcMode::Ntk ? ntk : nngp;
    sum += draw;
    sumsq += draw.cwiseProduct(draw);
  }
  McKernelEstimate est;
  const double n = static_cast<double>(samples);
  est.mean = sum / n;
  Mat var = (sumsq - n * est.mean.cwiseProduct(est.mean)) / (n - 1.0);
  est.se = (var.cwiseMax(0.0) / n).cwiseSqrt();
  return est;
}

}  // namespace kip
