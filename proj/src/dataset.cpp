#include "kip/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace kip {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  return buf;
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in,
                                 const std::string& path) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
    throw FormatError("zlib init failed: " + path);
  std::vector<std::uint8_t> out;
  out.reserve(in.size() * 4);
  std::array<std::uint8_t, 1 << 16> chunk;
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int ret = Z_OK;
  do {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("corrupt gzip stream: " + path);
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
  } while (ret != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

}  // namespace

Index CorruptionMask::frozen_per_row() const {
  if (frozen.rows() == 0) return 0;
  return frozen.row(0).count();
}

IdxData load_idx(const std::string& path) {
  std::vector<std::uint8_t> raw = read_file(path);
  if (raw.size() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b) raw = gunzip(raw, path);
  if (raw.size() < 4) throw FormatError("truncated IDX header: " + path);

  const std::uint32_t magic = read_be32(raw.data());
  int ndim = 0;
  if (magic == 0x00000803) {
    ndim = 3;
  } else if (magic == 0x00000801) {
    ndim = 1;
  } else {
    std::ostringstream os;
    os << "bad IDX magic 0x" << std::hex << magic << " in " << path;
    throw FormatError(os.str());
  }
  if (raw.size() < 4 + 4 * static_cast<std::size_t>(ndim))
    throw FormatError("truncated IDX dimensions: " + path);

  IdxData out;
  std::size_t total = 1;
  for (int i = 0; i < ndim; ++i) {
    const std::uint32_t dim = read_be32(raw.data() + 4 + 4 * i);
    if (dim == 0 || total > SIZE_MAX / dim)
      throw FormatError("IDX dimension overflow: " + path);
    total *= dim;
    out.shape.push_back(static_cast<Index>(dim));
  }
  const std::size_t offset = 4 + 4 * static_cast<std::size_t>(ndim);
  if (raw.size() < offset + total)
    throw FormatError("truncated IDX payload: " + path);
  out.data.assign(raw.begin() + offset, raw.begin() + offset + total);
  return out;
}

namespace {

std::string find_idx(const std::string& dir, const std::string& base) {
  namespace fs = std::filesystem;
  for (const char* suffix : {"", ".gz"}) {
    const std::string p = (fs::path(dir) / (base + suffix)).string();
    if (fs::exists(p)) return p;
  }
  throw FormatError("MNIST file not found: " + base + "[.gz] under " + dir);
}

Dataset make_image_dataset(const IdxData& images, const IdxData& labels) {
  if (images.shape.size() != 3 || labels.shape.size() != 1)
    throw FormatError("unexpected IDX ranks for image/label pair");
  const Index n = images.shape[0];
  if (labels.shape[0] != n) throw FormatError("image/label counts differ");
  const Index d = images.shape[1] * images.shape[2];

  Dataset ds;
  ds.X.resize(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j)
      ds.X(i, j) = static_cast<double>(images.data[i * d + j]) / 255.0;
  ds.labels.resize(n);
  int max_label = 0;
  for (Index i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<int>(labels.data[i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = max_label + 1;
  ds.y = one_hot_centered(ds.labels, ds.num_classes);
  return ds;
}

}  // namespace

TrainTestSplit load_mnist(const std::string& dir) {
  TrainTestSplit split;
  split.train = make_image_dataset(load_idx(find_idx(dir, "train-images-idx3-ubyte")),
                                   load_idx(find_idx(dir, "train-labels-idx1-ubyte")));
  split.test = make_image_dataset(load_idx(find_idx(dir, "t10k-images-idx3-ubyte")),
                                  load_idx(find_idx(dir, "t10k-labels-idx1-ubyte")));
  split.test.num_classes = split.train.num_classes;
  return split;
}

Dataset load_csv(const std::string& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV: " + path);

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        fields.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("non-numeric CSV cell '" + cell + "' in " + path);
      }
    }
    if (fields.size() < 2) throw FormatError("CSV row with fewer than 2 columns");
    if (!rows.empty() && fields.size() != rows.front().size() + 1)
      throw FormatError("ragged CSV rows in " + path);
    const double lab = fields.back();
    if (lab != std::floor(lab) || lab < 0)
      throw FormatError("CSV label column must hold nonnegative integers");
    labels.push_back(static_cast<int>(lab));
    fields.pop_back();
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw FormatError("CSV has no data rows: " + path);

  Dataset ds;
  ds.X.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < ds.X.rows(); ++i)
    for (Index j = 0; j < ds.X.cols(); ++j) ds.X(i, j) = rows[i][j];
  ds.labels = std::move(labels);
  ds.num_classes = num_classes > 0
                       ? num_classes
                       : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  for (int lab : ds.labels)
    require(lab < ds.num_classes, "CSV label exceeds class count");
  ds.y = one_hot_centered(ds.labels, ds.num_classes);
  return ds;
}

Mat Standardizer::apply(const Mat& X, int channels) const {
  Mat out = X;
  for (Index j = 0; j < X.cols(); ++j) {
    const Index c = j % channels;
    out.col(j) = (X.col(j).array() - mean[c]) / std[c];
  }
  return out;
}

Standardizer standardize(Mat& X_train, std::vector<Mat*> others, int channels) {
  require(X_train.rows() >= 1, "standardize: empty training matrix");
  require(channels >= 1 && X_train.cols() % channels == 0,
          "standardize: column count not divisible by channel count");

  Standardizer s;
  s.mean = Vec::Zero(channels);
  s.std = Vec::Zero(channels);
  const Index per = X_train.cols() / channels;
  const double count = static_cast<double>(X_train.rows() * per);
  for (Index j = 0; j < X_train.cols(); ++j) s.mean[j % channels] += X_train.col(j).sum();
  s.mean /= count;
  for (Index j = 0; j < X_train.cols(); ++j)
    s.std[j % channels] += (X_train.col(j).array() - s.mean[j % channels]).square().sum();
  for (Index c = 0; c < channels; ++c) {
    s.std[c] = std::sqrt(s.std[c] / count);
    if (s.std[c] < 1e-12) s.std[c] = 1.0;  // degenerate channel: shift only
  }

  X_train = s.apply(X_train, channels);
  for (Mat* m : others) *m = s.apply(*m, channels);
  return s;
}

void zca_whiten(Mat& X_train, std::vector<Mat*> others, double eps) {
  require(eps > 0, "zca_whiten: eps must be positive");
  const Index n = X_train.rows();
  const Index d = X_train.cols();
  require(n >= 1, "zca_whiten: empty training matrix");

  const Eigen::RowVectorXd mu = X_train.colwise().mean();
  Mat centered = X_train.rowwise() - mu;
  Mat sigma = (centered.transpose() * centered) / static_cast<double>(n);
  if (!sigma.allFinite()) throw NumericError("zca_whiten: non-finite covariance");
  sigma.diagonal().array() += eps * sigma.trace() / static_cast<double>(d);

  Eigen::SelfAdjointEigenSolver<Mat> eig(sigma);
  if (eig.info() != Eigen::Success)
    throw NumericError("zca_whiten: eigendecomposition failed");
  const Vec inv_sqrt = eig.eigenvalues().array().max(0.0).rsqrt();
  Mat W = eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();

  X_train = centered * W;
  for (Mat* m : others) *m = (m->rowwise() - mu) * W;
}

Mat one_hot_centered(const std::vector<int>& labels, int num_classes) {
  require(num_classes >= 1, "one_hot_centered: need at least one class");
  Mat y = Mat::Constant(static_cast<Index>(labels.size()), num_classes,
                        -1.0 / num_classes);
  for (Index i = 0; i < y.rows(); ++i) {
    const int lab = labels[static_cast<std::size_t>(i)];
    require(lab >= 0 && lab < num_classes, "one_hot_centered: label out of range");
    y(i, lab) += 1.0;
  }
  return y;
}

std::vector<Index> class_balanced_indices(const std::vector<int>& labels,
                                          int num_classes, Index m, Rng& rng) {
  require(m >= 1, "class_balanced sample size must be positive");
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(num_classes));
  for (Index i = 0; i < static_cast<Index>(labels.size()); ++i)
    by_class[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);

  const Index base = m / num_classes;
  Index extra = m % num_classes;
  // Classes receiving the extra point are chosen by shuffling the class order.
  std::vector<int> order(static_cast<std::size_t>(num_classes));
  std::iota(order.begin(), order.end(), 0);
  if (extra > 0) std::shuffle(order.begin(), order.end(), rng);

  std::vector<Index> take(static_cast<std::size_t>(num_classes), base);
  for (Index i = 0; i < extra; ++i) take[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]++;

  std::vector<Index> picked;
  picked.reserve(static_cast<std::size_t>(m));
  for (int c = 0; c < num_classes; ++c) {
    auto& pool = by_class[static_cast<std::size_t>(c)];
    const Index want = take[static_cast<std::size_t>(c)];
    if (static_cast<Index>(pool.size()) < want)
      throw ArgumentError("class_balanced_sample: class " + std::to_string(c) +
                          " has only " + std::to_string(pool.size()) +
                          " points, need " + std::to_string(want));
    // Partial Fisher-Yates: the first `want` entries are a uniform sample.
    for (Index i = 0; i < want; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i),
                                                      pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng)]);
      picked.push_back(pool[static_cast<std::size_t>(i)]);
    }
  }
  return picked;
}

Dataset class_balanced_sample(const Dataset& d, Index m, Rng& rng) {
  const std::vector<Index> idx =
      class_balanced_indices(d.labels, d.num_classes, m, rng);
  Dataset out;
  out.X.resize(static_cast<Index>(idx.size()), d.X.cols());
  out.y.resize(static_cast<Index>(idx.size()), d.y.cols());
  out.labels.resize(idx.size());
  for (Index i = 0; i < static_cast<Index>(idx.size()); ++i) {
    out.X.row(i) = d.X.row(idx[static_cast<std::size_t>(i)]);
    out.y.row(i) = d.y.row(idx[static_cast<std::size_t>(i)]);
    out.labels[static_cast<std::size_t>(i)] = d.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
  }
  out.num_classes = d.num_classes;
  return out;
}

CorruptionMask make_corruption(Index n, Index d, double rho,
                               CorruptionScheme scheme, Rng& rng) {
  require(rho >= 0.0 && rho < 1.0, "corruption fraction must lie in [0, 1)");
  CorruptionMask mask;
  mask.rho = rho;
  mask.scheme = scheme;
  mask.frozen = BoolMat::Constant(n, d, false);
  mask.values = Mat::Zero(n, d);

  const Index k = static_cast<Index>(std::ceil(rho * static_cast<double>(d)));
  if (k == 0) return mask;

  std::uniform_real_distribution<double> noise(-1.0, 1.0);
  std::vector<Index> cols(static_cast<std::size_t>(d));
  for (Index i = 0; i < n; ++i) {
    std::iota(cols.begin(), cols.end(), Index{0});
    for (Index j = 0; j < k; ++j) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(j),
                                                      cols.size() - 1);
      std::swap(cols[static_cast<std::size_t>(j)], cols[pick(rng)]);
      const Index col = cols[static_cast<std::size_t>(j)];
      mask.frozen(i, col) = true;
      mask.values(i, col) =
          scheme == CorruptionScheme::UniformNoise ? noise(rng) : 0.0;
    }
  }
  return mask;
}

namespace {

// Nearest-neighbor warp shared by shift and rotation.
void warp_image(const double* src, double* dst, int h, int w, int ch,
                double cos_t, double sin_t, double dy, double dx) {
  const double cy = (h - 1) / 2.0;
  const double cx = (w - 1) / 2.0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      // Inverse map: rotate about the center, then un-shift.
      const double yr = r - cy - dy;
      const double xr = c - cx - dx;
      const int sr = static_cast<int>(std::lround(cos_t * yr + sin_t * xr + cy));
      const int sc = static_cast<int>(std::lround(-sin_t * yr + cos_t * xr + cx));
      for (int k = 0; k < ch; ++k) {
        const int out_idx = (r * w + c) * ch + k;
        if (sr >= 0 && sr < h && sc >= 0 && sc < w)
          dst[out_idx] = src[(sr * w + sc) * ch + k];
        else
          dst[out_idx] = 0.0;
      }
    }
  }
}

}  // namespace

Dataset augment(const Dataset& batch, Rng& rng, const AugmentOptions& opts) {
  const int h = opts.height, w = opts.width, ch = opts.channels;
  require(h > 0 && w > 0 && ch > 0 &&
              static_cast<Index>(h) * w * ch == batch.X.cols(),
          "augment: feature width does not match HxWxC shape");
  Dataset out = batch;
  if (!opts.enabled()) return out;

  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> shift(-opts.shift_px, opts.shift_px);
  std::uniform_real_distribution<double> angle(-opts.rot_deg, opts.rot_deg);

  std::vector<double> row(static_cast<std::size_t>(batch.X.cols()));
  std::vector<double> tmp(row.size());
  for (Index i = 0; i < batch.X.rows(); ++i) {
    Eigen::Map<Eigen::RowVectorXd>(row.data(), batch.X.cols()) = batch.X.row(i);

    if (opts.flip && coin(rng) == 1) {
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          for (int k = 0; k < ch; ++k)
            tmp[static_cast<std::size_t>((r * w + c) * ch + k)] =
                row[static_cast<std::size_t>((r * w + (w - 1 - c)) * ch + k)];
      row.swap(tmp);
    }
    const int dy = opts.shift_px > 0 ? shift(rng) : 0;
    const int dx = opts.shift_px > 0 ? shift(rng) : 0;
    const double theta = opts.rot_deg > 0 ? angle(rng) * M_PI / 180.0 : 0.0;
    if (dy != 0 || dx != 0 || theta != 0.0) {
      warp_image(row.data(), tmp.data(), h, w, ch, std::cos(theta),
                 std::sin(theta), dy, dx);
      row.swap(tmp);
    }
    out.X.row(i) = Eigen::Map<Eigen::RowVectorXd>(row.data(), batch.X.cols());
  }
  return out;
}

bool has_duplicate_rows(const Mat& X) {
  std::unordered_set<std::string> seen;
  for (Index i = 0; i < X.rows(); ++i) {
    std::string key(reinterpret_cast<const char*>(X.row(i).eval().data()),
                    static_cast<std::size_t>(X.cols()) * sizeof(double));
    if (!seen.insert(std::move(key)).second) return true;
  }
  return false;
}

}  // namespace kip
