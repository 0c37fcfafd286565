#include "kip/snapshot.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace kip {

namespace {

constexpr char kMagic[4] = {'K', 'I', 'P', 'D'};

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("truncated snapshot: " + path);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

void write_matrix_rowmajor(std::ostream& out, const Mat& M) {
  std::vector<double> row(static_cast<std::size_t>(M.cols()));
  for (Index i = 0; i < M.rows(); ++i) {
    Eigen::Map<Eigen::RowVectorXd>(row.data(), M.cols()) = M.row(i);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
}

Mat read_matrix_rowmajor(std::istream& in, Index rows, Index cols,
                         const std::string& path) {
  Mat M(rows, cols);
  std::vector<double> row(static_cast<std::size_t>(cols));
  for (Index i = 0; i < rows; ++i) {
    if (!in.read(reinterpret_cast<char*>(row.data()),
                 static_cast<std::streamsize>(row.size() * sizeof(double))))
      throw FormatError("truncated snapshot payload: " + path);
    M.row(i) = Eigen::Map<Eigen::RowVectorXd>(row.data(), cols);
  }
  return M;
}

}  // namespace

void save_snapshot(const std::string& path, const Snapshot& snap) {
  const SupportSet& s = snap.support;
  require(s.X_s.rows() == s.y_s.rows(), "snapshot: X_s and y_s row counts differ");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write snapshot: " + path);

  out.write(kMagic, 4);
  write_u32(out, snap.version);
  write_u32(out, static_cast<std::uint32_t>(s.X_s.rows()));
  write_u32(out, static_cast<std::uint32_t>(s.X_s.cols()));
  write_u32(out, static_cast<std::uint32_t>(s.y_s.cols()));
  std::uint32_t flags = 0;
  if (s.mask.has_value()) flags |= 1u;
  if (s.learn_labels) flags |= 2u;
  write_u32(out, flags);

  write_matrix_rowmajor(out, s.X_s);
  write_matrix_rowmajor(out, s.y_s);

  if (s.mask.has_value()) {
    const BoolMat& frozen = s.mask->frozen;
    require(frozen.rows() == s.X_s.rows() && frozen.cols() == s.X_s.cols(),
            "snapshot: mask shape mismatch");
    const std::size_t nbits = static_cast<std::size_t>(frozen.size());
    std::vector<unsigned char> packed((nbits + 7) / 8, 0);
    std::size_t bit = 0;
    for (Index i = 0; i < frozen.rows(); ++i)
      for (Index j = 0; j < frozen.cols(); ++j, ++bit)
        if (frozen(i, j)) packed[bit / 8] |= static_cast<unsigned char>(1u << (bit % 8));
    out.write(reinterpret_cast<const char*>(packed.data()),
              static_cast<std::streamsize>(packed.size()));
  }

  write_u32(out, static_cast<std::uint32_t>(snap.metadata.size()));
  out.write(snap.metadata.data(),
            static_cast<std::streamsize>(snap.metadata.size()));
  if (!out) throw FormatError("snapshot write failed: " + path);
}

Snapshot load_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open snapshot: " + path);

  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("not a KIPD snapshot: " + path);

  Snapshot snap;
  snap.version = read_u32(in, path);
  if (snap.version != 1)
    throw FormatError("unsupported snapshot version in " + path);
  const Index n_s = static_cast<Index>(read_u32(in, path));
  const Index d = static_cast<Index>(read_u32(in, path));
  const Index C = static_cast<Index>(read_u32(in, path));
  const std::uint32_t flags = read_u32(in, path);

  SupportSet& s = snap.support;
  s.X_s = read_matrix_rowmajor(in, n_s, d, path);
  s.y_s = read_matrix_rowmajor(in, n_s, C, path);
  s.learn_labels = (flags & 2u) != 0;

  if (flags & 1u) {
    const std::size_t nbits = static_cast<std::size_t>(n_s) * static_cast<std::size_t>(d);
    std::vector<unsigned char> packed((nbits + 7) / 8);
    if (!in.read(reinterpret_cast<char*>(packed.data()),
                 static_cast<std::streamsize>(packed.size())))
      throw FormatError("truncated snapshot mask: " + path);
    CorruptionMask mask;
    mask.frozen.resize(n_s, d);
    mask.values = Mat::Zero(n_s, d);
    std::size_t bit = 0;
    Index frozen_count = 0;
    for (Index i = 0; i < n_s; ++i)
      for (Index j = 0; j < d; ++j, ++bit) {
        const bool f = (packed[bit / 8] >> (bit % 8)) & 1u;
        mask.frozen(i, j) = f;
        if (f) {
          mask.values(i, j) = s.X_s(i, j);
          ++frozen_count;
        }
      }
    mask.rho = d > 0 ? static_cast<double>(frozen_count) /
                           static_cast<double>(nbits)
                     : 0.0;
    s.mask = std::move(mask);
  }

  const std::uint32_t meta_len = read_u32(in, path);
  snap.metadata.resize(meta_len);
  if (meta_len > 0 &&
      !in.read(snap.metadata.data(), static_cast<std::streamsize>(meta_len)))
    throw FormatError("truncated snapshot metadata: " + path);

  // Header arithmetic must match the payload exactly.
  in.peek();
  if (!in.eof()) throw FormatError("trailing bytes after snapshot payload: " + path);

  // Restore metadata-borne fields when present.
  if (!snap.metadata.empty()) {
    const auto meta = nlohmann::json::parse(snap.metadata, nullptr, false);
    if (!meta.is_discarded() && s.mask.has_value()) {
      if (meta.contains("rho")) s.mask->rho = meta["rho"].get<double>();
      if (meta.contains("corrupt_scheme"))
        s.mask->scheme = meta["corrupt_scheme"].get<std::string>() == "zero"
                             ? CorruptionScheme::Zero
                             : CorruptionScheme::UniformNoise;
    }
  }

  // Class indices from the stored label rows.
  s.labels.resize(static_cast<std::size_t>(n_s));
  for (Index i = 0; i < n_s; ++i) {
    int best = 0;
    for (Index j = 1; j < C; ++j)
      if (s.y_s(i, j) > s.y_s(i, best)) best = static_cast<int>(j);
    s.labels[static_cast<std::size_t>(i)] = best;
  }
  return snap;
}

}  // namespace kip
