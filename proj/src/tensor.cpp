#include "dpdd/tensor.hpp"

#include <cstring>
#include <fstream>
#include <limits>

#include "dpdd/io.hpp"

namespace dpdd {
namespace {

constexpr char kMagic[4] = {'D', 'S', 'R', 'T'};

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t parse_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

Tensor Tensor::zeros(std::vector<Index> shape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(static_cast<std::size_t>(t.numel()), 0.0);
  return t;
}

Index Tensor::numel() const {
  Index n = 1;
  for (Index d : shape) {
    require(d >= 0, "tensor dimensions must be nonnegative");
    n *= d;
  }
  return n;
}

Tensor gaussian_noise(RngStream& stream, const std::vector<Index>& shape, double sigma) {
  require(sigma >= 0.0, "sigma must be nonnegative");
  Tensor t = Tensor::zeros(shape);
  if (sigma > 0.0) stream.fill_gaussian(t.data.data(), t.numel(), sigma);
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  require(t.rank() <= 255, "tensor rank exceeds format limit");
  require(static_cast<Index>(t.data.size()) == t.numel(),
          "tensor payload size disagrees with shape");
  std::string buf;
  buf.reserve(5 + 8 * t.shape.size() + 8 * t.data.size());
  buf.append(kMagic, 4);
  buf.push_back(static_cast<char>(t.rank()));
  for (Index d : t.shape) append_u64(buf, static_cast<std::uint64_t>(d));
  static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559);
  const std::size_t off = buf.size();
  buf.resize(off + 8 * t.data.size());
  if (!t.data.empty()) std::memcpy(buf.data() + off, t.data.data(), 8 * t.data.size());
  atomic_write_file(path, buf);
}

Tensor read_tensor(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 5 || std::memcmp(p, kMagic, 4) != 0)
    throw IoError("not a tensor file: " + path.string());
  const std::size_t rank = p[4];
  std::size_t off = 5;
  if (buf.size() < off + 8 * rank) throw IoError("truncated tensor header: " + path.string());
  Tensor t;
  t.shape.reserve(rank);
  for (std::size_t i = 0; i < rank; ++i, off += 8) {
    const std::uint64_t d = parse_u64(p + off);
    if (d > static_cast<std::uint64_t>(std::numeric_limits<Index>::max()))
      throw IoError("tensor dimension overflow: " + path.string());
    t.shape.push_back(static_cast<Index>(d));
  }
  const std::size_t n = static_cast<std::size_t>(t.numel());
  if (buf.size() != off + 8 * n) throw IoError("tensor payload size mismatch: " + path.string());
  t.data.resize(n);
  if (n) std::memcpy(t.data.data(), buf.data() + off, 8 * n);
  return t;
}

std::filesystem::path label_sidecar_path(const std::filesystem::path& tensor_path) {
  std::filesystem::path p = tensor_path;
  p.replace_extension(".labels");
  return p;
}

void write_labels(const std::filesystem::path& tensor_path,
                  const std::vector<std::uint8_t>& labels) {
  std::string buf(labels.begin(), labels.end());
  atomic_write_file(label_sidecar_path(tensor_path), buf);
}

std::vector<std::uint8_t> read_labels(const std::filesystem::path& tensor_path) {
  const std::string buf = read_file(label_sidecar_path(tensor_path));
  return std::vector<std::uint8_t>(buf.begin(), buf.end());
}

Index Dataset::total_images() const {
  Index n = 0;
  for (const auto& m : class_images) n += m.rows();
  return n;
}

Index Dataset::min_class_size() const {
  require(!class_images.empty(), "dataset has no classes");
  Index n = std::numeric_limits<Index>::max();
  for (const auto& m : class_images) n = std::min(n, m.rows());
  return n;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  require(!ds.class_images.empty(), "dataset has no classes");
  require(ds.num_classes() <= 256, "label sidecar supports at most 256 classes");
  const Index px = ds.shape.pixels();
  Tensor t;
  t.shape = {ds.total_images(), ds.shape.channels, ds.shape.height, ds.shape.width};
  t.data.reserve(static_cast<std::size_t>(t.numel()));
  std::vector<std::uint8_t> labels;
  labels.reserve(static_cast<std::size_t>(ds.total_images()));
  for (Index c = 0; c < ds.num_classes(); ++c) {
    const Matrix& m = ds.class_images[static_cast<std::size_t>(c)];
    require(m.cols() == px, "image width disagrees with dataset shape");
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index j = 0; j < px; ++j) t.data.push_back(m(r, j));
      labels.push_back(static_cast<std::uint8_t>(c));
    }
  }
  write_tensor(path, t);
  write_labels(path, labels);
}

Dataset read_dataset(const std::filesystem::path& path) {
  const Tensor t = read_tensor(path);
  if (t.rank() != 4) throw IoError("dataset tensor must have rank 4 (n, c, h, w)");
  const auto labels = read_labels(path);
  if (static_cast<Index>(labels.size()) != t.dim(0))
    throw IoError("label sidecar length disagrees with tensor");
  Dataset ds;
  ds.shape = {t.dim(1), t.dim(2), t.dim(3)};
  const Index px = ds.shape.pixels();
  Index classes = 0;
  for (std::uint8_t l : labels) classes = std::max<Index>(classes, l + 1);
  require(classes > 0, "dataset is empty");
  std::vector<Index> counts(static_cast<std::size_t>(classes), 0);
  for (std::uint8_t l : labels) ++counts[l];
  ds.class_images.resize(static_cast<std::size_t>(classes));
  std::vector<Index> next(static_cast<std::size_t>(classes), 0);
  for (Index c = 0; c < classes; ++c) {
    require(counts[static_cast<std::size_t>(c)] > 0,
            "class " + std::to_string(c) + " has no images");
    ds.class_images[static_cast<std::size_t>(c)].resize(counts[static_cast<std::size_t>(c)], px);
  }
  for (Index i = 0; i < t.dim(0); ++i) {
    const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
    Matrix& m = ds.class_images[c];
    const double* src = t.data.data() + i * px;
    for (Index j = 0; j < px; ++j) m(next[c], j) = src[j];
    ++next[c];
  }
  return ds;
}

}  // namespace dpdd
