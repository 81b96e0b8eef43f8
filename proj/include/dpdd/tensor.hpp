#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dpdd/common.hpp"
#include "dpdd/rng.hpp"

namespace dpdd {

// Dense row-major f64 tensor used at the file and CLI boundary. Internally
// the pipeline works with Eigen matrices; a Tensor is how data enters and
// leaves a process.
struct Tensor {
  std::vector<Index> shape;
  std::vector<double> data;

  static Tensor zeros(std::vector<Index> shape);

  Index rank() const { return static_cast<Index>(shape.size()); }
  Index numel() const;
  Index dim(Index i) const { return shape.at(static_cast<std::size_t>(i)); }
};

// Independent N(0, sigma^2) entries in row-major draw order. sigma == 0
// yields exact zeros without consuming any draws.
Tensor gaussian_noise(RngStream& stream, const std::vector<Index>& shape, double sigma);

// Binary tensor file: magic "DSRT", u8 rank, rank little-endian u64 dims,
// then little-endian f64 payload in row-major order. Writes are atomic
// (temp file + rename).
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

// Label sidecar: one byte per record, same basename with extension ".labels".
std::filesystem::path label_sidecar_path(const std::filesystem::path& tensor_path);
void write_labels(const std::filesystem::path& tensor_path, const std::vector<std::uint8_t>& labels);
std::vector<std::uint8_t> read_labels(const std::filesystem::path& tensor_path);

// Per-class image batches; rows are flattened (channel, row, column) images.
struct Dataset {
  ImageShape shape;
  std::vector<Matrix> class_images;

  Index num_classes() const { return static_cast<Index>(class_images.size()); }
  Index total_images() const;
  Index min_class_size() const;
};

// Round-trips a dataset through a rank-4 (n, c, h, w) tensor plus label
// sidecar. Class c's images appear in original order with label byte c.
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace dpdd
