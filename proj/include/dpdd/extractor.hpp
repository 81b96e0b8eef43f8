#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "dpdd/common.hpp"
#include "dpdd/rng.hpp"

namespace dpdd {

// Layer vocabulary for the randomly initialized feature network. No layer
// carries a bias, so the whole map is piecewise linear in the input.
struct ConvSpec {
  Index out_channels = 0;
  Index kernel = 3;
  Index stride = 1;
  Index pad = -1;  // negative: same-ish padding kernel/2
};
struct ReluSpec {};
struct AvgPoolSpec {
  Index window = 2;
};
struct FlattenSpec {};
struct DenseSpec {
  Index out_dim = 0;
};
using LayerSpec = std::variant<ConvSpec, ReluSpec, AvgPoolSpec, FlattenSpec, DenseSpec>;

struct LayerShape {
  Index channels = 0, height = 0, width = 0;  // height/width 0 after flatten
  Index size() const { return height > 0 ? channels * height * width : channels; }
};

struct ExtractorSpec {
  ImageShape input;
  std::vector<LayerSpec> layers;

  // conv(k)-relu-pool(2) blocks with the given channel widths, followed by
  // flatten and an optional dense head.
  static ExtractorSpec conv_net(const ImageShape& input, const std::vector<Index>& channels,
                                Index kernel = 3, Index dense_dim = 0);

  // Shape of every inter-layer activation; [0] is the input, back() the
  // feature vector. Throws ValidationError when shapes do not chain.
  std::vector<LayerShape> layer_shapes() const;
  Index feature_dim() const { return layer_shapes().back().size(); }
  std::string fingerprint() const;
};

struct ExtractorParams {
  std::uint64_t seed = 0;
  double init_scale = 1.0;
};

// Weight matrices per layer (empty for parameterless layers). Conv weights
// are out_channels x (in_channels * k * k); dense weights out_dim x in_dim.
// Entries are N(0, (init_scale / sqrt(fan_in))^2), drawn row-major from a
// stream derived from (seed, layer index); read-only after creation.
struct ExtractorWeights {
  std::vector<Matrix> layers;
};
ExtractorWeights materialize(const ExtractorSpec& spec, const ExtractorParams& params);

// Per-layer inputs captured during the forward pass; layer_inputs[i] feeds
// layer i. Exposed so finite-difference tests can locate relu kinks.
struct ForwardTrace {
  std::vector<Vector> layer_inputs;
};

Vector extract_features(const ExtractorSpec& spec, const ExtractorWeights& w,
                        const Eigen::Ref<const Vector>& image, ForwardTrace* trace = nullptr);

// Gradient of <features, upstream> with respect to the input image. Relu
// uses subgradient 0 at exactly 0.
Vector feature_input_gradient(const ExtractorSpec& spec, const ExtractorWeights& w,
                              const Eigen::Ref<const Vector>& image,
                              const Eigen::Ref<const Vector>& upstream);

}  // namespace dpdd
