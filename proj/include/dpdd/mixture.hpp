#pragma once

#include <vector>

#include "dpdd/common.hpp"
#include "dpdd/rng.hpp"
#include "dpdd/tensor.hpp"

namespace dpdd {

// Gaussian mixture over images; the ground-truth generator for the toy task
// and for synthetic auxiliary data. Samples are clamped to [0, 1].
struct MixtureComponent {
  double weight = 1.0;
  Vector mean;       // one flattened image
  double pixel_std = 0.1;
};

struct ClassMixture {
  std::vector<MixtureComponent> components;
};

struct MixtureSpec {
  ImageShape shape;
  std::vector<ClassMixture> classes;

  Index num_classes() const { return static_cast<Index>(classes.size()); }

  // Procedurally built mixture: each component mean is a smooth random field
  // (bilinear upsampling of a coarse Gaussian grid) centred at 0.5. The
  // pattern seed fixes the means; sampling noise comes from the caller.
  static MixtureSpec procedural(const ImageShape& shape, Index classes, Index components,
                                double amplitude, double pixel_std, std::uint64_t pattern_seed,
                                Index grid = 4);
};

Vector sample_mixture_image(const MixtureSpec& spec, Index class_id, RngStream& stream);
Matrix sample_mixture_batch(const MixtureSpec& spec, Index class_id, Index n, RngStream& stream);
Dataset sample_mixture_dataset(const MixtureSpec& spec, Index per_class, RngStream stream);

}  // namespace dpdd
