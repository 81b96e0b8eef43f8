#pragma once

#include <string>
#include <vector>

#include "dpdd/common.hpp"
#include "dpdd/rng.hpp"

namespace dpdd {

// Pipeline of pixel-linear augmentations. Given fixed parameters, every op
// is a linear map of the image, so the exact input gradient is the transpose
// chain and never needs the image itself.
struct AugmentPolicy {
  bool crop = false;
  double crop_pad = 2.0;  // max absolute shift in pixels
  bool flip = false;
  bool brightness = false;
  double brightness_delta = 0.2;  // scale drawn from [1 - delta, 1 + delta]
  bool saturation = false;
  double saturation_delta = 0.2;
  bool cutout = false;
  double cutout_fraction = 0.25;  // side length relative to image size

  // Parses a comma-separated op list ("crop,flip,cutout"); "none" or empty
  // disables everything. Unknown names are rejected.
  static AugmentPolicy from_ops(const std::string& ops);
  std::string ops_string() const;
  bool any() const { return crop || flip || brightness || saturation || cutout; }
};

// One concrete draw of augmentation parameters.
struct AugmentParams {
  double shift_y = 0.0, shift_x = 0.0;  // continuous, bilinear resample
  bool flip = false;
  double brightness = 1.0;
  double saturation = 1.0;
  bool cut = false;
  Index cut_y = 0, cut_x = 0, cut_h = 0, cut_w = 0;
};

// Deterministic parameter draw; ops are sampled in the fixed order crop,
// flip, brightness, saturation, cutout, and disabled ops consume nothing.
// Saturation is skipped automatically for single-channel images.
AugmentParams sample_augment_params(const AugmentPolicy& policy, const ImageShape& shape,
                                    RngStream& zeta);

Vector apply_augment(const AugmentPolicy& policy, const AugmentParams& params,
                     const ImageShape& shape, const Eigen::Ref<const Vector>& image);

// Convenience: draw parameters from the given stream, then apply.
Vector apply_augment(const AugmentPolicy& policy, const ImageShape& shape, RngStream zeta,
                     const Eigen::Ref<const Vector>& image);

// Gradient of <augmented, upstream> with respect to the input image.
Vector augment_input_gradient(const AugmentPolicy& policy, const AugmentParams& params,
                              const ImageShape& shape,
                              const Eigen::Ref<const Vector>& upstream);

}  // namespace dpdd
