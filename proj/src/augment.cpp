#include "dpdd/augment.hpp"

#include <cmath>
#include <sstream>

namespace dpdd {
namespace {

// Bilinear shift by a continuous offset, zero padded. With transpose=false
// this maps input to output; with transpose=true it applies the adjoint,
// scattering output-side values back to input taps.
void bilinear_shift(const ImageShape& s, double dy, double dx, const double* in, double* out,
                    bool transpose) {
  const Index hw = s.height * s.width;
  const double fy = std::floor(dy), fx = std::floor(dx);
  const auto y0_off = static_cast<Index>(fy), x0_off = static_cast<Index>(fx);
  const double wy = dy - fy, wx = dx - fx;
  const double w00 = (1.0 - wy) * (1.0 - wx), w01 = (1.0 - wy) * wx;
  const double w10 = wy * (1.0 - wx), w11 = wy * wx;
  for (Index c = 0; c < s.channels; ++c) {
    const double* ip = in + c * hw;
    double* op = out + c * hw;
    for (Index y = 0; y < s.height; ++y) {
      for (Index x = 0; x < s.width; ++x) {
        const Index sy = y + y0_off, sx = x + x0_off;
        const double taps[4][3] = {{static_cast<double>(sy), static_cast<double>(sx), w00},
                                   {static_cast<double>(sy), static_cast<double>(sx + 1), w01},
                                   {static_cast<double>(sy + 1), static_cast<double>(sx), w10},
                                   {static_cast<double>(sy + 1), static_cast<double>(sx + 1), w11}};
        for (const auto& t : taps) {
          const auto ty = static_cast<Index>(t[0]), tx = static_cast<Index>(t[1]);
          if (t[2] == 0.0 || ty < 0 || ty >= s.height || tx < 0 || tx >= s.width) continue;
          if (transpose)
            op[ty * s.width + tx] += t[2] * ip[y * s.width + x];
          else
            op[y * s.width + x] += t[2] * ip[ty * s.width + tx];
        }
      }
    }
  }
}

void flip_horizontal(const ImageShape& s, Vector& v) {
  const Index hw = s.height * s.width;
  for (Index c = 0; c < s.channels; ++c) {
    double* p = v.data() + c * hw;
    for (Index y = 0; y < s.height; ++y)
      for (Index x = 0; x < s.width / 2; ++x)
        std::swap(p[y * s.width + x], p[y * s.width + (s.width - 1 - x)]);
  }
}

// gray + f * (x - gray), gray = channel mean per pixel. Self-adjoint.
void saturate(const ImageShape& s, double f, Vector& v) {
  const Index hw = s.height * s.width;
  for (Index p = 0; p < hw; ++p) {
    double gray = 0.0;
    for (Index c = 0; c < s.channels; ++c) gray += v[c * hw + p];
    gray /= static_cast<double>(s.channels);
    for (Index c = 0; c < s.channels; ++c) {
      double& x = v[c * hw + p];
      x = gray + f * (x - gray);
    }
  }
}

void cut_mask(const ImageShape& s, const AugmentParams& p, Vector& v) {
  const Index hw = s.height * s.width;
  for (Index c = 0; c < s.channels; ++c) {
    double* plane = v.data() + c * hw;
    for (Index y = p.cut_y; y < std::min(s.height, p.cut_y + p.cut_h); ++y)
      for (Index x = p.cut_x; x < std::min(s.width, p.cut_x + p.cut_w); ++x)
        plane[y * s.width + x] = 0.0;
  }
}

void validate_policy(const AugmentPolicy& p) {
  require(p.crop_pad >= 0.0, "crop pad must be nonnegative");
  require(p.brightness_delta >= 0.0 && p.brightness_delta < 1.0,
          "brightness delta must lie in [0, 1)");
  require(p.saturation_delta >= 0.0 && p.saturation_delta < 1.0,
          "saturation delta must lie in [0, 1)");
  require(p.cutout_fraction >= 0.0 && p.cutout_fraction <= 1.0,
          "cutout fraction must lie in [0, 1]");
}

}  // namespace

AugmentPolicy AugmentPolicy::from_ops(const std::string& ops) {
  AugmentPolicy p;
  std::stringstream ss(ops);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto b = tok.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    tok = tok.substr(b, tok.find_last_not_of(" \t") - b + 1);
    if (tok == "none") continue;
    if (tok == "crop") p.crop = true;
    else if (tok == "flip") p.flip = true;
    else if (tok == "brightness") p.brightness = true;
    else if (tok == "saturation") p.saturation = true;
    else if (tok == "cutout") p.cutout = true;
    else throw ValidationError("unknown augmentation op: " + tok);
  }
  return p;
}

std::string AugmentPolicy::ops_string() const {
  std::string s;
  const auto add = [&](const char* name) {
    if (!s.empty()) s += ",";
    s += name;
  };
  if (crop) add("crop");
  if (flip) add("flip");
  if (brightness) add("brightness");
  if (saturation) add("saturation");
  if (cutout) add("cutout");
  return s.empty() ? "none" : s;
}

AugmentParams sample_augment_params(const AugmentPolicy& policy, const ImageShape& shape,
                                    RngStream& zeta) {
  validate_policy(policy);
  AugmentParams p;
  if (policy.crop) {
    p.shift_y = (2.0 * zeta.next_uniform() - 1.0) * policy.crop_pad;
    p.shift_x = (2.0 * zeta.next_uniform() - 1.0) * policy.crop_pad;
  }
  if (policy.flip) p.flip = zeta.next_bernoulli(0.5);
  if (policy.brightness)
    p.brightness = 1.0 + (2.0 * zeta.next_uniform() - 1.0) * policy.brightness_delta;
  if (policy.saturation && shape.channels > 1)
    p.saturation = 1.0 + (2.0 * zeta.next_uniform() - 1.0) * policy.saturation_delta;
  if (policy.cutout) {
    p.cut = true;
    p.cut_h = static_cast<Index>(std::lround(policy.cutout_fraction * shape.height));
    p.cut_w = static_cast<Index>(std::lround(policy.cutout_fraction * shape.width));
    p.cut_y = p.cut_h < shape.height
                  ? static_cast<Index>(zeta.next_below(shape.height - p.cut_h + 1))
                  : 0;
    p.cut_x = p.cut_w < shape.width
                  ? static_cast<Index>(zeta.next_below(shape.width - p.cut_w + 1))
                  : 0;
  }
  return p;
}

Vector apply_augment(const AugmentPolicy& policy, const AugmentParams& params,
                     const ImageShape& shape, const Eigen::Ref<const Vector>& image) {
  validate_policy(policy);
  require(image.size() == shape.pixels(), "image size does not match shape");
  Vector v = image;
  if (policy.crop && (params.shift_y != 0.0 || params.shift_x != 0.0)) {
    Vector shifted = Vector::Zero(v.size());
    bilinear_shift(shape, params.shift_y, params.shift_x, v.data(), shifted.data(), false);
    v = std::move(shifted);
  }
  if (policy.flip && params.flip) flip_horizontal(shape, v);
  if (policy.brightness) v *= params.brightness;
  if (policy.saturation && shape.channels > 1) saturate(shape, params.saturation, v);
  if (policy.cutout && params.cut) cut_mask(shape, params, v);
  return v;
}

Vector apply_augment(const AugmentPolicy& policy, const ImageShape& shape, RngStream zeta,
                     const Eigen::Ref<const Vector>& image) {
  const AugmentParams p = sample_augment_params(policy, shape, zeta);
  return apply_augment(policy, p, shape, image);
}

Vector augment_input_gradient(const AugmentPolicy& policy, const AugmentParams& params,
                              const ImageShape& shape,
                              const Eigen::Ref<const Vector>& upstream) {
  validate_policy(policy);
  require(upstream.size() == shape.pixels(), "upstream size does not match shape");
  // Adjoints applied in reverse op order.
  Vector g = upstream;
  if (policy.cutout && params.cut) cut_mask(shape, params, g);  // mask is self-adjoint
  if (policy.saturation && shape.channels > 1) saturate(shape, params.saturation, g);
  if (policy.brightness) g *= params.brightness;
  if (policy.flip && params.flip) flip_horizontal(shape, g);  // permutation, self-inverse
  if (policy.crop && (params.shift_y != 0.0 || params.shift_x != 0.0)) {
    Vector gin = Vector::Zero(g.size());
    bilinear_shift(shape, params.shift_y, params.shift_x, g.data(), gin.data(), true);
    g = std::move(gin);
  }
  return g;
}

}  // namespace dpdd
