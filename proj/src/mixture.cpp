#include "dpdd/mixture.hpp"

#include <cmath>

namespace dpdd {
namespace {

// Bilinear upsample of a g x g coefficient grid onto h x w, treating grid
// nodes as anchored at the image corners.
void smooth_field(const Matrix& grid, Index h, Index w, double* out) {
  const Index g = grid.rows();
  for (Index y = 0; y < h; ++y) {
    const double gy = h > 1 ? static_cast<double>(y) / (h - 1) * (g - 1) : 0.0;
    const Index y0 = std::min<Index>(static_cast<Index>(gy), g - 2);
    const double fy = gy - static_cast<double>(y0);
    for (Index x = 0; x < w; ++x) {
      const double gx = w > 1 ? static_cast<double>(x) / (w - 1) * (g - 1) : 0.0;
      const Index x0 = std::min<Index>(static_cast<Index>(gx), g - 2);
      const double fx = gx - static_cast<double>(x0);
      out[y * w + x] = (1 - fy) * ((1 - fx) * grid(y0, x0) + fx * grid(y0, x0 + 1)) +
                       fy * ((1 - fx) * grid(y0 + 1, x0) + fx * grid(y0 + 1, x0 + 1));
    }
  }
}

const ClassMixture& class_of(const MixtureSpec& spec, Index class_id) {
  require(class_id >= 0 && class_id < spec.num_classes(), "class id out of range");
  const ClassMixture& cm = spec.classes[static_cast<std::size_t>(class_id)];
  require(!cm.components.empty(), "mixture class has no components");
  return cm;
}

}  // namespace

MixtureSpec MixtureSpec::procedural(const ImageShape& shape, Index classes, Index components,
                                    double amplitude, double pixel_std,
                                    std::uint64_t pattern_seed, Index grid) {
  require(classes > 0 && components > 0, "mixture needs positive class and component counts");
  require(grid >= 2, "pattern grid must be at least 2x2");
  require(amplitude >= 0.0 && pixel_std >= 0.0, "mixture scales must be nonnegative");
  MixtureSpec spec;
  spec.shape = shape;
  spec.classes.resize(static_cast<std::size_t>(classes));
  const Index hw = shape.height * shape.width;
  for (Index c = 0; c < classes; ++c) {
    for (Index m = 0; m < components; ++m) {
      RngStream s = RngStream::derive(
          pattern_seed, {static_cast<std::uint64_t>(StreamUse::kPattern),
                         static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(m)});
      MixtureComponent comp;
      comp.weight = 1.0;
      comp.pixel_std = pixel_std;
      comp.mean.resize(shape.pixels());
      for (Index ch = 0; ch < shape.channels; ++ch) {
        const Matrix coeff = s.gaussian_matrix(grid, grid);
        smooth_field(coeff, shape.height, shape.width, comp.mean.data() + ch * hw);
      }
      // Centre at mid-gray and keep clear of the clamp boundaries so class
      // structure survives the [0, 1] clamp.
      comp.mean = (0.5 + amplitude * comp.mean.array()).cwiseMax(0.05).cwiseMin(0.95);
      spec.classes[static_cast<std::size_t>(c)].components.push_back(std::move(comp));
    }
  }
  return spec;
}

Vector sample_mixture_image(const MixtureSpec& spec, Index class_id, RngStream& stream) {
  const ClassMixture& cm = class_of(spec, class_id);
  double total = 0.0;
  for (const auto& comp : cm.components) {
    require(comp.weight > 0.0, "component weights must be positive");
    total += comp.weight;
  }
  // One uniform selects the component, then one gaussian per pixel.
  const double u = stream.next_uniform() * total;
  std::size_t pick = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < cm.components.size(); ++i) {
    acc += cm.components[i].weight;
    if (u <= acc) {
      pick = i;
      break;
    }
  }
  const MixtureComponent& comp = cm.components[pick];
  require(comp.mean.size() == spec.shape.pixels(), "component mean size mismatch");
  Vector v(comp.mean.size());
  stream.fill_gaussian(v.data(), v.size(), comp.pixel_std);
  v += comp.mean;
  return v.cwiseMax(0.0).cwiseMin(1.0);
}

Matrix sample_mixture_batch(const MixtureSpec& spec, Index class_id, Index n,
                            RngStream& stream) {
  require(n >= 0, "batch size must be nonnegative");
  Matrix out(n, spec.shape.pixels());
  for (Index i = 0; i < n; ++i) out.row(i) = sample_mixture_image(spec, class_id, stream);
  return out;
}

Dataset sample_mixture_dataset(const MixtureSpec& spec, Index per_class, RngStream stream) {
  Dataset ds;
  ds.shape = spec.shape;
  ds.class_images.reserve(static_cast<std::size_t>(spec.num_classes()));
  for (Index c = 0; c < spec.num_classes(); ++c)
    ds.class_images.push_back(sample_mixture_batch(spec, c, per_class, stream));
  return ds;
}

}  // namespace dpdd
