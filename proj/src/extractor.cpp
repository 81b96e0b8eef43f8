#include "dpdd/extractor.hpp"

#include <cmath>
#include <sstream>

namespace dpdd {
namespace {

Index conv_pad(const ConvSpec& c) { return c.pad >= 0 ? c.pad : c.kernel / 2; }

Index conv_out(Index in, Index kernel, Index stride, Index pad) {
  const Index span = in + 2 * pad - kernel;
  require(span >= 0, "conv kernel exceeds padded input");
  return span / stride + 1;
}

// Gathers conv taps into a (H_out * W_out) x (C_in * k * k) matrix; row p is
// output pixel (y, x) with p = y * W_out + x, column r is tap (ci, ky, kx)
// with r = (ci * k + ky) * k + kx. Out-of-bounds taps read as zero.
void im2col(const double* in, const LayerShape& s, const ConvSpec& c, Index ho, Index wo,
            Matrix& col) {
  const Index pad = conv_pad(c);
  const Index hw = s.height * s.width;
  col.setZero(ho * wo, s.channels * c.kernel * c.kernel);
  for (Index ci = 0; ci < s.channels; ++ci) {
    const double* plane = in + ci * hw;
    for (Index ky = 0; ky < c.kernel; ++ky) {
      for (Index kx = 0; kx < c.kernel; ++kx) {
        const Index r = (ci * c.kernel + ky) * c.kernel + kx;
        for (Index y = 0; y < ho; ++y) {
          const Index py = y * c.stride - pad + ky;
          if (py < 0 || py >= s.height) continue;
          for (Index x = 0; x < wo; ++x) {
            const Index px = x * c.stride - pad + kx;
            if (px < 0 || px >= s.width) continue;
            col(y * wo + x, r) = plane[py * s.width + px];
          }
        }
      }
    }
  }
}

// Transpose of im2col: scatters tap gradients back onto the input image.
void col2im(const Matrix& dcol, const LayerShape& s, const ConvSpec& c, Index ho, Index wo,
            double* din) {
  const Index pad = conv_pad(c);
  const Index hw = s.height * s.width;
  for (Index ci = 0; ci < s.channels; ++ci) {
    double* plane = din + ci * hw;
    for (Index ky = 0; ky < c.kernel; ++ky) {
      for (Index kx = 0; kx < c.kernel; ++kx) {
        const Index r = (ci * c.kernel + ky) * c.kernel + kx;
        for (Index y = 0; y < ho; ++y) {
          const Index py = y * c.stride - pad + ky;
          if (py < 0 || py >= s.height) continue;
          for (Index x = 0; x < wo; ++x) {
            const Index px = x * c.stride - pad + kx;
            if (px < 0 || px >= s.width) continue;
            plane[py * s.width + px] += dcol(y * wo + x, r);
          }
        }
      }
    }
  }
}

struct LayerIo {
  LayerShape in, out;
};

std::vector<LayerIo> chained_shapes(const ExtractorSpec& spec) {
  std::vector<LayerShape> all = spec.layer_shapes();
  std::vector<LayerIo> io;
  io.reserve(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    io.push_back({all[i], all[i + 1]});
  return io;
}

}  // namespace

ExtractorSpec ExtractorSpec::conv_net(const ImageShape& input, const std::vector<Index>& channels,
                                      Index kernel, Index dense_dim) {
  ExtractorSpec spec;
  spec.input = input;
  for (Index ch : channels) {
    spec.layers.push_back(ConvSpec{ch, kernel, 1, -1});
    spec.layers.push_back(ReluSpec{});
    spec.layers.push_back(AvgPoolSpec{2});
  }
  spec.layers.push_back(FlattenSpec{});
  if (dense_dim > 0) spec.layers.push_back(DenseSpec{dense_dim});
  return spec;
}

std::vector<LayerShape> ExtractorSpec::layer_shapes() const {
  require(input.channels > 0 && input.height > 0 && input.width > 0,
          "extractor input shape must be positive");
  require(!layers.empty(), "extractor has no layers");
  std::vector<LayerShape> shapes;
  shapes.push_back({input.channels, input.height, input.width});
  for (const LayerSpec& layer : layers) {
    const LayerShape& s = shapes.back();
    LayerShape next = s;
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, ConvSpec>) {
            require(s.height > 0, "conv layer requires spatial input");
            require(l.out_channels > 0 && l.kernel > 0 && l.stride > 0,
                    "conv parameters must be positive");
            next.channels = l.out_channels;
            next.height = conv_out(s.height, l.kernel, l.stride, conv_pad(l));
            next.width = conv_out(s.width, l.kernel, l.stride, conv_pad(l));
          } else if constexpr (std::is_same_v<T, AvgPoolSpec>) {
            require(s.height > 0, "pool layer requires spatial input");
            require(l.window > 0, "pool window must be positive");
            require(s.height % l.window == 0 && s.width % l.window == 0,
                    "pool window must divide the spatial dimensions");
            next.height = s.height / l.window;
            next.width = s.width / l.window;
          } else if constexpr (std::is_same_v<T, FlattenSpec>) {
            require(s.height > 0, "flatten applied twice");
            next = {s.size(), 0, 0};
          } else if constexpr (std::is_same_v<T, DenseSpec>) {
            require(s.height == 0, "dense layer requires flattened input");
            require(l.out_dim > 0, "dense width must be positive");
            next = {l.out_dim, 0, 0};
          }
          // relu preserves shape
        },
        layer);
    shapes.push_back(next);
  }
  return shapes;
}

std::string ExtractorSpec::fingerprint() const {
  std::ostringstream os;
  os << "in:" << input.channels << "x" << input.height << "x" << input.width;
  for (const LayerSpec& layer : layers) {
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, ConvSpec>)
            os << "|conv:o" << l.out_channels << ",k" << l.kernel << ",s" << l.stride << ",p"
               << conv_pad(l);
          else if constexpr (std::is_same_v<T, ReluSpec>)
            os << "|relu";
          else if constexpr (std::is_same_v<T, AvgPoolSpec>)
            os << "|pool:" << l.window;
          else if constexpr (std::is_same_v<T, FlattenSpec>)
            os << "|flatten";
          else if constexpr (std::is_same_v<T, DenseSpec>)
            os << "|dense:" << l.out_dim;
        },
        layer);
  }
  return os.str();
}

ExtractorWeights materialize(const ExtractorSpec& spec, const ExtractorParams& params) {
  require(params.init_scale > 0.0 && std::isfinite(params.init_scale),
          "init scale must be positive");
  const auto io = chained_shapes(spec);
  ExtractorWeights w;
  w.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
      const Index fan_in = io[i].in.channels * conv->kernel * conv->kernel;
      RngStream s = RngStream::derive(
          params.seed, {static_cast<std::uint64_t>(StreamUse::kExtractorInit), i});
      w.layers[i] = s.gaussian_matrix(conv->out_channels, fan_in,
                                      params.init_scale / std::sqrt(static_cast<double>(fan_in)));
    } else if (const auto* dense = std::get_if<DenseSpec>(&layer)) {
      const Index fan_in = io[i].in.size();
      RngStream s = RngStream::derive(
          params.seed, {static_cast<std::uint64_t>(StreamUse::kExtractorInit), i});
      w.layers[i] = s.gaussian_matrix(dense->out_dim, fan_in,
                                      params.init_scale / std::sqrt(static_cast<double>(fan_in)));
    }
  }
  return w;
}

Vector extract_features(const ExtractorSpec& spec, const ExtractorWeights& w,
                        const Eigen::Ref<const Vector>& image, ForwardTrace* trace) {
  const auto io = chained_shapes(spec);
  require(w.layers.size() == spec.layers.size(), "weights do not match spec");
  require(image.size() == io.front().in.size(), "image size does not match extractor input");
  if (trace) trace->layer_inputs.clear();

  Vector act = image;
  Matrix col;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerShape& si = io[i].in;
    const LayerShape& so = io[i].out;
    if (trace) trace->layer_inputs.push_back(act);
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, ConvSpec>) {
            im2col(act.data(), si, l, so.height, so.width, col);
            Vector out(so.size());
            Eigen::Map<Matrix> outm(out.data(), so.height * so.width, so.channels);
            outm.noalias() = col * w.layers[i].transpose();
            act = std::move(out);
          } else if constexpr (std::is_same_v<T, ReluSpec>) {
            act = act.cwiseMax(0.0);
          } else if constexpr (std::is_same_v<T, AvgPoolSpec>) {
            const Index win = l.window;
            Vector out = Vector::Zero(so.size());
            const double inv = 1.0 / static_cast<double>(win * win);
            for (Index c = 0; c < si.channels; ++c) {
              const double* plane = act.data() + c * si.height * si.width;
              double* oplane = out.data() + c * so.height * so.width;
              for (Index y = 0; y < si.height; ++y)
                for (Index x = 0; x < si.width; ++x)
                  oplane[(y / win) * so.width + (x / win)] += plane[y * si.width + x] * inv;
            }
            act = std::move(out);
          } else if constexpr (std::is_same_v<T, FlattenSpec>) {
            // layout is already (channel, row, column) flattened
          } else if constexpr (std::is_same_v<T, DenseSpec>) {
            act = (w.layers[i] * act).eval();
          }
        },
        spec.layers[i]);
  }
  return act;
}

Vector feature_input_gradient(const ExtractorSpec& spec, const ExtractorWeights& w,
                              const Eigen::Ref<const Vector>& image,
                              const Eigen::Ref<const Vector>& upstream) {
  const auto io = chained_shapes(spec);
  require(upstream.size() == io.back().out.size(),
          "upstream size does not match feature dimension");
  ForwardTrace trace;
  extract_features(spec, w, image, &trace);

  Vector g = upstream;
  Matrix col, dcol;
  for (std::size_t idx = spec.layers.size(); idx-- > 0;) {
    const LayerShape& si = io[idx].in;
    const LayerShape& so = io[idx].out;
    const Vector& x = trace.layer_inputs[idx];
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, ConvSpec>) {
            Eigen::Map<const Matrix> gm(g.data(), so.height * so.width, so.channels);
            dcol.noalias() = gm * w.layers[idx];
            Vector gin = Vector::Zero(si.size());
            col2im(dcol, si, l, so.height, so.width, gin.data());
            g = std::move(gin);
          } else if constexpr (std::is_same_v<T, ReluSpec>) {
            for (Index j = 0; j < g.size(); ++j)
              if (x[j] <= 0.0) g[j] = 0.0;
          } else if constexpr (std::is_same_v<T, AvgPoolSpec>) {
            const Index win = l.window;
            Vector gin(si.size());
            const double inv = 1.0 / static_cast<double>(win * win);
            for (Index c = 0; c < si.channels; ++c) {
              const double* gplane = g.data() + c * so.height * so.width;
              double* iplane = gin.data() + c * si.height * si.width;
              for (Index y = 0; y < si.height; ++y)
                for (Index xpix = 0; xpix < si.width; ++xpix)
                  iplane[y * si.width + xpix] =
                      gplane[(y / win) * so.width + (xpix / win)] * inv;
            }
            g = std::move(gin);
          } else if constexpr (std::is_same_v<T, FlattenSpec>) {
            // no-op
          } else if constexpr (std::is_same_v<T, DenseSpec>) {
            g = (w.layers[idx].transpose() * g).eval();
          }
        },
        spec.layers[idx]);
  }
  return g;
}

}  // namespace dpdd
