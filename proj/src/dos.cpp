#include "dpdd/dos.hpp"

#include <cstring>
#include <map>
#include <sstream>

#include "dpdd/io.hpp"

namespace dpdd {
namespace {

constexpr char kStoreMagic[4] = {'D', 'S', 'S', 'S'};
constexpr std::uint32_t kStoreVersion = 1;
constexpr double kAdagradEps = 1e-8;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_f64(std::string& out, const double* p, std::size_t n) {
  const std::size_t off = out.size();
  out.resize(off + 8 * n);
  if (n) std::memcpy(out.data() + off, p, 8 * n);
}

struct Cursor {
  const unsigned char* p;
  std::size_t len, off = 0;

  void need(std::size_t n, const char* what) {
    if (off + n > len) throw IoError(std::string("store file truncated reading ") + what);
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  void f64(double* dst, std::size_t n, const char* what) {
    need(8 * n, what);
    if (n) std::memcpy(dst, p + off, 8 * n);
    off += 8 * n;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(p + off), n);
    off += n;
    return s;
  }
};

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed metadata line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& kv_get(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw IoError("store metadata missing key: " + key);
  return it->second;
}

// Per-image signal shared verbatim between the sampling and optimization
// stages: project(clip(features(augment(x)))).
Vector image_signal(const ExtractorSpec& spec, const ExtractorWeights& weights,
                    const AugmentPolicy& policy, const AugmentParams& params,
                    double clip_bound, const Projection* proj,
                    const Eigen::Ref<const Vector>& image) {
  const Vector a = apply_augment(policy, params, spec.input, image);
  const Vector u = clip_to_norm(extract_features(spec, weights, a), clip_bound);
  return proj ? project(*proj, u) : u;
}

Vector clip_backward(const Eigen::Ref<const Vector>& v, double bound,
                     const Eigen::Ref<const Vector>& g) {
  const double n = v.norm();
  if (n <= bound) return g;
  const Vector vhat = v / n;
  return (bound / n) * (g - vhat * vhat.dot(g));
}

}  // namespace

std::vector<Index> poisson_sample(Index population, double rate, RngStream& stream) {
  require(population >= 0, "population must be nonnegative");
  require(rate > 0.0 && rate <= 1.0, "sampling rate must lie in (0, 1]");
  std::vector<Index> out;
  for (Index i = 0; i < population; ++i)
    if (stream.next_bernoulli(rate)) out.push_back(i);
  return out;
}

std::string encode_extractor(const ExtractorSpec& spec) { return spec.fingerprint(); }

ExtractorSpec decode_extractor(const std::string& text) {
  ExtractorSpec spec;
  std::stringstream ss(text);
  std::string tok;
  bool first = true;
  const auto want_int = [](const std::string& s, const char* what) {
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &pos);
    } catch (const std::exception&) {
      throw ValidationError(std::string("bad integer in extractor text: ") + what);
    }
    require(pos == s.size(), std::string("trailing junk in ") + what);
    return static_cast<Index>(v);
  };
  while (std::getline(ss, tok, '|')) {
    if (first) {
      require(tok.rfind("in:", 0) == 0, "extractor text must start with in:CxHxW");
      std::string dims = tok.substr(3);
      for (auto& ch : dims)
        if (ch == 'x') ch = ' ';
      std::istringstream ds(dims);
      if (!(ds >> spec.input.channels >> spec.input.height >> spec.input.width))
        throw ValidationError("bad extractor input shape: " + tok);
      first = false;
      continue;
    }
    if (tok == "relu") {
      spec.layers.push_back(ReluSpec{});
    } else if (tok == "flatten") {
      spec.layers.push_back(FlattenSpec{});
    } else if (tok.rfind("pool:", 0) == 0) {
      spec.layers.push_back(AvgPoolSpec{want_int(tok.substr(5), "pool window")});
    } else if (tok.rfind("dense:", 0) == 0) {
      spec.layers.push_back(DenseSpec{want_int(tok.substr(6), "dense width")});
    } else if (tok.rfind("conv:", 0) == 0) {
      ConvSpec c;
      std::stringstream cs(tok.substr(5));
      std::string field;
      while (std::getline(cs, field, ',')) {
        require(field.size() >= 2, "bad conv field: " + field);
        const Index v = want_int(field.substr(1), "conv parameter");
        switch (field[0]) {
          case 'o': c.out_channels = v; break;
          case 'k': c.kernel = v; break;
          case 's': c.stride = v; break;
          case 'p': c.pad = v; break;
          default: throw ValidationError("unknown conv field: " + field);
        }
      }
      spec.layers.push_back(c);
    } else {
      throw ValidationError("unknown extractor layer: " + tok);
    }
  }
  require(!first, "empty extractor text");
  spec.layer_shapes();  // validates chaining
  return spec;
}

std::string encode_augment(const AugmentPolicy& p) {
  std::ostringstream os;
  os << "ops=" << p.ops_string();
  os << ";crop_pad=" << fmt_double(p.crop_pad);
  os << ";brightness_delta=" << fmt_double(p.brightness_delta);
  os << ";saturation_delta=" << fmt_double(p.saturation_delta);
  os << ";cutout_fraction=" << fmt_double(p.cutout_fraction);
  return os.str();
}

AugmentPolicy decode_augment(const std::string& text) {
  AugmentPolicy p;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ';')) {
    const auto eq = tok.find('=');
    require(eq != std::string::npos, "malformed augment field: " + tok);
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "ops") {
      const AugmentPolicy ops = AugmentPolicy::from_ops(val);
      p.crop = ops.crop;
      p.flip = ops.flip;
      p.brightness = ops.brightness;
      p.saturation = ops.saturation;
      p.cutout = ops.cutout;
    } else if (key == "crop_pad") {
      p.crop_pad = std::stod(val);
    } else if (key == "brightness_delta") {
      p.brightness_delta = std::stod(val);
    } else if (key == "saturation_delta") {
      p.saturation_delta = std::stod(val);
    } else if (key == "cutout_fraction") {
      p.cutout_fraction = std::stod(val);
    } else {
      throw ValidationError("unknown augment field: " + key);
    }
  }
  return p;
}

SignalStore::SignalStore(StoreMeta meta, std::vector<SignalRecord> records)
    : meta_(std::move(meta)), records_(std::move(records)) {
  extractor_ = decode_extractor(meta_.extractor);
  augment_ = decode_augment(meta_.augment);
  require(meta_.classes > 0 && meta_.iterations > 0, "store must hold at least one record");
  require(static_cast<Index>(records_.size()) == meta_.classes * meta_.iterations,
          "record count disagrees with header");
  require(meta_.feature_dim == extractor_.feature_dim(),
          "feature dimension disagrees with extractor");
  require(meta_.subspace_dim >= 0 && meta_.subspace_dim <= meta_.feature_dim,
          "subspace dimension out of range");
  require(meta_.clip_bound > 0.0 && meta_.group_size > 0 && meta_.sigma > 0.0,
          "store metadata must record positive clip bound, group size and sigma");
  const Index dim = signal_dim();
  for (Index i = 0; i < meta_.iterations; ++i) {
    for (Index c = 0; c < meta_.classes; ++c) {
      const SignalRecord& r = records_[static_cast<std::size_t>(i * meta_.classes + c)];
      require(r.iteration == i && r.class_id == c, "records out of order");
      require(r.noisy_mean.size() == dim, "record signal dimension mismatch");
      if (meta_.subspace_dim > 0) {
        require(r.projection != nullptr, "record missing projection");
        require(r.projection->ambient_dim() == meta_.feature_dim &&
                    r.projection->subspace_dim() == meta_.subspace_dim,
                "record projection has wrong dimensions");
      } else {
        require(r.projection == nullptr, "unexpected projection in unprojected store");
      }
      check_finite(r.noisy_mean, "record signal");
    }
  }
}

const SignalRecord& SignalStore::record(Index iteration, Index class_id) const {
  require(iteration >= 0 && iteration < meta_.iterations, "iteration out of range");
  require(class_id >= 0 && class_id < meta_.classes, "class out of range");
  return records_[static_cast<std::size_t>(iteration * meta_.classes + class_id)];
}

SampleStageResult sample_stage(const Dataset& private_data, const AuxiliarySet* aux,
                               const SampleConfig& cfg) {
  const Index C = private_data.num_classes();
  require(C > 0, "private dataset has no classes");
  for (const Matrix& m : private_data.class_images)
    require(m.rows() > 0, "every class needs at least one private image");
  require(private_data.shape == cfg.extractor.input,
          "private image shape does not match extractor input");
  require(cfg.group_size >= 1, "group size must be positive");
  require(cfg.clip_bound > 0.0, "clip bound must be positive");
  require(cfg.sigma > 0.0, "sigma must be positive; calibrate first");
  require(cfg.iterations >= 1, "need at least one sampling iteration");
  const Index D = cfg.extractor.feature_dim();
  require(cfg.subspace_dim >= 0 && cfg.subspace_dim <= D, "subspace dimension out of range");
  if (cfg.subspace_dim > 0)
    require(aux != nullptr, "subspace reduction requires auxiliary data");

  const double nm = cfg.noise_multiplier > 0.0
                        ? cfg.noise_multiplier
                        : cfg.sigma * static_cast<double>(cfg.group_size) / cfg.clip_bound;
  double q_max = 0.0;
  std::vector<double> q(static_cast<std::size_t>(C));
  for (Index c = 0; c < C; ++c) {
    const auto n = static_cast<double>(private_data.class_images[static_cast<std::size_t>(c)].rows());
    q[static_cast<std::size_t>(c)] = std::min(1.0, static_cast<double>(cfg.group_size) / n);
    q_max = std::max(q_max, q[static_cast<std::size_t>(c)]);
  }

  const Index dim = cfg.subspace_dim > 0 ? cfg.subspace_dim : D;
  std::vector<SignalRecord> records(static_cast<std::size_t>(cfg.iterations * C));

  parallel_for(cfg.iterations, cfg.workers, [&](Index i) {
    const std::uint64_t theta_key = RngStream::derive_key(
        cfg.master_seed,
        {static_cast<std::uint64_t>(StreamUse::kExtractorInit), static_cast<std::uint64_t>(i)});
    const ExtractorWeights weights =
        materialize(cfg.extractor, {theta_key, cfg.init_scale});

    std::shared_ptr<const Projection> proj;
    if (cfg.subspace_dim > 0) {
      const Matrix feats = aux_features(*aux, cfg.extractor, weights, cfg.clip_bound);
      proj = std::make_shared<const Projection>(discover_subspace(feats, cfg.subspace_dim));
    }

    for (Index c = 0; c < C; ++c) {
      const Matrix& batch = private_data.class_images[static_cast<std::size_t>(c)];
      const std::uint64_t zeta_key = RngStream::derive_key(
          cfg.master_seed, {static_cast<std::uint64_t>(StreamUse::kAugment),
                            static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(c)});
      RngStream zeta(zeta_key);
      const AugmentParams params =
          sample_augment_params(cfg.augment, cfg.extractor.input, zeta);

      RngStream picker = RngStream::derive(
          cfg.master_seed, {static_cast<std::uint64_t>(StreamUse::kPoisson),
                            static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(c)});
      const std::vector<Index> chosen =
          poisson_sample(batch.rows(), q[static_cast<std::size_t>(c)], picker);

      Vector sum = Vector::Zero(dim);
      for (Index row : chosen)
        sum += image_signal(cfg.extractor, weights, cfg.augment, params, cfg.clip_bound,
                            proj.get(), batch.row(row).transpose());
      // Fixed denominator: the realized batch size stays private.
      Vector mean = sum / static_cast<double>(cfg.group_size);

      RngStream noise = RngStream::derive(
          cfg.master_seed, {static_cast<std::uint64_t>(StreamUse::kNoise),
                            static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(c)});
      mean += noise.gaussian_vector(dim, cfg.sigma);
      check_finite(mean, "privatized signal");

      SignalRecord rec;
      rec.iteration = i;
      rec.class_id = c;
      rec.extractor_seed = theta_key;
      rec.augment_seed = zeta_key;
      rec.projection = proj;
      rec.noisy_mean = std::move(mean);
      records[static_cast<std::size_t>(i * C + c)] = std::move(rec);
    }
  });

  AccountantState ledger = AccountantState::fresh();
  ledger.compose(q_max, nm, cfg.iterations);

  StoreMeta meta;
  meta.classes = C;
  meta.iterations = cfg.iterations;
  meta.feature_dim = D;
  meta.subspace_dim = cfg.subspace_dim;
  meta.clip_bound = cfg.clip_bound;
  meta.group_size = cfg.group_size;
  meta.sigma = cfg.sigma;
  meta.sampling_rate = q_max;
  meta.noise_multiplier = nm;
  meta.epsilon = cfg.epsilon;
  meta.delta = cfg.delta;
  meta.init_scale = cfg.init_scale;
  meta.master_seed = cfg.master_seed;
  meta.config_hash = cfg.config_hash;
  meta.extractor = encode_extractor(cfg.extractor);
  meta.augment = encode_augment(cfg.augment);

  return {SignalStore(std::move(meta), std::move(records)), std::move(ledger)};
}

Vector synth_signal(const SignalStore& store, const SignalRecord& rec,
                    const ExtractorWeights& weights, const Eigen::Ref<const Matrix>& z) {
  require(z.rows() > 0, "synthetic batch is empty");
  require(z.cols() == store.image_shape().pixels(),
          "synthetic image size does not match store");
  RngStream zeta(rec.augment_seed);
  const AugmentParams params =
      sample_augment_params(store.augment(), store.image_shape(), zeta);
  Vector sum = Vector::Zero(store.signal_dim());
  for (Index j = 0; j < z.rows(); ++j)
    sum += image_signal(store.extractor(), weights, store.augment(), params,
                        store.meta().clip_bound, rec.projection.get(), z.row(j).transpose());
  return sum / static_cast<double>(z.rows());
}

MatchResult match_signal(const SignalStore& store, const SignalRecord& rec,
                         const ExtractorWeights& weights, const Eigen::Ref<const Matrix>& z) {
  const Index m = z.rows();
  require(m > 0, "synthetic batch is empty");
  const ImageShape shape = store.image_shape();
  require(z.cols() == shape.pixels(), "synthetic image size does not match store");
  const ExtractorSpec& spec = store.extractor();
  const AugmentPolicy& policy = store.augment();
  const double bound = store.meta().clip_bound;
  const Projection* proj = rec.projection.get();

  RngStream zeta(rec.augment_seed);
  const AugmentParams params = sample_augment_params(policy, shape, zeta);

  std::vector<Vector> augmented(static_cast<std::size_t>(m));
  std::vector<Vector> features(static_cast<std::size_t>(m));
  Vector synth = Vector::Zero(store.signal_dim());
  for (Index j = 0; j < m; ++j) {
    augmented[static_cast<std::size_t>(j)] =
        apply_augment(policy, params, shape, z.row(j).transpose());
    features[static_cast<std::size_t>(j)] =
        extract_features(spec, weights, augmented[static_cast<std::size_t>(j)]);
    const Vector u = clip_to_norm(features[static_cast<std::size_t>(j)], bound);
    synth += proj ? project(*proj, u) : u;
  }
  synth /= static_cast<double>(m);

  const Vector diff = synth - rec.noisy_mean;
  MatchResult out;
  out.loss = diff.squaredNorm();
  out.grad.resize(m, shape.pixels());

  const Vector up_signal = (2.0 / static_cast<double>(m)) * diff;
  const Vector up_feature_space = proj ? reconstruct(*proj, up_signal) : up_signal;
  for (Index j = 0; j < m; ++j) {
    const Vector g_feat =
        clip_backward(features[static_cast<std::size_t>(j)], bound, up_feature_space);
    const Vector g_aug = feature_input_gradient(
        spec, weights, augmented[static_cast<std::size_t>(j)], g_feat);
    out.grad.row(j) = augment_input_gradient(policy, params, shape, g_aug).transpose();
  }
  return out;
}

RecordSelection record_selection_from_string(const std::string& s) {
  if (s == "uniform") return RecordSelection::kUniform;
  if (s == "sequential") return RecordSelection::kSequential;
  if (s == "shuffled") return RecordSelection::kShuffled;
  throw ValidationError("unknown record selection mode: " + s);
}

std::string to_string(RecordSelection s) {
  switch (s) {
    case RecordSelection::kUniform: return "uniform";
    case RecordSelection::kSequential: return "sequential";
    case RecordSelection::kShuffled: return "shuffled";
  }
  return "uniform";
}

Dataset SyntheticSet::as_dataset() const {
  Dataset ds;
  ds.shape = shape;
  ds.class_images = class_images;
  return ds;
}

OptimizeResult optimize_stage(const SignalStore& store, const OptimizeConfig& cfg) {
  require(cfg.per_class >= 1, "need at least one synthetic image per class");
  require(cfg.iterations >= 1, "need at least one optimization step");
  require(cfg.lr > 0.0 && std::isfinite(cfg.lr), "learning rate must be positive");
  require(cfg.init_std >= 0.0, "init stddev must be nonnegative");

  const StoreMeta& meta = store.meta();
  const Index C = meta.classes;
  const Index I1 = meta.iterations;
  const ImageShape shape = store.image_shape();
  const Index px = shape.pixels();

  OptimizeResult out;
  out.set.shape = shape;
  out.set.class_images.resize(static_cast<std::size_t>(C));
  out.set.accumulators.resize(static_cast<std::size_t>(C));
  for (Index c = 0; c < C; ++c) {
    RngStream init = RngStream::derive(
        meta.master_seed, {static_cast<std::uint64_t>(StreamUse::kSynthInit),
                           static_cast<std::uint64_t>(c)});
    Matrix z = init.gaussian_matrix(cfg.per_class, px, cfg.init_std);
    z.array() += 0.5;
    out.set.class_images[static_cast<std::size_t>(c)] =
        z.cwiseMax(0.0).cwiseMin(1.0);
    out.set.accumulators[static_cast<std::size_t>(c)] = Matrix::Zero(cfg.per_class, px);
  }
  out.loss_trace.resize(cfg.iterations, C);

  // theta_i is shared across classes within an iteration, so cache weights
  // per store iteration.
  std::vector<std::unique_ptr<ExtractorWeights>> weight_cache(static_cast<std::size_t>(I1));
  const auto weights_for = [&](const SignalRecord& rec) -> const ExtractorWeights& {
    auto& slot = weight_cache[static_cast<std::size_t>(rec.iteration)];
    if (!slot)
      slot = std::make_unique<ExtractorWeights>(
          materialize(store.extractor(), {rec.extractor_seed, meta.init_scale}));
    return *slot;
  };

  std::vector<RngStream> pickers;
  pickers.reserve(static_cast<std::size_t>(C));
  for (Index c = 0; c < C; ++c)
    pickers.push_back(RngStream::derive(
        meta.master_seed, {static_cast<std::uint64_t>(StreamUse::kRecordSelect),
                           static_cast<std::uint64_t>(c)}));
  std::vector<std::vector<Index>> perm(static_cast<std::size_t>(C));

  for (Index t = 0; t < cfg.iterations; ++t) {
    for (Index c = 0; c < C; ++c) {
      Index pick = 0;
      switch (cfg.selection) {
        case RecordSelection::kUniform:
          pick = static_cast<Index>(
              pickers[static_cast<std::size_t>(c)].next_below(static_cast<std::uint64_t>(I1)));
          break;
        case RecordSelection::kSequential:
          pick = t % I1;
          break;
        case RecordSelection::kShuffled: {
          auto& p = perm[static_cast<std::size_t>(c)];
          if (t % I1 == 0) {
            p.resize(static_cast<std::size_t>(I1));
            for (Index k = 0; k < I1; ++k) p[static_cast<std::size_t>(k)] = k;
            RngStream shuffle = RngStream::derive(
                meta.master_seed,
                {static_cast<std::uint64_t>(StreamUse::kRecordSelect),
                 static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(t / I1)});
            // Fisher-Yates with our own stream, for cross-platform stability.
            for (Index k = I1 - 1; k > 0; --k) {
              const auto j = static_cast<Index>(
                  shuffle.next_below(static_cast<std::uint64_t>(k + 1)));
              std::swap(p[static_cast<std::size_t>(k)], p[static_cast<std::size_t>(j)]);
            }
          }
          pick = p[static_cast<std::size_t>(t % I1)];
          break;
        }
      }

      const SignalRecord& rec = store.record(pick, c);
      Matrix& z = out.set.class_images[static_cast<std::size_t>(c)];
      Matrix& acc = out.set.accumulators[static_cast<std::size_t>(c)];
      const MatchResult mr = match_signal(store, rec, weights_for(rec), z);
      if (!std::isfinite(mr.loss))
        throw NumericalError("matching loss diverged at step " + std::to_string(t) +
                             ", class " + std::to_string(c));
      out.loss_trace(t, c) = mr.loss;

      acc.array() += mr.grad.array().square();
      z.array() -= cfg.lr * mr.grad.array() / (acc.array().sqrt() + kAdagradEps);
      z = z.cwiseMax(0.0).cwiseMin(1.0);
    }
  }
  out.set.steps = cfg.iterations;
  return out;
}

void write_store(const std::filesystem::path& path, const SignalStore& store) {
  const StoreMeta& m = store.meta();
  std::string buf;
  buf.append(kStoreMagic, 4);
  append_u32(buf, kStoreVersion);
  append_u64(buf, static_cast<std::uint64_t>(m.classes));
  append_u64(buf, static_cast<std::uint64_t>(m.iterations));
  append_u64(buf, static_cast<std::uint64_t>(m.feature_dim));
  append_u64(buf, static_cast<std::uint64_t>(m.subspace_dim));

  std::ostringstream meta;
  meta << "clip_bound=" << fmt_double(m.clip_bound) << "\n";
  meta << "group_size=" << m.group_size << "\n";
  meta << "sigma=" << fmt_double(m.sigma) << "\n";
  meta << "sampling_rate=" << fmt_double(m.sampling_rate) << "\n";
  meta << "noise_multiplier=" << fmt_double(m.noise_multiplier) << "\n";
  meta << "epsilon=" << fmt_double(m.epsilon) << "\n";
  meta << "delta=" << fmt_double(m.delta) << "\n";
  meta << "init_scale=" << fmt_double(m.init_scale) << "\n";
  meta << "master_seed=" << m.master_seed << "\n";
  meta << "config_hash=" << m.config_hash << "\n";
  meta << "extractor=" << m.extractor << "\n";
  meta << "augment=" << m.augment << "\n";
  const std::string meta_text = meta.str();
  append_u64(buf, meta_text.size());
  buf += meta_text;

  for (const SignalRecord& r : store.records()) {
    append_u64(buf, static_cast<std::uint64_t>(r.iteration));
    append_u64(buf, static_cast<std::uint64_t>(r.class_id));
    append_u64(buf, r.augment_seed);
    append_u64(buf, r.extractor_seed);
    if (m.subspace_dim > 0)
      append_f64(buf, r.projection->basis().data(),
                 static_cast<std::size_t>(m.feature_dim * m.subspace_dim));
    append_f64(buf, r.noisy_mean.data(), static_cast<std::size_t>(r.noisy_mean.size()));
  }
  atomic_write_file(path, buf);
}

SignalStore read_store(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  Cursor cur{reinterpret_cast<const unsigned char*>(buf.data()), buf.size()};
  const std::string magic = cur.bytes(4, "magic");
  if (std::memcmp(magic.data(), kStoreMagic, 4) != 0)
    throw IoError("not a signal store: " + path.string());
  const std::uint32_t version = cur.u32("version");
  if (version != kStoreVersion)
    throw IoError("unsupported store version " + std::to_string(version));

  StoreMeta m;
  m.classes = static_cast<Index>(cur.u64("classes"));
  m.iterations = static_cast<Index>(cur.u64("iterations"));
  m.feature_dim = static_cast<Index>(cur.u64("feature_dim"));
  m.subspace_dim = static_cast<Index>(cur.u64("subspace_dim"));
  const std::uint64_t meta_len = cur.u64("metadata length");
  const auto kv = parse_kv(cur.bytes(meta_len, "metadata"));
  m.clip_bound = std::stod(kv_get(kv, "clip_bound"));
  m.group_size = static_cast<Index>(std::stoll(kv_get(kv, "group_size")));
  m.sigma = std::stod(kv_get(kv, "sigma"));
  m.sampling_rate = std::stod(kv_get(kv, "sampling_rate"));
  m.noise_multiplier = std::stod(kv_get(kv, "noise_multiplier"));
  m.epsilon = std::stod(kv_get(kv, "epsilon"));
  m.delta = std::stod(kv_get(kv, "delta"));
  m.init_scale = std::stod(kv_get(kv, "init_scale"));
  m.master_seed = std::stoull(kv_get(kv, "master_seed"));
  m.config_hash = kv_get(kv, "config_hash");
  m.extractor = kv_get(kv, "extractor");
  m.augment = kv_get(kv, "augment");

  const Index dim = m.subspace_dim > 0 ? m.subspace_dim : m.feature_dim;
  std::vector<SignalRecord> records;
  records.reserve(static_cast<std::size_t>(m.classes * m.iterations));
  std::shared_ptr<const Projection> last_proj;
  Index last_proj_iter = -1;
  for (Index i = 0; i < m.iterations; ++i) {
    for (Index c = 0; c < m.classes; ++c) {
      SignalRecord r;
      r.iteration = static_cast<Index>(cur.u64("record iteration"));
      r.class_id = static_cast<Index>(cur.u64("record class"));
      r.augment_seed = cur.u64("record augment seed");
      r.extractor_seed = cur.u64("record extractor seed");
      if (m.subspace_dim > 0) {
        Matrix basis(m.feature_dim, m.subspace_dim);
        cur.f64(basis.data(), static_cast<std::size_t>(basis.size()), "record projection");
        // Projections repeat within an iteration; share storage when equal.
        if (last_proj_iter == r.iteration && last_proj && last_proj->basis() == basis) {
          r.projection = last_proj;
        } else {
          r.projection = std::make_shared<const Projection>(std::move(basis));
          last_proj = r.projection;
          last_proj_iter = r.iteration;
        }
      }
      r.noisy_mean.resize(dim);
      cur.f64(r.noisy_mean.data(), static_cast<std::size_t>(dim), "record signal");
      records.push_back(std::move(r));
    }
  }
  if (cur.off != cur.len) throw IoError("trailing bytes in store file: " + path.string());
  return SignalStore(std::move(m), std::move(records));
}

}  // namespace dpdd
