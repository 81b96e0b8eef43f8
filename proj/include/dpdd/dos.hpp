#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dpdd/augment.hpp"
#include "dpdd/common.hpp"
#include "dpdd/extractor.hpp"
#include "dpdd/privacy.hpp"
#include "dpdd/ser.hpp"
#include "dpdd/tensor.hpp"

namespace dpdd {

// Bernoulli inclusion at the given rate for every index in [0, population);
// the expected batch size, not the realized one, is what the fixed-denominator
// mean uses downstream.
std::vector<Index> poisson_sample(Index population, double rate, RngStream& stream);

// One privatized class signal: everything the optimization stage needs to
// rebuild the matching target and its synthetic counterpart, and nothing
// about the private records themselves.
struct SignalRecord {
  Index iteration = 0;
  Index class_id = 0;
  std::uint64_t extractor_seed = 0;  // materializes theta_i
  std::uint64_t augment_seed = 0;    // draws zeta_{i,c}
  std::shared_ptr<const Projection> projection;  // null when SER is off
  Vector noisy_mean;                 // subspace coords when projected
};

struct StoreMeta {
  Index classes = 0;
  Index iterations = 0;    // I1
  Index feature_dim = 0;   // D
  Index subspace_dim = 0;  // d; 0 means no projection
  double clip_bound = 0.0;
  Index group_size = 0;  // L, the fixed mean denominator
  double sigma = 0.0;
  double sampling_rate = 0.0;  // max over classes, as composed
  double noise_multiplier = 0.0;
  double epsilon = 0.0;  // realized, from the accountant
  double delta = 0.0;
  double init_scale = 1.0;
  std::uint64_t master_seed = 0;
  std::string config_hash;
  std::string extractor;    // parseable architecture string
  std::string augment;      // parseable policy string
};

// Sealed output of the sampling stage. Everything after this point is
// post-processing: the store exposes const access only.
class SignalStore {
 public:
  SignalStore(StoreMeta meta, std::vector<SignalRecord> records);

  const StoreMeta& meta() const { return meta_; }
  const std::vector<SignalRecord>& records() const { return records_; }
  const SignalRecord& record(Index iteration, Index class_id) const;
  Index signal_dim() const {
    return meta_.subspace_dim > 0 ? meta_.subspace_dim : meta_.feature_dim;
  }
  const ExtractorSpec& extractor() const { return extractor_; }
  const AugmentPolicy& augment() const { return augment_; }
  ImageShape image_shape() const { return extractor_.input; }

 private:
  StoreMeta meta_;
  std::vector<SignalRecord> records_;  // iteration-major, then class
  ExtractorSpec extractor_;
  AugmentPolicy augment_;
};

// Round-trippable encodings of the architecture and augmentation policy,
// embedded in store metadata so the optimization stage is self-contained.
std::string encode_extractor(const ExtractorSpec& spec);
ExtractorSpec decode_extractor(const std::string& text);
std::string encode_augment(const AugmentPolicy& policy);
AugmentPolicy decode_augment(const std::string& text);

struct SampleConfig {
  ExtractorSpec extractor;
  double init_scale = 1.0;
  AugmentPolicy augment;
  double clip_bound = 1.0;   // K
  Index group_size = 0;      // L
  double sigma = 0.0;        // calibrated noise stddev on the mean
  double noise_multiplier = 0.0;
  double epsilon = 0.0;      // realized budget, recorded in metadata
  double delta = 0.0;
  Index iterations = 0;      // I1
  Index subspace_dim = 0;    // 0 disables projection
  std::uint64_t master_seed = 0;
  std::string config_hash;
  int workers = 1;
};

struct SampleStageResult {
  SignalStore store;
  AccountantState ledger;
};

// The only function that reads private data. Draws theta_i and zeta_{i,c},
// Poisson-samples each class, averages clipped (optionally projected)
// features over the fixed denominator L, adds calibrated Gaussian noise,
// and seals everything into the store. `aux` is required iff subspace_dim
// is positive.
SampleStageResult sample_stage(const Dataset& private_data, const AuxiliarySet* aux,
                               const SampleConfig& cfg);

// Expected synthetic signal (1/M) sum_j proj(clip(f_theta(A_zeta(z_j)))) for
// one record; shares every code path with the sampling side.
Vector synth_signal(const SignalStore& store, const SignalRecord& rec,
                    const ExtractorWeights& weights, const Eigen::Ref<const Matrix>& z);

struct MatchResult {
  double loss = 0.0;
  Matrix grad;  // d loss / d z, same layout as z
};
MatchResult match_signal(const SignalStore& store, const SignalRecord& rec,
                         const ExtractorWeights& weights, const Eigen::Ref<const Matrix>& z);

enum class RecordSelection { kUniform, kSequential, kShuffled };
RecordSelection record_selection_from_string(const std::string& s);
std::string to_string(RecordSelection s);

struct OptimizeConfig {
  Index per_class = 1;  // M
  Index iterations = 0; // I2
  double lr = 0.1;
  double init_std = 0.1;
  RecordSelection selection = RecordSelection::kUniform;
  int workers = 1;
};

// Distilled images plus optimizer state, so runs can be audited or resumed.
struct SyntheticSet {
  ImageShape shape;
  std::vector<Matrix> class_images;  // per class, rows are images in [0, 1]
  std::vector<Matrix> accumulators;  // adagrad squared-gradient sums
  long long steps = 0;

  Dataset as_dataset() const;
};

struct OptimizeResult {
  SyntheticSet set;
  Matrix loss_trace;  // iterations x classes
};

// Pure post-processing: consumes the sealed store only. Same master seed,
// same store, same config => bitwise identical result.
OptimizeResult optimize_stage(const SignalStore& store, const OptimizeConfig& cfg);

// Store file ("DSSS"): magic, u32 version, u64 header fields, metadata text,
// then fixed-size records. Atomic write.
void write_store(const std::filesystem::path& path, const SignalStore& store);
SignalStore read_store(const std::filesystem::path& path);

}  // namespace dpdd
