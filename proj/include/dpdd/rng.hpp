#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

#include "dpdd/common.hpp"

namespace dpdd {

// Labels for the independent random streams a run consumes. Each label,
// together with a master seed and optional indices, maps to its own
// counter-based stream, so adding draws to one stage never perturbs another.
enum class StreamUse : std::uint64_t {
  kToyTrain = 1,
  kToyTest = 2,
  kAuxData = 3,
  kExtractorInit = 4,
  kAugment = 5,
  kPoisson = 6,
  kNoise = 7,
  kSynthInit = 8,
  kRecordSelect = 9,
  kClassifierInit = 10,
  kMcTrial = 11,
  kModelGen = 12,
  kPattern = 13,
  kGeneric = 14,
};

// Counter-based generator (Philox4x64-10). A stream is fully determined by
// its 64-bit key; block i of the keystream is independent of how many draws
// preceded it, which keeps long pipelines replayable and parallel-safe.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(std::uint64_t key);

  // Builds the key for a named stream by folding the path elements into the
  // master seed with a splitmix64-style mix chain.
  static std::uint64_t derive_key(std::uint64_t master_seed,
                                  std::initializer_list<std::uint64_t> path);
  static RngStream derive(std::uint64_t master_seed,
                          std::initializer_list<std::uint64_t> path);
  RngStream child(std::uint64_t index) const;

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64();
  // Uniform on (0, 1], 53-bit resolution.
  double next_uniform();
  double next_gaussian();
  bool next_bernoulli(double p);
  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n);

  void fill_gaussian(double* out, Index n, double sigma = 1.0);
  Vector gaussian_vector(Index n, double sigma = 1.0);
  Matrix gaussian_matrix(Index rows, Index cols, double sigma = 1.0);

 private:
  void refill();

  std::uint64_t key_ = 0;
  std::array<std::uint64_t, 4> counter_{};
  std::array<std::uint64_t, 4> block_{};
  int block_pos_ = 4;  // empty
  double gauss_cache_ = 0.0;
  bool gauss_cached_ = false;
};

// splitmix64 finalizer; used for key derivation only, never as a stream.
std::uint64_t mix64(std::uint64_t x);

}  // namespace dpdd
