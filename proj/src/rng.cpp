#include "dpdd/rng.hpp"

#include <cmath>

namespace dpdd {
namespace {

constexpr std::uint64_t kPhiloxM0 = 0xD2E7470EE14C6C93ull;
constexpr std::uint64_t kPhiloxM1 = 0xCA5A826395121157ull;
constexpr std::uint64_t kPhiloxW0 = 0x9E3779B97F4A7C15ull;
constexpr std::uint64_t kPhiloxW1 = 0xBB67AE8584CAA73Bull;

// Second key word shared by every stream; distinct streams differ in the
// first word only, which is enough for 2^64 independent keystreams.
constexpr std::uint64_t kKeySalt = 0x243F6A8885A308D3ull;

inline void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi, std::uint64_t& lo) {
  const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
  hi = static_cast<std::uint64_t>(p >> 64);
  lo = static_cast<std::uint64_t>(p);
}

inline void philox_round(std::array<std::uint64_t, 4>& c, std::uint64_t k0, std::uint64_t k1) {
  std::uint64_t hi0, lo0, hi1, lo1;
  mulhilo(kPhiloxM0, c[0], hi0, lo0);
  mulhilo(kPhiloxM1, c[2], hi1, lo1);
  c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
}

inline std::array<std::uint64_t, 4> philox10(std::array<std::uint64_t, 4> ctr,
                                             std::uint64_t k0, std::uint64_t k1) {
  for (int r = 0; r < 10; ++r) {
    philox_round(ctr, k0, k1);
    k0 += kPhiloxW0;
    k1 += kPhiloxW1;
  }
  return ctr;
}

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

RngStream::RngStream(std::uint64_t key) : key_(key) {}

std::uint64_t RngStream::derive_key(std::uint64_t master_seed,
                                    std::initializer_list<std::uint64_t> path) {
  std::uint64_t k = mix64(master_seed + kGolden);
  std::uint64_t pos = 1;
  for (std::uint64_t e : path) {
    k = mix64(k ^ mix64(e + kGolden * pos));
    ++pos;
  }
  return k;
}

RngStream RngStream::derive(std::uint64_t master_seed,
                            std::initializer_list<std::uint64_t> path) {
  return RngStream(derive_key(master_seed, path));
}

RngStream RngStream::child(std::uint64_t index) const {
  return RngStream(derive_key(key_, {index}));
}

void RngStream::refill() {
  // Pre-increment: the first emitted block uses counter value 1.
  if (++counter_[0] == 0)
    if (++counter_[1] == 0)
      if (++counter_[2] == 0) ++counter_[3];
  block_ = philox10(counter_, key_, kKeySalt);
  block_pos_ = 0;
}

std::uint64_t RngStream::next_u64() {
  if (block_pos_ >= 4) refill();
  return block_[block_pos_++];
}

double RngStream::next_uniform() {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double RngStream::next_gaussian() {
  if (gauss_cached_) {
    gauss_cached_ = false;
    return gauss_cache_;
  }
  const double u1 = next_uniform();
  const double u2 = next_uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  gauss_cache_ = r * std::sin(a);
  gauss_cached_ = true;
  return r * std::cos(a);
}

bool RngStream::next_bernoulli(double p) {
  require(p >= 0.0 && p <= 1.0, "bernoulli probability must lie in [0, 1]");
  return next_uniform() <= p;
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
  require(n > 0, "next_below requires a positive bound");
  // Rejection to kill modulo bias; at most one extra draw in expectation.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n + 1) % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x > limit);
  return x % n;
}

void RngStream::fill_gaussian(double* out, Index n, double sigma) {
  require(sigma >= 0.0, "sigma must be nonnegative");
  for (Index i = 0; i < n; ++i) out[i] = sigma * next_gaussian();
}

Vector RngStream::gaussian_vector(Index n, double sigma) {
  Vector v(n);
  fill_gaussian(v.data(), n, sigma);
  return v;
}

Matrix RngStream::gaussian_matrix(Index rows, Index cols, double sigma) {
  Matrix m(rows, cols);
  // Row-major fill so the draw order matches how records are written out.
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = sigma * next_gaussian();
  return m;
}

}  // namespace dpdd
