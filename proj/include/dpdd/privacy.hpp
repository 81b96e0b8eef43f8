#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "dpdd/common.hpp"

namespace dpdd {

struct PrivacyBudget {
  double epsilon = 0.0;
  double delta = 0.0;
};
void validate_budget(const PrivacyBudget& b);

// L2 projection onto the ball of radius `bound`. Vectors already inside the
// ball pass through bitwise unchanged.
Vector clip_to_norm(const Eigen::Ref<const Vector>& v, double bound);

// Renyi orders the accountant evaluates: 1.25 to 63.5 in steps of 0.25,
// plus 64, 128, 256.
const std::vector<double>& default_order_grid();

// Renyi divergence bound for one step of the Poisson-subsampled Gaussian
// mechanism at sampling rate q and noise multiplier (sigma / sensitivity)
// nm, evaluated at each requested order > 1. q == 1 uses the closed form
// alpha / (2 nm^2); integer orders use the exact binomial expansion in log
// space; fractional orders fall back to Gauss-Legendre quadrature of the
// defining expectation.
std::vector<double> rdp_step(double sampling_rate, double noise_multiplier,
                             const std::vector<double>& orders);

// Accumulated Renyi curve over a run, plus enough bookkeeping to audit it.
struct AccountantState {
  std::vector<double> orders;
  std::vector<double> rdp;  // same length as orders
  double sampling_rate = 0.0;
  double noise_multiplier = 0.0;
  long long steps = 0;

  static AccountantState fresh(const std::vector<double>& orders = default_order_grid());
  // Adds `count` identical mechanism invocations.
  void compose(double sampling_rate, double noise_multiplier, long long count);
};

struct DpEstimate {
  double epsilon = 0.0;
  double order = 0.0;  // argmin order
};

// Classic Renyi-to-(epsilon, delta) conversion:
// epsilon = min_alpha [ rdp(alpha) + log(1/delta) / (alpha - 1) ].
DpEstimate convert_to_dp(const AccountantState& state, double delta);

struct CalibrationResult {
  double sigma = 0.0;             // noise standard deviation, = nm * sensitivity
  double noise_multiplier = 0.0;  // sensitivity-free
  DpEstimate realized;            // accountant's epsilon at the returned sigma
};

// Smallest noise scale whose composed curve converts to at most
// budget.epsilon, found by exponential bracketing plus bisection to 1e-4
// relative width. Throws CalibrationError when the budget is unattainable
// (conversion floor log(1/delta)/(alpha_max - 1) already exceeds epsilon).
CalibrationResult calibrate_sigma(const PrivacyBudget& budget, double sampling_rate,
                                  long long steps, double sensitivity,
                                  const std::vector<double>& orders = default_order_grid());

// Sequential composition split: (f*eps, f*delta) and the exact remainder.
std::pair<PrivacyBudget, PrivacyBudget> split_budget(const PrivacyBudget& b, double fraction);

// Human-readable ledger with enough precision to reload exactly.
void write_ledger(const std::filesystem::path& path, const AccountantState& state,
                  double delta);
AccountantState read_ledger(const std::filesystem::path& path);

// The two evaluation routes behind rdp_step, exposed so tests can check them
// against each other on their common domain (integer orders).
namespace accountant_detail {
double rdp_binomial(double sampling_rate, double noise_multiplier, long long order);
double rdp_quadrature(double sampling_rate, double noise_multiplier, double order);
}  // namespace accountant_detail

}  // namespace dpdd
