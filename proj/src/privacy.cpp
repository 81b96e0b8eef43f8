#include "dpdd/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "dpdd/io.hpp"

namespace dpdd {
namespace {

constexpr double kLogSqrt2Pi = 0.9189385332046727;  // log sqrt(2 pi)
constexpr double kCalibRelTol = 1e-4;
constexpr double kNoiseMultiplierFloor = 0.05;

double logsumexp(const std::vector<double>& xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

double log_binom(long long n, long long k) {
  return std::lgamma(static_cast<double>(n) + 1.0) -
         std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

// Nodes and weights of n-point Gauss-Legendre quadrature on [-1, 1],
// computed once by Newton iteration on the Legendre recurrence.
struct GaussRule {
  std::vector<double> nodes, weights;
};

GaussRule make_gauss_rule(int n) {
  GaussRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    rule.nodes[i] = x;
    rule.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

const GaussRule& gauss16() {
  static const GaussRule rule = make_gauss_rule(16);
  return rule;
}

// log(1 - q + q e^u) without overflow or cancellation.
double log_mixture_term(double q, double u) {
  if (u > 690.0) return std::log(q) + u + std::log1p((1.0 - q) / q * std::exp(-u));
  return std::log1p(q * std::expm1(u));
}

void validate_step_params(double q, double nm) {
  require(q > 0.0 && q <= 1.0, "sampling rate must lie in (0, 1]");
  require(nm > 0.0 && std::isfinite(nm), "noise multiplier must be positive");
}

}  // namespace

namespace accountant_detail {

// Exact binomial expansion of the subsampled-Gaussian Renyi bound at an
// integer order n >= 2:
//   A_n = sum_j C(n, j) q^j (1-q)^(n-j) exp((j^2 - j) / (2 nm^2)).
double rdp_binomial(double sampling_rate, double noise_multiplier, long long order) {
  const double q = sampling_rate;
  const double nm = noise_multiplier;
  validate_step_params(q, nm);
  require(order >= 2, "binomial route needs an integer order >= 2");
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(order) + 1);
  const double log_q = std::log(q);
  const double log_1q = std::log1p(-q);  // -inf when q == 1 is fine: only j == n survives
  for (long long j = 0; j <= order; ++j) {
    double t = log_binom(order, j) + static_cast<double>(j) * log_q +
               static_cast<double>(j * j - j) / (2.0 * nm * nm);
    if (j < order) t += static_cast<double>(order - j) * log_1q;
    terms.push_back(t);
  }
  const double eps = logsumexp(terms) / (static_cast<double>(order) - 1.0);
  return std::max(eps, 0.0);
}

// Gauss-Legendre evaluation of A_alpha = E_{t ~ N(0,1)} (1 - q + q e^{u})^alpha
// with u = t / nm - 1 / (2 nm^2), valid at any real order > 1.
double rdp_quadrature(double sampling_rate, double noise_multiplier, double order) {
  const double q = sampling_rate;
  const double nm = noise_multiplier;
  validate_step_params(q, nm);
  require(order > 1.0, "orders must exceed 1");

  const double t_lo = -48.0;
  const double t_hi = std::max(48.0, order / nm + 48.0);
  // Panel width tracks the sharper of the Gaussian scale and the mixture
  // transition scale (which lives on u, i.e. scale nm in t).
  const double width = std::min(1.0, nm);
  const auto panels = static_cast<long long>(std::ceil((t_hi - t_lo) / width));
  const GaussRule& rule = gauss16();

  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(panels) * rule.nodes.size());
  for (long long p = 0; p < panels; ++p) {
    const double a = t_lo + static_cast<double>(p) * (t_hi - t_lo) / static_cast<double>(panels);
    const double b = t_lo + static_cast<double>(p + 1) * (t_hi - t_lo) / static_cast<double>(panels);
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double t = mid + half * rule.nodes[i];
      const double u = t / nm - 1.0 / (2.0 * nm * nm);
      const double log_f = -0.5 * t * t - kLogSqrt2Pi + order * log_mixture_term(q, u);
      const double term = std::log(rule.weights[i] * half) + log_f;
      terms.push_back(term);
      best = std::max(best, term);
    }
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - best);
  const double log_a = best + std::log(s);
  return std::max(log_a / (order - 1.0), 0.0);
}

}  // namespace accountant_detail

void validate_budget(const PrivacyBudget& b) {
  require(std::isfinite(b.epsilon) && b.epsilon > 0.0, "epsilon must be positive");
  require(b.delta > 0.0 && b.delta < 1.0, "delta must lie in (0, 1)");
}

Vector clip_to_norm(const Eigen::Ref<const Vector>& v, double bound) {
  require(bound > 0.0 && std::isfinite(bound), "clip bound must be positive");
  check_finite(v, "clip input");
  const double n = v.norm();
  if (n <= bound) return v;
  return v * (bound / n);
}

const std::vector<double>& default_order_grid() {
  static const std::vector<double> grid = [] {
    std::vector<double> g;
    for (int i = 0; i <= 249; ++i) g.push_back(1.25 + 0.25 * i);  // 1.25 .. 63.5
    g.push_back(64.0);
    g.push_back(128.0);
    g.push_back(256.0);
    return g;
  }();
  return grid;
}

std::vector<double> rdp_step(double sampling_rate, double noise_multiplier,
                             const std::vector<double>& orders) {
  validate_step_params(sampling_rate, noise_multiplier);
  require(!orders.empty(), "order grid is empty");
  std::vector<double> out;
  out.reserve(orders.size());
  for (double a : orders) {
    require(a > 1.0, "orders must exceed 1");
    double eps;
    if (sampling_rate == 1.0) {
      eps = a / (2.0 * noise_multiplier * noise_multiplier);
    } else {
      const double rounded = std::round(a);
      if (std::abs(a - rounded) < 1e-9 && rounded >= 2.0) {
        eps = accountant_detail::rdp_binomial(sampling_rate, noise_multiplier,
                                              static_cast<long long>(rounded));
      } else {
        eps = accountant_detail::rdp_quadrature(sampling_rate, noise_multiplier, a);
      }
    }
    check_finite(eps, "rdp value");
    out.push_back(eps);
  }
  return out;
}

AccountantState AccountantState::fresh(const std::vector<double>& orders) {
  require(!orders.empty(), "order grid is empty");
  for (std::size_t i = 0; i < orders.size(); ++i) {
    require(orders[i] > 1.0, "orders must exceed 1");
    if (i) require(orders[i] > orders[i - 1], "orders must be strictly increasing");
  }
  AccountantState s;
  s.orders = orders;
  s.rdp.assign(orders.size(), 0.0);
  return s;
}

void AccountantState::compose(double q, double nm, long long count) {
  require(count >= 1, "composition count must be positive");
  require(orders.size() == rdp.size() && !orders.empty(),
          "accountant state is uninitialized");
  if (steps > 0) {
    require(q == sampling_rate && nm == noise_multiplier,
            "accountant tracks a single mechanism configuration");
  }
  const std::vector<double> inc = rdp_step(q, nm, orders);
  for (std::size_t i = 0; i < rdp.size(); ++i)
    rdp[i] += static_cast<double>(count) * inc[i];
  sampling_rate = q;
  noise_multiplier = nm;
  steps += count;
}

DpEstimate convert_to_dp(const AccountantState& state, double delta) {
  require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  if (state.orders.empty() || state.orders.size() != state.rdp.size())
    throw StateError("accountant holds no curve to convert");
  const double log_inv_delta = std::log(1.0 / delta);
  DpEstimate best{std::numeric_limits<double>::infinity(), 0.0};
  for (std::size_t i = 0; i < state.orders.size(); ++i) {
    const double a = state.orders[i];
    const double eps = state.rdp[i] + log_inv_delta / (a - 1.0);
    if (eps < best.epsilon) best = {eps, a};
  }
  best.epsilon = std::max(best.epsilon, 0.0);
  return best;
}

CalibrationResult calibrate_sigma(const PrivacyBudget& budget, double sampling_rate,
                                  long long steps, double sensitivity,
                                  const std::vector<double>& orders) {
  validate_budget(budget);
  validate_step_params(sampling_rate, 1.0);
  require(steps >= 1, "step count must be positive");
  require(sensitivity > 0.0 && std::isfinite(sensitivity), "sensitivity must be positive");

  // Even infinite noise cannot push the conversion below this floor.
  double floor = std::numeric_limits<double>::infinity();
  const double log_inv_delta = std::log(1.0 / budget.delta);
  for (double a : orders) floor = std::min(floor, log_inv_delta / (a - 1.0));
  if (floor >= budget.epsilon)
    throw CalibrationError(
        "budget epsilon " + std::to_string(budget.epsilon) +
        " is below the conversion floor " + std::to_string(floor) +
        " for this order grid; no noise scale can attain it");

  const auto eps_at = [&](double nm) {
    AccountantState s = AccountantState::fresh(orders);
    s.compose(sampling_rate, nm, steps);
    return convert_to_dp(s, budget.delta);
  };

  double hi = 1.0;
  int guard = 0;
  while (eps_at(hi).epsilon > budget.epsilon) {
    hi *= 2.0;
    if (++guard > 60) throw CalibrationError("noise bracketing failed to find a feasible scale");
  }
  double lo = hi / 2.0;
  bool lo_infeasible = false;
  while (lo >= kNoiseMultiplierFloor) {
    if (eps_at(lo).epsilon > budget.epsilon) {
      lo_infeasible = true;
      break;
    }
    hi = lo;
    lo /= 2.0;
  }
  if (!lo_infeasible) {
    // Budget so loose that the smallest supported multiplier already meets
    // it; report the floor rather than searching below it.
    const double nm = std::max(lo, kNoiseMultiplierFloor);
    return {nm * sensitivity, nm, eps_at(nm)};
  }

  while (hi - lo > kCalibRelTol * hi) {
    const double mid = 0.5 * (lo + hi);
    if (eps_at(mid).epsilon <= budget.epsilon)
      hi = mid;
    else
      lo = mid;
  }
  return {hi * sensitivity, hi, eps_at(hi)};
}

std::pair<PrivacyBudget, PrivacyBudget> split_budget(const PrivacyBudget& b, double fraction) {
  validate_budget(b);
  require(fraction > 0.0 && fraction < 1.0, "split fraction must lie in (0, 1)");
  PrivacyBudget first{fraction * b.epsilon, fraction * b.delta};
  PrivacyBudget second{b.epsilon - first.epsilon, b.delta - first.delta};
  return {first, second};
}

void write_ledger(const std::filesystem::path& path, const AccountantState& state,
                  double delta) {
  std::ostringstream os;
  os.precision(17);
  os << "# privacy ledger v1\n";
  os << "sampling_rate = " << state.sampling_rate << "\n";
  os << "noise_multiplier = " << state.noise_multiplier << "\n";
  os << "steps = " << state.steps << "\n";
  os << "delta = " << delta << "\n";
  if (!state.orders.empty()) {
    const DpEstimate e = convert_to_dp(state, delta);
    os << "epsilon = " << e.epsilon << "\n";
    os << "epsilon_order = " << e.order << "\n";
  }
  os << "curve:\n";
  for (std::size_t i = 0; i < state.orders.size(); ++i)
    os << state.orders[i] << " " << state.rdp[i] << "\n";
  write_text_file(path, os.str());
}

AccountantState read_ledger(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  AccountantState s;
  std::string line;
  bool in_curve = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line == "curve:") {
      in_curve = true;
      continue;
    }
    if (in_curve) {
      std::istringstream ls(line);
      double a, r;
      if (!(ls >> a >> r)) throw IoError("malformed ledger curve line: " + line);
      s.orders.push_back(a);
      s.rdp.push_back(r);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed ledger line: " + line);
    const auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "sampling_rate") s.sampling_rate = std::stod(val);
    else if (key == "noise_multiplier") s.noise_multiplier = std::stod(val);
    else if (key == "steps") s.steps = std::stoll(val);
    // delta / epsilon lines are informational
  }
  if (s.orders.empty()) throw IoError("ledger holds no curve: " + path.string());
  return s;
}

}  // namespace dpdd
