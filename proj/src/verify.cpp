#include "dpdd/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>

#include "dpdd/analysis.hpp"
#include "dpdd/augment.hpp"
#include "dpdd/eig.hpp"
#include "dpdd/extractor.hpp"
#include "dpdd/privacy.hpp"
#include "dpdd/rng.hpp"
#include "dpdd/ser.hpp"

namespace dpdd {

namespace {

std::string fmt3(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

CheckResult make_check(const std::string& name, double value, double limit,
                       std::string detail = "") {
  CheckResult r;
  r.name = name;
  r.value = value;
  r.limit = limit;
  r.passed = value <= limit;
  r.detail = std::move(detail);
  return r;
}

CheckResult check_clip_norm(RngStream& stream) {
  double worst = 0.0;
  for (Index dim : {1, 3, 17, 64}) {
    for (double scale : {1e-3, 0.3, 1.0, 7.0, 300.0}) {
      for (double bound : {0.5, 1.0, 10.0}) {
        Vector v = stream.gaussian_vector(dim) * scale;
        Vector c = clip_to_norm(v, bound);
        worst = std::max(worst, (c.norm() - bound) / bound);
      }
    }
  }
  return make_check("clip_norm_bound", worst, 1e-12);
}

CheckResult check_clip_idempotent(RngStream& stream) {
  double worst = 0.0;
  for (Index dim : {2, 9, 33}) {
    for (double scale : {0.01, 1.0, 50.0}) {
      Vector v = stream.gaussian_vector(dim) * scale;
      Vector c = clip_to_norm(v, 1.0);
      Vector cc = clip_to_norm(c, 1.0);
      worst = std::max(worst, (cc - c).cwiseAbs().maxCoeff());
      if (v.norm() <= 1.0)
        worst = std::max(worst, (c - v).cwiseAbs().maxCoeff());
    }
  }
  return make_check("clip_idempotent", worst, 0.0);
}

Matrix verification_basis(RngStream& stream, Injection inject) {
  Matrix features = stream.gaussian_matrix(200, 24);
  Matrix basis = discover_subspace(features, 6).basis();
  if (inject == Injection::kBadProjection) basis(0, 1) += 1e-3;
  return basis;
}

CheckResult check_orthonormal(const Matrix& basis) {
  Matrix gram = basis.transpose() * basis;
  gram -= Matrix::Identity(basis.cols(), basis.cols());
  return make_check("projection_orthonormal", gram.cwiseAbs().maxCoeff(), 1e-8);
}

CheckResult check_pythagoras(const Matrix& basis, RngStream& stream) {
  double worst = 0.0;
  for (int t = 0; t < 40; ++t) {
    Vector v = stream.gaussian_vector(basis.rows());
    Vector p = basis.transpose() * v;
    Vector r = v - basis * p;
    double lhs = v.squaredNorm();
    worst = std::max(worst, std::abs(lhs - p.squaredNorm() - r.squaredNorm()) / lhs);
  }
  return make_check("pythagoras", worst, 1e-10);
}

CheckResult gradient_direction_check(const std::string& name, Index dim,
                                     const std::function<double(const Vector&)>& f,
                                     const std::function<bool(const Vector&, const Vector&)>& same_kinks,
                                     const Vector& x, const Vector& grad, RngStream& stream,
                                     int directions, double h) {
  double worst = 0.0;
  int accepted = 0;
  for (int t = 0; t < directions; ++t) {
    Vector u = stream.gaussian_vector(dim);
    u /= u.norm();
    Vector xp = x + h * u, xm = x - h * u;
    if (!same_kinks(xp, xm)) continue;
    double fd = (f(xp) - f(xm)) / (2 * h);
    double an = grad.dot(u);
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3}));
    ++accepted;
  }
  if (accepted < directions / 2)
    return make_check(name, std::numeric_limits<double>::infinity(), 1e-4,
                      "too many directions near activation kinks");
  return make_check(name, worst, 1e-4,
                    std::to_string(accepted) + "/" + std::to_string(directions) + " directions");
}

CheckResult check_extractor_gradient(RngStream& stream) {
  ExtractorSpec spec = ExtractorSpec::conv_net(ImageShape{1, 8, 8}, {4}, 3, 5);
  ExtractorWeights w = materialize(spec, ExtractorParams{stream.next_u64(), 1.0});
  Index dim = spec.input.pixels();
  Vector x(dim);
  for (Index i = 0; i < dim; ++i) x[i] = stream.next_uniform();
  Vector up = stream.gaussian_vector(spec.feature_dim());
  Vector grad = feature_input_gradient(spec, w, x, up);

  auto f = [&](const Vector& img) { return extract_features(spec, w, img).dot(up); };
  auto same_kinks = [&](const Vector& a, const Vector& b) {
    ForwardTrace ta, tb;
    extract_features(spec, w, a, &ta);
    extract_features(spec, w, b, &tb);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      if (!std::holds_alternative<ReluSpec>(spec.layers[i])) continue;
      auto pa = ta.layer_inputs[i].array() > 0.0;
      auto pb = tb.layer_inputs[i].array() > 0.0;
      if ((pa != pb).any()) return false;
    }
    return true;
  };
  return gradient_direction_check("extractor_gradient", dim, f, same_kinks, x, grad, stream,
                                  12, 1e-5);
}

CheckResult check_augment_gradient(RngStream& stream) {
  ImageShape shape{3, 8, 8};
  AugmentPolicy policy = AugmentPolicy::from_ops("crop,flip,brightness,saturation,cutout");
  RngStream zeta = stream.child(7);
  AugmentParams params = sample_augment_params(policy, shape, zeta);
  Index dim = shape.pixels();
  Vector x(dim);
  for (Index i = 0; i < dim; ++i) x[i] = stream.next_uniform();
  Vector up = stream.gaussian_vector(dim);
  Vector grad = augment_input_gradient(policy, params, shape, up);

  auto f = [&](const Vector& img) {
    return apply_augment(policy, params, shape, img).dot(up);
  };
  auto no_kinks = [](const Vector&, const Vector&) { return true; };
  return gradient_direction_check("augment_gradient", dim, f, no_kinks, x, grad, stream, 8,
                                  1e-5);
}

CheckResult check_eig_residual(RngStream& stream) {
  Index n = 40;
  Matrix b = stream.gaussian_matrix(n, n);
  Matrix a = 0.5 * (b + b.transpose());
  SymEig e = sym_eig(a);
  Matrix resid = a * e.eigenvectors - e.eigenvectors * e.eigenvalues.asDiagonal();
  double r1 = resid.cwiseAbs().maxCoeff() / (1.0 + a.cwiseAbs().maxCoeff());
  Matrix gram = e.eigenvectors.transpose() * e.eigenvectors;
  gram -= Matrix::Identity(n, n);
  double r2 = gram.cwiseAbs().maxCoeff();
  return make_check("eig_residual", std::max(r1, r2), 1e-8);
}

CheckResult check_rdp_closed_form() {
  const std::vector<double>& orders = default_order_grid();
  double worst = 0.0;
  for (double nm : {0.5, 1.0, 3.0}) {
    std::vector<double> rdp = rdp_step(1.0, nm, orders);
    for (std::size_t i = 0; i < orders.size(); ++i)
      worst = std::max(worst, std::abs(rdp[i] - orders[i] / (2 * nm * nm)));
  }
  return make_check("rdp_closed_form_q1", worst, 1e-10);
}

CheckResult check_rdp_dual_route() {
  double worst = 0.0;
  for (double q : {0.01, 0.1, 0.5}) {
    for (double nm : {0.8, 2.0}) {
      for (long long a : {2, 3, 5, 8, 16, 32}) {
        double b = accountant_detail::rdp_binomial(q, nm, a);
        double g = accountant_detail::rdp_quadrature(q, nm, double(a));
        worst = std::max(worst, std::abs(b - g) / std::max(std::abs(b), 1e-10));
      }
    }
  }
  return make_check("rdp_dual_route", worst, 1e-8);
}

CheckResult check_calibration_round_trip(Injection inject) {
  PrivacyBudget budget{1.2, 1e-5};
  double q = 0.05, sens = 0.2;
  long long steps = 300;
  CalibrationResult cal = calibrate_sigma(budget, q, steps, sens);
  double sigma = cal.sigma * (inject == Injection::kSigmaHalf ? 0.5 : 1.0);
  AccountantState state = AccountantState::fresh();
  state.compose(q, sigma / sens, steps);
  double eps = convert_to_dp(state, budget.delta).epsilon;
  double ratio = eps / budget.epsilon;
  return make_check("calibration_round_trip", std::abs(ratio - 0.9995), 0.0005,
                    "realized/target = " + fmt3(ratio));
}

CheckResult check_sensitivity_ratio(Injection inject) {
  PrivacyBudget budget{0.8, 1e-6};
  double q = 0.1;
  long long steps = 150;
  double s1 = 1.6, s2 = 0.8;
  CalibrationResult cal = calibrate_sigma(budget, q, steps, s1);
  double sigma2 = cal.sigma * (s2 / s1);
  if (inject == Injection::kSigmaHalf) sigma2 *= 0.5;
  AccountantState st1 = AccountantState::fresh();
  st1.compose(q, cal.sigma / s1, steps);
  AccountantState st2 = AccountantState::fresh();
  st2.compose(q, sigma2 / s2, steps);
  double eps1 = convert_to_dp(st1, budget.delta).epsilon;
  double eps2 = convert_to_dp(st2, budget.delta).epsilon;
  double curve_gap = 0.0;
  for (std::size_t i = 0; i < st1.rdp.size(); ++i)
    curve_gap = std::max(curve_gap, std::abs(st1.rdp[i] - st2.rdp[i]));
  return make_check("sensitivity_ratio_round_trip", std::abs(eps1 - eps2) + curve_gap, 0.0,
                    "eps " + fmt3(eps1) + " vs " + fmt3(eps2));
}

CheckResult check_error_decomposition(RngStream& stream) {
  RngStream model_stream = stream.child(10);
  ModelWithProjection lab = random_signal_model(32, 8, 6, 20, 50, model_stream);
  SupportNorms norms = support_norms(lab.model, lab.projection, 4096, stream.child(11));
  double nm = 1.0;
  double sigma_orig = nm * norms.max_norm / double(lab.model.group_size);
  double sigma_proj = nm * norms.max_proj_norm / double(lab.model.group_size);
  MseTerms terms = analytic_terms(lab.model, lab.projection, sigma_proj, norms.ratio());
  McEstimate mc = monte_carlo_mse(lab.model, lab.projection, sigma_orig, sigma_proj, 20000,
                                  stream.child(12));
  double gap = std::abs(terms.delta() - mc.delta) / std::max(mc.se_delta, 1e-12);
  return make_check("error_decomposition", gap, 4.0,
                    "analytic " + fmt3(terms.delta()) + ", mc " + fmt3(mc.delta) +
                        " (se " + fmt3(mc.se_delta) + ")");
}

}  // namespace

Injection injection_from_string(const std::string& s) {
  if (s == "none" || s.empty()) return Injection::kNone;
  if (s == "sigma-half") return Injection::kSigmaHalf;
  if (s == "bad-projection") return Injection::kBadProjection;
  throw ValidationError("unknown injection '" + s + "'");
}

bool VerifySuite::all_passed() const {
  for (const CheckResult& c : checks)
    if (!c.passed) return false;
  return true;
}

const CheckResult& VerifySuite::check(const std::string& name) const {
  for (const CheckResult& c : checks)
    if (c.name == name) return c;
  throw ValidationError("no check named " + name);
}

std::string VerifySuite::report() const {
  std::ostringstream o;
  for (const CheckResult& c : checks) {
    o << (c.passed ? "PASS " : "FAIL ") << c.name << " (value " << fmt3(c.value)
      << ", limit " << fmt3(c.limit) << ")";
    if (!c.detail.empty()) o << " " << c.detail;
    o << "\n";
  }
  o << (all_passed() ? "all checks passed" : "CHECKS FAILED") << "\n";
  return o.str();
}

VerifySuite run_verification(std::uint64_t seed, Injection inject) {
  RngStream stream =
      RngStream::derive(seed, {static_cast<std::uint64_t>(StreamUse::kGeneric)});
  VerifySuite suite;
  suite.checks.push_back(check_clip_norm(stream));
  suite.checks.push_back(check_clip_idempotent(stream));
  Matrix basis = verification_basis(stream, inject);
  suite.checks.push_back(check_orthonormal(basis));
  suite.checks.push_back(check_pythagoras(basis, stream));
  suite.checks.push_back(check_extractor_gradient(stream));
  suite.checks.push_back(check_augment_gradient(stream));
  suite.checks.push_back(check_eig_residual(stream));
  suite.checks.push_back(check_rdp_closed_form());
  suite.checks.push_back(check_rdp_dual_route());
  suite.checks.push_back(check_calibration_round_trip(inject));
  suite.checks.push_back(check_sensitivity_ratio(inject));
  suite.checks.push_back(check_error_decomposition(stream));
  return suite;
}

}  // namespace dpdd
