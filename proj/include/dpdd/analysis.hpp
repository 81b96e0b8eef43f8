#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dpdd/common.hpp"
#include "dpdd/rng.hpp"
#include "dpdd/ser.hpp"

namespace dpdd {

// Population model of one class's signal distribution: v = mu + Fp a + Fr b
// with a, b standard normal, truncated to the clip ball of radius K by
// rejection. Covariances are carried in factor form (Sigma = F F^T), which
// keeps them PSD by construction and makes sampling cheap.
struct SignalModel {
  Vector mean;
  Matrix factor_p;  // informative covariance factor, D x rank_p
  Matrix factor_r;  // uninformative covariance factor, D x rank_r
  double clip_bound = 0.0;  // K
  Index group_size = 0;     // L

  Index dim() const { return mean.size(); }
  Matrix sigma_p() const { return factor_p * factor_p.transpose(); }
  Matrix sigma_r() const { return factor_r * factor_r.transpose(); }
  void validate() const;
};

// Support samples (rows), rejection-resampled into the clip ball.
// `rejections` counts discarded draws.
Matrix sample_support(const SignalModel& model, Index n, RngStream& stream,
                      Index* rejections = nullptr);

struct SupportNorms {
  double max_norm = 0.0;       // max_j ||v_j||
  double max_proj_norm = 0.0;  // max_j ||P^T v_j||
  double ratio() const;        // >= 1
};
SupportNorms support_norms(const SignalModel& model, const Projection& p, Index samples,
                           RngStream stream);

// The three-term analytic decomposition of MSE_orig - MSE_back.
struct MseTerms {
  double residual = 0.0;          // Tr((I - PP^T) Sigma_r) / L
  double dim_reduction = 0.0;     // sigma_proj^2 (rho^2 D - d)
  double projection_error = 0.0;  // ||(I - PP^T) mu||^2 + Tr((I - PP^T) Sigma_p) / L
  double delta() const { return residual + dim_reduction - projection_error; }
};
MseTerms analytic_terms(const SignalModel& model, const Projection& p, double sigma_proj,
                        double norm_ratio);

// Closed-form MSEs under the untruncated model (exact when rejection is
// negligible): orig = Tr(Sigma)/L + sigma_orig^2 D,
// back = Tr(PP^T Sigma)/L + sigma_proj^2 d + ||(I - PP^T) mu||^2.
double analytic_mse_orig(const SignalModel& model, double sigma_orig);
double analytic_mse_back(const SignalModel& model, const Projection& p, double sigma_proj);

struct McEstimate {
  double mse_orig = 0.0, mse_back = 0.0, delta = 0.0;
  double se_orig = 0.0, se_back = 0.0, se_delta = 0.0;
  Index trials = 0;
  double rejection_rate = 0.0;
};

// Unbiased Monte-Carlo estimates of both MSEs. Each trial draws one group of
// L support samples shared between the two arms (common random numbers, so
// the difference estimator is tight) plus independent noise in each space.
// Standard errors come from batch means over 100 batches.
McEstimate monte_carlo_mse(const SignalModel& model, const Projection& p, double sigma_orig,
                           double sigma_proj, Index trials, RngStream stream, int workers = 1);

// Empirical E[2 w^T eta] between the sampling deviation and the added noise;
// vanishes in expectation.
struct CrossTermEstimate {
  double mean = 0.0, se = 0.0;
};
CrossTermEstimate cross_term(const SignalModel& model, double sigma_orig, Index trials,
                             RngStream stream);

// Random laboratory instance. The informative factor is drawn inside the
// projection span, mirroring the model assumption that the informative
// covariance has rank d; the mean is in general position. The clip bound is
// set from an empirical norm scan so rejection stays negligible.
struct ModelWithProjection {
  SignalModel model;
  Projection projection;
};
ModelWithProjection random_signal_model(Index dim, Index subspace_dim, Index rank_p,
                                        Index rank_r, Index group_size, RngStream stream);

// One randomized laboratory case: a drawn model plus the analytic and
// Monte-Carlo sides of the decomposition, ready for a k-sigma comparison.
struct DecompositionCase {
  std::string model_id;
  Index dim = 0, subspace_dim = 0, rank_p = 0, rank_r = 0;
  double noise_multiplier = 0.0;
  MseTerms terms;
  McEstimate mc;

  double analytic_delta() const { return terms.delta(); }
  // |analytic - mc| in units of the mc standard error.
  double gap_se() const;
};

// Draws `models` random instances (dim up to 128, subspace up to 32) and
// runs both sides at the given trial count. Deterministic in seed.
std::vector<DecompositionCase> decomposition_battery(Index models, Index trials,
                                                     Index group_size, std::uint64_t seed,
                                                     int workers = 1);

enum class NoiseRegime { kLow, kIntermediate, kHigh };
std::string to_string(NoiseRegime r);

struct SweepPoint {
  std::string model_id;
  Index dim = 0;           // D
  Index subspace_dim = 0;  // d
  double noise_multiplier = 0.0;
  double sigma_orig = 0.0, sigma_proj = 0.0;
  double mse_orig = 0.0, mse_back = 0.0;  // analytic
  MseTerms terms;
  McEstimate mc;
};

struct SweepResult {
  std::vector<SweepPoint> points;  // noise-major, then dims
  std::vector<Index> dims;
  std::vector<double> noise_multipliers;
  std::vector<NoiseRegime> regimes;  // one per noise level
};

// Grid evaluation over subspace dimensions and noise multipliers. For each
// dimension the projection is the top-d eigenbasis of the population second
// moment; sigma_orig = nm * max||v|| / L and sigma_proj = nm * max||P^T v|| / L
// with maxima taken over a shared empirical support scan. Each noise level
// is labelled by where the analytic mse_back is minimized over the dim grid:
// top boundary = low, interior = intermediate, bottom boundary = high.
SweepResult sweep_mse(const SignalModel& model, const std::string& model_id,
                      const std::vector<Index>& dims,
                      const std::vector<double>& noise_multipliers, Index trials,
                      RngStream stream, int workers = 1);

// Default laboratory model for the sweep driver, sized so all three noise
// regimes appear on the default grids.
SignalModel default_sweep_model(std::uint64_t seed);
std::vector<Index> default_sweep_dims();
std::vector<double> default_sweep_noise();

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& sweep);

}  // namespace dpdd
