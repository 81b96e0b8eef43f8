#include "dpdd/analysis.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "dpdd/eig.hpp"
#include "dpdd/io.hpp"

namespace dpdd {
namespace {

// Draw one support sample into `out` using the stacked factor U = [Fp Fr].
void draw_one(const SignalModel& m, const Matrix& u, RngStream& stream, Vector& g, Vector& out,
              Index* rejections) {
  while (true) {
    stream.fill_gaussian(g.data(), g.size());
    out = m.mean;
    out.noalias() += u * g;
    if (out.squaredNorm() <= m.clip_bound * m.clip_bound) return;
    if (rejections) ++*rejections;
  }
}

struct BatchStats {
  double mean = 0.0, se = 0.0;
};

// Batch-means standard error over 100 batches.
BatchStats batch_stats(const std::vector<double>& xs) {
  const Index n = static_cast<Index>(xs.size());
  const Index nb = std::min<Index>(100, n);
  std::vector<double> bm(static_cast<std::size_t>(nb), 0.0);
  double total = 0.0;
  for (Index b = 0; b < nb; ++b) {
    const Index lo = b * n / nb, hi = (b + 1) * n / nb;
    double s = 0.0;
    for (Index i = lo; i < hi; ++i) s += xs[static_cast<std::size_t>(i)];
    bm[static_cast<std::size_t>(b)] = s / static_cast<double>(hi - lo);
    total += s;
  }
  BatchStats st;
  st.mean = total / static_cast<double>(n);
  double var = 0.0;
  for (double m : bm) var += (m - st.mean) * (m - st.mean);
  var /= static_cast<double>(nb - 1);
  st.se = std::sqrt(var / static_cast<double>(nb));
  return st;
}

Matrix stacked_factor(const SignalModel& m) {
  Matrix u(m.dim(), m.factor_p.cols() + m.factor_r.cols());
  u << m.factor_p, m.factor_r;
  return u;
}

}  // namespace

void SignalModel::validate() const {
  require(mean.size() > 0, "model mean is empty");
  require(factor_p.rows() == mean.size() && factor_r.rows() == mean.size(),
          "factor rows must match the ambient dimension");
  require(clip_bound > 0.0 && std::isfinite(clip_bound), "clip bound must be positive");
  require(group_size >= 1, "group size must be positive");
  check_finite(mean, "model mean");
  check_finite(factor_p, "informative factor");
  check_finite(factor_r, "uninformative factor");
  require(mean.norm() <= clip_bound,
          "model mean lies outside the clip ball; the truncated mean would not exist");
}

Matrix sample_support(const SignalModel& model, Index n, RngStream& stream,
                      Index* rejections) {
  model.validate();
  require(n >= 0, "sample count must be nonnegative");
  const Matrix u = stacked_factor(model);
  Matrix out(n, model.dim());
  Vector g(u.cols()), v(model.dim());
  for (Index i = 0; i < n; ++i) {
    draw_one(model, u, stream, g, v, rejections);
    out.row(i) = v.transpose();
  }
  return out;
}

double SupportNorms::ratio() const {
  require(max_proj_norm > 0.0, "projected support norm is zero");
  return max_norm / max_proj_norm;
}

SupportNorms support_norms(const SignalModel& model, const Projection& p, Index samples,
                           RngStream stream) {
  require(samples >= 1, "need at least one support sample");
  require(p.ambient_dim() == model.dim(), "projection does not match model dimension");
  const Matrix u = stacked_factor(model);
  SupportNorms out;
  Vector g(u.cols()), v(model.dim());
  for (Index i = 0; i < samples; ++i) {
    draw_one(model, u, stream, g, v, nullptr);
    out.max_norm = std::max(out.max_norm, v.norm());
    out.max_proj_norm = std::max(out.max_proj_norm, (p.basis().transpose() * v).norm());
  }
  return out;
}

MseTerms analytic_terms(const SignalModel& model, const Projection& p, double sigma_proj,
                        double norm_ratio) {
  model.validate();
  require(p.ambient_dim() == model.dim(), "projection does not match model dimension");
  require(sigma_proj >= 0.0, "sigma must be nonnegative");
  require(norm_ratio >= 1.0, "norm ratio must be at least 1");
  const double l = static_cast<double>(model.group_size);
  const auto d = static_cast<double>(p.subspace_dim());
  const auto dim = static_cast<double>(model.dim());

  // Tr((I - PP^T) F F^T) = ||F||_F^2 - ||P^T F||_F^2, via the factor form.
  const Matrix ptfr = p.basis().transpose() * model.factor_r;
  const Matrix ptfp = p.basis().transpose() * model.factor_p;
  const Vector ptmu = p.basis().transpose() * model.mean;

  MseTerms t;
  t.residual = (model.factor_r.squaredNorm() - ptfr.squaredNorm()) / l;
  t.dim_reduction = sigma_proj * sigma_proj * (norm_ratio * norm_ratio * dim - d);
  t.projection_error = (model.mean.squaredNorm() - ptmu.squaredNorm()) +
                       (model.factor_p.squaredNorm() - ptfp.squaredNorm()) / l;
  return t;
}

double analytic_mse_orig(const SignalModel& model, double sigma_orig) {
  model.validate();
  require(sigma_orig >= 0.0, "sigma must be nonnegative");
  const double trace = model.factor_p.squaredNorm() + model.factor_r.squaredNorm();
  return trace / static_cast<double>(model.group_size) +
         sigma_orig * sigma_orig * static_cast<double>(model.dim());
}

double analytic_mse_back(const SignalModel& model, const Projection& p, double sigma_proj) {
  model.validate();
  require(p.ambient_dim() == model.dim(), "projection does not match model dimension");
  require(sigma_proj >= 0.0, "sigma must be nonnegative");
  const Matrix ptfp = p.basis().transpose() * model.factor_p;
  const Matrix ptfr = p.basis().transpose() * model.factor_r;
  const Vector ptmu = p.basis().transpose() * model.mean;
  const double captured = (ptfp.squaredNorm() + ptfr.squaredNorm()) /
                          static_cast<double>(model.group_size);
  const double mean_err = model.mean.squaredNorm() - ptmu.squaredNorm();
  return captured + sigma_proj * sigma_proj * static_cast<double>(p.subspace_dim()) +
         mean_err;
}

McEstimate monte_carlo_mse(const SignalModel& model, const Projection& p, double sigma_orig,
                           double sigma_proj, Index trials, RngStream stream, int workers) {
  model.validate();
  require(p.ambient_dim() == model.dim(), "projection does not match model dimension");
  require(sigma_orig >= 0.0 && sigma_proj >= 0.0, "sigmas must be nonnegative");
  require(trials >= 1000, "need at least 1000 trials for stable estimates");

  const Index l = model.group_size;
  const Index dim = model.dim();
  const Index d = p.subspace_dim();
  const Matrix u = stacked_factor(model);
  const Index r = u.cols();

  std::vector<double> err_o(static_cast<std::size_t>(trials));
  std::vector<double> err_b(static_cast<std::size_t>(trials));
  std::vector<double> err_d(static_cast<std::size_t>(trials));
  std::vector<Index> rej(static_cast<std::size_t>(trials), 0);

  parallel_for(trials, workers, [&](Index t) {
    RngStream ts = RngStream::derive(
        stream.key(), {static_cast<std::uint64_t>(StreamUse::kMcTrial),
                       static_cast<std::uint64_t>(t)});
    // Draw the whole group in one block, then fix rejected rows in order.
    Matrix g(l, r);
    ts.fill_gaussian(g.data(), g.size());
    Matrix v = g * u.transpose();
    v.rowwise() += model.mean.transpose();
    Index trial_rej = 0;
    const double k2 = model.clip_bound * model.clip_bound;
    Vector gg(r), vv(dim);
    for (Index i = 0; i < l; ++i) {
      while (v.row(i).squaredNorm() > k2) {
        ++trial_rej;
        ts.fill_gaussian(gg.data(), r);
        vv = model.mean;
        vv.noalias() += u * gg;
        v.row(i) = vv.transpose();
      }
    }
    rej[static_cast<std::size_t>(t)] = trial_rej;

    const Vector vbar = v.colwise().sum().transpose() / static_cast<double>(l);
    const Vector w = vbar - model.mean;

    Vector xi_d_ambient(dim);
    ts.fill_gaussian(xi_d_ambient.data(), dim, sigma_orig);
    err_o[static_cast<std::size_t>(t)] = (w + xi_d_ambient).squaredNorm();

    Vector xi_sub(d);
    ts.fill_gaussian(xi_sub.data(), d, sigma_proj);
    const Vector back = p.basis() * (p.basis().transpose() * vbar + xi_sub);
    err_b[static_cast<std::size_t>(t)] = (back - model.mean).squaredNorm();
    err_d[static_cast<std::size_t>(t)] =
        err_o[static_cast<std::size_t>(t)] - err_b[static_cast<std::size_t>(t)];
  });

  const BatchStats so = batch_stats(err_o);
  const BatchStats sb = batch_stats(err_b);
  const BatchStats sd = batch_stats(err_d);
  Index total_rej = 0;
  for (Index x : rej) total_rej += x;

  McEstimate est;
  est.mse_orig = so.mean;
  est.mse_back = sb.mean;
  est.delta = sd.mean;
  est.se_orig = so.se;
  est.se_back = sb.se;
  est.se_delta = sd.se;
  est.trials = trials;
  est.rejection_rate = static_cast<double>(total_rej) /
                       static_cast<double>(trials * l + total_rej);
  return est;
}

CrossTermEstimate cross_term(const SignalModel& model, double sigma_orig, Index trials,
                             RngStream stream) {
  model.validate();
  require(trials >= 1000, "need at least 1000 trials");
  const Matrix u = stacked_factor(model);
  const Index l = model.group_size;
  const Index dim = model.dim();
  std::vector<double> xs(static_cast<std::size_t>(trials));
  Vector g(u.cols()), v(dim), noise(dim);
  for (Index t = 0; t < trials; ++t) {
    Vector sum = Vector::Zero(dim);
    for (Index i = 0; i < l; ++i) {
      draw_one(model, u, stream, g, v, nullptr);
      sum += v;
    }
    const Vector w = sum / static_cast<double>(l) - model.mean;
    stream.fill_gaussian(noise.data(), dim, sigma_orig);
    xs[static_cast<std::size_t>(t)] = 2.0 * w.dot(noise);
  }
  const BatchStats st = batch_stats(xs);
  return {st.mean, st.se};
}

ModelWithProjection random_signal_model(Index dim, Index subspace_dim, Index rank_p,
                                        Index rank_r, Index group_size, RngStream stream) {
  require(dim >= 2 && subspace_dim >= 1 && subspace_dim < dim,
          "need 1 <= subspace dim < ambient dim");
  require(rank_p >= 1 && rank_p <= subspace_dim, "informative rank must fit the subspace");
  require(rank_r >= 1 && group_size >= 1, "ranks and group size must be positive");

  // Orthonormal basis from a Gaussian draw.
  Matrix raw = stream.gaussian_matrix(dim, subspace_dim);
  const Eigen::HouseholderQR<Matrix> qr(raw);
  Matrix q = qr.householderQ() * Matrix::Identity(dim, subspace_dim);
  fix_column_signs(q);
  Projection proj(std::move(q));

  SignalModel m;
  m.mean = stream.gaussian_vector(dim, 1.0);
  // Informative directions live inside the projection span by construction.
  m.factor_p = proj.basis() * stream.gaussian_matrix(subspace_dim, rank_p, 0.8);
  m.factor_r = stream.gaussian_matrix(dim, rank_r, 0.6);
  m.group_size = group_size;

  // Clip bound from an empirical norm scan, padded so rejection is rare.
  const Matrix u = [&] {
    Matrix s(dim, rank_p + rank_r);
    s << m.factor_p, m.factor_r;
    return s;
  }();
  double max_norm = m.mean.norm();
  Vector g(u.cols());
  for (Index i = 0; i < 4096; ++i) {
    stream.fill_gaussian(g.data(), g.size());
    max_norm = std::max(max_norm, (m.mean + u * g).norm());
  }
  m.clip_bound = 1.15 * max_norm;
  m.validate();
  return {std::move(m), std::move(proj)};
}

double DecompositionCase::gap_se() const {
  if (!(mc.se_delta > 0)) return std::numeric_limits<double>::infinity();
  return std::abs(analytic_delta() - mc.delta) / mc.se_delta;
}

std::vector<DecompositionCase> decomposition_battery(Index models, Index trials,
                                                     Index group_size, std::uint64_t seed,
                                                     int workers) {
  require(models >= 1 && trials >= 1, "need at least one model and one trial");
  static const Index dim_palette[] = {16, 24, 32, 48, 64, 96, 128};
  std::vector<DecompositionCase> cases(static_cast<std::size_t>(models));
  for (Index i = 0; i < models; ++i) {
    RngStream stream = RngStream::derive(
        seed, {static_cast<std::uint64_t>(StreamUse::kModelGen), static_cast<std::uint64_t>(i)});
    const Index dim = dim_palette[stream.next_below(7)];
    const Index d_cap = std::min<Index>(32, dim / 2);
    const Index d = 2 + static_cast<Index>(stream.next_below(std::uint64_t(d_cap - 1)));
    const Index rank_p = 1 + static_cast<Index>(stream.next_below(std::uint64_t(d)));
    const Index rank_r = 1 + static_cast<Index>(stream.next_below(std::uint64_t(dim / 2)));
    const double nm = 0.3 * std::exp(stream.next_uniform() * std::log(10.0));

    ModelWithProjection lab =
        random_signal_model(dim, d, rank_p, rank_r, group_size, stream.child(1));
    SupportNorms norms = support_norms(lab.model, lab.projection, 4096, stream.child(2));
    const double sigma_orig = nm * norms.max_norm / double(group_size);
    const double sigma_proj = nm * norms.max_proj_norm / double(group_size);

    DecompositionCase c;
    c.model_id = "m" + std::to_string(i);
    c.dim = dim;
    c.subspace_dim = d;
    c.rank_p = rank_p;
    c.rank_r = rank_r;
    c.noise_multiplier = nm;
    c.terms = analytic_terms(lab.model, lab.projection, sigma_proj, norms.ratio());
    c.mc = monte_carlo_mse(lab.model, lab.projection, sigma_orig, sigma_proj, trials,
                           stream.child(3), workers);
    cases[static_cast<std::size_t>(i)] = std::move(c);
  }
  return cases;
}

std::string to_string(NoiseRegime r) {
  switch (r) {
    case NoiseRegime::kLow: return "low";
    case NoiseRegime::kIntermediate: return "intermediate";
    case NoiseRegime::kHigh: return "high";
  }
  return "intermediate";
}

SweepResult sweep_mse(const SignalModel& model, const std::string& model_id,
                      const std::vector<Index>& dims,
                      const std::vector<double>& noise_multipliers, Index trials,
                      RngStream stream, int workers) {
  model.validate();
  require(!dims.empty() && !noise_multipliers.empty(), "sweep grids must be nonempty");
  for (Index d : dims)
    require(d >= 1 && d <= model.dim(), "sweep dimension out of range");
  for (double nm : noise_multipliers)
    require(nm > 0.0, "noise multipliers must be positive");

  // Shared projections: top-d eigenvectors of the population second moment.
  const Matrix second = model.mean * model.mean.transpose() + model.sigma_p() + model.sigma_r();
  const SymEig eig = sym_eig(second);

  // One shared support scan for the norm maxima at every dimension.
  const Index n_scan = 10000;
  RngStream scan_stream = stream.child(1);
  const Matrix scan = sample_support(model, n_scan, scan_stream);
  double max_norm = 0.0;
  for (Index i = 0; i < n_scan; ++i) max_norm = std::max(max_norm, scan.row(i).norm());

  SweepResult out;
  out.dims = dims;
  out.noise_multipliers = noise_multipliers;

  struct PerDim {
    std::shared_ptr<Projection> proj;
    double max_proj_norm = 0.0;
  };
  std::vector<PerDim> per_dim;
  per_dim.reserve(dims.size());
  for (Index d : dims) {
    PerDim pd;
    pd.proj = std::make_shared<Projection>(eig.eigenvectors.leftCols(d));
    for (Index i = 0; i < n_scan; ++i)
      pd.max_proj_norm = std::max(
          pd.max_proj_norm, (pd.proj->basis().transpose() * scan.row(i).transpose()).norm());
    per_dim.push_back(std::move(pd));
  }

  const double l = static_cast<double>(model.group_size);
  Index point_id = 0;
  for (std::size_t ni = 0; ni < noise_multipliers.size(); ++ni) {
    const double nm = noise_multipliers[ni];
    const double sigma_orig = nm * max_norm / l;
    double best_back = std::numeric_limits<double>::infinity();
    std::size_t best_di = 0;
    for (std::size_t di = 0; di < dims.size(); ++di) {
      const PerDim& pd = per_dim[di];
      const double sigma_proj = nm * pd.max_proj_norm / l;
      const double rho = max_norm / pd.max_proj_norm;

      SweepPoint pt;
      pt.model_id = model_id;
      pt.dim = model.dim();
      pt.subspace_dim = dims[di];
      pt.noise_multiplier = nm;
      pt.sigma_orig = sigma_orig;
      pt.sigma_proj = sigma_proj;
      pt.mse_orig = analytic_mse_orig(model, sigma_orig);
      pt.mse_back = analytic_mse_back(model, *pd.proj, sigma_proj);
      pt.terms = analytic_terms(model, *pd.proj, sigma_proj, rho);
      if (trials > 0)
        pt.mc = monte_carlo_mse(model, *pd.proj, sigma_orig, sigma_proj, trials,
                                stream.child(1000 + static_cast<std::uint64_t>(point_id)),
                                workers);
      if (pt.mse_back < best_back) {
        best_back = pt.mse_back;
        best_di = di;
      }
      out.points.push_back(std::move(pt));
      ++point_id;
    }
    NoiseRegime regime = NoiseRegime::kIntermediate;
    if (best_di == dims.size() - 1)
      regime = NoiseRegime::kLow;
    else if (best_di == 0)
      regime = NoiseRegime::kHigh;
    out.regimes.push_back(regime);
  }
  return out;
}

SignalModel default_sweep_model(std::uint64_t seed) {
  // D = 64 with an informative block in the top eigendirections of the mean
  // spectrum; scales chosen so the default noise grid spans all regimes.
  const Index dim = 64, rank_p = 8, rank_r = 48;
  RngStream stream = RngStream::derive(seed, {static_cast<std::uint64_t>(StreamUse::kModelGen)});

  SignalModel m;
  // Mean energy concentrated in the leading coordinates.
  m.mean.resize(dim);
  for (Index i = 0; i < dim; ++i)
    m.mean[i] = 3.0 * std::exp(-static_cast<double>(i) / 6.0) *
                (stream.next_bernoulli(0.5) ? 1.0 : -1.0);
  // Informative spread over the same leading block.
  m.factor_p = Matrix::Zero(dim, rank_p);
  for (Index j = 0; j < rank_p; ++j)
    m.factor_p(j, j) = 1.5 * std::exp(-static_cast<double>(j) / 8.0);
  // Broad low-amplitude tail everywhere.
  m.factor_r = stream.gaussian_matrix(dim, rank_r, 0.25);
  m.group_size = 100;

  Matrix u(dim, rank_p + rank_r);
  u << m.factor_p, m.factor_r;
  double max_norm = m.mean.norm();
  Vector g(u.cols());
  for (Index i = 0; i < 4096; ++i) {
    stream.fill_gaussian(g.data(), g.size());
    max_norm = std::max(max_norm, (m.mean + u * g).norm());
  }
  m.clip_bound = 1.15 * max_norm;
  m.validate();
  return m;
}

std::vector<Index> default_sweep_dims() { return {2, 4, 8, 12, 16, 24, 32, 48, 56, 64}; }

std::vector<double> default_sweep_noise() { return {0.02, 0.3, 1.0, 4.0, 20.0}; }

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& sweep) {
  std::ostringstream os;
  os.precision(12);
  os << "model_id,D,d,noise_multiplier,regime,sigma_orig,sigma_proj,mse_orig,mse_back,"
        "term_residual,term_dimreduction,term_projerror,mc_mse_orig,mc_se_orig,"
        "mc_mse_back,mc_se_back,mc_delta,mc_se_delta,mc_trials\n";
  std::size_t idx = 0;
  for (std::size_t ni = 0; ni < sweep.noise_multipliers.size(); ++ni) {
    for (std::size_t di = 0; di < sweep.dims.size(); ++di, ++idx) {
      const SweepPoint& p = sweep.points[idx];
      os << p.model_id << "," << p.dim << "," << p.subspace_dim << "," << p.noise_multiplier
         << "," << to_string(sweep.regimes[ni]) << "," << p.sigma_orig << "," << p.sigma_proj
         << "," << p.mse_orig << "," << p.mse_back << "," << p.terms.residual << ","
         << p.terms.dim_reduction << "," << p.terms.projection_error << "," << p.mc.mse_orig
         << "," << p.mc.se_orig << "," << p.mc.mse_back << "," << p.mc.se_back << ","
         << p.mc.delta << "," << p.mc.se_delta << "," << p.mc.trials << "\n";
    }
  }
  write_text_file(path, os.str());
}

}  // namespace dpdd
