#include "dpdd/eval.hpp"

#include <cmath>

#include "dpdd/extractor.hpp"

namespace dpdd {
namespace {

Matrix feature_rows(const Dataset& ds, const ExtractorSpec& spec, const ExtractorWeights& w) {
  Matrix out(ds.total_images(), spec.feature_dim());
  Index row = 0;
  for (const Matrix& batch : ds.class_images)
    for (Index i = 0; i < batch.rows(); ++i)
      out.row(row++) = extract_features(spec, w, batch.row(i).transpose()).transpose();
  return out;
}

std::vector<Index> label_rows(const Dataset& ds) {
  std::vector<Index> labels;
  labels.reserve(static_cast<std::size_t>(ds.total_images()));
  for (Index c = 0; c < ds.num_classes(); ++c)
    for (Index i = 0; i < ds.class_images[static_cast<std::size_t>(c)].rows(); ++i)
      labels.push_back(c);
  return labels;
}

}  // namespace

ToyTask make_toy_task(const ToyTaskConfig& cfg, std::uint64_t seed) {
  require(cfg.classes >= 2, "toy task needs at least two classes");
  require(cfg.train_per_class >= 1 && cfg.test_per_class >= 1,
          "toy task needs train and test images");
  ToyTask task;
  task.seed = seed;
  task.mixture = MixtureSpec::procedural(cfg.shape, cfg.classes, cfg.components, cfg.amplitude,
                                         cfg.pixel_std, RngStream::derive_key(seed, {0}));
  task.train = sample_mixture_dataset(
      task.mixture, cfg.train_per_class,
      RngStream::derive(seed, {static_cast<std::uint64_t>(StreamUse::kToyTrain)}));
  task.test = sample_mixture_dataset(
      task.mixture, cfg.test_per_class,
      RngStream::derive(seed, {static_cast<std::uint64_t>(StreamUse::kToyTest)}));
  return task;
}

EvalReport train_classifier(const Dataset& train_on, const Dataset& test_on,
                            const ClassifierConfig& cfg) {
  require(train_on.num_classes() == test_on.num_classes(),
          "train and test class counts disagree");
  require(train_on.shape == test_on.shape, "train and test image shapes disagree");
  require(cfg.steps >= 0, "step count must be nonnegative");
  require(cfg.lr > 0.0, "learning rate must be positive");
  const Index classes = train_on.num_classes();

  // Fixed random conv features shared by both splits.
  const ExtractorSpec spec =
      ExtractorSpec::conv_net(train_on.shape, {cfg.conv_channels}, cfg.kernel);
  const ExtractorWeights w = materialize(
      spec, {RngStream::derive_key(cfg.seed,
                                   {static_cast<std::uint64_t>(StreamUse::kClassifierInit)}),
             1.0});

  const Matrix ftr = feature_rows(train_on, spec, w);
  const std::vector<Index> ltr = label_rows(train_on);
  const Index n = ftr.rows();
  const Index f = ftr.cols();

  Matrix head = Matrix::Zero(classes, f);
  Matrix accum = Matrix::Zero(classes, f);
  EvalReport report;
  report.seed = cfg.seed;
  report.loss_trace.reserve(static_cast<std::size_t>(cfg.steps));

  Matrix probs(n, classes);
  for (Index step = 0; step < cfg.steps; ++step) {
    probs.noalias() = ftr * head.transpose();
    double loss = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double m = probs.row(i).maxCoeff();
      const double lse = m + std::log((probs.row(i).array() - m).exp().sum());
      loss -= probs(i, ltr[static_cast<std::size_t>(i)]) - lse;
      probs.row(i) = (probs.row(i).array() - lse).exp();
      probs(i, ltr[static_cast<std::size_t>(i)]) -= 1.0;
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss))
      throw NumericalError("classifier loss diverged at step " + std::to_string(step));
    report.loss_trace.push_back(loss);

    const Matrix grad = probs.transpose() * ftr / static_cast<double>(n);
    accum.array() += grad.array().square();
    head.array() -= cfg.lr * grad.array() / (accum.array().sqrt() + 1e-8);
  }

  // Balanced test splits: overall accuracy is the mean of per-class rates.
  const Matrix fte = feature_rows(test_on, spec, w);
  const std::vector<Index> lte = label_rows(test_on);
  std::vector<double> correct(static_cast<std::size_t>(classes), 0.0);
  std::vector<double> count(static_cast<std::size_t>(classes), 0.0);
  for (Index i = 0; i < fte.rows(); ++i) {
    Index arg = 0;
    (head * fte.row(i).transpose()).maxCoeff(&arg);
    const auto c = static_cast<std::size_t>(lte[static_cast<std::size_t>(i)]);
    count[c] += 1.0;
    if (arg == lte[static_cast<std::size_t>(i)]) correct[c] += 1.0;
  }
  report.per_class.resize(static_cast<std::size_t>(classes));
  double acc = 0.0;
  for (Index c = 0; c < classes; ++c) {
    const auto idx = static_cast<std::size_t>(c);
    require(count[idx] > 0.0, "test split is missing a class");
    report.per_class[idx] = correct[idx] / count[idx];
    acc += report.per_class[idx];
  }
  report.accuracy = acc / static_cast<double>(classes);
  return report;
}

EvalReport train_classifier(const SyntheticSet& distilled, const ToyTask& task,
                            const ClassifierConfig& cfg) {
  require(distilled.shape == task.train.shape, "distilled shape does not match task");
  require(static_cast<Index>(distilled.class_images.size()) == task.train.num_classes(),
          "distilled class count does not match task");
  return train_classifier(distilled.as_dataset(), task.test, cfg);
}

}  // namespace dpdd
