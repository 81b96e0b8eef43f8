#pragma once

#include <vector>

#include "dpdd/common.hpp"
#include "dpdd/dos.hpp"
#include "dpdd/mixture.hpp"
#include "dpdd/tensor.hpp"

namespace dpdd {

// Seeded class-conditional mixture task with disjoint train/test streams.
struct ToyTask {
  MixtureSpec mixture;
  Dataset train;
  Dataset test;
  std::uint64_t seed = 0;
};

struct ToyTaskConfig {
  ImageShape shape{1, 16, 16};
  Index classes = 4;
  Index train_per_class = 500;
  Index test_per_class = 100;
  Index components = 2;
  double amplitude = 0.35;
  double pixel_std = 0.12;
};
ToyTask make_toy_task(const ToyTaskConfig& cfg, std::uint64_t seed);

// Classifier: one fixed randomly initialized conv block as the feature map,
// with a multinomial logistic head trained by full-batch adagrad on
// cross-entropy. Convex in the trained weights, so runs are stable and
// fully determined by the seed.
struct ClassifierConfig {
  Index conv_channels = 8;
  Index kernel = 3;
  Index pool = 2;
  Index steps = 400;
  double lr = 0.5;
  std::uint64_t seed = 0;
};

struct EvalReport {
  double accuracy = 0.0;
  std::vector<double> per_class;
  std::vector<double> loss_trace;
  std::uint64_t seed = 0;
};

EvalReport train_classifier(const Dataset& train_on, const Dataset& test_on,
                            const ClassifierConfig& cfg);
EvalReport train_classifier(const SyntheticSet& distilled, const ToyTask& task,
                            const ClassifierConfig& cfg);

}  // namespace dpdd
