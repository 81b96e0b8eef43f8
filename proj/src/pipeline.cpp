#include "dpdd/pipeline.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "dpdd/io.hpp"
#include "dpdd/mixture.hpp"
#include "dpdd/ser.hpp"

namespace dpdd {

namespace {

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string artifact_line(const RunPaths& paths, const std::filesystem::path& file) {
  std::string bytes = read_file(file);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64(bytes));
  return "artifact " + file.lexically_relative(paths.root).generic_string() +
         " fnv1a64=" + buf + " bytes=" + std::to_string(bytes.size()) + "\n";
}

std::string manifest_header(const std::string& stage, const RunConfig& cfg) {
  std::string out = "# run manifest v1\n";
  out += "stage = " + stage + "\n";
  out += "config_hash = " + cfg.hash_hex() + "\n";
  out += "master_seed = " + std::to_string(cfg.run.master_seed) + "\n";
  return out;
}

ExtractorSpec build_extractor(const RunConfig& cfg) {
  ImageShape shape{cfg.data.image_channels, cfg.data.image_height, cfg.data.image_width};
  return ExtractorSpec::conv_net(shape, cfg.extractor.channels, cfg.extractor.kernel,
                                 cfg.extractor.dense);
}

AugmentPolicy build_augment(const RunConfig& cfg) {
  AugmentPolicy p = AugmentPolicy::from_ops(cfg.augment.ops);
  p.crop_pad = cfg.augment.crop_pad;
  p.brightness_delta = cfg.augment.brightness_delta;
  p.saturation_delta = cfg.augment.saturation_delta;
  p.cutout_fraction = cfg.augment.cutout_fraction;
  return p;
}

double max_sampling_rate(const std::vector<Index>& counts, Index group_size) {
  double q = 0.0;
  for (Index n : counts) q = std::max(q, std::min(1.0, double(group_size) / double(n)));
  return q;
}

}  // namespace

ToyTaskConfig toy_config(const RunConfig& cfg) {
  ToyTaskConfig tc;
  tc.shape = ImageShape{cfg.data.image_channels, cfg.data.image_height, cfg.data.image_width};
  tc.classes = cfg.data.classes;
  tc.train_per_class = cfg.data.train_per_class;
  tc.test_per_class = cfg.data.test_per_class;
  tc.components = cfg.data.components;
  tc.amplitude = cfg.data.amplitude;
  tc.pixel_std = cfg.data.pixel_std;
  return tc;
}

ToyTask load_toy_task(const RunConfig& cfg) {
  require(cfg.data.source == "toy",
          "this operation needs the built-in task; data.source is '" + cfg.data.source + "'");
  return make_toy_task(toy_config(cfg), cfg.run.master_seed);
}

Dataset load_train_dataset(const RunConfig& cfg) {
  if (cfg.data.source == "toy") return load_toy_task(cfg).train;
  Dataset ds = read_dataset(cfg.data.path);
  ImageShape expect{cfg.data.image_channels, cfg.data.image_height, cfg.data.image_width};
  require(ds.shape == expect, "dataset image shape does not match config");
  require(ds.num_classes() == cfg.data.classes,
          "dataset has " + std::to_string(ds.num_classes()) + " classes, config says " +
              std::to_string(cfg.data.classes));
  return ds;
}

std::vector<Index> train_class_counts(const RunConfig& cfg) {
  std::vector<Index> counts;
  if (cfg.data.source == "toy") {
    counts.assign(static_cast<std::size_t>(cfg.data.classes), cfg.data.train_per_class);
    return counts;
  }
  std::vector<std::uint8_t> labels = read_labels(cfg.data.path);
  require(!labels.empty(), "empty label sidecar for " + cfg.data.path);
  counts.assign(static_cast<std::size_t>(cfg.data.classes), 0);
  for (std::uint8_t l : labels) {
    require(l < counts.size(), "label byte out of range in " + cfg.data.path);
    ++counts[l];
  }
  for (std::size_t c = 0; c < counts.size(); ++c)
    require(counts[c] > 0, "class " + std::to_string(c) + " has no records");
  return counts;
}

std::string CalibrationSummary::report() const {
  std::ostringstream o;
  o << "# calibration report\n";
  o << "epsilon_target = " << fmt(target.epsilon) << "\n";
  o << "delta_target = " << fmt(target.delta) << "\n";
  if (aux_share) {
    o << "epsilon_aux = " << fmt(aux_share->epsilon) << "\n";
    o << "delta_aux = " << fmt(aux_share->delta) << "\n";
  }
  o << "epsilon_distill = " << fmt(distill.epsilon) << "\n";
  o << "delta_distill = " << fmt(distill.delta) << "\n";
  o << "sampling_rate = " << fmt(sampling_rate) << "\n";
  o << "steps = " << steps << "\n";
  o << "sensitivity = " << fmt(sensitivity) << "\n";
  o << "sigma = " << fmt(calibration.sigma) << "\n";
  o << "noise_multiplier = " << fmt(calibration.noise_multiplier) << "\n";
  o << "epsilon_realized = " << fmt(calibration.realized.epsilon) << "\n";
  o << "order_argmin = " << fmt(calibration.realized.order) << "\n";
  AccountantState state = AccountantState::fresh();
  state.compose(sampling_rate, calibration.noise_multiplier, 1);
  for (double a : {2.0, 8.0, 32.0, 64.0}) {
    for (std::size_t i = 0; i < state.orders.size(); ++i) {
      if (state.orders[i] == a)
        o << "rdp_per_step[alpha=" << a << "] = " << fmt(state.rdp[i]) << "\n";
    }
  }
  return o.str();
}

CalibrationSummary calibrate_run(const RunConfig& cfg) {
  cfg.validate();
  CalibrationSummary s;
  s.target = PrivacyBudget{cfg.privacy.epsilon, cfg.privacy.delta};
  s.distill = s.target;
  if (cfg.ser.enabled && cfg.ser.aux_private) {
    auto [aux, rest] = split_budget(s.target, cfg.privacy.aux_fraction);
    s.aux_share = aux;
    s.distill = rest;
  }
  std::vector<Index> counts = train_class_counts(cfg);
  Index min_count = *std::min_element(counts.begin(), counts.end());
  if (cfg.privacy.group_size > min_count)
    std::cerr << "warning: group size " << cfg.privacy.group_size
              << " exceeds smallest class (" << min_count
              << "); sampling rate capped at 1\n";
  s.sampling_rate = max_sampling_rate(counts, cfg.privacy.group_size);
  s.steps = cfg.dos.sample_iterations;
  s.sensitivity = cfg.privacy.clip_bound / double(cfg.privacy.group_size);
  s.calibration = calibrate_sigma(s.distill, s.sampling_rate, s.steps, s.sensitivity);
  return s;
}

void stage_sample(const RunConfig& cfg, const RunPaths& paths) {
  cfg.validate();
  CalibrationSummary cal = calibrate_run(cfg);

  ExtractorSpec extractor = build_extractor(cfg);
  Index feature_dim = extractor.feature_dim();
  if (cfg.ser.enabled)
    require(cfg.ser.subspace_dim <= feature_dim,
            "ser.subspace_dim " + std::to_string(cfg.ser.subspace_dim) +
                " exceeds feature dimension " + std::to_string(feature_dim));

  Dataset data = load_train_dataset(cfg);

  std::optional<AuxiliarySet> aux;
  if (cfg.ser.enabled) {
    if (cfg.ser.aux == "file") {
      aux = load_aux(cfg.ser.aux_path);
      require(aux->data.shape == data.shape, "auxiliary image shape does not match data");
    } else {
      require(cfg.data.source == "toy",
              "synthetic auxiliary data needs the built-in task; set ser.aux = file");
      ToyTask task = load_toy_task(cfg);
      RngStream aux_stream = RngStream::derive(
          cfg.run.master_seed, {static_cast<std::uint64_t>(StreamUse::kAuxData)});
      aux = synth_aux(task.mixture, cfg.ser.aux_per_class, aux_stream);
    }
    if (cal.aux_share) aux->budget_share = *cal.aux_share;
  }

  SampleConfig scfg;
  scfg.extractor = extractor;
  scfg.init_scale = cfg.extractor.init_scale;
  scfg.augment = build_augment(cfg);
  scfg.clip_bound = cfg.privacy.clip_bound;
  scfg.group_size = cfg.privacy.group_size;
  scfg.sigma = cal.calibration.sigma;
  scfg.noise_multiplier = cal.calibration.noise_multiplier;
  scfg.epsilon = cal.calibration.realized.epsilon;
  scfg.delta = cal.distill.delta;
  scfg.iterations = cfg.dos.sample_iterations;
  scfg.subspace_dim = cfg.ser.enabled ? cfg.ser.subspace_dim : 0;
  scfg.master_seed = cfg.run.master_seed;
  scfg.config_hash = cfg.hash_hex();
  scfg.workers = cfg.run.workers;

  SampleStageResult result = sample_stage(data, aux ? &*aux : nullptr, scfg);

  std::filesystem::create_directories(paths.root);
  write_text_file(paths.config_file(), cfg.to_text());
  write_store(paths.store(), result.store);
  write_ledger(paths.ledger(), result.ledger, cal.distill.delta);

  std::string manifest = manifest_header("sample", cfg);
  manifest += "epsilon_target = " + fmt(cal.target.epsilon) + "\n";
  manifest += "delta_target = " + fmt(cal.target.delta) + "\n";
  if (cal.aux_share)
    manifest += "epsilon_aux = " + fmt(cal.aux_share->epsilon) + "\n";
  manifest += "epsilon_realized = " + fmt(cal.calibration.realized.epsilon) + "\n";
  manifest += "sigma = " + fmt(cal.calibration.sigma) + "\n";
  manifest += "sampling_rate = " + fmt(cal.sampling_rate) + "\n";
  manifest += artifact_line(paths, paths.config_file());
  manifest += artifact_line(paths, paths.store());
  manifest += artifact_line(paths, paths.ledger());
  write_text_file(paths.sample_manifest(), manifest);
}

OptimizeResult stage_optimize(const RunConfig& cfg, const RunPaths& paths) {
  cfg.validate();
  SignalStore store = read_store(paths.store());
  if (store.meta().config_hash != cfg.hash_hex())
    throw StateError("store at " + paths.store().string() +
                     " was produced by config " + store.meta().config_hash +
                     ", current config is " + cfg.hash_hex());

  OptimizeConfig ocfg;
  ocfg.per_class = cfg.dos.per_class;
  if (cfg.dos.enabled) {
    ocfg.iterations = cfg.dos.optimize_iterations;
    ocfg.selection = record_selection_from_string(cfg.dos.selection);
  } else {
    ocfg.iterations = store.meta().iterations;
    ocfg.selection = RecordSelection::kSequential;
  }
  ocfg.lr = cfg.dos.lr;
  ocfg.init_std = cfg.dos.init_std;
  ocfg.workers = cfg.run.workers;

  OptimizeResult result = optimize_stage(store, ocfg);

  std::filesystem::create_directories(paths.root);
  write_dataset(paths.synthetic(), result.set.as_dataset());

  std::ostringstream csv;
  csv << "iteration";
  for (Index c = 0; c < store.meta().classes; ++c) csv << ",loss_class" << c;
  csv << "\n";
  for (Index i = 0; i < result.loss_trace.rows(); ++i) {
    csv << i;
    for (Index c = 0; c < result.loss_trace.cols(); ++c)
      csv << "," << fmt(result.loss_trace(i, c));
    csv << "\n";
  }
  write_text_file(paths.loss_csv(), csv.str());

  write_png_grid(paths.preview(), result.set.class_images, result.set.shape,
                 cfg.dos.per_class);

  std::string manifest = manifest_header("optimize", cfg);
  manifest += "optimize_iterations = " + std::to_string(ocfg.iterations) + "\n";
  manifest += "selection = " + to_string(ocfg.selection) + "\n";
  manifest += artifact_line(paths, paths.synthetic());
  manifest += artifact_line(paths, label_sidecar_path(paths.synthetic()));
  manifest += artifact_line(paths, paths.loss_csv());
  manifest += artifact_line(paths, paths.preview());
  write_text_file(paths.optimize_manifest(), manifest);
  return result;
}

EvalReport stage_evaluate(const RunConfig& cfg, const RunPaths& paths) {
  cfg.validate();
  ToyTask task = load_toy_task(cfg);
  Dataset distilled = read_dataset(paths.synthetic());
  require(distilled.shape == task.test.shape, "distilled image shape does not match task");

  ClassifierConfig ccfg;
  ccfg.steps = cfg.eval.steps;
  ccfg.lr = cfg.eval.lr;
  ccfg.seed = cfg.run.master_seed;
  EvalReport report = train_classifier(distilled, task.test, ccfg);

  std::ostringstream o;
  o << "# eval report v1\n";
  o << "config_hash = " << cfg.hash_hex() << "\n";
  o << "master_seed = " << cfg.run.master_seed << "\n";
  o << "steps = " << ccfg.steps << "\n";
  o << "accuracy = " << fmt(report.accuracy) << "\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c)
    o << "accuracy_class" << c << " = " << fmt(report.per_class[c]) << "\n";
  std::filesystem::create_directories(paths.root);
  write_text_file(paths.eval_report(), o.str());
  return report;
}

std::string AblationTable::runs_csv() const {
  std::string out = "arm,seed,accuracy,epsilon\n";
  for (const AblationRun& r : runs)
    out += r.arm + "," + std::to_string(r.seed) + "," + fmt(r.accuracy) + "," +
           fmt(r.epsilon) + "\n";
  return out;
}

std::string AblationTable::summary_csv() const {
  std::string out = "arm,dos,ser,seeds,mean_accuracy,std_accuracy,epsilon\n";
  for (const AblationArmSummary& a : arms)
    out += a.arm + "," + (a.dos ? "on" : "off") + "," + (a.ser ? "on" : "off") + "," +
           std::to_string(a.accuracies.size()) + "," + fmt(a.mean) + "," +
           fmt(a.stddev) + "," + fmt(a.epsilon) + "\n";
  return out;
}

const AblationArmSummary& AblationTable::arm(const std::string& name) const {
  for (const AblationArmSummary& a : arms)
    if (a.arm == name) return a;
  throw ValidationError("no ablation arm named " + name);
}

AblationTable ablation_suite(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                             const std::filesystem::path& work_root) {
  base.validate();
  require(!seeds.empty(), "ablation needs at least one seed");
  require(base.data.source == "toy", "ablation runs on the built-in task only");

  struct Arm {
    const char* name;
    bool dos;
    bool ser;
  };
  const Arm arm_grid[] = {
      {"both", true, true},
      {"dos_only", true, false},
      {"ser_only", false, true},
      {"neither", false, false},
  };

  struct Job {
    std::size_t arm_index;
    std::uint64_t seed;
    double accuracy = 0.0;
    double epsilon = 0.0;
  };
  std::vector<Job> jobs;
  for (std::size_t a = 0; a < 4; ++a)
    for (std::uint64_t s : seeds) jobs.push_back(Job{a, s});

  int outer_workers = base.run.workers;
  parallel_for(static_cast<Index>(jobs.size()), outer_workers, [&](Index j) {
    Job& job = jobs[static_cast<std::size_t>(j)];
    const Arm& arm = arm_grid[job.arm_index];
    RunConfig cfg = base;
    cfg.dos.enabled = arm.dos;
    cfg.ser.enabled = arm.ser;
    cfg.run.master_seed = job.seed;
    cfg.run.workers = outer_workers > 1 ? 1 : base.run.workers;
    RunPaths paths{work_root / arm.name / ("seed_" + std::to_string(job.seed))};
    stage_sample(cfg, paths);
    stage_optimize(cfg, paths);
    EvalReport report = stage_evaluate(cfg, paths);
    job.accuracy = report.accuracy;
    AccountantState ledger = read_ledger(paths.ledger());
    PrivacyBudget distill{cfg.privacy.epsilon, cfg.privacy.delta};
    if (cfg.ser.enabled && cfg.ser.aux_private)
      distill = split_budget(distill, cfg.privacy.aux_fraction).second;
    job.epsilon = convert_to_dp(ledger, distill.delta).epsilon;
  });

  AblationTable table;
  for (std::size_t a = 0; a < 4; ++a) {
    AblationArmSummary summary;
    summary.arm = arm_grid[a].name;
    summary.dos = arm_grid[a].dos;
    summary.ser = arm_grid[a].ser;
    for (const Job& job : jobs) {
      if (job.arm_index != a) continue;
      table.runs.push_back(AblationRun{summary.arm, job.seed, job.accuracy, job.epsilon});
      summary.accuracies.push_back(job.accuracy);
      summary.epsilon = std::max(summary.epsilon, job.epsilon);
    }
    double sum = 0.0;
    for (double x : summary.accuracies) sum += x;
    summary.mean = sum / double(summary.accuracies.size());
    if (summary.accuracies.size() > 1) {
      double ss = 0.0;
      for (double x : summary.accuracies) ss += (x - summary.mean) * (x - summary.mean);
      summary.stddev = std::sqrt(ss / double(summary.accuracies.size() - 1));
    }
    table.arms.push_back(std::move(summary));
  }
  return table;
}

void write_ablation_csvs(const AblationTable& table, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "ablation.csv", table.summary_csv());
  write_text_file(dir / "ablation_runs.csv", table.runs_csv());
}

}  // namespace dpdd
