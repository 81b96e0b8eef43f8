#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpdd/analysis.hpp"
#include "dpdd/config.hpp"
#include "dpdd/io.hpp"
#include "dpdd/pipeline.hpp"
#include "dpdd/verify.hpp"

namespace fs = std::filesystem;
using namespace dpdd;

namespace {

// --out wins; otherwise an absolute config output_dir; otherwise the env
// root (or cwd) joined with the config output_dir.
fs::path resolve_output_root(const std::string& out_flag, const RunConfig& cfg) {
  if (!out_flag.empty()) return fs::path(out_flag);
  fs::path dir(cfg.run.output_dir);
  if (dir.is_absolute()) return dir;
  if (const char* env = std::getenv("DPDD_OUTPUT_ROOT")) return fs::path(env) / dir;
  return dir;
}

RunConfig load_config(const std::string& config_path) {
  if (config_path.empty()) return RunConfig::defaults();
  return RunConfig::from_file(config_path);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    seeds.push_back(std::stoull(item));
  }
  require(!seeds.empty(), "empty seed list");
  return seeds;
}

int cmd_calibrate(const RunConfig& cfg) {
  std::cout << calibrate_run(cfg).report();
  return 0;
}

int cmd_distill(const RunConfig& cfg, const std::string& stage, const fs::path& root) {
  RunPaths paths{root};
  if (stage == "sample" || stage == "all") {
    stage_sample(cfg, paths);
    std::cout << "store written: " << paths.store().string() << "\n";
  }
  if (stage == "optimize" || stage == "all") {
    OptimizeResult result = stage_optimize(cfg, paths);
    double last = result.loss_trace.rows() > 0
                      ? result.loss_trace.row(result.loss_trace.rows() - 1).mean()
                      : 0.0;
    std::cout << "distilled set written: " << paths.synthetic().string()
              << " (final matching loss " << last << ")\n";
  }
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const fs::path& root) {
  RunPaths paths{root};
  EvalReport report = stage_evaluate(cfg, paths);
  std::cout << "accuracy = " << report.accuracy << "\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c)
    std::cout << "class " << c << " accuracy = " << report.per_class[c] << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& seed_list, int num_seeds,
               const fs::path& root) {
  std::vector<std::uint64_t> seeds;
  if (!seed_list.empty()) {
    seeds = parse_seed_list(seed_list);
  } else {
    for (int i = 0; i < num_seeds; ++i) seeds.push_back(cfg.run.master_seed + std::uint64_t(i));
  }
  AblationTable table = ablation_suite(cfg, seeds, root / "ablation");
  write_ablation_csvs(table, root);
  std::cout << table.summary_csv();
  return 0;
}

int cmd_verify_theorem1(Index models, Index trials, std::uint64_t seed, int workers) {
  std::vector<DecompositionCase> cases = decomposition_battery(models, trials, 100, seed, workers);
  bool ok = true;
  for (const DecompositionCase& c : cases) {
    double gap = c.gap_se();
    bool pass = gap <= 3.0;
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << c.model_id << " D=" << c.dim
              << " d=" << c.subspace_dim << " nm=" << c.noise_multiplier
              << " analytic=" << c.analytic_delta() << " mc=" << c.mc.delta
              << " se=" << c.mc.se_delta << " gap=" << gap << " se units\n";
  }
  std::cout << (ok ? "decomposition verified" : "DECOMPOSITION MISMATCH") << " ("
            << models << " models, " << trials << " trials)\n";
  if (!ok) throw NumericalError("analytic and Monte-Carlo decompositions disagree");
  return 0;
}

int cmd_sweep(const fs::path& root, Index trials, std::uint64_t seed, int workers) {
  SignalModel model = default_sweep_model(seed);
  RngStream stream = RngStream::derive(seed, {static_cast<std::uint64_t>(StreamUse::kMcTrial)});
  SweepResult sweep = sweep_mse(model, "default", default_sweep_dims(), default_sweep_noise(),
                                trials, stream, workers);
  fs::create_directories(root);
  write_sweep_csv(root / "mse_sweep.csv", sweep);
  for (std::size_t n = 0; n < sweep.noise_multipliers.size(); ++n)
    std::cout << "noise_multiplier " << sweep.noise_multipliers[n] << ": "
              << to_string(sweep.regimes[n]) << " regime\n";
  std::cout << "sweep written: " << (root / "mse_sweep.csv").string() << "\n";
  return 0;
}

int cmd_verify(std::uint64_t seed, const std::string& inject) {
  VerifySuite suite = run_verification(seed, injection_from_string(inject));
  std::cout << suite.report();
  if (!suite.all_passed()) throw NumericalError("verification checks failed");
  return 0;
}

int cmd_config(bool dump_defaults, const std::string& config_path, bool hash_only) {
  RunConfig cfg = dump_defaults ? RunConfig::defaults() : load_config(config_path);
  if (hash_only) {
    std::cout << cfg.hash_hex() << "\n";
    return 0;
  }
  std::cout << cfg.to_text();
  std::cout << "# hash = " << cfg.hash_hex() << "\n";
  return 0;
}

int cmd_make_toy(const RunConfig& cfg, const std::string& out_file, const std::string& split) {
  ToyTask task = load_toy_task(cfg);
  const Dataset& ds = split == "test" ? task.test : task.train;
  write_dataset(out_file, ds);
  std::cout << split << " split written: " << out_file << " (" << ds.total_images()
            << " images)\n";
  return 0;
}

int cmd_import_raw(const std::string& raw_path, const std::string& labels_path,
                   Index channels, Index height, Index width, const std::string& out_file) {
  std::string bytes = read_file(raw_path);
  std::string label_bytes = read_file(labels_path);
  const Index pixels = channels * height * width;
  require(pixels > 0, "image dims must be positive");
  require(bytes.size() % std::size_t(pixels) == 0,
          "raw file size is not a multiple of one image");
  const Index n = Index(bytes.size()) / pixels;
  require(Index(label_bytes.size()) == n,
          "label count " + std::to_string(label_bytes.size()) + " does not match " +
              std::to_string(n) + " images");

  Index num_classes = 0;
  for (char c : label_bytes)
    num_classes = std::max<Index>(num_classes, Index(static_cast<unsigned char>(c)) + 1);
  Dataset ds;
  ds.shape = ImageShape{channels, height, width};
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(num_classes));
  for (Index i = 0; i < n; ++i)
    members[static_cast<unsigned char>(label_bytes[std::size_t(i)])].push_back(i);
  for (Index c = 0; c < num_classes; ++c) {
    require(!members[std::size_t(c)].empty(),
            "class " + std::to_string(c) + " has no images");
    Matrix m(Index(members[std::size_t(c)].size()), pixels);
    for (std::size_t r = 0; r < members[std::size_t(c)].size(); ++r) {
      const Index img = members[std::size_t(c)][r];
      for (Index p = 0; p < pixels; ++p)
        m(Index(r), p) =
            double(static_cast<unsigned char>(bytes[std::size_t(img * pixels + p)])) / 255.0;
    }
    ds.class_images.push_back(std::move(m));
  }
  write_dataset(out_file, ds);
  std::cout << "imported " << n << " images, " << num_classes << " classes: " << out_file
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentially private dataset distillation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_flag;

  auto* calibrate = app.add_subcommand("calibrate", "print the calibrated noise scale");
  calibrate->add_option("--config", config_path, "config file");

  std::string stage = "all";
  auto* distill = app.add_subcommand("distill", "run the sampling and optimization stages");
  distill->add_option("--config", config_path, "config file");
  distill->add_option("--stage", stage, "sample | optimize | all")
      ->check(CLI::IsMember({"sample", "optimize", "all"}));
  distill->add_option("--out", out_flag, "output directory");

  auto* evaluate = app.add_subcommand("evaluate", "train the eval classifier on a distilled set");
  evaluate->add_option("--config", config_path, "config file");
  evaluate->add_option("--out", out_flag, "output directory");

  std::string seed_list;
  int num_seeds = 5;
  auto* ablate = app.add_subcommand("ablate", "2x2 ablation over DOS and SER");
  ablate->add_option("--config", config_path, "config file");
  ablate->add_option("--seeds", seed_list, "comma-separated master seeds");
  ablate->add_option("--num-seeds", num_seeds, "seed count when --seeds is absent")
      ->check(CLI::PositiveNumber);
  ablate->add_option("--out", out_flag, "output directory");

  Index t1_models = 20;
  Index t1_trials = 100000;
  std::uint64_t t1_seed = 7;
  int workers = 1;
  auto* vt1 = app.add_subcommand("verify-theorem1",
                                 "analytic vs Monte-Carlo error decomposition battery");
  vt1->add_option("--models", t1_models, "model count")->check(CLI::PositiveNumber);
  vt1->add_option("--trials", t1_trials, "Monte-Carlo trials")->check(CLI::PositiveNumber);
  vt1->add_option("--seed", t1_seed, "battery seed");
  vt1->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);

  Index sweep_trials = 20000;
  std::uint64_t sweep_seed = 7;
  auto* sweep = app.add_subcommand("sweep-mse", "error sweep over subspace dims and noise");
  sweep->add_option("--trials", sweep_trials, "Monte-Carlo trials per grid point")
      ->check(CLI::PositiveNumber);
  sweep->add_option("--seed", sweep_seed, "sweep seed");
  sweep->add_option("--out", out_flag, "output directory");
  sweep->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);

  std::uint64_t verify_seed = 7;
  std::string inject = "none";
  auto* verify = app.add_subcommand("verify", "numerical hygiene suite");
  verify->add_option("--seed", verify_seed, "suite seed");
  verify->add_option("--inject", inject, "none | sigma-half | bad-projection")
      ->check(CLI::IsMember({"none", "sigma-half", "bad-projection"}));

  bool dump_defaults = false, hash_only = false;
  auto* config_cmd = app.add_subcommand("config", "print the canonical config");
  config_cmd->add_flag("--dump-defaults", dump_defaults, "print built-in defaults");
  config_cmd->add_option("--config", config_path, "config file");
  config_cmd->add_flag("--hash", hash_only, "print only the config hash");

  std::string out_file = "toy.dsrt", split = "train";
  auto* make_toy = app.add_subcommand("make-toy", "write the built-in task to a dataset file");
  make_toy->add_option("--config", config_path, "config file");
  make_toy->add_option("--out-file", out_file, "destination dataset file");
  make_toy->add_option("--split", split, "train | test")
      ->check(CLI::IsMember({"train", "test"}));

  std::string raw_path, labels_path;
  Index raw_c = 1, raw_h = 16, raw_w = 16;
  auto* import_raw = app.add_subcommand("import-raw", "convert raw u8 images to a dataset file");
  import_raw->add_option("--raw", raw_path, "u8 image file, n*c*h*w bytes")->required();
  import_raw->add_option("--labels", labels_path, "one label byte per image")->required();
  import_raw->add_option("--channels", raw_c, "channels")->check(CLI::PositiveNumber);
  import_raw->add_option("--height", raw_h, "height")->check(CLI::PositiveNumber);
  import_raw->add_option("--width", raw_w, "width")->check(CLI::PositiveNumber);
  import_raw->add_option("--out-file", out_file, "destination dataset file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*calibrate) return cmd_calibrate(load_config(config_path));
    if (*distill) {
      RunConfig cfg = load_config(config_path);
      return cmd_distill(cfg, stage, resolve_output_root(out_flag, cfg));
    }
    if (*evaluate) {
      RunConfig cfg = load_config(config_path);
      return cmd_evaluate(cfg, resolve_output_root(out_flag, cfg));
    }
    if (*ablate) {
      RunConfig cfg = load_config(config_path);
      return cmd_ablate(cfg, seed_list, num_seeds, resolve_output_root(out_flag, cfg));
    }
    if (*vt1) return cmd_verify_theorem1(t1_models, t1_trials, t1_seed, workers);
    if (*sweep) {
      RunConfig cfg = load_config("");
      return cmd_sweep(resolve_output_root(out_flag, cfg), sweep_trials, sweep_seed, workers);
    }
    if (*verify) return cmd_verify(verify_seed, inject);
    if (*config_cmd) return cmd_config(dump_defaults, config_path, hash_only);
    if (*make_toy) return cmd_make_toy(load_config(config_path), out_file, split);
    if (*import_raw)
      return cmd_import_raw(raw_path, labels_path, raw_c, raw_h, raw_w, out_file);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
