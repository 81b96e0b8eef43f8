#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpdd/common.hpp"

namespace dpdd {

// Flat run configuration, file format: INI-style sections of key = value
// lines, '#' comments. Unknown sections or keys are rejected so typos fail
// loudly. The canonical text dump (sorted, normalized) is what gets hashed
// into every artifact; resuming a split run with a different hash is
// refused.
struct RunConfig {
  struct Run {
    std::uint64_t master_seed = 1;
    std::string output_dir = "out";
    int workers = 1;
  } run;

  struct Data {
    std::string source = "toy";  // toy | files
    std::string path;            // dataset file when source = files
    Index classes = 4;
    Index train_per_class = 500;
    Index test_per_class = 100;
    Index image_channels = 1;
    Index image_height = 16;
    Index image_width = 16;
    Index components = 2;
    double amplitude = 0.35;
    double pixel_std = 0.12;
  } data;

  struct Extractor {
    std::vector<Index> channels = {8, 16};
    Index kernel = 3;
    Index dense = 0;  // 0 disables the dense head
    double init_scale = 1.0;
  } extractor;

  struct Augment {
    std::string ops = "crop,cutout";
    double crop_pad = 2.0;
    double brightness_delta = 0.2;
    double saturation_delta = 0.2;
    double cutout_fraction = 0.25;
  } augment;

  struct Privacy {
    double epsilon = 1.0;
    double delta = 1e-5;
    double clip_bound = 10.0;  // K
    Index group_size = 50;     // L
    double aux_fraction = 0.2; // budget share for private aux generation
  } privacy;

  struct Dos {
    bool enabled = true;
    Index sample_iterations = 200;    // I1
    Index optimize_iterations = 4000; // I2
    Index per_class = 5;              // synthetic images per class
    double lr = 1.0;
    double init_std = 0.1;
    std::string selection = "uniform";
  } dos;

  struct Ser {
    bool enabled = true;
    Index subspace_dim = 32;
    std::string aux = "synthetic";  // synthetic | file
    std::string aux_path;
    Index aux_per_class = 100;
    bool aux_private = false;  // true: carve aux_fraction out of the budget
  } ser;

  struct Eval {
    Index steps = 400;
    double lr = 0.5;
  } eval;

  static RunConfig defaults() { return RunConfig{}; }
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::filesystem::path& path);

  std::string to_text() const;    // canonical form; parse(to_text()) == *this
  std::string hash_hex() const;   // FNV-1a 64 of the canonical text
  void validate() const;
};

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace dpdd
