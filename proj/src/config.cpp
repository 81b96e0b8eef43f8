#include "dpdd/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dpdd {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValidationError("config: bad number for " + key + ": '" + v + "'");
  }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    std::int64_t x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValidationError("config: bad integer for " + key + ": '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    std::uint64_t x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValidationError("config: bad integer for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config: bad bool for " + key + ": '" + v + "'");
}

std::vector<Index> parse_index_list(const std::string& key, const std::string& v) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ValidationError("config: empty list entry for " + key);
    out.push_back(static_cast<Index>(parse_int(key, item)));
  }
  if (out.empty()) throw ValidationError("config: empty list for " + key);
  return out;
}

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string fmt_index_list(const std::vector<Index>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ValidationError("config line " + std::to_string(lineno) +
                              ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "run" && section != "data" && section != "extractor" &&
          section != "augment" && section != "privacy" && section != "dos" &&
          section != "ser" && section != "eval")
        throw ValidationError("config: unknown section [" + section + "]");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) +
                            ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw ValidationError("config line " + std::to_string(lineno) + ": empty key");
    if (section.empty())
      throw ValidationError("config line " + std::to_string(lineno) +
                            ": key outside any section");
    std::string full = section + "." + key;

    if (full == "run.master_seed") cfg.run.master_seed = parse_u64(full, val);
    else if (full == "run.output_dir") cfg.run.output_dir = val;
    else if (full == "run.workers") cfg.run.workers = static_cast<int>(parse_int(full, val));
    else if (full == "data.source") cfg.data.source = val;
    else if (full == "data.path") cfg.data.path = val;
    else if (full == "data.classes") cfg.data.classes = parse_int(full, val);
    else if (full == "data.train_per_class") cfg.data.train_per_class = parse_int(full, val);
    else if (full == "data.test_per_class") cfg.data.test_per_class = parse_int(full, val);
    else if (full == "data.image_channels") cfg.data.image_channels = parse_int(full, val);
    else if (full == "data.image_height") cfg.data.image_height = parse_int(full, val);
    else if (full == "data.image_width") cfg.data.image_width = parse_int(full, val);
    else if (full == "data.components") cfg.data.components = parse_int(full, val);
    else if (full == "data.amplitude") cfg.data.amplitude = parse_double(full, val);
    else if (full == "data.pixel_std") cfg.data.pixel_std = parse_double(full, val);
    else if (full == "extractor.channels") cfg.extractor.channels = parse_index_list(full, val);
    else if (full == "extractor.kernel") cfg.extractor.kernel = parse_int(full, val);
    else if (full == "extractor.dense") cfg.extractor.dense = parse_int(full, val);
    else if (full == "extractor.init_scale") cfg.extractor.init_scale = parse_double(full, val);
    else if (full == "augment.ops") cfg.augment.ops = val;
    else if (full == "augment.crop_pad") cfg.augment.crop_pad = parse_double(full, val);
    else if (full == "augment.brightness_delta") cfg.augment.brightness_delta = parse_double(full, val);
    else if (full == "augment.saturation_delta") cfg.augment.saturation_delta = parse_double(full, val);
    else if (full == "augment.cutout_fraction") cfg.augment.cutout_fraction = parse_double(full, val);
    else if (full == "privacy.epsilon") cfg.privacy.epsilon = parse_double(full, val);
    else if (full == "privacy.delta") cfg.privacy.delta = parse_double(full, val);
    else if (full == "privacy.clip_bound") cfg.privacy.clip_bound = parse_double(full, val);
    else if (full == "privacy.group_size") cfg.privacy.group_size = parse_int(full, val);
    else if (full == "privacy.aux_fraction") cfg.privacy.aux_fraction = parse_double(full, val);
    else if (full == "dos.enabled") cfg.dos.enabled = parse_bool(full, val);
    else if (full == "dos.sample_iterations") cfg.dos.sample_iterations = parse_int(full, val);
    else if (full == "dos.optimize_iterations") cfg.dos.optimize_iterations = parse_int(full, val);
    else if (full == "dos.per_class") cfg.dos.per_class = parse_int(full, val);
    else if (full == "dos.lr") cfg.dos.lr = parse_double(full, val);
    else if (full == "dos.init_std") cfg.dos.init_std = parse_double(full, val);
    else if (full == "dos.selection") cfg.dos.selection = val;
    else if (full == "ser.enabled") cfg.ser.enabled = parse_bool(full, val);
    else if (full == "ser.subspace_dim") cfg.ser.subspace_dim = parse_int(full, val);
    else if (full == "ser.aux") cfg.ser.aux = val;
    else if (full == "ser.aux_path") cfg.ser.aux_path = val;
    else if (full == "ser.aux_per_class") cfg.ser.aux_per_class = parse_int(full, val);
    else if (full == "ser.aux_private") cfg.ser.aux_private = parse_bool(full, val);
    else if (full == "eval.steps") cfg.eval.steps = parse_int(full, val);
    else if (full == "eval.lr") cfg.eval.lr = parse_double(full, val);
    else throw ValidationError("config: unknown key '" + full + "'");
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  o << "[run]\n";
  o << "master_seed = " << run.master_seed << "\n";
  o << "output_dir = " << run.output_dir << "\n";
  o << "workers = " << run.workers << "\n";
  o << "[data]\n";
  o << "source = " << data.source << "\n";
  o << "path = " << data.path << "\n";
  o << "classes = " << data.classes << "\n";
  o << "train_per_class = " << data.train_per_class << "\n";
  o << "test_per_class = " << data.test_per_class << "\n";
  o << "image_channels = " << data.image_channels << "\n";
  o << "image_height = " << data.image_height << "\n";
  o << "image_width = " << data.image_width << "\n";
  o << "components = " << data.components << "\n";
  o << "amplitude = " << fmt_double(data.amplitude) << "\n";
  o << "pixel_std = " << fmt_double(data.pixel_std) << "\n";
  o << "[extractor]\n";
  o << "channels = " << fmt_index_list(extractor.channels) << "\n";
  o << "kernel = " << extractor.kernel << "\n";
  o << "dense = " << extractor.dense << "\n";
  o << "init_scale = " << fmt_double(extractor.init_scale) << "\n";
  o << "[augment]\n";
  o << "ops = " << augment.ops << "\n";
  o << "crop_pad = " << fmt_double(augment.crop_pad) << "\n";
  o << "brightness_delta = " << fmt_double(augment.brightness_delta) << "\n";
  o << "saturation_delta = " << fmt_double(augment.saturation_delta) << "\n";
  o << "cutout_fraction = " << fmt_double(augment.cutout_fraction) << "\n";
  o << "[privacy]\n";
  o << "epsilon = " << fmt_double(privacy.epsilon) << "\n";
  o << "delta = " << fmt_double(privacy.delta) << "\n";
  o << "clip_bound = " << fmt_double(privacy.clip_bound) << "\n";
  o << "group_size = " << privacy.group_size << "\n";
  o << "aux_fraction = " << fmt_double(privacy.aux_fraction) << "\n";
  o << "[dos]\n";
  o << "enabled = " << (dos.enabled ? "true" : "false") << "\n";
  o << "sample_iterations = " << dos.sample_iterations << "\n";
  o << "optimize_iterations = " << dos.optimize_iterations << "\n";
  o << "per_class = " << dos.per_class << "\n";
  o << "lr = " << fmt_double(dos.lr) << "\n";
  o << "init_std = " << fmt_double(dos.init_std) << "\n";
  o << "selection = " << dos.selection << "\n";
  o << "[ser]\n";
  o << "enabled = " << (ser.enabled ? "true" : "false") << "\n";
  o << "subspace_dim = " << ser.subspace_dim << "\n";
  o << "aux = " << ser.aux << "\n";
  o << "aux_path = " << ser.aux_path << "\n";
  o << "aux_per_class = " << ser.aux_per_class << "\n";
  o << "aux_private = " << (ser.aux_private ? "true" : "false") << "\n";
  o << "[eval]\n";
  o << "steps = " << eval.steps << "\n";
  o << "lr = " << fmt_double(eval.lr) << "\n";
  return o.str();
}

std::string RunConfig::hash_hex() const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64(to_text()));
  return buf;
}

void RunConfig::validate() const {
  require(run.workers >= 1, "run.workers must be >= 1");
  require(data.source == "toy" || data.source == "files",
          "data.source must be toy or files");
  if (data.source == "files")
    require(!data.path.empty(), "data.path required when data.source = files");
  require(data.classes >= 1 && data.classes <= 256, "data.classes out of range");
  require(data.train_per_class >= 1, "data.train_per_class must be >= 1");
  require(data.test_per_class >= 1, "data.test_per_class must be >= 1");
  require(data.image_channels == 1 || data.image_channels == 3,
          "data.image_channels must be 1 or 3");
  require(data.image_height >= 4 && data.image_width >= 4,
          "image dims must be >= 4");
  require(data.components >= 1, "data.components must be >= 1");
  require(data.amplitude > 0 && data.pixel_std >= 0, "bad toy data params");
  require(!extractor.channels.empty(), "extractor.channels must be nonempty");
  for (Index c : extractor.channels)
    require(c >= 1, "extractor.channels entries must be >= 1");
  require(extractor.kernel >= 1 && extractor.kernel % 2 == 1,
          "extractor.kernel must be odd and >= 1");
  require(extractor.dense >= 0, "extractor.dense must be >= 0");
  require(extractor.init_scale > 0, "extractor.init_scale must be > 0");
  require(augment.crop_pad >= 0, "augment.crop_pad must be >= 0");
  require(augment.brightness_delta >= 0 && augment.brightness_delta < 1,
          "augment.brightness_delta out of range");
  require(augment.saturation_delta >= 0 && augment.saturation_delta < 1,
          "augment.saturation_delta out of range");
  require(augment.cutout_fraction >= 0 && augment.cutout_fraction < 1,
          "augment.cutout_fraction out of range");
  require(privacy.epsilon > 0, "privacy.epsilon must be > 0");
  require(privacy.delta > 0 && privacy.delta < 1, "privacy.delta out of range");
  require(privacy.clip_bound > 0, "privacy.clip_bound must be > 0");
  require(privacy.group_size >= 1, "privacy.group_size must be >= 1");
  require(privacy.aux_fraction > 0 && privacy.aux_fraction < 1,
          "privacy.aux_fraction out of range");
  require(dos.sample_iterations >= 1, "dos.sample_iterations must be >= 1");
  require(dos.optimize_iterations >= 1, "dos.optimize_iterations must be >= 1");
  require(dos.per_class >= 1, "dos.per_class must be >= 1");
  require(dos.lr > 0, "dos.lr must be > 0");
  require(dos.init_std >= 0, "dos.init_std must be >= 0");
  require(dos.selection == "uniform" || dos.selection == "sequential" ||
              dos.selection == "shuffled",
          "dos.selection must be uniform, sequential, or shuffled");
  require(ser.subspace_dim >= 1, "ser.subspace_dim must be >= 1");
  require(ser.aux == "synthetic" || ser.aux == "file",
          "ser.aux must be synthetic or file");
  if (ser.enabled && ser.aux == "file")
    require(!ser.aux_path.empty(), "ser.aux_path required when ser.aux = file");
  require(ser.aux_per_class >= 1, "ser.aux_per_class must be >= 1");
  require(eval.steps >= 0, "eval.steps must be >= 0");
  require(eval.lr > 0, "eval.lr must be > 0");
}

}  // namespace dpdd
