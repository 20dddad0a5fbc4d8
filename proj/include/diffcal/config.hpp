#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "diffcal/methods.hpp"
#include "diffcal/scene.hpp"
#include "diffcal/schedule.hpp"
#include "diffcal/surrogate.hpp"

namespace diffcal {

/// Invalid or inconsistent configuration: CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failure: CLI exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Full benchmark description. The defaults are the desk-scale benchmark:
/// 500 samples, +/-15 deg / +/-15 cm perturbations, NFE 10, T = 1000,
/// offset 0.008, RangeDependent surrogate, all four methods.
struct BenchConfig {
  int schema = 1;
  std::uint64_t seed = 42;
  int num_samples = 500;
  int total_steps = kDefaultTotalSteps;
  double schedule_offset = kDefaultScheduleOffset;
  int nfe = 10;
  std::string out_dir = "bench_out";
  SceneConfig scene;
  PerturbationSpec perturbation;
  std::vector<SurrogateSpec> surrogates = [] {
    SurrogateSpec s;
    s.kind = SurrogateKind::RangeDependent;
    s.gain = 0.9;
    s.range_decay = 2.0;
    s.noise_sigma = 0.01;
    return std::vector<SurrogateSpec>{s};
  }();
  std::vector<MethodSpec> methods = [] {
    std::vector<MethodSpec> m(4);
    m[0].kind = MethodKind::Single;
    m[1].kind = MethodKind::NaIter;
    m[2].kind = MethodKind::Lsd;
    m[3].kind = MethodKind::Nlsd;
    return m;
  }();
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline double config_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0') {
    throw ConfigError("config: bad number for '" + key + "': " + value);
  }
  return v;
}

inline long long config_int(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const long long v = std::strtoll(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0') {
    throw ConfigError("config: bad integer for '" + key + "': " + value);
  }
  return v;
}

inline std::uint64_t config_u64(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0') {
    throw ConfigError("config: bad integer for '" + key + "': " + value);
  }
  return v;
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline SurrogateSpec parse_surrogate_value(const std::string& value) {
  const auto tokens = split_ws(value);
  if (tokens.empty()) throw ConfigError("config: empty surrogate entry");
  const auto kind = surrogate_kind_from_label(tokens[0]);
  if (!kind) throw ConfigError("config: unknown surrogate kind '" + tokens[0] + "'");
  SurrogateSpec spec;
  spec.kind = *kind;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const auto eq = tokens[i].find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: surrogate parameter needs key=value: " + tokens[i]);
    }
    const std::string pkey = tokens[i].substr(0, eq);
    const std::string pval = tokens[i].substr(eq + 1);
    if (pkey == "gain") spec.gain = config_double(pkey, pval);
    else if (pkey == "noise") spec.noise_sigma = config_double(pkey, pval);
    else if (pkey == "decay") spec.range_decay = config_double(pkey, pval);
    else if (pkey == "gn_iters") spec.max_gn_iters = static_cast<int>(config_int(pkey, pval));
    else if (pkey == "huber") spec.huber_delta_px = config_double(pkey, pval);
    else if (pkey == "seed") spec.seed = config_u64(pkey, pval);
    else throw ConfigError("config: unknown surrogate parameter '" + pkey + "'");
  }
  return spec;
}

// nfe -1 = "inherit the config-level nfe"; resolved in parse_config.
inline MethodSpec parse_method_value(const std::string& value) {
  const auto tokens = split_ws(value);
  if (tokens.empty()) throw ConfigError("config: empty method entry");
  const auto kind = method_kind_from_label(tokens[0]);
  if (!kind) throw ConfigError("config: unknown method kind '" + tokens[0] + "'");
  MethodSpec spec;
  spec.kind = *kind;
  spec.nfe = -1;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const auto eq = tokens[i].find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: method parameter needs key=value: " + tokens[i]);
    }
    const std::string pkey = tokens[i].substr(0, eq);
    const std::string pval = tokens[i].substr(eq + 1);
    if (pkey == "nfe") {
      spec.nfe = static_cast<int>(config_int(pkey, pval));
    } else if (pkey == "mode") {
      if (pval == "mean") spec.mode = ReverseStepMode::PosteriorMean;
      else if (pval == "stochastic") spec.mode = ReverseStepMode::PosteriorStochastic;
      else if (pval == "ode") spec.mode = ReverseStepMode::OdeFirstOrder;
      else throw ConfigError("config: unknown reverse mode '" + pval + "'");
    } else if (pkey == "sigma") {
      spec.nlsd_perturb_sigma = config_double(pkey, pval);
    } else {
      throw ConfigError("config: unknown method parameter '" + pkey + "'");
    }
  }
  return spec;
}

inline const char* reverse_mode_label(ReverseStepMode mode) {
  switch (mode) {
    case ReverseStepMode::PosteriorMean: return "mean";
    case ReverseStepMode::PosteriorStochastic: return "stochastic";
    case ReverseStepMode::OdeFirstOrder: return "ode";
  }
  return "unknown";
}

inline void append_kv(std::string& out, const char* key, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s = %.17g\n", key, v);
  out += buf;
}

inline void append_kv(std::string& out, const char* key, int v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s = %d\n", key, v);
  out += buf;
}

inline void append_kv(std::string& out, const char* key, std::uint64_t v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s = %llu\n", key,
                static_cast<unsigned long long>(v));
  out += buf;
}

}  // namespace detail

inline void validate_config(const BenchConfig& cfg) {
  if (cfg.schema != 1) throw ConfigError("config: unsupported schema version");
  if (cfg.num_samples < 1) throw ConfigError("config: num_samples must be >= 1");
  if (cfg.total_steps < 1) throw ConfigError("config: total_steps must be >= 1");
  if (!(cfg.schedule_offset > 0.0)) {
    throw ConfigError("config: schedule_offset must be > 0");
  }
  if (cfg.nfe < 1 || cfg.nfe > cfg.total_steps) {
    throw ConfigError("config: nfe must be in [1, total_steps]");
  }
  if (cfg.out_dir.empty()) throw ConfigError("config: out_dir empty");
  if (cfg.surrogates.empty()) throw ConfigError("config: no surrogates");
  if (cfg.methods.empty()) throw ConfigError("config: no methods");
  try {
    validate_scene_config(cfg.scene);
    if (cfg.perturbation.rot_range_deg < 0.0 || cfg.perturbation.trans_range < 0.0) {
      throw std::invalid_argument("negative perturbation range");
    }
    for (const SurrogateSpec& s : cfg.surrogates) validate_surrogate_spec(s);
    for (const MethodSpec& m : cfg.methods) {
      validate_method_spec(m);
      if (m.nfe > cfg.total_steps) {
        throw std::invalid_argument("method nfe exceeds total_steps");
      }
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

/// Parses the flat `key = value` format. Keys may repeat only for the
/// `surrogate` and `method` list entries; the first occurrence of either
/// replaces the built-in default list. '#' starts a comment.
inline BenchConfig parse_config(std::string_view text) {
  BenchConfig cfg;
  bool saw_surrogate = false;
  bool saw_method = false;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));

    if (key == "schema") cfg.schema = static_cast<int>(detail::config_int(key, value));
    else if (key == "seed") cfg.seed = detail::config_u64(key, value);
    else if (key == "num_samples") cfg.num_samples = static_cast<int>(detail::config_int(key, value));
    else if (key == "total_steps") cfg.total_steps = static_cast<int>(detail::config_int(key, value));
    else if (key == "schedule_offset") cfg.schedule_offset = detail::config_double(key, value);
    else if (key == "nfe") cfg.nfe = static_cast<int>(detail::config_int(key, value));
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "scene.point_count") cfg.scene.point_count = static_cast<int>(detail::config_int(key, value));
    else if (key == "scene.depth_min") cfg.scene.depth_min = detail::config_double(key, value);
    else if (key == "scene.depth_max") cfg.scene.depth_max = detail::config_double(key, value);
    else if (key == "scene.pixel_noise_sigma") cfg.scene.pixel_noise_sigma = detail::config_double(key, value);
    else if (key == "scene.outlier_fraction") cfg.scene.outlier_fraction = detail::config_double(key, value);
    else if (key == "scene.fx") cfg.scene.intrinsics.fx = detail::config_double(key, value);
    else if (key == "scene.fy") cfg.scene.intrinsics.fy = detail::config_double(key, value);
    else if (key == "scene.cx") cfg.scene.intrinsics.cx = detail::config_double(key, value);
    else if (key == "scene.cy") cfg.scene.intrinsics.cy = detail::config_double(key, value);
    else if (key == "scene.width") cfg.scene.intrinsics.width = static_cast<int>(detail::config_int(key, value));
    else if (key == "scene.height") cfg.scene.intrinsics.height = static_cast<int>(detail::config_int(key, value));
    else if (key == "scene.mount_rot_jitter_deg") cfg.scene.mount_rot_jitter_deg = detail::config_double(key, value);
    else if (key == "scene.mount_trans_jitter") cfg.scene.mount_trans_jitter = detail::config_double(key, value);
    else if (key == "perturb.rot_range_deg") cfg.perturbation.rot_range_deg = detail::config_double(key, value);
    else if (key == "perturb.trans_range") cfg.perturbation.trans_range = detail::config_double(key, value);
    else if (key == "surrogate") {
      if (!saw_surrogate) {
        cfg.surrogates.clear();
        saw_surrogate = true;
      }
      cfg.surrogates.push_back(detail::parse_surrogate_value(value));
    } else if (key == "method") {
      if (!saw_method) {
        cfg.methods.clear();
        saw_method = true;
      }
      cfg.methods.push_back(detail::parse_method_value(value));
    } else {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": unknown key '" + key + "'");
    }
  }

  for (MethodSpec& m : cfg.methods) {
    if (m.nfe < 0) m.nfe = cfg.nfe;
    if (m.kind == MethodKind::Single) m.nfe = 1;
  }
  validate_config(cfg);
  return cfg;
}

inline std::string surrogate_config_entry(const SurrogateSpec& s) {
  char buf[256];
  switch (s.kind) {
    case SurrogateKind::Oracle:
      std::snprintf(buf, sizeof(buf), "surrogate = oracle seed=%llu",
                    static_cast<unsigned long long>(s.seed));
      break;
    case SurrogateKind::Contraction:
      std::snprintf(buf, sizeof(buf),
                    "surrogate = contraction gain=%.17g noise=%.17g seed=%llu",
                    s.gain, s.noise_sigma,
                    static_cast<unsigned long long>(s.seed));
      break;
    case SurrogateKind::RangeDependent:
      std::snprintf(
          buf, sizeof(buf),
          "surrogate = range_dependent gain=%.17g decay=%.17g noise=%.17g seed=%llu",
          s.gain, s.range_decay, s.noise_sigma,
          static_cast<unsigned long long>(s.seed));
      break;
    case SurrogateKind::Reprojection:
      std::snprintf(
          buf, sizeof(buf),
          "surrogate = reprojection gn_iters=%d huber=%.17g seed=%llu",
          s.max_gn_iters, s.huber_delta_px,
          static_cast<unsigned long long>(s.seed));
      break;
  }
  return buf;
}

inline std::string method_config_entry(const MethodSpec& m) {
  char buf[256];
  switch (m.kind) {
    case MethodKind::Single:
      std::snprintf(buf, sizeof(buf), "method = single");
      break;
    case MethodKind::NaIter:
      std::snprintf(buf, sizeof(buf), "method = naiter nfe=%d", m.nfe);
      break;
    case MethodKind::Lsd:
      std::snprintf(buf, sizeof(buf), "method = lsd nfe=%d mode=%s", m.nfe,
                    detail::reverse_mode_label(m.mode));
      break;
    case MethodKind::Nlsd:
      std::snprintf(buf, sizeof(buf), "method = nlsd nfe=%d sigma=%.17g", m.nfe,
                    m.nlsd_perturb_sigma);
      break;
  }
  return buf;
}

/// Canonical serialization: fixed key order, full-precision numbers,
/// out_dir deliberately excluded so the hash identifies the experiment, not
/// where it is written.
inline std::string canonical_config_text(const BenchConfig& cfg) {
  std::string out;
  detail::append_kv(out, "schema", cfg.schema);
  detail::append_kv(out, "seed", cfg.seed);
  detail::append_kv(out, "num_samples", cfg.num_samples);
  detail::append_kv(out, "total_steps", cfg.total_steps);
  detail::append_kv(out, "schedule_offset", cfg.schedule_offset);
  detail::append_kv(out, "nfe", cfg.nfe);
  detail::append_kv(out, "scene.point_count", cfg.scene.point_count);
  detail::append_kv(out, "scene.depth_min", cfg.scene.depth_min);
  detail::append_kv(out, "scene.depth_max", cfg.scene.depth_max);
  detail::append_kv(out, "scene.pixel_noise_sigma", cfg.scene.pixel_noise_sigma);
  detail::append_kv(out, "scene.outlier_fraction", cfg.scene.outlier_fraction);
  detail::append_kv(out, "scene.fx", cfg.scene.intrinsics.fx);
  detail::append_kv(out, "scene.fy", cfg.scene.intrinsics.fy);
  detail::append_kv(out, "scene.cx", cfg.scene.intrinsics.cx);
  detail::append_kv(out, "scene.cy", cfg.scene.intrinsics.cy);
  detail::append_kv(out, "scene.width", cfg.scene.intrinsics.width);
  detail::append_kv(out, "scene.height", cfg.scene.intrinsics.height);
  detail::append_kv(out, "scene.mount_rot_jitter_deg", cfg.scene.mount_rot_jitter_deg);
  detail::append_kv(out, "scene.mount_trans_jitter", cfg.scene.mount_trans_jitter);
  detail::append_kv(out, "perturb.rot_range_deg", cfg.perturbation.rot_range_deg);
  detail::append_kv(out, "perturb.trans_range", cfg.perturbation.trans_range);
  for (const SurrogateSpec& s : cfg.surrogates) {
    out += surrogate_config_entry(s);
    out += '\n';
  }
  for (const MethodSpec& m : cfg.methods) {
    out += method_config_entry(m);
    out += '\n';
  }
  return out;
}

inline std::uint64_t config_hash(const BenchConfig& cfg) {
  return fnv1a64(canonical_config_text(cfg));
}

/// Hash of the dataset-determining subset only (seed, sample count, scene,
/// perturbation). Runs over datasets with equal dataset hashes are
/// comparable even when surrogates/methods differ.
inline std::uint64_t dataset_hash(const BenchConfig& cfg) {
  std::string out;
  detail::append_kv(out, "seed", cfg.seed);
  detail::append_kv(out, "num_samples", cfg.num_samples);
  detail::append_kv(out, "scene.point_count", cfg.scene.point_count);
  detail::append_kv(out, "scene.depth_min", cfg.scene.depth_min);
  detail::append_kv(out, "scene.depth_max", cfg.scene.depth_max);
  detail::append_kv(out, "scene.pixel_noise_sigma", cfg.scene.pixel_noise_sigma);
  detail::append_kv(out, "scene.outlier_fraction", cfg.scene.outlier_fraction);
  detail::append_kv(out, "scene.fx", cfg.scene.intrinsics.fx);
  detail::append_kv(out, "scene.fy", cfg.scene.intrinsics.fy);
  detail::append_kv(out, "scene.cx", cfg.scene.intrinsics.cx);
  detail::append_kv(out, "scene.cy", cfg.scene.intrinsics.cy);
  detail::append_kv(out, "scene.width", cfg.scene.intrinsics.width);
  detail::append_kv(out, "scene.height", cfg.scene.intrinsics.height);
  detail::append_kv(out, "scene.mount_rot_jitter_deg", cfg.scene.mount_rot_jitter_deg);
  detail::append_kv(out, "scene.mount_trans_jitter", cfg.scene.mount_trans_jitter);
  detail::append_kv(out, "perturb.rot_range_deg", cfg.perturbation.rot_range_deg);
  detail::append_kv(out, "perturb.trans_range", cfg.perturbation.trans_range);
  return fnv1a64(out);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failure: " + path);
  return buf.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failure: " + path);
}

inline void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

inline BenchConfig load_config_file(const std::string& path) {
  return parse_config(read_file(path));
}

}  // namespace diffcal
