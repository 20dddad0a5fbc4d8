#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "diffcal/config.hpp"
#include "diffcal/metrics.hpp"
#include "diffcal/methods.hpp"
#include "diffcal/scene.hpp"

namespace diffcal {

struct RunOptions {
  int jobs = 1;
  bool buffering = true;
  // Destination for the timing/prepare-count summary. Timing is inherently
  // non-reproducible, so it never goes into the output files the
  // determinism checks compare.
  std::ostream* info = nullptr;
};

inline std::string dataset_dir(const std::string& out_dir) {
  return out_dir + "/dataset";
}

inline std::string sample_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06d.txt", index);
  return buf;
}

namespace detail {

inline std::string hex16(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

struct ManifestInfo {
  std::uint64_t config_hash = 0;
  std::uint64_t dataset_hash = 0;
  std::uint64_t seed = 0;
  int num_samples = 0;
};

inline std::string manifest_text(const char* kind, const BenchConfig& cfg) {
  std::string out = std::string(kind) + " 1\n";
  out += "config_hash " + hex16(config_hash(cfg)) + "\n";
  out += "dataset_hash " + hex16(dataset_hash(cfg)) + "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "seed %llu\n",
                static_cast<unsigned long long>(cfg.seed));
  out += buf;
  std::snprintf(buf, sizeof(buf), "num_samples %d\n", cfg.num_samples);
  out += buf;
  out += "\n";
  out += canonical_config_text(cfg);
  return out;
}

inline ManifestInfo parse_manifest(const std::string& text, const char* kind) {
  std::istringstream in(text);
  std::string tag;
  int version = 0;
  in >> tag >> version;
  if (tag != kind || version != 1) {
    throw ConfigError("manifest: expected '" + std::string(kind) + " 1' header");
  }
  ManifestInfo info;
  std::string key;
  bool have_config = false, have_dataset = false;
  while (in >> key) {
    if (key == "config_hash") {
      in >> std::hex >> info.config_hash >> std::dec;
      have_config = true;
    } else if (key == "dataset_hash") {
      in >> std::hex >> info.dataset_hash >> std::dec;
      have_dataset = true;
    } else if (key == "seed") {
      in >> info.seed;
    } else if (key == "num_samples") {
      in >> info.num_samples;
      break;  // canonical config text follows; not needed here
    }
  }
  if (!in || !have_config || !have_dataset) {
    throw ConfigError("manifest: malformed content");
  }
  return info;
}

// Stream labels keeping scene generation, perturbation draws, and method
// runs on disjoint deterministic streams.
inline std::uint64_t scene_stream_seed(std::uint64_t seed, int sample_id) {
  return derive_stream_seed(seed, {fnv1a64("scene"),
                                   static_cast<std::uint64_t>(sample_id)});
}

inline std::uint64_t perturb_stream_seed(std::uint64_t seed, int sample_id) {
  return derive_stream_seed(seed, {fnv1a64("perturb"),
                                   static_cast<std::uint64_t>(sample_id)});
}

inline std::uint64_t run_stream_seed(std::uint64_t seed, int sample_id,
                                     const MethodSpec& method,
                                     const SurrogateSpec& surrogate) {
  return derive_stream_seed(
      seed, {static_cast<std::uint64_t>(sample_id),
             fnv1a64(method_kind_label(method.kind)),
             fnv1a64(surrogate_kind_label(surrogate.kind)) ^ surrogate.seed});
}

}  // namespace detail

/// Generates the dataset: one scene+perturbation file per sample plus a
/// manifest carrying the config and dataset hashes.
inline void cmd_simulate(const BenchConfig& cfg) {
  validate_config(cfg);
  const std::string dir = dataset_dir(cfg.out_dir);
  ensure_dir(dir);
  for (int i = 0; i < cfg.num_samples; ++i) {
    RngStream scene_rng(detail::scene_stream_seed(cfg.seed, i));
    RngStream pert_rng(detail::perturb_stream_seed(cfg.seed, i));
    SceneSample sample;
    sample.scene = generate_scene(cfg.scene, scene_rng);
    sample.perturbation = sample_perturbation(cfg.perturbation, pert_rng);
    write_file(dir + "/" + sample_filename(i), serialize_sample(sample));
  }
  write_file(dir + "/manifest.txt", detail::manifest_text("diffcal_manifest", cfg));
}

namespace detail {

struct ComboResult {
  RunRecord record;
  double wall_ms = 0.0;
  int prepares = 0;
};

inline RunRecord record_from_trajectory(int sample_id, MethodKind kind,
                                        const Trajectory& traj,
                                        const RigidTransform& gt) {
  RunRecord rec;
  rec.sample_id = sample_id;
  rec.method = kind;
  rec.flagged = traj.flagged;
  rec.errors_by_step.reserve(traj.estimates.size());
  for (const RigidTransform& estimate : traj.estimates) {
    rec.errors_by_step.push_back(error_transform(estimate, gt));
  }
  rec.final_error = error_transform(traj.final, gt);
  return rec;
}

}  // namespace detail

/// Executes every (sample, surrogate, method) combination against the
/// dataset under out_dir/dataset and writes records.csv, report.csv,
/// report.txt and run_manifest.txt into out_dir. Parallelism is over
/// samples; results land in per-sample slots so output bytes do not depend
/// on the job count.
inline void cmd_run(const BenchConfig& cfg, const RunOptions& opt = {}) {
  validate_config(cfg);
  if (opt.jobs < 1) throw ConfigError("run: jobs must be >= 1");

  const std::string dir = dataset_dir(cfg.out_dir);
  const detail::ManifestInfo manifest =
      detail::parse_manifest(read_file(dir + "/manifest.txt"), "diffcal_manifest");
  if (manifest.config_hash != config_hash(cfg)) {
    throw ConfigError(
        "run: config does not match the dataset manifest (regenerate with "
        "`simulate` or fix the config)");
  }

  std::vector<SceneSample> samples;
  samples.reserve(static_cast<std::size_t>(cfg.num_samples));
  for (int i = 0; i < cfg.num_samples; ++i) {
    samples.push_back(parse_sample(read_file(dir + "/" + sample_filename(i))));
  }

  const NoiseSchedule sched =
      build_cosine_schedule(cfg.total_steps, cfg.schedule_offset);

  struct Combo {
    SurrogateSpec surrogate;
    MethodSpec method;
    std::string label;
  };
  std::vector<Combo> combos;
  for (const SurrogateSpec& s : cfg.surrogates) {
    for (const MethodSpec& m : cfg.methods) {
      combos.push_back({s, m,
                        std::string(surrogate_kind_label(s.kind)) + "+" +
                            method_kind_label(m.kind)});
    }
  }

  std::vector<std::vector<detail::ComboResult>> results(
      static_cast<std::size_t>(cfg.num_samples));

  auto process_sample = [&](int i) {
    const SceneSample& sample = samples[static_cast<std::size_t>(i)];
    const RigidTransform gt = sample.scene.gt_extrinsic;
    const RigidTransform t0 = compose(exp_map(sample.perturbation), gt);
    auto& slot = results[static_cast<std::size_t>(i)];
    slot.resize(combos.size());
    for (std::size_t c = 0; c < combos.size(); ++c) {
      const Combo& combo = combos[c];
      RngStream rng(
          detail::run_stream_seed(cfg.seed, i, combo.method, combo.surrogate));
      ContextProvider provider(sample.scene, combo.surrogate, opt.buffering);
      const auto t_start = std::chrono::steady_clock::now();
      Trajectory traj;
      try {
        traj = run_method(provider, t0, combo.method, sched, rng);
      } catch (const SingularityError&) {
        // Aborted sample: record the starting extrinsic at every step and
        // flag it so aggregation excludes it from the statistics.
        traj.flagged = true;
        const std::size_t plan_len =
            combo.method.kind == MethodKind::Single
                ? 1
                : logsnr_timesteps(sched, combo.method.nfe).size();
        traj.estimates.assign(plan_len, t0);
        traj.states = traj.estimates;
        traj.final = t0;
      }
      const auto t_end = std::chrono::steady_clock::now();
      detail::ComboResult& out = slot[c];
      out.record = detail::record_from_trajectory(i, combo.method.kind, traj, gt);
      out.wall_ms =
          std::chrono::duration<double, std::milli>(t_end - t_start).count();
      out.prepares = provider.prepares();
    }
  };

  const int jobs = std::min(opt.jobs, cfg.num_samples);
  if (jobs <= 1) {
    for (int i = 0; i < cfg.num_samples; ++i) process_sample(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> worker_errors(static_cast<std::size_t>(jobs));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(jobs));
    for (int w = 0; w < jobs; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (;;) {
            const int i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= cfg.num_samples) break;
            process_sample(i);
          }
        } catch (...) {
          worker_errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : worker_errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  ensure_dir(cfg.out_dir);

  std::string records_csv =
      "sample,surrogate,method,step,Rx,Ry,Rz,tx,ty,tz,rot_rmse,trans_rmse,"
      "flagged\n";
  for (int i = 0; i < cfg.num_samples; ++i) {
    const auto& slot = results[static_cast<std::size_t>(i)];
    for (std::size_t c = 0; c < combos.size(); ++c) {
      const RunRecord& rec = slot[c].record;
      for (std::size_t k = 0; k < rec.errors_by_step.size(); ++k) {
        const CalibrationError& e = rec.errors_by_step[k];
        records_csv += std::to_string(i);
        records_csv += ',';
        records_csv += surrogate_kind_label(combos[c].surrogate.kind);
        records_csv += ',';
        records_csv += method_kind_label(combos[c].method.kind);
        records_csv += ',' + std::to_string(k + 1);
        records_csv += ',' + detail::fmt_g(e.euler.rx);
        records_csv += ',' + detail::fmt_g(e.euler.ry);
        records_csv += ',' + detail::fmt_g(e.euler.rz);
        records_csv += ',' + detail::fmt_g(e.translation_cm.x());
        records_csv += ',' + detail::fmt_g(e.translation_cm.y());
        records_csv += ',' + detail::fmt_g(e.translation_cm.z());
        records_csv += ',' + detail::fmt_g(e.rot_rmse);
        records_csv += ',' + detail::fmt_g(e.trans_rmse);
        records_csv += ',';
        records_csv += rec.flagged ? '1' : '0';
        records_csv += '\n';
      }
    }
  }
  write_file(cfg.out_dir + "/records.csv", records_csv);

  std::vector<ReportRow> rows;
  for (std::size_t c = 0; c < combos.size(); ++c) {
    std::vector<RunRecord> combo_records;
    combo_records.reserve(static_cast<std::size_t>(cfg.num_samples));
    for (int i = 0; i < cfg.num_samples; ++i) {
      combo_records.push_back(results[static_cast<std::size_t>(i)][c].record);
    }
    const AggregateReport agg = aggregate(combo_records);
    rows.push_back({combos[c].label, agg.per_method.front()});
  }
  write_file(cfg.out_dir + "/report.csv", report_csv(rows));
  write_file(cfg.out_dir + "/report.txt", report_table(rows));
  write_file(cfg.out_dir + "/run_manifest.txt",
             detail::manifest_text("diffcal_run", cfg));

  if (opt.info) {
    std::string info;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "timing jobs=%d buffering=%d\n", opt.jobs,
                  opt.buffering ? 1 : 0);
    info += buf;
    for (std::size_t c = 0; c < combos.size(); ++c) {
      double total_ms = 0.0;
      long long prepares = 0;
      for (int i = 0; i < cfg.num_samples; ++i) {
        total_ms += results[static_cast<std::size_t>(i)][c].wall_ms;
        prepares += results[static_cast<std::size_t>(i)][c].prepares;
      }
      std::snprintf(buf, sizeof(buf),
                    "timing %s wall_ms=%.3f prepare_calls=%lld\n",
                    combos[c].label.c_str(), total_ms, prepares);
      info += buf;
    }
    (*opt.info) << info << std::flush;
  }
}

/// Re-emits per-step errors from records.csv as the fixed 11-column curve
/// CSV. The method column carries the combined surrogate+method label;
/// values are copied verbatim so the two files agree exactly.
inline void cmd_curves(const std::string& out_dir) {
  const std::string records = read_file(out_dir + "/records.csv");
  std::istringstream in(records);
  std::string line;
  if (!std::getline(in, line)) throw IoError("curves: records.csv is empty");

  std::string out = "sample,method,step,Rx,Ry,Rz,tx,ty,tz,rot_rmse,trans_rmse\n";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        cols.push_back(line.substr(start));
        break;
      }
      cols.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    if (cols.size() != 13) throw IoError("curves: malformed records.csv row");
    out += cols[0];
    out += ',' + cols[1] + '+' + cols[2];
    for (std::size_t c = 3; c < 12; ++c) out += ',' + cols[c];
    out += '\n';
  }
  write_file(out_dir + "/curves.csv", out);
}

namespace detail {

inline MethodAggregate aggregate_from_csv_row(const std::vector<std::string>& cols) {
  MethodAggregate agg;
  agg.samples = static_cast<int>(config_int("samples", cols[1]));
  agg.flagged = static_cast<int>(config_int("flagged", cols[2]));
  agg.mean_rot_rmse = config_double("mean_rot", cols[3]);
  agg.median_rot_rmse = config_double("median_rot", cols[4]);
  agg.mean_trans_rmse = config_double("mean_trans", cols[5]);
  agg.median_trans_rmse = config_double("median_trans", cols[6]);
  agg.rate_3deg3cm = config_double("rate3", cols[7]);
  agg.rate_5deg5cm = config_double("rate5", cols[8]);
  if (cols[9] != "NA") {
    agg.has_rho = true;
    agg.rho_percent = config_double("rho", cols[9]);
  }
  return agg;
}

}  // namespace detail

/// Merges two or more run outputs into one comparison table, best value per
/// column starred. All runs must stem from the same dataset.
inline std::string cmd_compare(const std::vector<std::string>& run_dirs) {
  if (run_dirs.size() < 2) {
    throw ConfigError("compare: need at least two run directories");
  }
  std::vector<ReportRow> rows;
  std::uint64_t expected_dataset = 0;
  bool first = true;
  for (const std::string& dir : run_dirs) {
    const detail::ManifestInfo info = detail::parse_manifest(
        read_file(dir + "/run_manifest.txt"), "diffcal_run");
    if (first) {
      expected_dataset = info.dataset_hash;
      first = false;
    } else if (info.dataset_hash != expected_dataset) {
      throw ConfigError("compare: run '" + dir + "' uses a different dataset");
    }
    const std::string prefix =
        std::filesystem::path(dir).filename().string() + ":";
    const std::string csv = read_file(dir + "/report.csv");
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line)) throw IoError("compare: empty report.csv");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cols;
      std::size_t start = 0;
      while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
          cols.push_back(line.substr(start));
          break;
        }
        cols.push_back(line.substr(start, comma - start));
        start = comma + 1;
      }
      if (cols.size() != 10) throw IoError("compare: malformed report.csv row");
      rows.push_back({prefix + cols[0], detail::aggregate_from_csv_row(cols)});
    }
  }
  return report_table(rows, /*mark_best=*/true);
}

}  // namespace diffcal
