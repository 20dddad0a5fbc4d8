// Acceptance gate: runs every release criterion and prints one PASS/FAIL
// line each. Exit status is the number of failed criteria, so CI can gate
// on it directly.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "diffcal/diffcal.hpp"

namespace fs = std::filesystem;
using namespace diffcal;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double max_abs_diff(const Twist& a, const Twist& b) {
  return (a.to_vector() - b.to_vector()).cwiseAbs().maxCoeff();
}

double transform_gap(const RigidTransform& a, const RigidTransform& b) {
  return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff();
}

std::string format(const char* fmt, ...) {
  char buf[256];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cols;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cols.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cols.push_back(cur);
  return cols;
}

// Report row lookup: returns the parsed columns for the given label.
std::vector<std::string> report_row(const std::string& csv,
                                    const std::string& label) {
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    const auto cols = split_csv(line);
    if (!cols.empty() && cols[0] == label) return cols;
  }
  throw std::runtime_error("report row not found: " + label);
}

Twist random_twist(RngStream& rng, double phi_max, double rho_max) {
  Twist xi;
  for (int i = 0; i < 3; ++i) xi.rho[i] = rng.uniform(-rho_max, rho_max);
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  if (axis.norm() < 1e-12) axis = Eigen::Vector3d::UnitX();
  axis.normalize();
  xi.phi = axis * rng.uniform(0.0, phi_max);
  return xi;
}

// Minimal scene wrapper for surrogates that never look at observations.
Scene bare_scene(const RigidTransform& gt) {
  Scene scene;
  scene.gt_extrinsic = gt;
  scene.scene_id = scene_content_hash(scene);
  return scene;
}

struct Criterion {
  int index;
  const char* name;
  bool ok;
  std::string detail;
};

// ---------------------------------------------------------------------------

Criterion lie_roundtrip() {
  RngStream rng(101);
  const auto start = Clock::now();
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Twist xi = random_twist(rng, 3.0, 2.0);
    const Twist back = log_map(exp_map(xi));
    worst = std::max(worst, max_abs_diff(xi, back));
  }
  const double secs = seconds_since(start);
  return {1, "se(3) exp/log roundtrip, 10k twists", worst < 1e-9 && secs < 1.0,
          format("max|log(exp(xi))-xi|=%.3e, %.2fs", worst, secs)};
}

Criterion schedule_boundaries() {
  const NoiseSchedule s = build_cosine_schedule(1000, 0.008);
  bool ok = s.alpha_bar[0] == 1.0;
  ok = ok && s.alpha_bar[1000] >= 0.0 && s.alpha_bar[1000] <= 1e-10;
  for (int t = 1; t <= 1000; ++t) {
    ok = ok && s.alpha_bar[static_cast<std::size_t>(t)] <
                   s.alpha_bar[static_cast<std::size_t>(t) - 1];
  }
  double prod = 1.0;
  double worst = 0.0;
  for (int t = 1; t <= 1000; ++t) {
    prod *= s.alpha_at(t);
    worst = std::max(worst, std::abs(prod - s.alpha_bar_at(t)));
  }
  ok = ok && worst <= 1e-12;
  return {2, "cosine schedule boundaries and product consistency", ok,
          format("ab(0)=%g ab(T)=%.3e, max|prod-ab|=%.3e", s.alpha_bar[0],
                 s.alpha_bar[1000], worst)};
}

Criterion posterior_identity() {
  const NoiseSchedule s = build_cosine_schedule(1000, 0.008);
  RngStream rng(303);
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    const Twist x_t = random_twist(rng, 2.0, 1.0);
    const Twist x0 = random_twist(rng, 2.0, 1.0);
    const Twist mean = posterior_mean_between(x_t, x0, 1, 0, s);
    worst = std::max(worst, max_abs_diff(mean, x0));
  }
  return {3, "final-step posterior collapses onto the estimate", worst <= 1e-15,
          format("max deviation %.3e", worst)};
}

Criterion oracle_recovery() {
  const auto start = Clock::now();
  const NoiseSchedule sched = build_cosine_schedule(1000, 0.008);
  SceneConfig sc;
  sc.point_count = 50;
  const PerturbationSpec pert;  // +-15 deg / +-15 cm
  SurrogateSpec oracle;
  oracle.kind = SurrogateKind::Oracle;

  std::vector<MethodSpec> methods(4);
  methods[0].kind = MethodKind::Single;
  methods[0].nfe = 1;
  methods[1].kind = MethodKind::NaIter;
  methods[2].kind = MethodKind::Lsd;
  methods[3].kind = MethodKind::Nlsd;
  methods[3].nlsd_perturb_sigma = 0.0;

  double worst_rot = 0.0, worst_trans = 0.0;
  for (int i = 0; i < 100; ++i) {
    RngStream scene_rng(1000 + i);
    RngStream pert_rng(9000 + i);
    const Scene scene = generate_scene(sc, scene_rng);
    const Twist p = sample_perturbation(pert, pert_rng);
    const RigidTransform t0 = compose(exp_map(p), scene.gt_extrinsic);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      ContextProvider provider(scene, oracle, true);
      RngStream rng(50000 + 17 * i + static_cast<int>(m));
      const Trajectory traj = run_method(provider, t0, methods[m], sched, rng);
      const CalibrationError err = error_transform(traj.final, scene.gt_extrinsic);
      worst_rot = std::max(worst_rot, err.rot_rmse);
      worst_trans = std::max(worst_trans, err.trans_rmse);
    }
  }
  const double secs = seconds_since(start);
  const bool ok = worst_rot < 1e-6 && worst_trans < 1e-6 && secs < 10.0;
  return {4, "exact surrogate recovers ground truth for every method", ok,
          format("worst rot %.3e deg, trans %.3e cm, %.2fs", worst_rot,
                 worst_trans, secs)};
}

Criterion contraction_halving() {
  RigidTransform gt(Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized())
                        .toRotationMatrix(),
                    Eigen::Vector3d(0.4, -0.2, 1.0));
  const Scene scene = bare_scene(gt);
  SurrogateSpec spec;
  spec.kind = SurrogateKind::Contraction;
  spec.gain = 0.5;
  spec.noise_sigma = 0.0;

  Twist offset = Twist::zero();
  offset.rho = Eigen::Vector3d(0.0, 0.0, 0.1);  // 10 cm along z
  const RigidTransform t0 = compose(exp_map(offset), gt);

  ContextProvider provider(scene, spec, true);
  RngStream rng(7);
  const Trajectory traj = run_naiter(provider, t0, 10, rng);

  double worst = 0.0;
  for (int k = 1; k <= 10; ++k) {
    const CalibrationError err =
        error_transform(traj.estimates[static_cast<std::size_t>(k) - 1], gt);
    const double residual_cm = err.translation_cm.norm();
    const double expected_cm = 10.0 * std::pow(2.0, -k);
    worst = std::max(worst, std::abs(residual_cm - expected_cm));
  }
  return {5, "half-gain contraction halves the residual each iteration",
          worst <= 1e-9, format("max |residual - 10*2^-k| = %.3e cm", worst)};
}

Criterion buffering_behavior(const fs::path& scratch) {
  // Part 1: byte-identical reports and one context build per (sample, method).
  BenchConfig cfg;
  cfg.seed = 11;
  cfg.num_samples = 2;
  cfg.total_steps = 200;
  cfg.nfe = 5;
  cfg.out_dir = (scratch / "buffering").string();
  cfg.scene.point_count = 1500;
  SurrogateSpec reproj;
  reproj.kind = SurrogateKind::Reprojection;
  reproj.max_gn_iters = 2;
  cfg.surrogates = {reproj};
  MethodSpec single;
  single.kind = MethodKind::Single;
  single.nfe = 1;
  MethodSpec lsd;
  lsd.kind = MethodKind::Lsd;
  lsd.nfe = 5;
  cfg.methods = {single, lsd};

  cmd_simulate(cfg);
  reset_prepare_invocations();
  cmd_run(cfg);
  const std::uint64_t buffered_prepares = prepare_invocations();
  const std::string records = read_file(cfg.out_dir + "/records.csv");
  const std::string report = read_file(cfg.out_dir + "/report.csv");

  RunOptions unbuffered;
  unbuffered.buffering = false;
  cmd_run(cfg, unbuffered);
  const bool bytes_ok = read_file(cfg.out_dir + "/records.csv") == records &&
                        read_file(cfg.out_dir + "/report.csv") == report;
  const bool count_ok = buffered_prepares == 2 * 2;  // samples x methods

  // Part 2: context reuse must win wall-clock when the context build
  // dominates, here a 5,000-point observation table.
  SceneConfig big;
  big.point_count = 5000;
  RngStream scene_rng(99);
  const Scene scene = generate_scene(big, scene_rng);
  SurrogateSpec quick = reproj;
  quick.max_gn_iters = 1;
  const NoiseSchedule sched = build_cosine_schedule(200, 0.008);
  const std::vector<int> plan = logsnr_timesteps(sched, 10);
  const RigidTransform t0 =
      compose(exp_map(Twist::from_vector(
                  (Vector6d() << 0.02, -0.01, 0.03, 0.01, 0.0, -0.01).finished())),
              scene.gt_extrinsic);

  auto time_run = [&](bool buffering) {
    const auto start = Clock::now();
    ContextProvider provider(scene, quick, buffering);
    RngStream rng(5);
    run_lsd(provider, t0, plan, ReverseStepMode::PosteriorMean, sched, rng);
    return seconds_since(start);
  };
  time_run(true);  // warm-up
  double buffered_secs = 0.0, unbuffered_secs = 0.0;
  for (int rep = 0; rep < 12; ++rep) {
    buffered_secs += time_run(true);
    unbuffered_secs += time_run(false);
  }
  const bool timing_ok = buffered_secs < unbuffered_secs;

  return {6, "context buffering: identical bytes, one build, faster",
          bytes_ok && count_ok && timing_ok,
          format("prepares=%llu, buffered %.1fms vs unbuffered %.1fms",
                 static_cast<unsigned long long>(buffered_prepares),
                 1e3 * buffered_secs, 1e3 * unbuffered_secs)};
}

Criterion trend_reproduction(const fs::path& scratch) {
  const auto start = Clock::now();
  BenchConfig cfg;
  cfg.seed = 42;
  cfg.num_samples = 500;
  cfg.total_steps = 1000;
  cfg.nfe = 10;
  cfg.out_dir = (scratch / "trend").string();
  cfg.scene.point_count = 10;  // geometry unused by the range-dependent model
  SurrogateSpec s;
  s.kind = SurrogateKind::RangeDependent;
  s.gain = 0.9;
  s.range_decay = 2.0;
  s.noise_sigma = 0.01;
  cfg.surrogates = {s};
  MethodSpec naiter, lsd, nlsd;
  naiter.kind = MethodKind::NaIter;
  naiter.nfe = 10;
  lsd.kind = MethodKind::Lsd;
  lsd.nfe = 10;
  nlsd.kind = MethodKind::Nlsd;
  nlsd.nfe = 10;
  cfg.methods = {naiter, lsd, nlsd};

  cmd_simulate(cfg);
  cmd_run(cfg);
  const std::string csv = read_file(cfg.out_dir + "/report.csv");
  const auto row_naiter = report_row(csv, "range_dependent+naiter");
  const auto row_lsd = report_row(csv, "range_dependent+lsd");
  const auto row_nlsd = report_row(csv, "range_dependent+nlsd");

  const double rho_naiter = std::stod(row_naiter[9]);
  const double rho_lsd = std::stod(row_lsd[9]);
  const double rho_nlsd = std::stod(row_nlsd[9]);
  const double rate5_naiter = std::stod(row_naiter[8]);
  const double rate5_lsd = std::stod(row_lsd[8]);
  const double secs = seconds_since(start);

  const bool ok = rho_lsd > rho_naiter && rho_lsd > rho_nlsd &&
                  rate5_lsd >= rate5_naiter && secs < 120.0;
  return {7, "500-sample benchmark orders the methods as published", ok,
          format("rho: lsd %.2f naiter %.2f nlsd %.2f; 5d5cm: lsd %.2f "
                 "naiter %.2f; %.1fs",
                 rho_lsd, rho_naiter, rho_nlsd, rate5_lsd, rate5_naiter, secs)};
}

Criterion stability_hand_counts() {
  auto make_record = [](double r2, double r5, double r10, double t2, double t5,
                        double t10) {
    RunRecord rec;
    rec.method = MethodKind::Lsd;
    rec.errors_by_step.resize(10);
    for (CalibrationError& e : rec.errors_by_step) {
      e.rot_rmse = 1e6;  // non-checkpoint entries must be ignored
      e.trans_rmse = 1e6;
    }
    rec.errors_by_step[1].rot_rmse = r2;
    rec.errors_by_step[1].trans_rmse = t2;
    rec.errors_by_step[4].rot_rmse = r5;
    rec.errors_by_step[4].trans_rmse = t5;
    rec.errors_by_step[9].rot_rmse = r10;
    rec.errors_by_step[9].trans_rmse = t10;
    rec.final_error = rec.errors_by_step[9];
    return rec;
  };

  const RunRecord mono = make_record(5, 4, 3, 6, 2, 1);
  const RunRecord ties = make_record(2, 2, 2, 3, 3, 3);
  const RunRecord rot_regress = make_record(3, 2, 2.5, 4, 3, 2);
  const RunRecord trans_regress = make_record(3, 2, 1, 1, 0.5, 0.6);

  bool ok = stability_rho({mono}) == 100.0;
  ok = ok && stability_rho({ties}) == 100.0;
  ok = ok && stability_rho({rot_regress}) == 0.0;
  ok = ok && stability_rho({trans_regress}) == 0.0;
  ok = ok && stability_rho({mono, ties, rot_regress}) == 200.0 / 3.0;
  ok = ok &&
       stability_rho({mono, ties, rot_regress, trans_regress}) == 50.0;
  return {8, "stability percentage matches hand-counted cases", ok, ""};
}

Criterion pipeline_determinism(const fs::path& scratch) {
  BenchConfig cfg;
  cfg.seed = 7;
  cfg.num_samples = 8;
  cfg.total_steps = 100;
  cfg.nfe = 5;
  cfg.out_dir = (scratch / "determinism").string();
  cfg.scene.point_count = 30;
  SurrogateSpec s;
  s.kind = SurrogateKind::Contraction;
  s.gain = 0.8;
  s.noise_sigma = 0.05;
  cfg.surrogates = {s};
  MethodSpec single, naiter, lsd, nlsd;
  single.kind = MethodKind::Single;
  single.nfe = 1;
  naiter.kind = MethodKind::NaIter;
  naiter.nfe = 5;
  lsd.kind = MethodKind::Lsd;
  lsd.nfe = 5;
  lsd.mode = ReverseStepMode::PosteriorStochastic;
  nlsd.kind = MethodKind::Nlsd;
  nlsd.nfe = 5;
  cfg.methods = {single, naiter, lsd, nlsd};

  const char* files[] = {"/records.csv", "/report.csv", "/report.txt",
                         "/run_manifest.txt"};

  cmd_simulate(cfg);
  cmd_run(cfg);
  std::vector<std::string> first;
  for (const char* f : files) first.push_back(read_file(cfg.out_dir + f));
  const std::string manifest = read_file(dataset_dir(cfg.out_dir) + "/manifest.txt");

  // Full rerun from scratch, then a parallel rerun.
  cmd_simulate(cfg);
  cmd_run(cfg);
  bool ok = read_file(dataset_dir(cfg.out_dir) + "/manifest.txt") == manifest;
  for (std::size_t i = 0; i < 4; ++i) {
    ok = ok && read_file(cfg.out_dir + files[i]) == first[i];
  }
  RunOptions parallel;
  parallel.jobs = 8;
  cmd_run(cfg, parallel);
  for (std::size_t i = 0; i < 4; ++i) {
    ok = ok && read_file(cfg.out_dir + files[i]) == first[i];
  }
  return {9, "pipeline output is byte-identical across reruns and job counts",
          ok, ""};
}

Criterion commuting_equivalence() {
  const NoiseSchedule sched = build_cosine_schedule(1000, 0.008);
  const std::vector<int> plan = logsnr_timesteps(sched, 10);

  SurrogateSpec oracle;
  oracle.kind = SurrogateKind::Oracle;
  SurrogateSpec contraction;
  contraction.kind = SurrogateKind::Contraction;
  contraction.gain = 0.7;
  contraction.noise_sigma = 0.0;
  const SurrogateSpec specs[] = {oracle, contraction};

  RngStream setup(404);
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    Eigen::Vector3d trans(setup.uniform(-1.0, 1.0), setup.uniform(-1.0, 1.0),
                          setup.uniform(-1.0, 1.0));
    const Scene scene =
        bare_scene(RigidTransform(Eigen::Matrix3d::Identity(), trans));
    Twist p = Twist::zero();
    for (int c = 0; c < 3; ++c) p.rho[c] = setup.uniform(-0.3, 0.3);
    const RigidTransform t0 = compose(exp_map(p), scene.gt_extrinsic);

    for (const SurrogateSpec& spec : specs) {
      ContextProvider provider_a(scene, spec, true);
      ContextProvider provider_b(scene, spec, true);
      RngStream rng_a(600 + i);
      RngStream rng_b(600 + i);
      const Trajectory lsd = run_lsd(provider_a, t0, plan,
                                     ReverseStepMode::PosteriorMean, sched, rng_a);
      const Trajectory nlsd = run_nlsd(provider_b, t0, plan, 0.0, sched, rng_b);
      for (std::size_t k = 0; k < plan.size(); ++k) {
        worst = std::max(worst, transform_gap(lsd.states[k], nlsd.estimates[k]));
      }
    }
  }
  return {10, "twist-state and SE(3)-state runs agree when motions commute",
          worst <= 1e-9, format("max per-step gap %.3e", worst)};
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / "diffcal_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  std::vector<Criterion> results;
  results.push_back(lie_roundtrip());
  results.push_back(schedule_boundaries());
  results.push_back(posterior_identity());
  results.push_back(oracle_recovery());
  results.push_back(contraction_halving());
  results.push_back(buffering_behavior(scratch));
  results.push_back(trend_reproduction(scratch));
  results.push_back(stability_hand_counts());
  results.push_back(pipeline_determinism(scratch));
  results.push_back(commuting_equivalence());

  int failures = 0;
  for (const Criterion& c : results) {
    if (!c.ok) ++failures;
    std::printf("%s  criterion %2d: %s%s%s\n", c.ok ? "PASS" : "FAIL", c.index,
                c.name, c.detail.empty() ? "" : "  -- ", c.detail.c_str());
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(results.size()) - failures,
              results.size());

  std::error_code ec;
  fs::remove_all(scratch, ec);
  return failures;
}
