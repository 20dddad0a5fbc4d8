// Command-line front end: simulate / run / curves / compare.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "diffcal/diffcal.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  bool has_seed = false;
  std::uint64_t seed = 0;
};

diffcal::BenchConfig load_effective_config(const CommonArgs& args) {
  diffcal::BenchConfig cfg = args.config_path.empty()
                                 ? diffcal::BenchConfig{}
                                 : diffcal::load_config_file(args.config_path);
  if (args.has_seed) cfg.seed = args.seed;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  return cfg;
}

void add_common_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Benchmark config file");
  cmd->add_option("--out", args.out_dir, "Output directory (overrides config)");
  cmd->add_option_function<std::uint64_t>(
      "--seed",
      [&args](const std::uint64_t& v) {
        args.has_seed = true;
        args.seed = v;
      },
      "Seed override (changes the dataset identity)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic camera-LiDAR extrinsic calibration benchmark"};
  app.require_subcommand(1);

  CommonArgs sim_args;
  CLI::App* sim = app.add_subcommand("simulate", "Generate the scene dataset");
  add_common_flags(sim, sim_args);

  CommonArgs run_args;
  int jobs = 1;
  bool no_buffering = false;
  CLI::App* run = app.add_subcommand("run", "Execute methods over the dataset");
  add_common_flags(run, run_args);
  run->add_option("--jobs", jobs, "Worker threads over samples")
      ->check(CLI::Range(1, 256));
  run->add_flag("--no-buffering", no_buffering,
                "Rebuild the surrogate context every step");

  CommonArgs curves_args;
  CLI::App* curves =
      app.add_subcommand("curves", "Emit per-step error curves CSV");
  add_common_flags(curves, curves_args);

  std::vector<std::string> compare_dirs;
  std::string compare_out;
  CLI::App* compare =
      app.add_subcommand("compare", "Merge reports from multiple runs");
  compare->add_option("dirs", compare_dirs, "Run output directories")
      ->expected(-1);
  compare->add_option("--out", compare_out,
                      "Also write the table to <dir>/compare.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sim->parsed()) {
      diffcal::cmd_simulate(load_effective_config(sim_args));
    } else if (run->parsed()) {
      diffcal::RunOptions opt;
      opt.jobs = jobs;
      opt.buffering = !no_buffering;
      opt.info = &std::cout;
      diffcal::cmd_run(load_effective_config(run_args), opt);
    } else if (curves->parsed()) {
      const diffcal::BenchConfig cfg = load_effective_config(curves_args);
      diffcal::cmd_curves(cfg.out_dir);
    } else if (compare->parsed()) {
      const std::string table = diffcal::cmd_compare(compare_dirs);
      std::cout << table;
      if (!compare_out.empty()) {
        diffcal::ensure_dir(compare_out);
        diffcal::write_file(compare_out + "/compare.txt", table);
      }
    }
  } catch (const diffcal::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const diffcal::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 3;
  } catch (const diffcal::ParseError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
