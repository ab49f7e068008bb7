// fgs: command-line driver for federated fine-tuning experiments.
//
//   fgs run <config> [--output DIR]
//   fgs validate <config>
//   fgs compare <config_a> <config_b> [--targets 20% 60% 0.01] [--output report.json]
//   fgs sweep <config> --seeds A..B [--jobs N] [--output DIR]
//
// FGS_SEED, when set, overrides [run] seed of every config read.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fgs/experiment.hpp"

namespace {

fgs::ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw fgs::IoError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  fgs::ExperimentConfig cfg;
  try {
    cfg = fgs::parse_config(ss.str());
  } catch (const fgs::ConfigError& e) {
    throw fgs::ConfigError(path + ": " + e.what());
  }
  if (const char* env = std::getenv("FGS_SEED")) {
    try {
      cfg.seed = fgs::detail::ConfigReader(0, "FGS_SEED", env).u64();
    } catch (const fgs::ConfigError&) {
      throw fgs::ConfigError(std::string("FGS_SEED: expected a non-negative integer, got '") + env + "'");
    }
  }
  return cfg;
}

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& text) {
  const auto dots = text.find("..");
  auto num = [&](const std::string& s) { return fgs::detail::ConfigReader(0, "--seeds", s).u64(); };
  if (dots == std::string::npos) {
    const auto v = num(text);
    return {v, v};
  }
  const auto lo = num(text.substr(0, dots)), hi = num(text.substr(dots + 2));
  if (hi < lo) throw fgs::ConfigError("--seeds: empty range " + text);
  return {lo, hi};
}

void print_summary(const fgs::RunResult& r, const std::filesystem::path& dir) {
  const auto& m = r.metrics;
  std::cout << "rounds " << m.size() << ", initial loss " << fgs::format_double(r.outcome.initial_loss);
  if (!m.empty()) {
    std::cout << ", final loss " << fgs::format_double(m.back().global_loss) << ", bytes " << m.back().cum_bytes
              << ", seconds " << fgs::format_double(m.back().cum_seconds);
  }
  std::cout << "\nwrote " << dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated fine-tuning simulator"};
  app.require_subcommand(1);

  std::string run_config, run_output;
  auto* run = app.add_subcommand("run", "Run one experiment and write metrics, ledger and checkpoints");
  run->add_option("config", run_config, "Experiment config")->required();
  run->add_option("--output", run_output, "Output directory (default: [run] output)");

  std::string validate_config;
  auto* val = app.add_subcommand("validate", "Parse and validate a config, then print it normalized");
  val->add_option("config", validate_config, "Experiment config")->required();

  std::string cmp_a, cmp_b, cmp_output;
  std::vector<std::string> cmp_targets{"20%", "60%"};
  auto* cmp = app.add_subcommand("compare", "Run two configs and compare cost to reach loss targets");
  cmp->add_option("config_a", cmp_a, "First config")->required();
  cmp->add_option("config_b", cmp_b, "Second config")->required();
  cmp->add_option("--targets", cmp_targets, "Loss targets: absolute values or progress percentages like 60%");
  cmp->add_option("--output", cmp_output, "Write the JSON report here instead of stdout");

  std::string sweep_config, sweep_seeds, sweep_output;
  unsigned sweep_jobs = std::max(1u, std::thread::hardware_concurrency());
  auto* sweep = app.add_subcommand("sweep", "Run one config over a range of seeds");
  sweep->add_option("config", sweep_config, "Experiment config")->required();
  sweep->add_option("--seeds", sweep_seeds, "Seed range A..B (inclusive)")->required();
  sweep->add_option("--jobs", sweep_jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  sweep->add_option("--output", sweep_output, "Output directory (default: [run] output)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = load_config(run_config);
      const std::filesystem::path dir = run_output.empty() ? cfg.output : run_output;
      const auto result = fgs::run_experiment(cfg);
      fgs::write_outputs(result, dir);
      print_summary(result, dir);
    } else if (*val) {
      const auto cfg = load_config(validate_config);
      std::cout << fgs::serialize(cfg);
    } else if (*cmp) {
      std::vector<fgs::LossTarget> targets;
      for (const auto& t : cmp_targets) targets.push_back(fgs::LossTarget::parse(t));
      const auto cfg_a = load_config(cmp_a);
      const auto cfg_b = load_config(cmp_b);
      if (cfg_a.data_seed != cfg_b.data_seed) std::cerr << "warning: configs use different data seeds\n";
      const auto ra = fgs::run_experiment(cfg_a);
      const auto rb = fgs::run_experiment(cfg_b);
      const auto report = fgs::report_json(ra, cmp_a, rb, cmp_b, fgs::compare(ra, rb, targets));
      if (cmp_output.empty()) {
        std::cout << report.dump(2) << '\n';
      } else {
        fgs::write_text(cmp_output, report.dump(2) + "\n");
      }
    } else if (*sweep) {
      const auto base_cfg = load_config(sweep_config);
      const auto [lo, hi] = parse_seed_range(sweep_seeds);
      const std::filesystem::path root = sweep_output.empty() ? base_cfg.output : sweep_output;
      std::vector<fgs::RunResult> results;
      // Each seed owns its config, world and ledger; results are merged below.
      // `done` rather than next <= hi, so a range ending at the largest seed terminates.
      bool done = false;
      for (std::uint64_t next = lo; !done;) {
        std::vector<std::future<fgs::RunResult>> batch;
        for (unsigned j = 0; j < sweep_jobs && !done; ++j, ++next) {
          auto cfg = base_cfg;
          cfg.seed = next;
          done = next == hi;
          batch.push_back(std::async(std::launch::async, [cfg] { return fgs::run_experiment(cfg); }));
        }
        for (auto& f : batch) results.push_back(f.get());
      }
      std::ostringstream summary;
      summary << "seed,final_loss,best_loss,total_bytes,total_seconds\n";
      for (const auto& r : results) {
        fgs::write_outputs(r, root / ("seed_" + std::to_string(r.config.seed)));
        const auto& m = r.metrics;
        summary << r.config.seed << ',' << fgs::format_double(m.empty() ? r.outcome.initial_loss : m.back().global_loss)
                << ',' << fgs::format_double(fgs::best_loss(r)) << ',' << (m.empty() ? 0 : m.back().cum_bytes) << ','
                << fgs::format_double(m.empty() ? 0.0 : m.back().cum_seconds) << '\n';
      }
      std::filesystem::create_directories(root);
      fgs::write_text(root / "sweep.csv", summary.str());
      std::cout << "wrote " << results.size() << " runs under " << root.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
