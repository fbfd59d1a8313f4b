// hnndecon: data generation, training, evaluation and preset sweeps.
//
// Exit codes: 0 ok, 1 partial sweep failure, 2 config or contract error, 3 training divergence.

#include "hnndecon/runner.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <iostream>

namespace {

using namespace hnndecon;

enum Exit { kOk = 0, kPartial = 1, kConfig = 2, kDiverged = 3 };

ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig c = load_experiment_config(path);
  if (const char* env = std::getenv("HNNDECON_SEED")) {
    try {
      c.seeds = {std::stoull(env)};
    } catch (const std::exception&) {
      throw ConfigError(std::string("HNNDECON_SEED is not an unsigned integer: '") + env + "'");
    }
    c.train.seed = c.seeds.front();
  }
  return c;
}

int cmd_gen_data(const std::string& path) {
  const ExperimentConfig c = load_config(path);
  const auto art = generate_dataset_files(c);
  std::cout << art.dir.string() << " sha256 " << art.content_sha256 << (art.reused ? " (existing)" : "") << '\n';
  return kOk;
}

int cmd_train(const std::string& path, std::size_t report_every) {
  const ExperimentConfig c = load_config(path);
  for (std::uint64_t seed : c.seeds) {
    const ExperimentConfig single = c.with_seed(seed);
    auto progress = [&](const EpochLog& e) {
      if (report_every > 0 && (e.epoch % report_every == 0 || e.epoch == single.train.epochs))
        std::cerr << "seed " << seed << " epoch " << e.epoch << " loss " << e.train_loss << " lr " << e.lr << '\n';
    };
    const auto art = train_run(single, progress);
    std::cout << art.dir.string() << " checkpoint sha256 " << art.checkpoint_sha256 << (art.reused ? " (existing)" : "")
              << '\n';
  }
  return kOk;
}

int cmd_eval(const std::string& dir) {
  const auto art = eval_run(dir);
  const auto& r = art.record;
  std::cout << r.run_id << ' ' << r.system << ' ' << r.family << " rollout_error " << r.rollout_error
            << " energy_error " << r.energy_error << " symplectic_error " << r.symplectic_error << " delta_hat "
            << r.delta_hat << (r.bound_violated ? " BOUND VIOLATED" : "") << '\n';
  return kOk;
}

int cmd_sweep(const std::string& preset, const std::string& out, std::size_t jobs, const std::string& scale) {
  auto members = expand_preset(preset, scale_from_string(scale));
  std::cerr << preset << ": " << members.size() << " runs at " << scale << " scale into " << out << '\n';
  const auto result = run_sweep(std::move(members), out, jobs, [](const std::string& line) { std::cerr << line << '\n'; });
  for (const auto& m : result.members)
    if (m.status == "diverged" || m.status == "failed")
      std::cerr << "FAILED " << m.run_id << ' ' << m.status << ": " << m.error << '\n';
  std::cout << (fs::path(out) / "summary.csv").string() << '\n';
  return result.failures() > 0 ? kPartial : kOk;
}

int cmd_report(const std::string& dir) {
  if (!fs::exists(dir)) throw MissingArtifact("no such directory " + dir);
  const auto rep = write_report(dir);
  std::cout << rep.runs.size() << " runs, " << rep.groups.size() << " groups\n";
  for (const auto& g : rep.groups)
    std::cout << g.system << ' ' << g.family << ' ' << g.loss << " beta " << g.beta << " n " << g.n
              << " gm_rollout_error " << g.gm_rollout << " gm_energy_error " << g.gm_energy << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hamiltonian and neural ODE dynamics models: data, training, evaluation, sweeps"};
  app.require_subcommand(1);

  std::string config, dir, preset, out = "sweeps", scale = "desk";
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  std::size_t report_every = 16;

  auto* gen = app.add_subcommand("gen-data", "generate the dataset of a config");
  gen->add_option("config", config, "experiment config (JSON)")->required();
  auto* train = app.add_subcommand("train", "train one run per seed of a config");
  train->add_option("config", config, "experiment config (JSON)")->required();
  train->add_option("--report-every", report_every, "print progress every N epochs (0 = never)");
  auto* eval = app.add_subcommand("eval", "evaluate a trained run directory");
  eval->add_option("run-dir", dir, "run directory")->required();
  auto* sweep = app.add_subcommand("sweep", "run a preset grid");
  sweep->add_option("preset", preset, "preset name")->required()->check(CLI::IsMember(preset_names()));
  sweep->add_option("--jobs", jobs, "parallel runs");
  sweep->add_option("--out", out, "output directory");
  sweep->add_option("--scale", scale, "full, desk or smoke")->check(CLI::IsMember({"full", "desk", "smoke"}));
  auto* report = app.add_subcommand("report", "aggregate completed runs under a directory");
  report->add_option("dir", dir, "sweep or output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfig;
  }

  try {
    if (*gen) return cmd_gen_data(config);
    if (*train) return cmd_train(config, report_every);
    if (*eval) return cmd_eval(dir);
    if (*sweep) return cmd_sweep(preset, out, jobs, scale);
    if (*report) return cmd_report(dir);
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }
  return kOk;
}
