#pragma once

#include "hnndecon/checkpoint.hpp"
#include "hnndecon/csv.hpp"
#include "hnndecon/experiment.hpp"
#include "hnndecon/svg.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace hnndecon {

namespace fs = std::filesystem;

/// A required file or directory is absent.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Writes through a temporary file so readers never see a half-written artifact.
inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw MissingArtifact("corrupt JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(1) + "\n"); }

inline std::string short_hash(const std::string& hex) { return hex.substr(0, 16); }

inline ExperimentConfig load_experiment_config(const fs::path& path) {
  return parse_experiment_config(read_text(path));
}

// ---- datasets ------------------------------------------------------------

namespace detail {

inline nlohmann::json trajectories_to_json(const Tensor& t) {
  nlohmann::json out = nlohmann::json::array();
  const std::size_t n = t.dim(0), len = t.dim(1), d = t.dim(2);
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::json traj = nlohmann::json::array();
    for (std::size_t k = 0; k < len; ++k) {
      const auto row = t.data().subspan((i * len + k) * d, d);
      traj.push_back(std::vector<double>(row.begin(), row.end()));
    }
    out.push_back(std::move(traj));
  }
  return out;
}

inline Tensor trajectories_from_json(const nlohmann::json& j) {
  const auto nested = j.get<std::vector<std::vector<std::vector<double>>>>();
  if (nested.empty() || nested.front().empty()) throw MissingArtifact("dataset holds no trajectories");
  const std::size_t n = nested.size(), len = nested.front().size(), d = nested.front().front().size();
  std::vector<double> flat;
  flat.reserve(n * len * d);
  for (const auto& traj : nested) {
    if (traj.size() != len) throw MissingArtifact("ragged trajectories in dataset");
    for (const auto& z : traj) {
      if (z.size() != d) throw MissingArtifact("ragged states in dataset");
      flat.insert(flat.end(), z.begin(), z.end());
    }
  }
  return Tensor(Shape{n, len, d}, std::move(flat));
}

}  // namespace detail

inline fs::path dataset_dir(const ExperimentConfig& c) {
  return fs::path(c.output_dir) / "data" / short_hash(dataset_hash(c));
}

struct DatasetArtifact {
  fs::path dir;
  std::string content_sha256;
  bool reused = false;
};

/// Writes dataset.json and manifest.json under <output_dir>/data/<hash>; reuses an existing complete copy.
inline DatasetArtifact generate_dataset_files(const ExperimentConfig& c) {
  const fs::path dir = dataset_dir(c);
  const std::string key = dataset_hash(c);
  if (fs::exists(dir / "manifest.json") && fs::exists(dir / "dataset.json")) {
    const auto manifest = read_json(dir / "manifest.json");
    if (manifest.value("config_sha256", "") == key) return {dir, manifest.at("content_sha256"), true};
  }
  const Dataset data = generate_dataset(c.system, c.data);
  nlohmann::json doc{{"meta",
                      {{"system", to_json(c.system)},
                       {"system_name", c.system.name()},
                       {"data", to_json(c.data)},
                       {"state_dim", c.system.state_dim()},
                       {"conservative", c.system.conservative()}}},
                     {"train", detail::trajectories_to_json(data.train)},
                     {"test", detail::trajectories_to_json(data.test)}};
  const std::string text = doc.dump() + "\n";
  const std::string content = sha256_hex(text);
  write_text(dir / "dataset.json", text);
  write_json(dir / "manifest.json", {{"config_sha256", key},
                                     {"content_sha256", content},
                                     {"conservative", c.system.conservative()},
                                     {"system", c.system.name()},
                                     {"n_train", c.data.n_train_chunks},
                                     {"n_test", c.data.n_test},
                                     {"train_len", c.data.chunk_len},
                                     {"test_len", c.data.test_len()}});
  return {dir, content, false};
}

inline Dataset load_dataset_file(const fs::path& dir, const ExperimentConfig& c) {
  if (!fs::exists(dir / "dataset.json")) throw MissingArtifact("no dataset at " + dir.string() + " (run gen-data first)");
  const auto doc = read_json(dir / "dataset.json");
  Dataset d{c.system, c.data, detail::trajectories_from_json(doc.at("train")),
            detail::trajectories_from_json(doc.at("test"))};
  return d;
}

// ---- training ------------------------------------------------------------

inline fs::path run_dir(const ExperimentConfig& single) {
  return fs::path(single.output_dir) / "runs" / short_hash(run_hash(single));
}

inline CsvTable train_log_table(const std::vector<EpochLog>& log) {
  CsvTable t{"hnndecon.train_log", 1, {"epoch", "lr", "train_loss", "reg_term", "wall_ms", "skipped_batches"}, {}};
  for (const auto& e : log)
    t.add_row({std::to_string(e.epoch), format_double(e.lr), format_double(e.train_loss), format_double(e.reg_term),
               format_double(e.wall_ms), std::to_string(e.skipped_batches)});
  return t;
}

inline Checkpoint make_checkpoint(const ModelSpec& spec, ParamStore params) {
  return {to_string(spec.family), to_json(spec), std::move(params)};
}

struct TrainArtifact {
  fs::path dir;
  std::string run_id;
  std::string checkpoint_sha256;
  bool reused = false;
};

/// Trains one single-seed config into its run directory. A finished run with a matching
/// config hash is reused. Throws TrainingDiverged after recording the failure in manifest.json.
inline TrainArtifact train_run(const ExperimentConfig& single, const EpochHook& on_epoch = {}) {
  const std::string key = run_hash(single);
  const fs::path dir = run_dir(single);
  const std::string id = short_hash(key);
  if (fs::exists(dir / "manifest.json")) {
    const auto m = read_json(dir / "manifest.json");
    if (m.value("config_sha256", "") == key && m.value("status", "") != "diverged" && fs::exists(dir / "checkpoint.json"))
      return {dir, id, m.value("checkpoint_sha256", ""), true};
  }
  const fs::path ddir = dataset_dir(single);
  const Dataset data = load_dataset_file(ddir, single);
  if (data.state_dim() != single.model.state_dim)
    throw ConfigError("dataset states have dimension " + std::to_string(data.state_dim()) + ", model expects " +
                      std::to_string(single.model.state_dim));
  fs::create_directories(dir);
  write_json(dir / "config.json", to_json(single));

  nlohmann::json manifest{{"config_sha256", key},
                          {"run_id", id},
                          {"dataset", fs::relative(ddir, dir).generic_string()},
                          {"dataset_sha256", read_json(ddir / "manifest.json").at("content_sha256")},
                          {"status", "training"}};
  write_json(dir / "manifest.json", manifest);

  std::vector<EpochLog> log;
  auto epoch_hook = [&](const EpochLog& e) {
    log.push_back(e);
    if (on_epoch) on_epoch(e);
  };
  auto ckpt_hook = [&](std::size_t epoch, const ParamStore& p) {
    save_checkpoint((dir / ("checkpoint_e" + std::to_string(epoch) + ".json")).string(), make_checkpoint(single.model, p));
  };
  TrainResult result;
  try {
    result = train_model(single.model, data, single.train, single.integrator, init_model(single.model, single.train.seed),
                         ckpt_hook, epoch_hook);
  } catch (const TrainingDiverged& e) {
    write_csv((dir / "train_log.csv").string(), train_log_table(log));
    manifest["status"] = "diverged";
    manifest["error"] = e.what();
    write_json(dir / "manifest.json", manifest);
    throw;
  }
  const std::string ckpt_text = checkpoint_to_json(make_checkpoint(single.model, result.params)).dump() + "\n";
  write_text(dir / "checkpoint.json", ckpt_text);
  write_csv((dir / "train_log.csv").string(), train_log_table(result.log));
  manifest["status"] = "trained";
  manifest["checkpoint_sha256"] = sha256_hex(ckpt_text);
  manifest["epochs_completed"] = result.log.size();
  write_json(dir / "manifest.json", manifest);
  return {dir, id, manifest["checkpoint_sha256"], false};
}

// ---- evaluation ------------------------------------------------------------

inline const std::vector<std::string>& summary_metrics() {
  static const std::vector<std::string> names{"rollout_error",  "energy_error",  "symplectic_error",
                                              "delta_hat",      "bound_ratio",   "bound_violated",
                                              "energy_growth_r2", "diverged"};
  return names;
}

inline double metric_value(const MetricsRecord& r, const std::string& name) {
  if (name == "rollout_error") return r.rollout_error;
  if (name == "energy_error") return r.energy_error;
  if (name == "symplectic_error") return r.symplectic_error;
  if (name == "delta_hat") return r.delta_hat;
  if (name == "bound_ratio") return r.bound_ratio;
  if (name == "bound_violated") return r.bound_violated ? 1.0 : 0.0;
  if (name == "energy_growth_r2") return r.energy_growth_r2;
  if (name == "diverged") return static_cast<double>(r.diverged);
  throw std::invalid_argument("unknown metric " + name);
}

namespace detail {

inline std::vector<std::string> record_keys(const MetricsRecord& r) {
  return {r.run_id, r.system, r.family, r.loss, std::to_string(r.seed), format_double(r.beta)};
}

}  // namespace detail

inline CsvTable summary_table() {
  return {"hnndecon.summary", 1, {"run_id", "system", "family", "loss", "seed", "beta", "metric", "value"}, {}};
}

inline CsvTable trajectory_table() {
  return {"hnndecon.trajectories",
          1,
          {"run_id", "system", "family", "loss", "seed", "beta", "traj", "valid_len", "rollout_error", "energy_error"},
          {}};
}

inline void append_summary(CsvTable& t, const MetricsRecord& r) {
  for (const auto& m : summary_metrics()) {
    auto row = detail::record_keys(r);
    row.push_back(m);
    row.push_back(format_double(metric_value(r, m)));
    t.add_row(std::move(row));
  }
}

struct EvalArtifact {
  fs::path dir;
  MetricsRecord record;
};

/// Evaluates the checkpoint in `dir` on its dataset's test set and writes metric CSVs and SVGs.
inline EvalArtifact eval_run(const fs::path& dir) {
  for (const char* f : {"config.json", "manifest.json", "checkpoint.json"})
    if (!fs::exists(dir / f)) throw MissingArtifact("missing " + (dir / f).string());
  const ExperimentConfig cfg = load_experiment_config(dir / "config.json");
  nlohmann::json manifest = read_json(dir / "manifest.json");
  const Dataset data = load_dataset_file(dir / manifest.at("dataset").get<std::string>(), cfg);
  const Checkpoint ckpt = load_checkpoint((dir / "checkpoint.json").string());
  const ModelSpec spec = model_spec_from_json(ckpt.arch);
  if (data.state_dim() != spec.state_dim) throw ConfigError("checkpoint and dataset dimensions differ");

  MetricsRecord meta;
  meta.run_id = manifest.at("run_id");
  meta.loss = to_string(cfg.train.loss);
  meta.seed = cfg.train.seed;
  meta.beta = cfg.train.beta;
  const RunEvaluation ev = evaluate_model(spec, ckpt.tensors, data, cfg.eval, meta);
  const MetricsRecord& rec = ev.record;
  const auto times = time_grid(data.test.dim(1), data.config.dt);

  CsvTable long_form{"hnndecon.metrics_long",
                     1,
                     {"run_id", "system", "family", "seed", "beta", "traj", "t", "rel_err", "energy_viol"},
                     {}};
  CsvTable traj = trajectory_table();
  for (std::size_t r = 0; r < rec.rel_err.size(); ++r) {
    for (std::size_t t = 0; t < times.size(); ++t)
      long_form.add_row({rec.run_id, rec.system, rec.family, std::to_string(rec.seed), format_double(rec.beta),
                         std::to_string(r), format_double(times[t]), format_double(rec.rel_err[r][t]),
                         rec.energy_viol.empty() ? "nan" : format_double(rec.energy_viol[r][t])});
    auto row = detail::record_keys(rec);
    row.insert(row.end(), {std::to_string(r), std::to_string(ev.rollouts.valid_len[r]), format_double(rec.traj_error[r]),
                           rec.traj_energy.empty() ? "nan" : format_double(rec.traj_energy[r])});
    traj.add_row(std::move(row));
  }
  CsvTable summary = summary_table();
  append_summary(summary, rec);
  write_csv((dir / "metrics_long.csv").string(), long_form);
  write_csv((dir / "metrics_traj.csv").string(), traj);
  write_csv((dir / "metrics_summary.csv").string(), summary);

  // Per-time averages for the figures.
  std::vector<double> mean_log_err(times.size(), 0.0);
  for (const auto& series : rec.rel_err)
    for (std::size_t t = 0; t < times.size(); ++t)
      mean_log_err[t] += std::log(series[t]) / static_cast<double>(rec.rel_err.size());
  for (double& v : mean_log_err) v = std::exp(v);
  std::vector<svg::Series> err_series{{rec.family, times, mean_log_err, {}, {}}};
  svg::write_svg((dir / "rollout_error.svg").string(),
                 svg::line_plot(rec.system + " " + rec.family + ": rollout error", {"t"}, {"relative error", true}, err_series));

  if (ev.bound) {
    CsvTable energy{"hnndecon.energy_bound", 1, {"run_id", "t", "mean_energy_error", "max_energy_error", "bound"}, {}};
    for (std::size_t t = 0; t < times.size(); ++t)
      energy.add_row({rec.run_id, format_double(times[t]), format_double(ev.mean_energy_error[t]),
                      format_double(ev.bound->max_energy_error[t]), format_double(ev.bound->bound[t])});
    write_csv((dir / "energy_bound.csv").string(), energy);
    std::vector<svg::Series> curves{{"max |H(z_t) - H(z_0)|", times, ev.bound->max_energy_error, {}, {}},
                                    {"mean |H(z_t) - H(z_0)|", times, ev.mean_energy_error, {}, {}},
                                    {"linear bound", times, ev.bound->bound, {}, {}}};
    svg::write_svg((dir / "energy_growth.svg").string(),
                   svg::line_plot(rec.system + " " + rec.family + ": energy error", {"t"}, {"energy error"}, curves));
  }
  manifest["status"] = "complete";
  write_json(dir / "manifest.json", manifest);
  return {dir, rec};
}

// ---- reading results back ------------------------------------------------

struct RunSummary {
  std::string run_id, system, family, loss;
  std::uint64_t seed = 0;
  double beta = 0.0;
  std::map<std::string, double> metrics;

  double metric(const std::string& name) const {
    const auto it = metrics.find(name);
    return it == metrics.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
  }
};

inline std::vector<RunSummary> summaries_from_table(const CsvTable& t) {
  std::vector<RunSummary> out;
  std::map<std::string, std::size_t> index;
  const std::size_t c_id = t.column("run_id"), c_sys = t.column("system"), c_fam = t.column("family"),
                    c_loss = t.column("loss"), c_seed = t.column("seed"), c_beta = t.column("beta"),
                    c_metric = t.column("metric"), c_value = t.column("value");
  for (const auto& row : t.rows) {
    auto [it, fresh] = index.try_emplace(row[c_id], out.size());
    if (fresh)
      out.push_back({row[c_id], row[c_sys], row[c_fam], row[c_loss], std::stoull(row[c_seed]), parse_double(row[c_beta]), {}});
    out[it->second].metrics[row[c_metric]] = parse_double(row[c_value]);
  }
  return out;
}

struct TrajectorySummary {
  std::string run_id, system, family, loss;
  std::uint64_t seed = 0;
  double beta = 0.0;
  std::size_t traj = 0, valid_len = 0;
  double rollout_error = 0.0, energy_error = 0.0;
};

inline std::vector<TrajectorySummary> trajectories_from_table(const CsvTable& t) {
  std::vector<TrajectorySummary> out;
  for (const auto& row : t.rows)
    out.push_back({row[t.column("run_id")], row[t.column("system")], row[t.column("family")], row[t.column("loss")],
                   std::stoull(row[t.column("seed")]), parse_double(row[t.column("beta")]),
                   std::stoul(row[t.column("traj")]), std::stoul(row[t.column("valid_len")]),
                   parse_double(row[t.column("rollout_error")]), parse_double(row[t.column("energy_error")])});
  return out;
}

/// Run directories under <dir>/runs that finished evaluation.
inline std::vector<fs::path> completed_runs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::exists(dir / "runs")) return out;
  for (const auto& entry : fs::directory_iterator(dir / "runs"))
    if (entry.is_directory() && fs::exists(entry.path() / "metrics_summary.csv")) out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---- aggregate report ------------------------------------------------------

struct GroupStats {
  std::string system, family, loss;
  double beta = 0.0;
  std::size_t n = 0;
  double gm_rollout = 0.0, log_sd_rollout = 0.0, gm_energy = 0.0, mean_symplectic = 0.0;
};

inline std::vector<GroupStats> group_runs(const std::vector<RunSummary>& runs) {
  std::map<std::tuple<std::string, std::string, std::string, double>, std::vector<const RunSummary*>> groups;
  for (const auto& r : runs) groups[{r.system, r.family, r.loss, r.beta}].push_back(&r);
  std::vector<GroupStats> out;
  for (const auto& [key, members] : groups) {
    GroupStats g{std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key), members.size()};
    std::vector<double> logs, energy;
    for (const auto* m : members) {
      logs.push_back(std::log(std::max(m->metric("rollout_error"), kMetricFloor)));
      if (std::isfinite(m->metric("energy_error"))) energy.push_back(m->metric("energy_error"));
      g.mean_symplectic += m->metric("symplectic_error") / static_cast<double>(members.size());
    }
    double mean = 0.0;
    for (double l : logs) mean += l / static_cast<double>(logs.size());
    for (double l : logs) g.log_sd_rollout += (l - mean) * (l - mean);
    g.log_sd_rollout = logs.size() > 1 ? std::sqrt(g.log_sd_rollout / static_cast<double>(logs.size() - 1)) : 0.0;
    g.gm_rollout = std::exp(mean);
    g.gm_energy = energy.empty() ? std::numeric_limits<double>::quiet_NaN() : geometric_mean(energy);
    out.push_back(g);
  }
  return out;
}

inline CsvTable group_table(const std::vector<GroupStats>& groups) {
  CsvTable t{"hnndecon.groups",
             1,
             {"system", "family", "loss", "beta", "n", "gm_rollout_error", "log_sd_rollout_error", "gm_energy_error",
              "mean_symplectic_error"},
             {}};
  for (const auto& g : groups)
    t.add_row({g.system, g.family, g.loss, format_double(g.beta), std::to_string(g.n), format_double(g.gm_rollout),
               format_double(g.log_sd_rollout), format_double(g.gm_energy), format_double(g.mean_symplectic)});
  return t;
}

struct Report {
  std::vector<RunSummary> runs;
  std::vector<GroupStats> groups;
};

/// Collects every completed run under `dir` into summary.csv, trajectories.csv, groups.csv
/// and the figure SVGs. Output depends only on run contents, not on completion order.
inline Report write_report(const fs::path& dir) {
  CsvTable summary = summary_table(), traj = trajectory_table();
  for (const auto& run : completed_runs(dir)) {
    for (auto& row : read_csv((run / "metrics_summary.csv").string()).rows) summary.add_row(std::move(row));
    if (fs::exists(run / "metrics_traj.csv"))
      for (auto& row : read_csv((run / "metrics_traj.csv").string()).rows) traj.add_row(std::move(row));
  }
  auto order = [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
    // system, family, loss, beta (numeric), seed (numeric), run_id, then the rest
    const auto key = [](const std::vector<std::string>& r) {
      return std::make_tuple(r[1], r[2], r[3], parse_double(r[5]), std::stoull(r[4]), r[0]);
    };
    const auto ka = key(a), kb = key(b);
    return ka != kb ? ka < kb : a < b;
  };
  std::stable_sort(summary.rows.begin(), summary.rows.end(), order);
  std::stable_sort(traj.rows.begin(), traj.rows.end(), [&](const auto& a, const auto& b) {
    const auto ka = std::make_tuple(a[1], a[2], a[3], parse_double(a[5]), std::stoull(a[4]), a[0], std::stoul(a[6]));
    const auto kb = std::make_tuple(b[1], b[2], b[3], parse_double(b[5]), std::stoull(b[4]), b[0], std::stoul(b[6]));
    return ka < kb;
  });
  write_csv((dir / "summary.csv").string(), summary);
  write_csv((dir / "trajectories.csv").string(), traj);

  Report rep{summaries_from_table(summary), {}};
  rep.groups = group_runs(rep.runs);
  write_csv((dir / "groups.csv").string(), group_table(rep.groups));

  // Energy violation against rollout error, one series per family.
  std::map<std::string, svg::Series> by_family;
  for (const auto& r : rep.runs) {
    if (!std::isfinite(r.metric("energy_error"))) continue;
    auto& s = by_family[r.family];
    s.label = r.family;
    s.x.push_back(r.metric("rollout_error"));
    s.y.push_back(r.metric("energy_error"));
  }
  std::vector<svg::Series> scatter;
  for (auto& [name, s] : by_family) scatter.push_back(std::move(s));
  if (!scatter.empty())
    svg::write_svg((dir / "energy_vs_rollout.svg").string(),
                   svg::scatter_plot("energy violation vs rollout error", {"rollout error", true},
                                     {"energy violation", true}, scatter, true));

  std::vector<svg::Bar> bars;
  std::set<double> betas;
  for (const auto& g : rep.groups) betas.insert(g.beta);
  for (const auto& g : rep.groups) {
    std::string label = g.system + " " + g.family;
    if (g.loss != "L2") label += " " + g.loss;
    if (betas.size() > 1) label += " b=" + format_double(g.beta);
    bars.push_back({label, g.gm_rollout, g.gm_rollout * (std::exp(g.log_sd_rollout) - 1.0)});
  }
  if (!bars.empty())
    svg::write_svg((dir / "rollout_error_bars.svg").string(),
                   svg::bar_chart("geometric-mean rollout error", {"rollout error", true}, bars));

  if (betas.size() > 1) {
    std::map<std::string, std::pair<svg::Series, svg::Series>> per_system;
    for (const auto& g : rep.groups) {
      if (g.family != "NODE") continue;
      auto& [err, sym] = per_system[g.system];
      err.label = sym.label = g.system;
      // β = 0 is drawn at 1e-4 on the log axis
      const double x = g.beta > 0 ? g.beta : 1e-4;
      err.x.push_back(x);
      err.y.push_back(g.gm_rollout);
      sym.x.push_back(x);
      sym.y.push_back(g.mean_symplectic);
    }
    std::vector<svg::Series> errs, syms;
    for (auto& [name, pair] : per_system) {
      errs.push_back(pair.first);
      syms.push_back(pair.second);
    }
    svg::write_svg((dir / "symreg_rollout.svg").string(),
                   svg::line_plot("rollout error vs beta", {"beta", true}, {"rollout error", true}, errs));
    svg::write_svg((dir / "symreg_symplectic.svg").string(),
                   svg::line_plot("symplectic error vs beta", {"beta", true}, {"symplectic error", true}, syms));
  }

  // Mean energy growth per (system, family).
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> growth;
  std::map<std::string, std::size_t> counts;
  for (const auto& run : completed_runs(dir)) {
    if (!fs::exists(run / "energy_bound.csv")) continue;
    const ExperimentConfig c = load_experiment_config(run / "config.json");
    const CsvTable e = read_csv((run / "energy_bound.csv").string());
    const std::string key = c.system.name() + " " + to_string(c.model.family);
    auto& [t, v] = growth[key];
    if (t.empty()) {
      for (const auto& row : e.rows) t.push_back(parse_double(row[e.column("t")]));
      v.assign(t.size(), 0.0);
    }
    for (std::size_t k = 0; k < e.rows.size() && k < v.size(); ++k)
      v[k] += parse_double(e.rows[k][e.column("mean_energy_error")]);
    ++counts[key];
  }
  std::vector<svg::Series> curves;
  for (auto& [key, tv] : growth) {
    for (double& x : tv.second) x /= static_cast<double>(counts[key]);
    curves.push_back({key, tv.first, tv.second, {}, {}});
  }
  if (!curves.empty())
    svg::write_svg((dir / "energy_growth.svg").string(),
                   svg::line_plot("mean energy error vs time", {"t"}, {"|H(z_t) - H(z_0)|", true}, curves));
  return rep;
}

// ---- sweeps ----------------------------------------------------------------

struct MemberOutcome {
  std::string run_id;
  fs::path dir;
  std::string status;  // "trained", "skipped", "diverged", "failed"
  std::string error;
};

struct SweepResult {
  std::vector<MemberOutcome> members;
  Report report;
  std::size_t failures() const {
    return static_cast<std::size_t>(std::count_if(members.begin(), members.end(), [](const MemberOutcome& m) {
      return m.status == "diverged" || m.status == "failed";
    }));
  }
};

using SweepLog = std::function<void(const std::string&)>;

/// Generates, trains and evaluates every member (in a pool of `jobs` workers), then writes the report.
/// Members whose run directory already holds a completed evaluation with the same config hash are skipped.
inline SweepResult run_sweep(std::vector<ExperimentConfig> members, const fs::path& out, std::size_t jobs,
                             const SweepLog& log = {}) {
  std::mutex log_mutex;
  auto say = [&](const std::string& line) {
    if (!log) return;
    std::lock_guard lock(log_mutex);
    log(line);
  };
  for (auto& m : members) m.output_dir = out.string();

  // Datasets first: members sharing one would otherwise race to write it.
  std::map<std::string, const ExperimentConfig*> datasets;
  for (const auto& m : members) datasets.emplace(dataset_hash(m), &m);
  for (const auto& [hash, cfg] : datasets) {
    const auto art = generate_dataset_files(*cfg);
    say((art.reused ? "dataset reused " : "dataset written ") + art.dir.string());
  }

  SweepResult result;
  result.members.resize(members.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < members.size(); i = next++) {
      const ExperimentConfig& m = members[i];
      MemberOutcome& outcome = result.members[i];
      outcome.dir = run_dir(m);
      outcome.run_id = short_hash(run_hash(m));
      const std::string tag = "[" + std::to_string(i + 1) + "/" + std::to_string(members.size()) + "] " +
                              m.system.name() + " " + to_string(m.model.family) + " seed " +
                              std::to_string(m.train.seed) + " beta " + format_double(m.train.beta) + " " +
                              to_string(m.train.loss);
      try {
        if (fs::exists(outcome.dir / "manifest.json")) {
          const auto manifest = read_json(outcome.dir / "manifest.json");
          if (manifest.value("config_sha256", "") == run_hash(m)) {
            const std::string status = manifest.value("status", "");
            if (status == "complete" && fs::exists(outcome.dir / "metrics_summary.csv")) {
              outcome.status = "skipped";
              say(tag + ": skipped (complete)");
              continue;
            }
            if (status == "diverged") {
              outcome.status = "diverged";
              outcome.error = manifest.value("error", "");
              say(tag + ": diverged earlier, not retried");
              continue;
            }
          }
        }
        const auto start = std::chrono::steady_clock::now();
        train_run(m);
        const auto ev = eval_run(outcome.dir);
        outcome.status = "trained";
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        say(tag + ": rollout error " + format_double(ev.record.rollout_error) + " (" + format_double(std::round(secs)) +
            " s)");
      } catch (const TrainingDiverged& e) {
        outcome.status = "diverged";
        outcome.error = e.what();
        say(tag + ": diverged: " + e.what());
      } catch (const std::exception& e) {
        outcome.status = "failed";
        outcome.error = e.what();
        say(tag + ": failed: " + e.what());
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(jobs, members.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < n_workers; ++k) pool.emplace_back(worker);
  }
  result.report = write_report(out);
  return result;
}

}  // namespace hnndecon
