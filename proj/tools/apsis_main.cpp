// Command line front end: propagate, run, train, bench, validate.
//
// Exit codes: 0 success, 2 validation/schema error, 3 runtime numerical
// failure. Failures emit one machine-readable JSON object on stderr. Every
// command writes its artifacts under --out and finishes with manifest.json
// listing them; the manifest is always the last file written.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "apsis/arena.hpp"
#include "apsis/dynamics.hpp"
#include "apsis/ephemeris.hpp"
#include "apsis/frames.hpp"
#include "apsis/learning.hpp"
#include "apsis/missions.hpp"
#include "apsis/rng.hpp"
#include "apsis/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace apsis;

namespace {

constexpr double kTwoPi = 6.283185307179586476925;

// Deliberate failure with a fixed exit code; everything else that escapes a
// handler is mapped by kind in main().
struct CommandError {
  int code;
  std::string kind;
  std::string message;
  std::vector<std::string> details;
};

std::string num17(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string version_hash() {
  const std::string tag = std::string("apsis ") + APSIS_VERSION;
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw CommandError{2, "io", "cannot read '" + path + "'", {}};
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Collects every file a command produces so the manifest can list them all.
class ArtifactSink {
 public:
  explicit ArtifactSink(const std::string& out_dir) : dir_(out_dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec)
      throw CommandError{2, "io",
                         "cannot create output directory '" + out_dir + "'",
                         {}};
  }

  void write(const std::string& name, const std::string& text) {
    fs::path p = dir_ / name;
    std::ofstream out(p, std::ios::binary);
    if (!out)
      throw CommandError{2, "io", "cannot write '" + p.string() + "'", {}};
    out << text;
    if (!out)
      throw CommandError{2, "io", "short write to '" + p.string() + "'", {}};
    names_.push_back(name);
    std::cout << "wrote " << p.string() << "\n";
  }

  // Manifest goes last and is not listed among its own artifacts.
  void finish(const std::string& command, const std::string& scenario,
              std::uint64_t seed, double wall_time_s) {
    json doc;
    doc["command"] = command;
    doc["scenario"] = scenario;
    doc["seed"] = seed;
    doc["out_dir"] = dir_.string();
    doc["wall_time_s"] = wall_time_s;
    doc["artifacts"] = names_;
    doc["version_hash"] = version_hash();
    fs::path p = dir_ / "manifest.json";
    std::ofstream out(p, std::ios::binary);
    out << doc.dump(2) << "\n";
    std::cout << "wrote " << p.string() << "\n";
  }

 private:
  fs::path dir_;
  std::vector<std::string> names_;
};

// Scenario arguments accept a file path or "preset:<mission id>".
std::string resolve_scenario_text(const std::string& arg) {
  const std::string prefix = "preset:";
  if (arg.rfind(prefix, 0) == 0)
    return preset_scenario_json(mission_id_from_string(arg.substr(prefix.size())));
  return read_file(arg);
}

void apply_forces_tier(ScenarioConfig& cfg, const std::string& tier) {
  if (tier.empty()) return;
  if (tier == "newtonian") {
    cfg.forces.enable_j2 = false;
    cfg.forces.enable_drag = false;
  } else if (tier == "newtonian+drag") {
    cfg.forces.enable_j2 = false;
    cfg.forces.enable_drag = true;
  } else if (tier == "full") {
    cfg.forces.enable_j2 = true;
    cfg.forces.enable_drag = true;
  }
}

void apply_parallel(ScenarioConfig& cfg, const std::string& mode) {
  if (mode.empty()) return;
  cfg.stepping.parallel = (mode == "on");
}

std::string scenario_epoch(const ScenarioConfig& cfg) {
  return cfg.epoch.empty() ? "2000-01-01T00:00:00Z" : cfg.epoch;
}

std::vector<PropState> to_prop_states(const std::vector<CartesianState>& cs) {
  std::vector<PropState> out;
  out.reserve(cs.size());
  for (const CartesianState& s : cs)
    out.push_back(PropState{s.r, s.v, 0.0, s.t});
  return out;
}

double elapsed_s(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

struct CommonArgs {
  std::string scenario;
  std::string out;
  std::uint64_t seed = 0;
  std::string forces;    // empty keeps the scenario's force model
  std::string parallel;  // empty keeps the scenario's stepping mode
};

// ---------------------------------------------------------------- propagate

void run_propagate(const CommonArgs& args, double duration_s, double step_s) {
  auto start = std::chrono::steady_clock::now();
  if (step_s <= 0.0)
    throw CommandError{2, "validation", "--step-s must be positive", {}};

  ScenarioConfig cfg = load_scenario(resolve_scenario_text(args.scenario));
  apply_forces_tier(cfg, args.forces);

  ArtifactSink sink(args.out);
  const std::string epoch0 = scenario_epoch(cfg);
  for (const BodyConfig& body : cfg.bodies) {
    PropState s0{body.mean.r, body.mean.v, body.props.dry_mass + body.fuel,
                 body.mean.t};
    PropagationResult result =
        propagate(s0, duration_s, step_s, {}, body.props, cfg.forces);
    sink.write("trajectory_" + body.name + ".csv",
               export_trajectory(result.states, epoch0));
  }
  sink.finish("propagate", args.scenario, args.seed, elapsed_s(start));
}

// ---------------------------------------------------------------------- run

void run_episode_cmd(const CommonArgs& args, const std::string& policy) {
  auto start = std::chrono::steady_clock::now();
  ScenarioConfig cfg = load_scenario(resolve_scenario_text(args.scenario));
  apply_forces_tier(cfg, args.forces);
  apply_parallel(cfg, args.parallel);
  if (!cfg.has_mission)
    throw CommandError{2, "validation",
                       "scenario has no mission; run needs one", {}};

  PolicyBundle bundle;
  const bool noop = (policy == "noop");
  if (!noop) bundle = bundle_from_json(read_file(policy));

  Environment env(cfg);
  std::vector<Eigen::VectorXd> obs =
      env.reset(Rng::derive(args.seed, "episode"));
  const int n = env.agent_count();
  const int arity = action_arity(cfg.mission.id);

  std::vector<std::string> agent_names;
  {
    for (const BodyConfig& b : cfg.bodies)
      if (b.maneuverable) agent_names.push_back(b.name);
  }

  // A checkpoint that does not fit the mission fails here, before any step.
  auto act = [&](int k) -> Eigen::VectorXd {
    if (noop) return Eigen::VectorXd::Zero(arity);
    return policy_action(bundle, obs[k], cfg, static_cast<std::size_t>(k));
  };
  for (int k = 0; k < n; ++k) (void)act(k);

  std::ostringstream csv;
  std::vector<std::vector<std::string>> info_keys(n);
  std::vector<double> totals(n, 0.0);
  std::vector<AgentStep> last(n);
  bool header_done = false;
  while (!env.episode_finished()) {
    std::vector<Eigen::VectorXd> actions(n);
    for (int k = 0; k < n; ++k) actions[k] = act(k);
    StepOutcome so = env.step(actions);
    if (!header_done) {
      csv << "step,time_s";
      for (int k = 0; k < n; ++k) {
        const std::string& name = agent_names[k];
        csv << ",reward_" << name << ",terminated_" << name << ",truncated_"
            << name;
        for (const auto& [key, value] : so.agents[k].info) {
          info_keys[k].push_back(key);
          csv << "," << key << "_" << name;
        }
      }
      csv << "\n";
      header_done = true;
    }
    csv << env.step_index() << "," << num17(env.time_s());
    for (int k = 0; k < n; ++k) {
      const AgentStep& a = so.agents[k];
      csv << "," << num17(a.reward) << "," << (a.terminated ? 1 : 0) << ","
          << (a.truncated ? 1 : 0);
      for (const std::string& key : info_keys[k]) {
        auto it = a.info.find(key);
        csv << "," << num17(it != a.info.end() ? it->second : 0.0);
      }
      totals[k] += a.reward;
      obs[k] = a.observation;
      last[k] = a;
    }
    csv << "\n";
  }

  ArtifactSink sink(args.out);
  sink.write("episode.csv", csv.str());

  const std::string epoch0 = scenario_epoch(cfg);
  for (const BodyConfig& body : cfg.bodies)
    sink.write("trajectory_" + body.name + ".csv",
               export_trajectory(to_prop_states(env.trajectory(body.name)),
                                 epoch0));

  json summary;
  summary["policy"] = policy;
  summary["steps"] = env.step_index();
  summary["time_s"] = env.time_s();
  summary["agents"] = json::array();
  for (int k = 0; k < n; ++k) {
    json a;
    a["name"] = agent_names[k];
    a["total_reward"] = totals[k];
    a["terminated"] = last[k].terminated;
    a["truncated"] = last[k].truncated;
    a["final_info"] = last[k].info;
    summary["agents"].push_back(a);
  }
  sink.write("summary.json", summary.dump(2) + "\n");
  sink.finish("run", args.scenario, args.seed, elapsed_s(start));
}

// -------------------------------------------------------------------- train

void run_train(const CommonArgs& args, const std::string& algo,
               const std::string& hyperparams_path,
               const std::string& resume_path) {
  auto start = std::chrono::steady_clock::now();
  ScenarioConfig cfg = load_scenario(resolve_scenario_text(args.scenario));
  apply_forces_tier(cfg, args.forces);
  if (!cfg.has_mission)
    throw CommandError{2, "validation",
                       "scenario has no mission; train needs one", {}};
  // Training is single-threaded end to end so a fixed seed reproduces the
  // reward curve bit for bit.
  cfg.stepping.parallel = false;

  TrainConfig tc = train_defaults(algo, cfg.mission.id);
  if (!hyperparams_path.empty())
    tc = train_config_from_json(read_file(hyperparams_path), tc);
  if (tc.algo != algo)
    throw CommandError{2, "validation",
                       "--algo '" + algo + "' conflicts with hyperparameter "
                       "algo '" + tc.algo + "'", {}};
  tc.seed = args.seed;
  if (tc.checkpoint_every == 0)
    tc.checkpoint_every = std::max(1, tc.episodes / 4);

  PolicyBundle resume;
  bool resuming = !resume_path.empty();
  if (resuming) resume = bundle_from_json(read_file(resume_path));

  ArtifactSink sink(args.out);
  sink.write("config.json", train_config_to_json(tc) + "\n");

  TrainResult result =
      train(cfg, tc, resuming ? &resume : nullptr,
            [&](const PolicyBundle& b, int episode) {
              std::ostringstream name;
              name << "checkpoint_" << std::setw(5) << std::setfill('0')
                   << episode << ".json";
              sink.write(name.str(), bundle_to_json(b) + "\n");
            });

  std::ostringstream csv;
  csv << "episode,steps,total_reward,final_metric\n";
  for (const EpisodeStats& ep : result.episodes)
    csv << ep.episode << "," << ep.steps << "," << num17(ep.total_reward)
        << "," << num17(ep.final_metric) << "\n";
  sink.write("rewards.csv", csv.str());
  sink.write("policy.json", bundle_to_json(result.bundle) + "\n");
  sink.finish("train", args.scenario, args.seed, elapsed_s(start));

  if (result.aborted)
    throw CommandError{3, "runtime",
                       "training aborted: " + result.abort_reason, {}};
}

// -------------------------------------------------------------------- bench

json bench_body(Rng& rng, int index, bool agent) {
  double a = 6.9e6 + rng.uniform() * 4e5;
  json body = {
      {"name", agent ? std::string("agent") : "body" + std::to_string(index)},
      {"dry_mass_kg", 150.0},
      {"radius_m", 1.0},
      {"elements",
       {{"type", "keplerian"},
        {"a_m", a},
        {"e", 0.001 + rng.uniform() * 0.01},
        {"i_rad", rng.uniform() * 1.2},
        {"argp_rad", rng.uniform() * kTwoPi},
        {"raan_rad", rng.uniform() * kTwoPi},
        {"anomaly_rad", rng.uniform() * kTwoPi}}}};
  if (agent) {
    body["fuel_kg"] = 10.0;
    body["isp_s"] = 300.0;
    body["thrust"] = {{"t_max_n", 0.1},
                      {"theta_max_rad", 3.141592653589793},
                      {"phi_max_rad", kTwoPi}};
  }
  return body;
}

struct BenchSample {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  Environment* env = nullptr;
};

void run_bench(const CommonArgs& args, std::vector<int> counts, int steps,
               double step_s) {
  auto start = std::chrono::steady_clock::now();
  if (counts.empty())
    throw CommandError{2, "validation", "--bodies needs at least one count", {}};
  for (int c : counts)
    if (c < 1)
      throw CommandError{2, "validation", "--bodies counts must be >= 1", {}};
  if (steps < 1)
    throw CommandError{2, "validation", "--steps must be >= 1", {}};
  if (step_s <= 0.0)
    throw CommandError{2, "validation", "--step-s must be positive", {}};

  std::ostringstream csv;
  csv << "bodies,steps,step_s,seq_mean_ms,seq_std_ms,par_mean_ms,par_std_ms,"
         "max_state_diff_m\n";

  for (int count : counts) {
    Rng rng(Rng::derive(args.seed, "bench:" + std::to_string(count)));
    json doc;
    doc["bodies"] = json::array();
    for (int i = 0; i < count; ++i)
      doc["bodies"].push_back(bench_body(rng, i, i == 0));
    doc["mission"] = {{"id", "kolosa_transfer"}};
    doc["stepping"] = {{"step_s", step_s}, {"episode_steps", steps}};

    ScenarioConfig cfg = load_scenario(doc.dump());
    apply_forces_tier(cfg, args.forces.empty() ? "full" : args.forces);

    auto time_mode = [&](bool parallel, std::vector<double>& samples,
                         Environment& env) {
      ScenarioConfig mode_cfg = cfg;
      mode_cfg.stepping.parallel = parallel;
      env = Environment(mode_cfg);
      env.reset(Rng::derive(args.seed, "bench-episode"));
      Eigen::VectorXd noop = Eigen::VectorXd::Zero(3);
      samples.reserve(steps);
      while (!env.episode_finished()) {
        auto t0 = std::chrono::steady_clock::now();
        env.step({noop});
        samples.push_back(elapsed_s(t0) * 1e3);
      }
    };

    std::vector<double> seq_ms, par_ms;
    Environment seq_env(cfg), par_env(cfg);
    time_mode(false, seq_ms, seq_env);
    time_mode(true, par_ms, par_env);

    auto stats = [](const std::vector<double>& xs) {
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= xs.size();
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      double sd = xs.size() > 1 ? std::sqrt(var / (xs.size() - 1)) : 0.0;
      return std::make_pair(mean, sd);
    };
    auto [seq_mean, seq_sd] = stats(seq_ms);
    auto [par_mean, par_sd] = stats(par_ms);

    double max_diff = 0.0;
    for (int b = 0; b < seq_env.body_count(); ++b) {
      double d = (seq_env.body_state(static_cast<std::size_t>(b)).r -
                  par_env.body_state(static_cast<std::size_t>(b)).r)
                     .norm();
      max_diff = std::max(max_diff, d);
    }

    csv << count << "," << steps << "," << num17(step_s) << ","
        << num17(seq_mean) << "," << num17(seq_sd) << "," << num17(par_mean)
        << "," << num17(par_sd) << "," << num17(max_diff) << "\n";
  }

  ArtifactSink sink(args.out);
  sink.write("bench.csv", csv.str());
  sink.finish("bench", "", args.seed, elapsed_s(start));
}

// ----------------------------------------------------------------- validate

std::vector<EphemerisRecord> parse_trajectory_file(const std::string& path) {
  std::string text = read_file(path);
  std::size_t i = text.find_first_not_of(" \t\r\n");
  if (i != std::string::npos && text[i] == '[')
    return parse_ephemeris_json(text);
  return parse_ephemeris(text);
}

void run_validate(const std::string& sim_path, const std::string& ref_path,
                  const std::string& out) {
  auto start = std::chrono::steady_clock::now();
  std::vector<EphemerisRecord> sim = parse_trajectory_file(sim_path);
  std::vector<EphemerisRecord> ref = parse_trajectory_file(ref_path);

  ResidualSeries series = residual_series(sim, ref);
  if (series.points.empty())
    throw CommandError{2, "validation",
                       "no overlapping epochs between '" + sim_path +
                           "' and '" + ref_path + "'",
                       {}};
  series.label = "sim_vs_ref";

  ValidationReport report;
  report.satellite_id = fs::path(sim_path).stem().string();
  report.horizon_s = series.points.back().t - series.points.front().t;
  report.step_count = series.points.size();
  report.rmse_m = rmse(series);
  report.mape_pct = mape(sim, ref);
  report.scenarios.push_back(series);

  std::ostringstream residuals;
  residuals << "epoch_iso,t_s,residual_m\n";
  for (const ResidualPoint& p : series.points)
    residuals << format_epoch_iso(p.t) << "," << num17(p.t) << ","
              << num17(p.residual) << "\n";

  // Plot data counts time from the start of the overlap window.
  std::ostringstream plot;
  plot << "t_s,residual_m\n";
  const double t0 = series.points.front().t;
  for (const ResidualPoint& p : series.points)
    plot << num17(p.t - t0) << "," << num17(p.residual) << "\n";

  ArtifactSink sink(out);
  sink.write("report.json", validation_report_json(report) + "\n");
  sink.write("residuals.csv", residuals.str());
  sink.write("plot_data.csv", plot.str());
  sink.finish("validate", sim_path, 0, elapsed_s(start));
}

void emit_error(int code, const std::string& kind, const std::string& message,
                const std::vector<std::string>& details = {}) {
  json doc;
  doc["error"]["code"] = code;
  doc["error"]["kind"] = kind;
  doc["error"]["message"] = message;
  if (!details.empty()) doc["error"]["details"] = details;
  std::cerr << doc.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orbital scenario runner: propagation, episodes, training, "
               "benchmarks, trajectory validation"};
  app.require_subcommand(1);

  CommonArgs args;
  double duration_s = 0.0;
  double step_s = 60.0;
  std::string policy = "noop";
  std::string algo = "ppo";
  std::string hyperparams;
  std::string resume;
  std::vector<int> counts = {10, 100};
  int steps = 20;
  std::string sim_path, ref_path;

  auto add_scenario = [&](CLI::App* cmd) {
    cmd->add_option("--scenario", args.scenario,
                    "scenario file or preset:<mission id>")
        ->required();
  };
  auto add_out = [&](CLI::App* cmd) {
    cmd->add_option("--out", args.out, "output directory")->required();
  };
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", args.seed,
                    "master seed; subsystem streams derive from it by label");
  };
  auto add_forces = [&](CLI::App* cmd) {
    cmd->add_option("--forces", args.forces, "force model override")
        ->check(CLI::IsMember({"newtonian", "newtonian+drag", "full"}));
  };
  auto add_parallel = [&](CLI::App* cmd) {
    cmd->add_option("--parallel", args.parallel, "stepping mode override")
        ->check(CLI::IsMember({"on", "off"}));
  };

  CLI::App* prop = app.add_subcommand(
      "propagate", "propagate every body ballistically, export CSV");
  add_scenario(prop);
  add_out(prop);
  add_seed(prop);
  add_forces(prop);
  prop->add_option("--duration-s", duration_s, "signed propagation span")
      ->required();
  prop->add_option("--step-s", step_s, "output step (default 60)");

  CLI::App* run = app.add_subcommand(
      "run", "play one episode under a policy, export logs and trajectories");
  add_scenario(run);
  add_out(run);
  add_seed(run);
  add_forces(run);
  add_parallel(run);
  run->add_option("--policy", policy, "'noop' or a checkpoint file");

  CLI::App* tr = app.add_subcommand(
      "train", "train a policy; sequential stepping, bit-exact under --seed");
  add_scenario(tr);
  add_out(tr);
  add_seed(tr);
  add_forces(tr);
  tr->add_option("--algo", algo, "learning algorithm")
      ->check(CLI::IsMember({"ppo", "ddqn", "ddpg"}));
  tr->add_option("--hyperparams", hyperparams,
                 "JSON overrides on the per-mission defaults");
  tr->add_option("--policy", resume, "checkpoint to resume from");

  CLI::App* bench = app.add_subcommand(
      "bench", "wall-time per step at several body counts, both step modes");
  add_out(bench);
  add_seed(bench);
  add_forces(bench);
  bench->add_option("--bodies", counts, "body counts (default 10,100)")
      ->delimiter(',');
  bench->add_option("--steps", steps, "timed steps per count (default 20)");
  bench->add_option("--step-s", step_s, "step length (default 60)");

  CLI::App* val = app.add_subcommand(
      "validate", "residual report between two trajectory files");
  val->add_option("--sim", sim_path, "trajectory under test (CSV or JSON)")
      ->required();
  val->add_option("--ref", ref_path, "reference trajectory (CSV or JSON)")
      ->required();
  val->add_option("--out", args.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    emit_error(2, "usage", e.what());
    return 2;
  }

  try {
    if (*prop) run_propagate(args, duration_s, step_s);
    else if (*run) run_episode_cmd(args, policy);
    else if (*tr) run_train(args, algo, hyperparams, resume);
    else if (*bench) run_bench(args, counts, steps, step_s);
    else if (*val) run_validate(sim_path, ref_path, args.out);
    return 0;
  } catch (const CommandError& e) {
    emit_error(e.code, e.kind, e.message, e.details);
    return e.code;
  } catch (const ScenarioError& e) {
    emit_error(2, "validation", e.what(), e.violations());
    return 2;
  } catch (const json::exception& e) {
    emit_error(2, "validation", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    emit_error(2, "validation", e.what());
    return 2;
  } catch (const std::out_of_range& e) {
    emit_error(2, "validation", e.what());
    return 2;
  } catch (const std::exception& e) {
    emit_error(3, "runtime", e.what());
    return 3;
  }
}
