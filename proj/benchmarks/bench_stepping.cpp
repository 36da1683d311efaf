// Step-cost scaling with body count, sequential against threaded stepping.

#include <string>

#include <benchmark/benchmark.h>
#include <nlohmann/json.hpp>

#include "apsis/arena.hpp"
#include "apsis/dynamics.hpp"
#include "apsis/rng.hpp"

using namespace apsis;
using nlohmann::json;

namespace {

constexpr double kTwoPi = 6.283185307179586476925;

// Mirrors the CLI bench population: one agent plus ballistic traffic on
// randomized near-circular LEO orbits, full force model.
ScenarioConfig make_scenario(int bodies, bool parallel) {
  Rng rng(Rng::derive(11, "bench:" + std::to_string(bodies)));
  json doc;
  doc["bodies"] = json::array();
  for (int i = 0; i < bodies; ++i) {
    json body = {
        {"name", i == 0 ? std::string("agent") : "body" + std::to_string(i)},
        {"dry_mass_kg", 150.0},
        {"radius_m", 1.0},
        {"elements",
         {{"type", "keplerian"},
          {"a_m", 6.9e6 + rng.uniform() * 4e5},
          {"e", 0.001 + rng.uniform() * 0.01},
          {"i_rad", rng.uniform() * 1.2},
          {"argp_rad", rng.uniform() * kTwoPi},
          {"raan_rad", rng.uniform() * kTwoPi},
          {"anomaly_rad", rng.uniform() * kTwoPi}}}};
    if (i == 0) {
      body["fuel_kg"] = 10.0;
      body["isp_s"] = 300.0;
      body["thrust"] = {{"t_max_n", 0.1},
                        {"theta_max_rad", 3.141592653589793},
                        {"phi_max_rad", kTwoPi}};
    }
    doc["bodies"].push_back(body);
  }
  doc["mission"] = {{"id", "kolosa_transfer"}};
  doc["stepping"] = {{"step_s", 60.0},
                     {"episode_steps", 1000000},
                     {"parallel", parallel}};

  ScenarioConfig cfg = load_scenario(doc.dump());
  cfg.forces.enable_j2 = true;
  cfg.forces.enable_drag = true;
  return cfg;
}

void step_bodies(benchmark::State& state, bool parallel) {
  ScenarioConfig cfg = make_scenario(static_cast<int>(state.range(0)),
                                     parallel);
  Environment env(cfg);
  env.reset(42);
  Eigen::VectorXd noop = Eigen::VectorXd::Zero(3);
  for (auto _ : state) {
    if (env.episode_finished()) env.reset(42);
    benchmark::DoNotOptimize(env.step({noop}));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_StepSequential(benchmark::State& state) { step_bodies(state, false); }
void BM_StepParallel(benchmark::State& state) { step_bodies(state, true); }

BENCHMARK(BM_StepSequential)->Arg(1)->Arg(10)->Arg(100)->Arg(1000);
BENCHMARK(BM_StepParallel)->Arg(1)->Arg(10)->Arg(100)->Arg(1000);

// Raw integrator cost per body for context against the stepping overhead.
void BM_PropagateStep(benchmark::State& state) {
  BodyProperties props;
  props.dry_mass = 150.0;
  props.radius = 1.0;
  ForceConfig cfg;
  cfg.enable_j2 = true;
  cfg.enable_drag = true;
  PropState s{Eigen::Vector3d(7.0e6, 0.0, 0.0),
              Eigen::Vector3d(0.0, 7546.0533216632665, 0.0), 150.0, 0.0};
  for (auto _ : state) {
    PropagationResult r = propagate(s, 60.0, 60.0, {}, props, cfg);
    benchmark::DoNotOptimize(r);
    s = r.states.back();
    s.t = 0.0;
  }
}
BENCHMARK(BM_PropagateStep);

}  // namespace

BENCHMARK_MAIN();
