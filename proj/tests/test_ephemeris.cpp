#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "apsis/dynamics.hpp"
#include "apsis/ephemeris.hpp"
#include "apsis/frames.hpp"

using namespace apsis;

namespace {

const char* kEpoch0 = "2026-03-01T12:00:00Z";

std::vector<PropState> circular_leo_states(int n, double step,
                                           const ForceConfig& cfg,
                                           const BodyProperties& props,
                                           double altitude) {
  PropState s;
  const double r0 = kEarthRadius + altitude;
  s.r = Eigen::Vector3d(r0, 0.0, 0.0);
  s.v = Eigen::Vector3d(0.0, std::sqrt(cfg.mu / r0), 0.0);
  s.m = props.dry_mass;
  std::vector<PropState> states{s};
  const Eigen::Vector3d no_thrust = Eigen::Vector3d::Zero();
  for (int k = 1; k < n; ++k) {
    s = rk4_step(s, step, no_thrust, props, cfg).state;
    states.push_back(s);
  }
  return states;
}

std::vector<EphemerisRecord> to_records(const std::vector<PropState>& states) {
  return parse_ephemeris(export_trajectory(states, kEpoch0));
}

}  // namespace

TEST_CASE("ISO epochs roundtrip at microsecond precision") {
  const double t0 = parse_epoch_iso("2026-03-01T12:00:00Z");
  CHECK(format_epoch_iso(t0) == "2026-03-01T12:00:00Z");
  CHECK(parse_epoch_iso("2026-03-01T12:00:01Z") == doctest::Approx(t0 + 1.0));
  CHECK(parse_epoch_iso("2026-03-01T12:00:00.25Z") ==
        doctest::Approx(t0 + 0.25));
  CHECK(format_epoch_iso(t0 + 0.25) == "2026-03-01T12:00:00.25Z");
  CHECK(format_epoch_iso(t0 + 0.000001) == "2026-03-01T12:00:00.000001Z");
  // Day rollover.
  CHECK(format_epoch_iso(parse_epoch_iso("2026-02-28T23:59:59Z") + 1.0) ==
        "2026-03-01T00:00:00Z");

  CHECK_THROWS_AS((void)parse_epoch_iso("2026-03-01 12:00:00Z"),
                  std::runtime_error);
  CHECK_THROWS_AS((void)parse_epoch_iso("2026-03-01T12:00:00"),
                  std::runtime_error);
  CHECK_THROWS_AS((void)parse_epoch_iso("2026-13-01T12:00:00Z"),
                  std::runtime_error);
  CHECK_THROWS_AS((void)parse_epoch_iso("2026-03-01T12:00:00.Z"),
                  std::runtime_error);
}

TEST_CASE("parse accepts the documented header and one row") {
  const std::string text =
      "epoch_iso,x_m,y_m,z_m,vx_mps,vy_mps,vz_mps\n"
      "2026-03-01T12:00:00Z,7000000,0,0,0,7546.05,0\n";
  const std::vector<EphemerisRecord> recs = parse_ephemeris(text);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].epoch_iso == "2026-03-01T12:00:00Z");
  CHECK(recs[0].r.x() == 7000000.0);
  CHECK(recs[0].v.y() == 7546.05);
}

TEST_CASE("parse errors carry the offending line number") {
  const std::string header = "epoch_iso,x_m,y_m,z_m,vx_mps,vy_mps,vz_mps\n";

  try {
    (void)parse_ephemeris(header + "2026-03-01T12:00:00Z,1,2,3,4,5\n");
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("7 fields") != std::string::npos);
  }

  try {
    (void)parse_ephemeris(header +
                          "2026-03-01T12:00:00Z,1,2,3,4,5,6\n"
                          "2026-03-01T12:00:00Z,1,2,3,4,5,6\n");
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("non-monotone") != std::string::npos);
  }

  try {
    (void)parse_ephemeris(header + "2026-03-01T12:00:00Z,1,2,junk,4,5,6\n");
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  CHECK_THROWS_AS((void)parse_ephemeris("x_m,y_m\n1,2\n"), std::runtime_error);
  CHECK_THROWS_AS((void)parse_ephemeris(""), std::runtime_error);
}

TEST_CASE("export then parse preserves every state bit-for-bit") {
  BodyProperties props;
  props.dry_mass = 120.0;
  ForceConfig cfg;
  cfg.mu = kMuEarth;
  cfg.enable_j2 = true;
  cfg.j2 = kJ2Earth;
  const std::vector<PropState> states =
      circular_leo_states(1000, 30.0, cfg, props, 550e3);

  const std::string text = export_trajectory(states, kEpoch0);
  const std::vector<EphemerisRecord> recs = parse_ephemeris(text);
  REQUIRE(recs.size() == states.size());
  double worst = 0.0;
  const double base = parse_epoch_iso(kEpoch0);
  for (std::size_t k = 0; k < recs.size(); ++k) {
    worst = std::max(worst, (recs[k].r - states[k].r).norm());
    CHECK(recs[k].v == states[k].v);
    CHECK(std::abs(recs[k].t - (base + states[k].t)) < kEpochAlignTol);
  }
  CHECK(worst < 1e-6);
  CHECK(worst == 0.0);

  CHECK_THROWS_AS((void)export_trajectory({}, kEpoch0), std::invalid_argument);
}

TEST_CASE("export is byte-stable across reparse cycles") {
  BodyProperties props;
  props.dry_mass = 80.0;
  ForceConfig cfg;
  cfg.mu = kMuEarth;
  const std::vector<PropState> states =
      circular_leo_states(50, 17.5, cfg, props, 700e3);

  const std::string text1 = export_trajectory(states, kEpoch0);
  std::vector<PropState> replay;
  for (const EphemerisRecord& rec : parse_ephemeris(text1)) {
    PropState s;
    s.r = rec.r;
    s.v = rec.v;
    s.t = rec.t - parse_epoch_iso(kEpoch0);
    replay.push_back(s);
  }
  const std::string text2 = export_trajectory(replay, kEpoch0);
  CHECK(text1 == text2);
}

TEST_CASE("json variant mirrors the csv fields") {
  BodyProperties props;
  props.dry_mass = 80.0;
  ForceConfig cfg;
  cfg.mu = kMuEarth;
  const std::vector<PropState> states =
      circular_leo_states(5, 60.0, cfg, props, 600e3);

  const std::string text = export_trajectory_json(states, kEpoch0);
  const std::vector<EphemerisRecord> recs = parse_ephemeris_json(text);
  const std::vector<EphemerisRecord> csv = to_records(states);
  REQUIRE(recs.size() == csv.size());
  for (std::size_t k = 0; k < recs.size(); ++k) {
    CHECK(recs[k].r == csv[k].r);
    CHECK(recs[k].v == csv[k].v);
    CHECK(recs[k].epoch_iso == csv[k].epoch_iso);
  }

  CHECK_THROWS_AS((void)parse_ephemeris_json("{\"a\": 1}"),
                  std::runtime_error);
  CHECK_THROWS_AS((void)parse_ephemeris_json("[{\"epoch_iso\": \"x\"}]"),
                  std::runtime_error);
}

TEST_CASE("residual series matches a hand loop") {
  BodyProperties props;
  props.dry_mass = 80.0;
  ForceConfig cfg;
  cfg.mu = kMuEarth;
  const std::vector<EphemerisRecord> a =
      to_records(circular_leo_states(40, 60.0, cfg, props, 620e3));

  SUBCASE("identical series give zero residuals") {
    const ResidualSeries series = residual_series(a, a);
    REQUIRE(series.points.size() == a.size());
    for (const ResidualPoint& p : series.points) CHECK(p.residual == 0.0);
  }

  SUBCASE("constant x offset shows up verbatim") {
    std::vector<EphemerisRecord> b = a;
    for (EphemerisRecord& rec : b) rec.r.x() += 5.0;
    const ResidualSeries series = residual_series(a, b);
    REQUIRE(series.points.size() == a.size());
    for (const ResidualPoint& p : series.points) {
      CHECK(p.residual == doctest::Approx(5.0).epsilon(1e-12));
    }
  }

  SUBCASE("random perturbation matches direct norms") {
    std::mt19937_64 gen(71001);
    std::normal_distribution<double> n(0.0, 25.0);
    std::vector<EphemerisRecord> b = a;
    for (EphemerisRecord& rec : b) {
      rec.r += Eigen::Vector3d(n(gen), n(gen), n(gen));
    }
    const ResidualSeries series = residual_series(a, b);
    REQUIRE(series.points.size() == a.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(series.points[k].residual ==
            doctest::Approx((a[k].r - b[k].r).norm()).epsilon(1e-14));
    }
  }

  SUBCASE("partial overlap keeps only shared epochs") {
    const std::vector<EphemerisRecord> tail(a.begin() + 10, a.end());
    const ResidualSeries series = residual_series(a, tail);
    CHECK(series.points.size() == a.size() - 10);
    CHECK(series.points.front().t == doctest::Approx(tail.front().t));
  }
}

TEST_CASE("rmse arithmetic") {
  ResidualSeries zeros;
  zeros.points = {{0.0, 0.0}, {1.0, 0.0}, {2.0, 0.0}};
  CHECK(rmse(zeros) == 0.0);

  ResidualSeries fives;
  fives.points = {{0.0, 5.0}, {1.0, 5.0}};
  CHECK(rmse(fives) == doctest::Approx(5.0).epsilon(1e-15));

  ResidualSeries pair;
  pair.points = {{0.0, 3.0}, {1.0, 4.0}};
  CHECK(rmse(pair) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));

  CHECK_THROWS_AS((void)rmse(ResidualSeries{}), std::invalid_argument);

  // Concatenation lands between the component quadratic means.
  ResidualSeries both;
  both.points = pair.points;
  both.points.insert(both.points.end(), fives.points.begin(),
                     fives.points.end());
  const double lo = std::min(rmse(pair), rmse(fives));
  const double hi = std::max(rmse(pair), rmse(fives));
  CHECK(rmse(both) >= lo);
  CHECK(rmse(both) <= hi);
}

TEST_CASE("mape measures relative position error in percent") {
  BodyProperties props;
  props.dry_mass = 80.0;
  ForceConfig cfg;
  cfg.mu = kMuEarth;
  const std::vector<EphemerisRecord> ref =
      to_records(circular_leo_states(30, 60.0, cfg, props, 640e3));

  CHECK(mape(ref, ref) == 0.0);

  std::vector<EphemerisRecord> inflated = ref;
  for (EphemerisRecord& rec : inflated) rec.r *= 1.001;
  CHECK(mape(inflated, ref) == doctest::Approx(0.1).epsilon(1e-10));

  std::mt19937_64 gen(71002);
  std::normal_distribution<double> n(0.0, 40.0);
  std::vector<EphemerisRecord> noisy = ref;
  double hand = 0.0;
  for (std::size_t k = 0; k < noisy.size(); ++k) {
    noisy[k].r += Eigen::Vector3d(n(gen), n(gen), n(gen));
    hand += (noisy[k].r - ref[k].r).norm() / ref[k].r.norm();
  }
  hand *= 100.0 / static_cast<double>(ref.size());
  CHECK(mape(noisy, ref) == doctest::Approx(hand).epsilon(1e-13));

  CHECK_THROWS_AS((void)mape({}, ref), std::invalid_argument);
}

TEST_CASE("overlap scenarios cut the documented windows") {
  BodyProperties props;
  props.dry_mass = 80.0;
  ForceConfig cfg;
  cfg.mu = kMuEarth;
  // 32 steps of 60 s; the second file starts 16 steps in, so the file
  // overlap is records 16..31 of file1 and the second half of the
  // propagation is exactly file2's span.
  const std::vector<PropState> all =
      circular_leo_states(49, 60.0, cfg, props, 600e3);
  const std::vector<EphemerisRecord> propagated = to_records(all);
  const std::vector<EphemerisRecord> file1(propagated.begin(),
                                           propagated.begin() + 33);
  std::vector<EphemerisRecord> file2(propagated.begin() + 16,
                                     propagated.end());

  SUBCASE("self-consistent trio gives zero residuals everywhere") {
    const OverlapScenarios out = overlap_scenarios(file1, file2, propagated);
    CHECK(out.full_vs_file1.label == "full_vs_file1");
    CHECK(out.second_half_vs_file2.label == "second_half_vs_file2");
    CHECK(out.file_overlap.label == "file_overlap");

    REQUIRE(out.full_vs_file1.points.size() == file1.size());
    for (const ResidualPoint& p : out.full_vs_file1.points) {
      CHECK(p.residual == 0.0);
    }
    // Second half of 49 samples starts at index 24; file2 covers 16..48,
    // so the shared window is 24..48.
    CHECK(out.second_half_vs_file2.points.size() == 25);
    CHECK(out.second_half_vs_file2.points.front().t ==
          doctest::Approx(propagated[24].t));
    // Files share records 16..32.
    CHECK(out.file_overlap.points.size() == 17);
    CHECK(out.file_overlap.points.front().t ==
          doctest::Approx(propagated[16].t));
    for (const ResidualPoint& p : out.file_overlap.points) {
      CHECK(p.residual == 0.0);
    }
  }

  SUBCASE("offsets in the second file appear only in its windows") {
    for (EphemerisRecord& rec : file2) rec.r.z() += 2.5;
    const OverlapScenarios out = overlap_scenarios(file1, file2, propagated);
    for (const ResidualPoint& p : out.full_vs_file1.points) {
      CHECK(p.residual == 0.0);
    }
    for (const ResidualPoint& p : out.second_half_vs_file2.points) {
      CHECK(p.residual == doctest::Approx(2.5).epsilon(1e-12));
    }
    for (const ResidualPoint& p : out.file_overlap.points) {
      CHECK(p.residual == doctest::Approx(2.5).epsilon(1e-12));
    }
  }
}

TEST_CASE("linear resampling recovers midpoints and refuses extrapolation") {
  std::vector<EphemerisRecord> recs(3);
  const double base = parse_epoch_iso(kEpoch0);
  for (int k = 0; k < 3; ++k) {
    recs[k].t = base + 10.0 * k;
    recs[k].epoch_iso = format_epoch_iso(recs[k].t);
    recs[k].r = Eigen::Vector3d(100.0 * k, -50.0 * k, 7.0);
    recs[k].v = Eigen::Vector3d(1.0 * k, 2.0 * k, 3.0);
  }

  const std::vector<EphemerisRecord> out =
      resample_records(recs, {base, base + 5.0, base + 15.0, base + 20.0});
  REQUIRE(out.size() == 4);
  CHECK(out[0].r == recs[0].r);
  CHECK(out[1].r == Eigen::Vector3d(50.0, -25.0, 7.0));
  CHECK(out[1].v == Eigen::Vector3d(0.5, 1.0, 3.0));
  CHECK(out[2].r == Eigen::Vector3d(150.0, -75.0, 7.0));
  CHECK(out[3].r == recs[2].r);

  CHECK_THROWS_AS((void)resample_records(recs, {base - 1.0}),
                  std::out_of_range);
  CHECK_THROWS_AS((void)resample_records(recs, {base + 21.0}),
                  std::out_of_range);
}

TEST_CASE("tuner recovers a planted drag coefficient") {
  BodyProperties props;
  props.dry_mass = 100.0;
  props.cd = 2.0;
  props.cr = 1.0;
  props.radius = 1.0;
  ForceConfig cfg;
  cfg.mu = kMuEarth;
  cfg.enable_drag = true;

  // Reference flight at 400 km where drag bites, 20 min at 60 s cadence.
  const std::vector<EphemerisRecord> reference =
      to_records(circular_leo_states(21, 60.0, cfg, props, 400e3));

  TuneSpace space;
  space.cd = {1.5, 2.0, 2.5};
  space.cr = {1.0};
  space.radius = {1.0};
  space.j2_flag = {false};

  BodyProperties guess = props;
  guess.cd = 0.0;  // candidate values override this
  const TuneResult result =
      tune_parameters(reference, space, 3, guess, cfg, 7, 60.0);
  CHECK(result.evaluated == 3);
  CHECK(result.best.cd == 2.0);
  CHECK(result.report.rmse_m < 1e-6);
  CHECK(result.report.mape_pct < 1e-10);
  CHECK(result.report.step_count == reference.size());
  CHECK(result.report.horizon_s == doctest::Approx(1200.0));

  // The generator beats a rival head-to-head.
  TuneSpace duel;
  duel.cd = {2.5, 2.0};
  duel.cr = {1.0};
  duel.radius = {1.0};
  duel.j2_flag = {false};
  const TuneResult fight =
      tune_parameters(reference, duel, 2, guess, cfg, 7, 60.0);
  CHECK(fight.best.cd == 2.0);

  // Single candidate comes back with its own score.
  TuneSpace solo;
  solo.cd = {2.2};
  solo.cr = {1.0};
  solo.radius = {1.0};
  solo.j2_flag = {false};
  const TuneResult one =
      tune_parameters(reference, solo, 1, guess, cfg, 7, 60.0);
  CHECK(one.evaluated == 1);
  CHECK(one.best.cd == 2.2);
  CHECK(one.report.rmse_m > 0.0);
}

TEST_CASE("tuner random refinement is deterministic under the seed") {
  BodyProperties props;
  props.dry_mass = 100.0;
  props.cd = 2.0;
  ForceConfig cfg;
  cfg.mu = kMuEarth;
  cfg.enable_drag = true;
  const std::vector<EphemerisRecord> reference =
      to_records(circular_leo_states(11, 60.0, cfg, props, 420e3));

  TuneSpace space;
  space.cd = {1.6, 2.4};
  space.cr = {1.0};
  space.radius = {1.0};
  space.j2_flag = {false};

  const TuneResult a = tune_parameters(reference, space, 8, props, cfg, 42);
  const TuneResult b = tune_parameters(reference, space, 8, props, cfg, 42);
  CHECK(a.evaluated == 8);
  CHECK(b.evaluated == 8);
  CHECK(a.best.cd == b.best.cd);
  CHECK(a.best.cr == b.best.cr);
  CHECK(a.best.radius == b.best.radius);
  CHECK(a.report.rmse_m == b.report.rmse_m);
  // Refinement samples stay inside the axis range and can beat the grid.
  CHECK(a.best.cd >= 1.6);
  CHECK(a.best.cd <= 2.4);

  const TuneResult c = tune_parameters(reference, space, 8, props, cfg, 43);
  CHECK((c.best.cd != a.best.cd || c.report.rmse_m != a.report.rmse_m));

  TuneSpace empty;
  CHECK_THROWS_AS(
      (void)tune_parameters(reference, empty, 4, props, cfg, 1),
      std::invalid_argument);
  CHECK_THROWS_AS((void)tune_parameters(reference, space, 0, props, cfg, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      (void)tune_parameters({reference[0]}, space, 4, props, cfg, 1),
      std::invalid_argument);
}

TEST_CASE("self validation of an exported scenario is exact") {
  BodyProperties props;
  props.dry_mass = 150.0;
  ForceConfig cfg;
  cfg.mu = kMuEarth;
  cfg.enable_j2 = true;
  cfg.j2 = kJ2Earth;
  cfg.enable_drag = true;
  const std::vector<PropState> states =
      circular_leo_states(100, 30.0, cfg, props, 500e3);

  const std::vector<EphemerisRecord> recs = to_records(states);
  const ResidualSeries self = residual_series(recs, recs);
  CHECK(rmse(self) < 1e-6);
  CHECK(mape(recs, recs) < 1e-10);
}

TEST_CASE("validation report serializes to json") {
  ValidationReport report;
  report.satellite_id = "sat-42";
  report.horizon_s = 600.0;
  report.step_count = 11;
  report.rmse_m = 1.25;
  report.mape_pct = 0.003;
  ResidualSeries series;
  series.label = "full_vs_file1";
  series.points = {{0.0, 0.5}, {60.0, 1.5}};
  report.scenarios.push_back(series);

  const std::string text = validation_report_json(report);
  CHECK(text.find("\"sat-42\"") != std::string::npos);
  CHECK(text.find("\"rmse_m\"") != std::string::npos);
  CHECK(text.find("\"full_vs_file1\"") != std::string::npos);
  CHECK(text.find("1.25") != std::string::npos);
}
