// Trajectory file exchange, residual metrics, and drag-parameter fitting.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "apsis/dynamics.hpp"

namespace apsis {

// Two epochs are considered the same sample point within this window.
inline constexpr double kEpochAlignTol = 1e-6;  // s

struct EphemerisRecord {
  std::string epoch_iso;            // UTC, e.g. 2026-03-01T12:00:00.250Z
  double t = 0.0;                   // seconds since the Unix epoch
  Eigen::Vector3d r = Eigen::Vector3d::Zero();  // m
  Eigen::Vector3d v = Eigen::Vector3d::Zero();  // m/s
};

// ISO-8601 UTC with optional fractional seconds and mandatory Z suffix.
// Formatting keeps microsecond precision and trims trailing zeros.
double parse_epoch_iso(const std::string& text);
std::string format_epoch_iso(double t);

// CSV with header epoch_iso,x_m,y_m,z_m,vx_mps,vy_mps,vz_mps. Parse errors
// carry the offending line number; epochs must strictly increase.
std::vector<EphemerisRecord> parse_ephemeris(const std::string& text);

// States become rows at epoch0 + state.t. Values are printed with enough
// digits that parse followed by export is byte-stable. Throws on empty input.
std::string export_trajectory(const std::vector<PropState>& states,
                              const std::string& epoch0);

// JSON variant: an array of objects with the CSV columns as keys.
std::vector<EphemerisRecord> parse_ephemeris_json(const std::string& text);
std::string export_trajectory_json(const std::vector<PropState>& states,
                                   const std::string& epoch0);

struct ResidualPoint {
  double t = 0.0;         // epoch, s
  double residual = 0.0;  // |r_a - r_b|, m
};

struct ResidualSeries {
  std::string label;
  std::vector<ResidualPoint> points;
};

// Position residuals at epochs present in both series (within the alignment
// window); samples missing from either side are skipped.
ResidualSeries residual_series(const std::vector<EphemerisRecord>& a,
                               const std::vector<EphemerisRecord>& b);

// Quadratic mean of the residuals. Throws on an empty series.
double rmse(const ResidualSeries& series);

// Mean over the epoch overlap of |r_sim - r_ref| / |r_ref|, in percent.
double mape(const std::vector<EphemerisRecord>& sim,
            const std::vector<EphemerisRecord>& ref);

struct OverlapScenarios {
  ResidualSeries full_vs_file1;        // propagated against the first file
  ResidualSeries second_half_vs_file2; // late half of propagated vs second
  ResidualSeries file_overlap;         // first file against the second
};

OverlapScenarios overlap_scenarios(const std::vector<EphemerisRecord>& file1,
                                   const std::vector<EphemerisRecord>& file2,
                                   const std::vector<EphemerisRecord>& propagated);

// Linear resampling of r and v onto the requested epochs. Epochs outside
// the record span are refused; exact matches pass records through.
std::vector<EphemerisRecord> resample_records(
    const std::vector<EphemerisRecord>& records,
    const std::vector<double>& epochs);

struct ValidationReport {
  std::string satellite_id;
  double horizon_s = 0.0;
  std::size_t step_count = 0;
  double rmse_m = 0.0;
  double mape_pct = 0.0;
  std::vector<ResidualSeries> scenarios;
};

std::string validation_report_json(const ValidationReport& report);

struct TuneCandidate {
  double cd = 2.2;
  double cr = 1.0;
  double radius = 1.0;   // m
  bool enable_j2 = false;
};

// Axis value lists; the grid is their Cartesian product.
struct TuneSpace {
  std::vector<double> cd;
  std::vector<double> cr;
  std::vector<double> radius;
  std::vector<bool> j2_flag;
};

struct TuneResult {
  TuneCandidate best;
  ValidationReport report;
  std::size_t evaluated = 0;
};

// Fits drag/reflectivity parameters against a reference trajectory. Each
// candidate propagates ballistically from the first reference state and is
// scored by position RMSE at the reference epochs. The grid is swept first
// (candidate order fixed); leftover budget draws uniform samples from the
// axis ranges, deterministically under the seed. Ties keep the earliest
// candidate. Candidate evaluations run concurrently.
TuneResult tune_parameters(const std::vector<EphemerisRecord>& reference,
                           const TuneSpace& space, std::size_t budget,
                           const BodyProperties& base_props,
                           const ForceConfig& base_cfg,
                           std::uint64_t seed = 0, double max_substep = 60.0);

}  // namespace apsis
