#include "apsis/ephemeris.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "apsis/rng.hpp"

namespace apsis {
namespace {

const char* kCsvHeader = "epoch_iso,x_m,y_m,z_m,vx_mps,vy_mps,vz_mps";

std::string line_error(std::size_t line, const std::string& what) {
  return "ephemeris line " + std::to_string(line) + ": " + what;
}

double parse_number(const std::string& field, std::size_t line) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double value = std::strtod(begin, &end);
  while (end && *end != '\0' && std::isspace(static_cast<unsigned char>(*end)))
    ++end;
  if (end == begin || (end && *end != '\0') || !std::isfinite(value)) {
    throw std::runtime_error(line_error(line, "bad number '" + field + "'"));
  }
  return value;
}

std::vector<std::string> split_csv(const std::string& row) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : row) {
    if (c == ',') {
      fields.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(current);
  return fields;
}

void check_monotone(const std::vector<EphemerisRecord>& records,
                    std::size_t line_of_last) {
  const std::size_t n = records.size();
  if (n >= 2 && records[n - 1].t <= records[n - 2].t) {
    throw std::runtime_error(line_error(line_of_last, "non-monotone epoch"));
  }
}

std::string format_row(const PropState& s, double base) {
  char buf[512];
  const std::string epoch = format_epoch_iso(base + s.t);
  std::snprintf(buf, sizeof buf,
                "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", epoch.c_str(),
                s.r.x(), s.r.y(), s.r.z(), s.v.x(), s.v.y(), s.v.z());
  return buf;
}

}  // namespace

double parse_epoch_iso(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0, consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &y, &mo, &d, &h,
                  &mi, &s, &consumed) != 6) {
    throw std::runtime_error("bad epoch '" + text + "'");
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 60 ||
      h < 0 || mi < 0 || s < 0) {
    throw std::runtime_error("bad epoch '" + text + "'");
  }
  const char* p = text.c_str() + consumed;
  double frac = 0.0;
  if (*p == '.') {
    ++p;
    if (!std::isdigit(static_cast<unsigned char>(*p))) {
      throw std::runtime_error("bad epoch '" + text + "'");
    }
    double scale = 0.1;
    while (std::isdigit(static_cast<unsigned char>(*p))) {
      frac += (*p - '0') * scale;
      scale *= 0.1;
      ++p;
    }
  }
  if (*p != 'Z' || *(p + 1) != '\0') {
    throw std::runtime_error("bad epoch '" + text + "'");
  }
  std::tm tm{};
  tm.tm_year = y - 1900;
  tm.tm_mon = mo - 1;
  tm.tm_mday = d;
  tm.tm_hour = h;
  tm.tm_min = mi;
  tm.tm_sec = s;
  return static_cast<double>(timegm(&tm)) + frac;
}

std::string format_epoch_iso(double t) {
  if (!std::isfinite(t)) throw std::invalid_argument("non-finite epoch");
  long long micro_total = std::llround(t * 1e6);
  long long sec = micro_total / 1000000;
  long long micro = micro_total % 1000000;
  if (micro < 0) {
    micro += 1000000;
    sec -= 1;
  }
  std::tm tm{};
  const time_t ts = static_cast<time_t>(sec);
  gmtime_r(&ts, &tm);
  char buf[64];
  if (micro == 0) {
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ",
                  tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                  tm.tm_min, tm.tm_sec);
    return buf;
  }
  char frac[8];
  std::snprintf(frac, sizeof frac, "%06lld", micro);
  std::string f(frac);
  while (!f.empty() && f.back() == '0') f.pop_back();
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%sZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec, f.c_str());
  return buf;
}

std::vector<EphemerisRecord> parse_ephemeris(const std::string& text) {
  std::istringstream in(text);
  std::string row;
  std::vector<EphemerisRecord> records;
  std::size_t line = 0;
  bool saw_header = false;
  while (std::getline(in, row)) {
    ++line;
    if (!row.empty() && row.back() == '\r') row.pop_back();
    if (row.empty()) continue;
    if (!saw_header) {
      if (row != kCsvHeader) {
        throw std::runtime_error(line_error(line, "missing or bad header"));
      }
      saw_header = true;
      continue;
    }
    const std::vector<std::string> fields = split_csv(row);
    if (fields.size() != 7) {
      throw std::runtime_error(
          line_error(line, "expected 7 fields, got " +
                               std::to_string(fields.size())));
    }
    EphemerisRecord rec;
    try {
      rec.t = parse_epoch_iso(fields[0]);
    } catch (const std::exception& e) {
      throw std::runtime_error(line_error(line, e.what()));
    }
    rec.epoch_iso = fields[0];
    for (int k = 0; k < 3; ++k) rec.r[k] = parse_number(fields[1 + k], line);
    for (int k = 0; k < 3; ++k) rec.v[k] = parse_number(fields[4 + k], line);
    records.push_back(std::move(rec));
    check_monotone(records, line);
  }
  if (!saw_header) {
    throw std::runtime_error("ephemeris: empty input, header required");
  }
  return records;
}

std::string export_trajectory(const std::vector<PropState>& states,
                              const std::string& epoch0) {
  if (states.empty()) {
    throw std::invalid_argument("export_trajectory: no states");
  }
  const double base = parse_epoch_iso(epoch0);
  std::string out = kCsvHeader;
  out.push_back('\n');
  for (const PropState& s : states) {
    out += format_row(s, base);
    out.push_back('\n');
  }
  return out;
}

std::vector<EphemerisRecord> parse_ephemeris_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("ephemeris json: ") + e.what());
  }
  if (!doc.is_array()) {
    throw std::runtime_error("ephemeris json: top level must be an array");
  }
  std::vector<EphemerisRecord> records;
  std::size_t index = 0;
  for (const auto& row : doc) {
    ++index;
    if (!row.is_object()) {
      throw std::runtime_error(line_error(index, "row must be an object"));
    }
    static const char* keys[] = {"epoch_iso", "x_m",    "y_m",    "z_m",
                                 "vx_mps",    "vy_mps", "vz_mps"};
    for (const char* key : keys) {
      if (!row.contains(key)) {
        throw std::runtime_error(
            line_error(index, std::string("missing key ") + key));
      }
    }
    EphemerisRecord rec;
    rec.epoch_iso = row.at("epoch_iso").get<std::string>();
    try {
      rec.t = parse_epoch_iso(rec.epoch_iso);
    } catch (const std::exception& e) {
      throw std::runtime_error(line_error(index, e.what()));
    }
    rec.r = Eigen::Vector3d(row.at("x_m").get<double>(),
                            row.at("y_m").get<double>(),
                            row.at("z_m").get<double>());
    rec.v = Eigen::Vector3d(row.at("vx_mps").get<double>(),
                            row.at("vy_mps").get<double>(),
                            row.at("vz_mps").get<double>());
    records.push_back(std::move(rec));
    check_monotone(records, index);
  }
  return records;
}

std::string export_trajectory_json(const std::vector<PropState>& states,
                                   const std::string& epoch0) {
  if (states.empty()) {
    throw std::invalid_argument("export_trajectory_json: no states");
  }
  const double base = parse_epoch_iso(epoch0);
  nlohmann::json doc = nlohmann::json::array();
  for (const PropState& s : states) {
    doc.push_back({{"epoch_iso", format_epoch_iso(base + s.t)},
                   {"x_m", s.r.x()},
                   {"y_m", s.r.y()},
                   {"z_m", s.r.z()},
                   {"vx_mps", s.v.x()},
                   {"vy_mps", s.v.y()},
                   {"vz_mps", s.v.z()}});
  }
  return doc.dump(2);
}

ResidualSeries residual_series(const std::vector<EphemerisRecord>& a,
                               const std::vector<EphemerisRecord>& b) {
  ResidualSeries series;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const double d = a[i].t - b[j].t;
    if (std::abs(d) <= kEpochAlignTol) {
      series.points.push_back({a[i].t, (a[i].r - b[j].r).norm()});
      ++i;
      ++j;
    } else if (d < 0.0) {
      ++i;
    } else {
      ++j;
    }
  }
  return series;
}

double rmse(const ResidualSeries& series) {
  if (series.points.empty()) throw std::invalid_argument("rmse: empty series");
  double sum = 0.0;
  for (const ResidualPoint& p : series.points) sum += p.residual * p.residual;
  return std::sqrt(sum / static_cast<double>(series.points.size()));
}

double mape(const std::vector<EphemerisRecord>& sim,
            const std::vector<EphemerisRecord>& ref) {
  double sum = 0.0;
  std::size_t n = 0;
  std::size_t i = 0, j = 0;
  while (i < sim.size() && j < ref.size()) {
    const double d = sim[i].t - ref[j].t;
    if (std::abs(d) <= kEpochAlignTol) {
      const double rn = ref[j].r.norm();
      if (!(rn > 0.0)) {
        throw std::invalid_argument("mape: zero reference position");
      }
      sum += (sim[i].r - ref[j].r).norm() / rn;
      ++n;
      ++i;
      ++j;
    } else if (d < 0.0) {
      ++i;
    } else {
      ++j;
    }
  }
  if (n == 0) throw std::invalid_argument("mape: empty overlap");
  return 100.0 * sum / static_cast<double>(n);
}

OverlapScenarios overlap_scenarios(
    const std::vector<EphemerisRecord>& file1,
    const std::vector<EphemerisRecord>& file2,
    const std::vector<EphemerisRecord>& propagated) {
  OverlapScenarios out;
  out.full_vs_file1 = residual_series(propagated, file1);
  out.full_vs_file1.label = "full_vs_file1";

  std::vector<EphemerisRecord> late;
  if (!propagated.empty()) {
    const double mid =
        0.5 * (propagated.front().t + propagated.back().t);
    for (const EphemerisRecord& rec : propagated) {
      if (rec.t >= mid - kEpochAlignTol) late.push_back(rec);
    }
  }
  out.second_half_vs_file2 = residual_series(late, file2);
  out.second_half_vs_file2.label = "second_half_vs_file2";

  out.file_overlap = residual_series(file1, file2);
  out.file_overlap.label = "file_overlap";
  return out;
}

std::vector<EphemerisRecord> resample_records(
    const std::vector<EphemerisRecord>& records,
    const std::vector<double>& epochs) {
  if (records.size() < 2) {
    throw std::invalid_argument("resample_records: need at least 2 records");
  }
  std::vector<EphemerisRecord> out;
  out.reserve(epochs.size());
  for (double t : epochs) {
    if (t < records.front().t - kEpochAlignTol ||
        t > records.back().t + kEpochAlignTol) {
      throw std::out_of_range("resample_records: epoch outside record span");
    }
    auto it = std::lower_bound(
        records.begin(), records.end(), t,
        [](const EphemerisRecord& rec, double value) { return rec.t < value; });
    if (it != records.end() && std::abs(it->t - t) <= kEpochAlignTol) {
      out.push_back(*it);
      continue;
    }
    if (it != records.begin() &&
        std::abs(std::prev(it)->t - t) <= kEpochAlignTol) {
      out.push_back(*std::prev(it));
      continue;
    }
    const EphemerisRecord& hi = *it;
    const EphemerisRecord& lo = *std::prev(it);
    const double w = (t - lo.t) / (hi.t - lo.t);
    EphemerisRecord rec;
    rec.t = t;
    rec.epoch_iso = format_epoch_iso(t);
    rec.r = (1.0 - w) * lo.r + w * hi.r;
    rec.v = (1.0 - w) * lo.v + w * hi.v;
    out.push_back(std::move(rec));
  }
  return out;
}

std::string validation_report_json(const ValidationReport& report) {
  nlohmann::json doc;
  doc["satellite_id"] = report.satellite_id;
  doc["horizon_s"] = report.horizon_s;
  doc["step_count"] = report.step_count;
  doc["rmse_m"] = report.rmse_m;
  doc["mape_pct"] = report.mape_pct;
  nlohmann::json scenarios = nlohmann::json::object();
  for (const ResidualSeries& series : report.scenarios) {
    nlohmann::json points = nlohmann::json::array();
    for (const ResidualPoint& p : series.points) {
      points.push_back({p.t, p.residual});
    }
    scenarios[series.label.empty() ? "series" : series.label] =
        std::move(points);
  }
  doc["scenarios"] = std::move(scenarios);
  return doc.dump(2);
}

namespace {

// Ballistic flight from the first reference state, sampled at each
// reference epoch. Returns positions in reference order.
std::vector<Eigen::Vector3d> fly_candidate(
    const std::vector<EphemerisRecord>& reference, const TuneCandidate& cand,
    const BodyProperties& base_props, const ForceConfig& base_cfg,
    double max_substep) {
  BodyProperties props = base_props;
  props.cd = cand.cd;
  props.cr = cand.cr;
  props.radius = cand.radius;
  ForceConfig cfg = base_cfg;
  cfg.enable_j2 = cand.enable_j2;

  PropState s;
  s.r = reference.front().r;
  s.v = reference.front().v;
  s.m = props.dry_mass;
  s.t = 0.0;

  std::vector<Eigen::Vector3d> positions;
  positions.reserve(reference.size());
  positions.push_back(s.r);
  const Eigen::Vector3d no_thrust = Eigen::Vector3d::Zero();
  for (std::size_t k = 1; k < reference.size(); ++k) {
    const double gap = reference[k].t - reference[k - 1].t;
    const int n = std::max(1, static_cast<int>(std::ceil(gap / max_substep)));
    const double h = gap / n;
    for (int sub = 0; sub < n; ++sub) {
      s = rk4_step(s, h, no_thrust, props, cfg).state;
    }
    positions.push_back(s.r);
  }
  return positions;
}

double candidate_rmse(const std::vector<EphemerisRecord>& reference,
                      const std::vector<Eigen::Vector3d>& positions) {
  double sum = 0.0;
  for (std::size_t k = 0; k < reference.size(); ++k) {
    sum += (positions[k] - reference[k].r).squaredNorm();
  }
  const double value = std::sqrt(sum / static_cast<double>(reference.size()));
  return std::isfinite(value) ? value
                              : std::numeric_limits<double>::infinity();
}

}  // namespace

TuneResult tune_parameters(const std::vector<EphemerisRecord>& reference,
                           const TuneSpace& space, std::size_t budget,
                           const BodyProperties& base_props,
                           const ForceConfig& base_cfg, std::uint64_t seed,
                           double max_substep) {
  if (reference.size() < 2) {
    throw std::invalid_argument("tune_parameters: reference needs >= 2 steps");
  }
  if (space.cd.empty() || space.cr.empty() || space.radius.empty() ||
      space.j2_flag.empty()) {
    throw std::invalid_argument("tune_parameters: empty search space");
  }
  if (budget == 0) {
    throw std::invalid_argument("tune_parameters: zero budget");
  }
  if (!(base_props.dry_mass > 0.0)) {
    throw std::invalid_argument("tune_parameters: non-positive mass");
  }
  if (!(max_substep > 0.0)) {
    throw std::invalid_argument("tune_parameters: bad substep");
  }

  // Grid sweep in fixed nesting order, truncated at the budget.
  std::vector<TuneCandidate> candidates;
  for (double cd : space.cd) {
    for (double cr : space.cr) {
      for (double radius : space.radius) {
        for (bool j2 : space.j2_flag) {
          if (candidates.size() >= budget) break;
          candidates.push_back({cd, cr, radius, j2});
        }
      }
    }
  }

  // Uniform refinement inside the axis ranges for any leftover budget.
  auto axis_range = [](const std::vector<double>& axis) {
    auto [lo, hi] = std::minmax_element(axis.begin(), axis.end());
    return std::pair<double, double>(*lo, *hi);
  };
  const auto [cd_lo, cd_hi] = axis_range(space.cd);
  const auto [cr_lo, cr_hi] = axis_range(space.cr);
  const auto [ra_lo, ra_hi] = axis_range(space.radius);
  Rng rng(Rng::derive(seed, "tune_parameters"));
  while (candidates.size() < budget) {
    TuneCandidate cand;
    cand.cd = rng.uniform(cd_lo, cd_hi);
    cand.cr = rng.uniform(cr_lo, cr_hi);
    cand.radius = rng.uniform(ra_lo, ra_hi);
    cand.enable_j2 = space.j2_flag[rng.uniform_int(
        static_cast<int>(space.j2_flag.size()))];
    candidates.push_back(cand);
  }

  std::vector<double> scores(candidates.size(),
                             std::numeric_limits<double>::infinity());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= candidates.size()) return;
      try {
        scores[i] = candidate_rmse(
            reference, fly_candidate(reference, candidates[i], base_props,
                                     base_cfg, max_substep));
      } catch (const std::exception&) {
        // A deorbiting or diverging candidate simply loses.
      }
    }
  };
  unsigned n_threads = std::thread::hardware_concurrency();
  n_threads = std::max(1u, std::min<unsigned>(n_threads, candidates.size()));
  std::vector<std::thread> pool;
  for (unsigned k = 0; k < n_threads; ++k) pool.emplace_back(worker);
  for (std::thread& th : pool) th.join();

  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] < scores[best]) best = i;
  }
  if (!std::isfinite(scores[best])) {
    throw std::runtime_error("tune_parameters: no candidate propagated");
  }

  TuneResult result;
  result.best = candidates[best];
  result.evaluated = candidates.size();

  const std::vector<Eigen::Vector3d> positions = fly_candidate(
      reference, result.best, base_props, base_cfg, max_substep);
  std::vector<EphemerisRecord> sim;
  sim.reserve(reference.size());
  for (std::size_t k = 0; k < reference.size(); ++k) {
    EphemerisRecord rec = reference[k];
    rec.r = positions[k];
    sim.push_back(std::move(rec));
  }
  ResidualSeries series = residual_series(sim, reference);
  series.label = "tuned_vs_reference";

  result.report.horizon_s = reference.back().t - reference.front().t;
  result.report.step_count = reference.size();
  result.report.rmse_m = scores[best];
  result.report.mape_pct = mape(sim, reference);
  result.report.scenarios.push_back(std::move(series));
  return result;
}

}  // namespace apsis
