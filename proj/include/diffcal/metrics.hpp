#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffcal/lie.hpp"
#include "diffcal/methods.hpp"

namespace diffcal {

/// Per-axis aggregation into one scalar: root of the MEAN of the three
/// squared components. The division by 3 is the documented reading of
/// "RMSE" here; switching to root-sum-square is a one-line change in this
/// function only.
inline double rmse_over_axes(const Eigen::Vector3d& v) {
  return std::sqrt(v.squaredNorm() / 3.0);
}

struct CalibrationError {
  EulerAngles euler;                // degrees
  Eigen::Vector3d translation_cm = Eigen::Vector3d::Zero();
  double rot_rmse = 0.0;            // degrees
  double trans_rmse = 0.0;          // centimeters
};

/// Error transform estimate * gt^-1, decomposed into per-axis Euler degrees
/// and centimeter translation, with per-sample RMSEs across the three axes.
inline CalibrationError error_transform(const RigidTransform& estimate,
                                        const RigidTransform& gt) {
  const RigidTransform eps = compose(estimate, inverse(gt));
  CalibrationError err;
  err.euler = euler_from_rotation(eps);
  err.translation_cm = eps.translation * 100.0;
  err.rot_rmse = rmse_over_axes(err.euler.to_vector());
  err.trans_rmse = rmse_over_axes(err.translation_cm);
  return err;
}

struct RunRecord {
  int sample_id = 0;
  MethodKind method = MethodKind::Single;
  std::vector<CalibrationError> errors_by_step;  // one per function evaluation
  CalibrationError final_error;
  bool flagged = false;
};

struct ThresholdRates {
  double rate_3deg3cm = 0.0;  // percent
  double rate_5deg5cm = 0.0;  // percent
};

/// Fraction of errors with rotation AND translation RMSE strictly below the
/// thresholds (3 deg / 3 cm and 5 deg / 5 cm). Boundary values are excluded.
inline ThresholdRates threshold_rates(const std::vector<CalibrationError>& errors) {
  if (errors.empty()) {
    throw std::invalid_argument("threshold_rates: empty error list");
  }
  int n3 = 0, n5 = 0;
  for (const CalibrationError& e : errors) {
    if (e.rot_rmse < 3.0 && e.trans_rmse < 3.0) ++n3;
    if (e.rot_rmse < 5.0 && e.trans_rmse < 5.0) ++n5;
  }
  const double total = static_cast<double>(errors.size());
  return {100.0 * n3 / total, 100.0 * n5 / total};
}

/// Iteration indices (1-based) the stability metric inspects.
inline constexpr int kStabilityCheckpoints[3] = {2, 5, 10};

/// Percent of records whose rotation and translation RMSE both decrease
/// monotonically (non-strictly) across evaluations 2, 5 and 10.
inline double stability_rho(const std::vector<RunRecord>& records) {
  if (records.empty()) {
    throw std::invalid_argument("stability_rho: empty record list");
  }
  int stable = 0;
  for (const RunRecord& rec : records) {
    if (rec.errors_by_step.size() <
        static_cast<std::size_t>(kStabilityCheckpoints[2])) {
      throw ContractError("stability_rho: record lacks evaluations 2/5/10");
    }
    const CalibrationError& e2 = rec.errors_by_step[kStabilityCheckpoints[0] - 1];
    const CalibrationError& e5 = rec.errors_by_step[kStabilityCheckpoints[1] - 1];
    const CalibrationError& e10 = rec.errors_by_step[kStabilityCheckpoints[2] - 1];
    const bool rot_ok = e2.rot_rmse >= e5.rot_rmse && e5.rot_rmse >= e10.rot_rmse;
    const bool trans_ok =
        e2.trans_rmse >= e5.trans_rmse && e5.trans_rmse >= e10.trans_rmse;
    if (rot_ok && trans_ok) ++stable;
  }
  return 100.0 * stable / static_cast<double>(records.size());
}

struct MethodAggregate {
  MethodKind method = MethodKind::Single;
  int samples = 0;
  int flagged = 0;
  double mean_rot_rmse = 0.0;
  double median_rot_rmse = 0.0;
  double mean_trans_rmse = 0.0;
  double median_trans_rmse = 0.0;
  double rate_3deg3cm = 0.0;
  double rate_5deg5cm = 0.0;
  bool has_rho = false;  // stability is undefined for Single and short runs
  double rho_percent = 0.0;
};

struct AggregateReport {
  std::vector<MethodAggregate> per_method;
};

namespace detail {
inline double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}
}  // namespace detail

/// Per-method summary over final errors. Flagged records count toward the
/// sample/flagged totals but are excluded from every statistic; a method
/// whose records are all flagged reports zeros.
inline AggregateReport aggregate(const std::vector<RunRecord>& records) {
  if (records.empty()) {
    throw std::invalid_argument("aggregate: empty record list");
  }
  AggregateReport report;
  const MethodKind kinds[] = {MethodKind::Single, MethodKind::NaIter,
                              MethodKind::Lsd, MethodKind::Nlsd};
  for (MethodKind kind : kinds) {
    MethodAggregate agg;
    agg.method = kind;
    std::vector<RunRecord> usable;
    for (const RunRecord& rec : records) {
      if (rec.method != kind) continue;
      ++agg.samples;
      if (rec.flagged) {
        ++agg.flagged;
      } else {
        usable.push_back(rec);
      }
    }
    if (agg.samples == 0) continue;
    if (!usable.empty()) {
      std::vector<CalibrationError> finals;
      std::vector<double> rot, trans;
      finals.reserve(usable.size());
      for (const RunRecord& rec : usable) {
        finals.push_back(rec.final_error);
        rot.push_back(rec.final_error.rot_rmse);
        trans.push_back(rec.final_error.trans_rmse);
      }
      double rot_sum = 0.0, trans_sum = 0.0;
      for (std::size_t i = 0; i < usable.size(); ++i) {
        rot_sum += rot[i];
        trans_sum += trans[i];
      }
      agg.mean_rot_rmse = rot_sum / static_cast<double>(usable.size());
      agg.mean_trans_rmse = trans_sum / static_cast<double>(usable.size());
      agg.median_rot_rmse = detail::median_of(rot);
      agg.median_trans_rmse = detail::median_of(trans);
      const ThresholdRates rates = threshold_rates(finals);
      agg.rate_3deg3cm = rates.rate_3deg3cm;
      agg.rate_5deg5cm = rates.rate_5deg5cm;
      const bool long_enough = std::all_of(
          usable.begin(), usable.end(), [](const RunRecord& rec) {
            return rec.errors_by_step.size() >=
                   static_cast<std::size_t>(kStabilityCheckpoints[2]);
          });
      if (kind != MethodKind::Single && long_enough) {
        agg.has_rho = true;
        agg.rho_percent = stability_rho(usable);
      }
    }
    report.per_method.push_back(agg);
  }
  return report;
}

/// A labeled aggregate row; the label carries whatever grouping the caller
/// uses (e.g. "surrogate+method").
struct ReportRow {
  std::string label;
  MethodAggregate agg;
};

namespace detail {

inline std::string fmt2(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string fmt4(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace detail

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out =
      "label,samples,flagged,mean_rot_rmse_deg,median_rot_rmse_deg,"
      "mean_trans_rmse_cm,median_trans_rmse_cm,rate_3deg3cm,rate_5deg5cm,"
      "rho_percent\n";
  for (const ReportRow& row : rows) {
    const MethodAggregate& a = row.agg;
    out += row.label;
    out += ',' + std::to_string(a.samples);
    out += ',' + std::to_string(a.flagged);
    out += ',' + detail::fmt4(a.mean_rot_rmse);
    out += ',' + detail::fmt4(a.median_rot_rmse);
    out += ',' + detail::fmt4(a.mean_trans_rmse);
    out += ',' + detail::fmt4(a.median_trans_rmse);
    out += ',' + detail::fmt2(a.rate_3deg3cm);
    out += ',' + detail::fmt2(a.rate_5deg5cm);
    out += ',';
    out += a.has_rho ? detail::fmt2(a.rho_percent) : std::string("NA");
    out += '\n';
  }
  return out;
}

/// Aligned text table in robustness-then-stability column order. With
/// mark_best, the best value per numeric column gets a trailing '*'
/// (lowest for the RMSE columns, highest for rates and stability).
inline std::string report_table(const std::vector<ReportRow>& rows,
                                bool mark_best = false) {
  const char* headers[] = {"method",        "samples",      "flagged",
                           "rot_mean",      "rot_median",   "trans_mean",
                           "trans_median",  "3deg3cm",      "5deg5cm",
                           "rho"};
  constexpr int kCols = 10;
  std::vector<std::vector<std::string>> cells;
  cells.reserve(rows.size());
  for (const ReportRow& row : rows) {
    const MethodAggregate& a = row.agg;
    cells.push_back({row.label, std::to_string(a.samples),
                     std::to_string(a.flagged), detail::fmt4(a.mean_rot_rmse),
                     detail::fmt4(a.median_rot_rmse),
                     detail::fmt4(a.mean_trans_rmse),
                     detail::fmt4(a.median_trans_rmse),
                     detail::fmt2(a.rate_3deg3cm), detail::fmt2(a.rate_5deg5cm),
                     a.has_rho ? detail::fmt2(a.rho_percent) : "NA"});
  }

  if (mark_best && !rows.empty()) {
    // column index -> true when smaller is better
    const struct { int col; bool minimize; } ranked[] = {
        {3, true}, {4, true}, {5, true}, {6, true},
        {7, false}, {8, false}, {9, false}};
    for (const auto& spec : ranked) {
      int best = -1;
      double best_value = 0.0;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (spec.col == 9 && !rows[r].agg.has_rho) continue;
        double v = 0.0;
        switch (spec.col) {
          case 3: v = rows[r].agg.mean_rot_rmse; break;
          case 4: v = rows[r].agg.median_rot_rmse; break;
          case 5: v = rows[r].agg.mean_trans_rmse; break;
          case 6: v = rows[r].agg.median_trans_rmse; break;
          case 7: v = rows[r].agg.rate_3deg3cm; break;
          case 8: v = rows[r].agg.rate_5deg5cm; break;
          case 9: v = rows[r].agg.rho_percent; break;
        }
        if (best < 0 || (spec.minimize ? v < best_value : v > best_value)) {
          best = static_cast<int>(r);
          best_value = v;
        }
      }
      if (best >= 0) cells[static_cast<std::size_t>(best)][spec.col] += '*';
    }
  }

  std::size_t widths[kCols];
  for (int c = 0; c < kCols; ++c) {
    widths[c] = std::string(headers[c]).size();
    for (const auto& row : cells) widths[c] = std::max(widths[c], row[c].size());
  }
  std::string out;
  auto emit_row = [&](const std::vector<std::string>& row) {
    for (int c = 0; c < kCols; ++c) {
      if (c > 0) out += "  ";
      const std::string& cell = row[c];
      if (c == 0) {
        out += cell;
        out += std::string(widths[c] - cell.size(), ' ');
      } else {
        out += std::string(widths[c] - cell.size(), ' ');
        out += cell;
      }
    }
    out += '\n';
  };
  std::vector<std::string> head(headers, headers + kCols);
  emit_row(head);
  for (const auto& row : cells) emit_row(row);
  return out;
}

}  // namespace diffcal
