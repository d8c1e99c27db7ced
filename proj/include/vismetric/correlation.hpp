#pragma once

// Segment-level correlation of metric scores with human means (Kendall tau-b /
// tau-a, Pearson), augmentation sweep reports, and score histograms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vismetric/error.hpp"

namespace vismetric {

/// Per-example values of one metric, aligned to example ids.
struct ScoreSeries {
  std::string dataset_name;
  std::string metric_id;
  std::vector<std::string> ids;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }

  void validate() const {
    if (ids.size() != values.size()) throw ValidationError(metric_id + ": ids/values length mismatch");
    std::vector<std::string> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ValidationError(metric_id + ": duplicate example id");
    for (double v : values)
      if (!std::isfinite(v)) throw ValidationError(metric_id + ": non-finite score");
  }

  /// Values reordered to follow `order`; every id must be present exactly once.
  std::vector<double> aligned_to(const std::vector<std::string>& order) const {
    if (order.size() != ids.size())
      throw ValidationError(metric_id + ": series length " + std::to_string(ids.size()) + " vs " + std::to_string(order.size()));
    std::map<std::string, double> by_id;
    for (std::size_t i = 0; i < ids.size(); ++i) by_id[ids[i]] = values[i];
    std::vector<double> out;
    out.reserve(order.size());
    for (const auto& id : order) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw ValidationError(metric_id + ": missing example '" + id + "'");
      out.push_back(it->second);
    }
    return out;
  }
};

enum class KendallVariant { kTauB, kTauA };
enum class CorrelationKind { kKendall, kPearson };

inline std::string to_string(KendallVariant v) { return v == KendallVariant::kTauB ? "tau_b" : "tau_a"; }
inline std::string to_string(CorrelationKind k) { return k == CorrelationKind::kKendall ? "kendall" : "pearson"; }

/// Pair statistics behind Kendall's tau, all exact integers.
struct KendallCounts {
  std::int64_t pairs = 0;     // n(n-1)/2
  std::int64_t ties_x = 0;    // pairs tied in x (including joint ties)
  std::int64_t ties_y = 0;    // pairs tied in y (including joint ties)
  std::int64_t ties_xy = 0;   // pairs tied in both
  std::int64_t concordant_minus_discordant = 0;
};

namespace detail {

inline std::int64_t tied_pairs(std::int64_t run) { return run * (run - 1) / 2; }

// Merge sort on `v` returning the number of inversions (strictly decreasing pairs).
inline std::int64_t count_inversions(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t inv = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

}  // namespace detail

/// O(n log n) pair counts (Knight's algorithm).
inline KendallCounts kendall_counts(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("kendall: series length mismatch");
  const std::size_t n = x.size();
  KendallCounts c;
  c.pairs = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - (n > 0 ? 1 : 0)) / 2;

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]); });

  std::int64_t run_x = 1, run_xy = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    const bool same_x = i < n && x[idx[i]] == x[idx[i - 1]];
    const bool same_xy = same_x && y[idx[i]] == y[idx[i - 1]];
    if (same_x) {
      ++run_x;
    } else {
      c.ties_x += detail::tied_pairs(run_x);
      run_x = 1;
    }
    if (same_xy) {
      ++run_xy;
    } else {
      c.ties_xy += detail::tied_pairs(run_xy);
      run_xy = 1;
    }
  }

  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];
  const std::int64_t swaps = detail::count_inversions(ys, buf, 0, n);

  std::int64_t run_y = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && ys[i] == ys[i - 1]) {
      ++run_y;
    } else {
      c.ties_y += detail::tied_pairs(run_y);
      run_y = 1;
    }
  }
  c.concordant_minus_discordant = c.pairs - c.ties_x - c.ties_y + c.ties_xy - 2 * swaps;
  return c;
}

/// tau_b = (C - D) / sqrt((n0 - t_x)(n0 - t_y)); tau_a = (C - D) / n0.
inline double kendall_from_counts(const KendallCounts& c, KendallVariant variant) {
  const std::int64_t nx = c.pairs - c.ties_x;
  const std::int64_t ny = c.pairs - c.ties_y;
  if (nx == 0 || ny == 0) throw NumericError("zero variance");
  if (variant == KendallVariant::kTauA)
    return static_cast<double>(c.concordant_minus_discordant) / static_cast<double>(c.pairs);
  return static_cast<double>(c.concordant_minus_discordant) / std::sqrt(static_cast<double>(nx) * static_cast<double>(ny));
}

inline double kendall(std::span<const double> x, std::span<const double> y, KendallVariant variant = KendallVariant::kTauB) {
  if (x.size() != y.size()) throw ValidationError("kendall: series length mismatch");
  if (x.size() < 2) throw ValidationError("kendall: need at least 2 observations");
  return kendall_from_counts(kendall_counts(x, y), variant);
}

inline double kendall(const ScoreSeries& x, const ScoreSeries& y, KendallVariant variant = KendallVariant::kTauB) {
  x.validate();
  y.validate();
  const auto ya = y.aligned_to(x.ids);
  return kendall(x.values, ya, variant);
}

/// Sample Pearson correlation (two-pass means).
inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("pearson: series length mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw ValidationError("pearson: need at least 2 observations");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw NumericError("zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double pearson(const ScoreSeries& x, const ScoreSeries& y) {
  x.validate();
  y.validate();
  const auto ya = y.aligned_to(x.ids);
  return pearson(x.values, ya);
}

inline double correlate(std::span<const double> x, std::span<const double> y, CorrelationKind kind,
                        KendallVariant variant = KendallVariant::kTauB) {
  return kind == CorrelationKind::kKendall ? kendall(x, y, variant) : pearson(x, y);
}

// ---------------------------------------------------------------------------
// Reports

using Cell = std::optional<double>;  // nullopt renders as n/a

struct ReportRow {
  std::string metric_id;
  Cell original;
  std::vector<Cell> augmented;  // parallel to CorrelationReport::sim_columns
};

struct CorrelationReport {
  std::string dataset_name;
  CorrelationKind kind = CorrelationKind::kKendall;
  KendallVariant variant = KendallVariant::kTauB;
  std::vector<std::string> sim_columns;                     // e.g. BERT_text, IE_text, ...
  std::vector<std::pair<std::string, Cell>> individual;     // every metric and similarity on its own
  std::vector<ReportRow> rows;                              // base metrics, original and augmented
  std::vector<std::pair<std::string, std::string>> header;  // provenance metadata

  const ReportRow* row(const std::string& metric_id) const {
    for (const auto& r : rows)
      if (r.metric_id == metric_id) return &r;
    return nullptr;
  }

  Cell individual_cell(const std::string& id) const {
    for (const auto& [k, v] : individual)
      if (k == id) return v;
    return std::nullopt;
  }

  Cell augmented_cell(const std::string& metric_id, const std::string& sim) const {
    const auto* r = row(metric_id);
    if (!r) return std::nullopt;
    for (std::size_t i = 0; i < sim_columns.size(); ++i)
      if (sim_columns[i] == sim) return r->augmented[i];
    return std::nullopt;
  }
};

/// value x 100 with 3 decimals, e.g. 0.1327 -> "13.270".
inline std::string format_scaled(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", value * 100.0);
  std::string s(buf);
  if (s == "-0.000") s = "0.000";
  return s;
}

inline std::string format_cell(const Cell& c, const char* na = "—") { return c ? format_scaled(*c) : std::string(na); }

namespace detail {

inline Cell safe_correlate(std::span<const double> x, std::span<const double> y, CorrelationKind kind, KendallVariant variant) {
  try {
    return correlate(x, y, kind, variant);
  } catch (const NumericError&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Correlates every base metric, each similarity, and every base+similarity sum with the human series.
inline CorrelationReport build_report(const std::string& dataset_name, const std::vector<ScoreSeries>& base_metrics,
                                      const std::vector<ScoreSeries>& sims, const ScoreSeries& humans,
                                      CorrelationKind kind, KendallVariant variant = KendallVariant::kTauB) {
  humans.validate();
  CorrelationReport report;
  report.dataset_name = dataset_name;
  report.kind = kind;
  report.variant = variant;
  const auto& order = humans.ids;

  std::vector<std::vector<double>> sim_values;
  for (const auto& s : sims) {
    s.validate();
    report.sim_columns.push_back(s.metric_id);
    sim_values.push_back(s.aligned_to(order));
  }
  for (const auto& m : base_metrics) {
    m.validate();
    const auto mv = m.aligned_to(order);
    ReportRow row{m.metric_id, detail::safe_correlate(mv, humans.values, kind, variant), {}};
    for (const auto& sv : sim_values) {
      std::vector<double> sum(mv.size());
      for (std::size_t i = 0; i < mv.size(); ++i) sum[i] = mv[i] + sv[i];
      row.augmented.push_back(detail::safe_correlate(sum, humans.values, kind, variant));
    }
    report.individual.emplace_back(m.metric_id, row.original);
    report.rows.push_back(std::move(row));
  }
  for (std::size_t i = 0; i < sims.size(); ++i)
    report.individual.emplace_back(sims[i].metric_id, detail::safe_correlate(sim_values[i], humans.values, kind, variant));
  return report;
}

inline std::string render_markdown(const CorrelationReport& r) {
  std::ostringstream out;
  const std::string label = to_string(r.kind) + (r.kind == CorrelationKind::kKendall ? " (" + to_string(r.variant) + ")" : "");
  out << "# " << r.dataset_name << ": segment-level " << label << " correlation with human judgments (x100)\n\n";
  for (const auto& [k, v] : r.header) out << "- " << k << ": " << v << "\n";
  if (!r.header.empty()) out << "\n";

  out << "## Individual metrics\n\n| metric | " << to_string(r.kind) << " |\n|---|---:|\n";
  for (const auto& [id, cell] : r.individual) out << "| " << id << " | " << format_cell(cell) << " |\n";

  out << "\n## Augmented metrics\n\n| metric | original |";
  for (const auto& s : r.sim_columns) out << " +" << s << " |";
  out << "\n|---|---:|";
  for (std::size_t i = 0; i < r.sim_columns.size(); ++i) out << "---:|";
  out << "\n";
  for (const auto& row : r.rows) {
    out << "| " << row.metric_id << " | " << format_cell(row.original) << " |";
    for (const auto& c : row.augmented) out << " " << format_cell(c) << " |";
    out << "\n";
  }
  return out.str();
}

/// `dataset,metric,variant,correlation_kind,value` (value x100, "n/a" when undefined).
inline std::string render_csv(const CorrelationReport& r) {
  std::ostringstream out;
  for (const auto& [k, v] : r.header) out << "# " << k << "=" << v << "\n";
  out << "dataset,metric,variant,correlation_kind,value\n";
  const std::string kind = to_string(r.kind) + (r.kind == CorrelationKind::kKendall ? "_" + to_string(r.variant) : "");
  for (const auto& row : r.rows) {
    out << r.dataset_name << ',' << row.metric_id << ",original," << kind << ',' << format_cell(row.original, "n/a") << "\n";
    for (std::size_t i = 0; i < r.sim_columns.size(); ++i)
      out << r.dataset_name << ',' << row.metric_id << ",+" << r.sim_columns[i] << ',' << kind << ','
          << format_cell(row.augmented[i], "n/a") << "\n";
  }
  for (const auto& [id, cell] : r.individual) {
    if (r.row(id)) continue;
    out << r.dataset_name << ',' << id << ",original," << kind << ',' << format_cell(cell, "n/a") << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Histograms

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

/// Half-open bins of `bin_width` tiling [-1, 1]; the top bin is closed. Values
/// outside the range are counted in the nearest edge bin.
inline std::vector<HistogramBin> histogram(std::span<const double> scores, double bin_width) {
  if (!(bin_width > 0.0)) throw ValidationError("histogram bin_width must be > 0");
  const auto nbins = static_cast<std::size_t>(std::ceil(2.0 / bin_width - 1e-9));
  auto lo_of = [&](std::size_t k) { return -1.0 + static_cast<double>(k) * bin_width; };
  std::vector<HistogramBin> bins(nbins);
  for (std::size_t k = 0; k < nbins; ++k) bins[k] = {lo_of(k), std::min(1.0, lo_of(k + 1)), 0};
  for (double v : scores) {
    double pos = std::floor((v + 1.0) / bin_width);
    std::size_t k = pos < 0 ? 0 : static_cast<std::size_t>(std::min(pos, static_cast<double>(nbins - 1)));
    // Correct for rounding in the division against the same edges the bins report.
    while (k + 1 < nbins && v >= lo_of(k + 1)) ++k;
    while (k > 0 && v < lo_of(k)) --k;
    ++bins[k].count;
  }
  return bins;
}

inline std::string render_histogram_csv(const std::vector<HistogramBin>& bins,
                                        const std::vector<std::pair<std::string, std::string>>& header = {}) {
  std::ostringstream out;
  for (const auto& [k, v] : header) out << "# " << k << "=" << v << "\n";
  out << "bin_lo,bin_hi,count\n";
  char buf[96];
  for (const auto& b : bins) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%zu\n", b.lo, b.hi, b.count);
    out << buf;
  }
  return out.str();
}

}  // namespace vismetric
