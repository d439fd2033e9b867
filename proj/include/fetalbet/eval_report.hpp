#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fetalbet/error.hpp"
#include "fetalbet/metrics.hpp"
#include "fetalbet/stats.hpp"
#include "fetalbet/volume_io.hpp"

namespace fetalbet {

enum class Unit { slice, stack, subject };

inline std::string_view to_string(Unit u) {
  switch (u) {
    case Unit::slice: return "slice";
    case Unit::stack: return "stack";
    case Unit::subject: return "subject";
  }
  return "?";
}

inline Unit parse_unit(const std::string& s) {
  if (s == "slice") return Unit::slice;
  if (s == "stack") return Unit::stack;
  if (s == "subject") return Unit::subject;
  throw ValidationError("unknown unit '" + s + "' (expected slice, stack or subject)");
}

struct MetricsRow {
  std::string subject_id;
  std::string stack_id;
  std::size_t slice_index = 0;
  std::string sequence;
  double dsc = 0.0;
  double iou = 0.0;
  std::string method;
  bool both_empty = false;

  bool operator==(const MetricsRow&) const = default;
};

using MetricsTable = std::vector<MetricsRow>;

struct PairInfo {
  std::string subject_id;
  std::string stack_id;
  std::string sequence;
  std::string method;
};

// One row per slice along slice_axis.
inline MetricsTable evaluate_pair(const MaskVolume& pred, const MaskVolume& ref, const PairInfo& info,
                                  int slice_axis = 2) {
  if (pred.dims != ref.dims)
    throw ContractError("pair '" + info.stack_id + "': prediction " + std::to_string(pred.dims[0]) + "x" +
                        std::to_string(pred.dims[1]) + "x" + std::to_string(pred.dims[2]) +
                        " does not match reference " + std::to_string(ref.dims[0]) + "x" +
                        std::to_string(ref.dims[1]) + "x" + std::to_string(ref.dims[2]));
  const auto ps = iterate_mask_slices(pred, slice_axis);
  const auto rs = iterate_mask_slices(ref, slice_axis);
  MetricsTable out;
  for (std::size_t s = 0; s < ps.size(); ++s) {
    const auto c = confusion(ps[s], rs[s]);
    out.push_back({info.subject_id, info.stack_id, s, info.sequence, dsc(c), iou(c), info.method,
                   c.tp + c.fp + c.fn == 0});
  }
  return out;
}

struct MaskPair {
  const MaskVolume* pred;
  const MaskVolume* ref;
  PairInfo info;
  int slice_axis = 2;
};

inline MetricsTable evaluate_pairs(const std::vector<MaskPair>& pairs) {
  MetricsTable out;
  for (const auto& p : pairs) {
    auto rows = evaluate_pair(*p.pred, *p.ref, p.info, p.slice_axis);
    out.insert(out.end(), rows.begin(), rows.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct Summary {
  std::size_t n = 0;
  double mean = 0, std = 0, min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

inline Summary summarize(const std::vector<double>& x) {
  Summary s;
  s.n = x.size();
  s.mean = mean(x);
  s.std = sample_std(x);
  s.min = *std::min_element(x.begin(), x.end());
  s.max = *std::max_element(x.begin(), x.end());
  s.q1 = quantile(x, 0.25);
  s.median = quantile(x, 0.5);
  s.q3 = quantile(x, 0.75);
  return s;
}

// Key of a row at a given unit. Rows of different methods share keys.
inline std::string unit_key(const MetricsRow& r, Unit u) {
  switch (u) {
    case Unit::slice: return r.subject_id + "|" + r.stack_id + "|" + std::to_string(r.slice_index);
    case Unit::stack: return r.subject_id + "|" + r.stack_id;
    case Unit::subject: return r.subject_id;
  }
  return {};
}

struct AggregateRow {
  std::string method;
  std::string sequence;
  Unit unit = Unit::stack;
  std::string group;  // unit key, or "ALL" for the per-(method, sequence) summary
  Summary dsc;
  Summary iou;
};

struct AggregateOptions {
  bool include_both_empty = true;
};

struct Aggregation {
  std::vector<AggregateRow> rows;
  std::vector<std::string> warnings;
};

// Per (method, sequence, group) statistics over member slices, followed by
// an "ALL" row per (method, sequence) over the group means.
inline Aggregation aggregate(const MetricsTable& table, Unit unit, const AggregateOptions& opt = {}) {
  if (table.empty()) throw ContractError("aggregate: empty metrics table");
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, std::pair<std::vector<double>, std::vector<double>>> groups;
  std::map<Key, bool> seen;
  for (const auto& r : table) {
    const Key k{r.method, r.sequence, unit_key(r, unit)};
    seen[k] = true;
    if (r.both_empty && !opt.include_both_empty) continue;
    groups[k].first.push_back(r.dsc);
    groups[k].second.push_back(r.iou);
  }
  Aggregation out;
  for (const auto& [k, present] : seen)
    if (!groups.count(k))
      out.warnings.push_back("group " + std::get<2>(k) + " (" + std::get<0>(k) + ", " + std::get<1>(k) +
                             ") has no rows after filtering; omitted");

  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> overall;
  for (const auto& [k, vals] : groups) {
    AggregateRow row{std::get<0>(k), std::get<1>(k), unit, std::get<2>(k), summarize(vals.first),
                     summarize(vals.second)};
    auto& o = overall[{row.method, row.sequence}];
    o.first.push_back(row.dsc.mean);
    o.second.push_back(row.iou.mean);
    out.rows.push_back(std::move(row));
  }
  for (const auto& [k, vals] : overall)
    out.rows.push_back({k.first, k.second, unit, "ALL", summarize(vals.first), summarize(vals.second)});
  return out;
}

// ---------------------------------------------------------------------------
// Method comparison

struct ComparisonResult {
  std::string method_a;
  std::string method_b;
  std::string sequence;  // "all" pools every sequence
  std::string metric;    // "dsc" / "iou"
  Unit unit = Unit::stack;
  std::size_t n = 0;
  double t_statistic = std::numeric_limits<double>::quiet_NaN();
  double p_value = std::numeric_limits<double>::quiet_NaN();
  std::string stars = "n/a";
  std::string status = "ok";  // "ok" / "degenerate" / "insufficient"
};

// Pairs the per-unit means of two methods by shared unit key and runs a
// paired t-test per sequence plus one pooled test.
inline std::vector<ComparisonResult> compare_methods(const MetricsTable& table, const std::string& method_a,
                                                     const std::string& method_b, Unit unit = Unit::stack) {
  // (sequence, key) -> (sum, count) per method and metric
  using Acc = std::map<std::pair<std::string, std::string>, std::array<double, 3>>;
  Acc a, b;
  for (const auto& r : table) {
    Acc* dst = r.method == method_a ? &a : r.method == method_b ? &b : nullptr;
    if (!dst) continue;
    auto& cell = (*dst)[{r.sequence, unit_key(r, unit)}];
    cell[0] += r.dsc;
    cell[1] += r.iou;
    cell[2] += 1;
  }
  std::vector<std::string> sequences;
  for (const auto& [k, v] : a) {
    (void)v;
    if (std::find(sequences.begin(), sequences.end(), k.first) == sequences.end()) sequences.push_back(k.first);
  }
  sequences.push_back("all");

  std::vector<ComparisonResult> out;
  for (const char* metric : {"dsc", "iou"}) {
    const std::size_t m = std::string(metric) == "dsc" ? 0 : 1;
    for (const auto& seq : sequences) {
      std::vector<double> xa, xb;
      for (const auto& [k, va] : a) {
        if (seq != "all" && k.first != seq) continue;
        auto it = b.find(k);
        if (it == b.end()) continue;
        xa.push_back(va[m] / va[2]);
        xb.push_back(it->second[m] / it->second[2]);
      }
      ComparisonResult c;
      c.method_a = method_a;
      c.method_b = method_b;
      c.sequence = seq;
      c.metric = metric;
      c.unit = unit;
      c.n = xa.size();
      if (xa.size() < 2) {
        c.status = "insufficient";
      } else {
        try {
          const auto t = paired_t_test(xa, xb);
          c.t_statistic = t.t;
          c.p_value = t.p;
          c.stars = significance_stars(t.p);
        } catch (const DegenerateError&) {
          c.status = "degenerate";
        }
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV export

inline constexpr std::string_view kPerSliceHeader = "subject_id,stack_id,slice_index,sequence,method,dsc,iou,both_empty";
inline constexpr std::string_view kAggregateHeader =
    "method,sequence,unit,group,n,dsc_mean,dsc_std,dsc_min,dsc_q1,dsc_median,dsc_q3,dsc_max,"
    "iou_mean,iou_std,iou_min,iou_q1,iou_median,iou_q3,iou_max";
inline constexpr std::string_view kComparisonHeader =
    "method_a,method_b,sequence,metric,unit,n,t_statistic,p_value,stars,status";

namespace csv {

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

inline double parse_num(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  return std::stod(s);
}

}  // namespace csv

inline void write_metrics_csv(const MetricsTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << kPerSliceHeader << '\n';
  for (const auto& r : table)
    out << csv::field(r.subject_id) << ',' << csv::field(r.stack_id) << ',' << r.slice_index << ','
        << csv::field(r.sequence) << ',' << csv::field(r.method) << ',' << csv::num(r.dsc) << ','
        << csv::num(r.iou) << ',' << (r.both_empty ? 1 : 0) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline MetricsTable read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kPerSliceHeader) throw FormatError("'" + path + "' has an unexpected header");
  MetricsTable out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = csv::split_line(line);
    if (f.size() != 8) throw FormatError("'" + path + "' line " + std::to_string(lineno) + ": expected 8 fields");
    try {
      out.push_back({f[0], f[1], static_cast<std::size_t>(std::stoull(f[2])), f[3], csv::parse_num(f[5]),
                     csv::parse_num(f[6]), f[4], f[7] == "1"});
    } catch (const std::logic_error&) {
      throw FormatError("'" + path + "' line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

inline void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << kAggregateHeader << '\n';
  auto put = [&](const Summary& s) {
    out << ',' << csv::num(s.mean) << ',' << csv::num(s.std) << ',' << csv::num(s.min) << ',' << csv::num(s.q1)
        << ',' << csv::num(s.median) << ',' << csv::num(s.q3) << ',' << csv::num(s.max);
  };
  for (const auto& r : rows) {
    out << csv::field(r.method) << ',' << csv::field(r.sequence) << ',' << to_string(r.unit) << ','
        << csv::field(r.group) << ',' << r.dsc.n;
    put(r.dsc);
    put(r.iou);
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline void write_comparisons_csv(const std::vector<ComparisonResult>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << kComparisonHeader << '\n';
  for (const auto& c : rows)
    out << csv::field(c.method_a) << ',' << csv::field(c.method_b) << ',' << csv::field(c.sequence) << ','
        << c.metric << ',' << to_string(c.unit) << ',' << c.n << ',' << csv::num(c.t_statistic) << ','
        << csv::num(c.p_value) << ',' << c.stars << ',' << c.status << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

// Writes metrics_per_slice.csv, metrics_aggregate.csv and comparisons.csv.
inline void export_report(const std::string& dir, const MetricsTable& table, const std::vector<AggregateRow>& agg,
                          const std::vector<ComparisonResult>& comparisons) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory '" + dir + "': " + ec.message());
  const std::filesystem::path base(dir);
  write_metrics_csv(table, (base / "metrics_per_slice.csv").string());
  write_aggregate_csv(agg, (base / "metrics_aggregate.csv").string());
  write_comparisons_csv(comparisons, (base / "comparisons.csv").string());
}

}  // namespace fetalbet
