#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "simkd/distiller.hpp"
#include "simkd/error.hpp"

namespace simkd {

// --------------------------------------------------------------------------
// Metrics CSV: one row per (run, epoch) plus one summary row (epoch -1) per
// evaluated head, whose method column reads "<method>/<head>".

inline constexpr const char* kMetricsHeader =
    "run_id,seed,method,alpha,r,epoch,train_loss,test_top1,test_nll,test_l2,pruning_ratio";

struct MetricsRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string method;
  double alpha = NAN;
  double r = NAN;
  long epoch = 0;
  double train_loss = NAN;
  double test_top1 = NAN;
  double test_nll = NAN;
  double test_l2 = NAN;
  double pruning_ratio = NAN;
};

inline std::string default_run_id(const TrainReport& report) {
  return report.method + "_s" + std::to_string(report.seed);
}

inline std::vector<MetricsRow> rows_from_report(const TrainReport& report, const std::string& run_id = "") {
  const std::string id = run_id.empty() ? default_run_id(report) : run_id;
  const double alpha = report.alpha ? *report.alpha : NAN;
  const double r = report.r ? static_cast<double>(*report.r) : NAN;
  const double pr = report.pruning_ratio ? *report.pruning_ratio : NAN;
  std::vector<MetricsRow> rows;
  for (const auto& e : report.epochs)
    rows.push_back({id, report.seed, report.method, alpha, r, static_cast<long>(e.epoch), e.train_loss, e.test_top1,
                    e.test_nll, e.test_l2 ? *e.test_l2 : NAN, pr});
  for (const auto& h : report.heads)
    rows.push_back({id, report.seed, report.method + "/" + h.head, alpha, r, -1, NAN, h.metrics.top1, h.metrics.nll,
                    h.metrics.l2 ? *h.metrics.l2 : NAN, pr});
  return rows;
}

/// Shortest text that reads back to the same double; "nan" for missing.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string to_csv(const std::vector<MetricsRow>& rows, bool header = true) {
  std::string out;
  if (header) out += std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    if (r.run_id.find_first_of(",\n") != std::string::npos || r.method.find_first_of(",\n") != std::string::npos)
      throw UsageError("metrics: run_id and method must not contain commas or newlines");
    out += r.run_id + "," + std::to_string(r.seed) + "," + r.method + "," + format_real(r.alpha) + "," +
           format_real(r.r) + "," + std::to_string(r.epoch) + "," + format_real(r.train_loss) + "," +
           format_real(r.test_top1) + "," + format_real(r.test_nll) + "," + format_real(r.test_l2) + "," +
           format_real(r.pruning_ratio) + "\n";
  }
  return out;
}

/// Appends rows, writing the header when the file is new or empty.
inline void append_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  bool fresh = true;
  {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    fresh = !in || in.tellg() == 0;
  }
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw InputError("cannot write metrics file '" + path + "'");
  out << to_csv(rows, fresh);
  if (!out) throw InputError("failed writing metrics file '" + path + "'");
}

namespace detail {

inline double parse_real(const std::string& s, const std::string& where) {
  if (s == "nan") return NAN;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InputError(where + ": '" + s + "' is not a real number");
  return v;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline std::vector<MetricsRow> parse_csv(const std::string& text, const std::string& source = "metrics") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || detail::split(line, ',') != detail::split(kMetricsHeader, ','))
    throw InputError(source + ": missing or unexpected header");
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split(line, ',');
    const std::string where = source + ":" + std::to_string(lineno);
    if (f.size() != 11) throw InputError(where + ": expected 11 columns, got " + std::to_string(f.size()));
    MetricsRow r;
    r.run_id = f[0];
    const double seed = detail::parse_real(f[1], where);
    const double epoch = detail::parse_real(f[5], where);
    if (!(seed >= 0) || seed != std::floor(seed)) throw InputError(where + ": seed must be a nonnegative integer");
    if (epoch != std::floor(epoch)) throw InputError(where + ": epoch must be an integer");
    r.seed = static_cast<std::uint64_t>(seed);
    r.method = f[2];
    r.alpha = detail::parse_real(f[3], where);
    r.r = detail::parse_real(f[4], where);
    r.epoch = static_cast<long>(epoch);
    r.train_loss = detail::parse_real(f[6], where);
    r.test_top1 = detail::parse_real(f[7], where);
    r.test_nll = detail::parse_real(f[8], where);
    r.test_l2 = detail::parse_real(f[9], where);
    r.pruning_ratio = detail::parse_real(f[10], where);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<MetricsRow> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open metrics file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path);
}

// --------------------------------------------------------------------------
// Aggregation across seeds.

struct MeanStd {
  double mean = NAN;
  double std = NAN;  // sample standard deviation (n - 1); 0 for a single run
  std::size_t n = 0;
};

/// Two-pass mean and sample standard deviation, skipping NaN entries.
inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  double s = 0.0;
  for (double x : xs)
    if (!std::isnan(x)) {
      s += x;
      ++m.n;
    }
  if (m.n == 0) return m;
  m.mean = s / static_cast<double>(m.n);
  double ss = 0.0;
  for (double x : xs)
    if (!std::isnan(x)) ss += (x - m.mean) * (x - m.mean);
  m.std = m.n > 1 ? std::sqrt(ss / static_cast<double>(m.n - 1)) : 0.0;
  return m;
}

/// "75.56 ± 0.27"
inline std::string format_pm(const MeanStd& m, int decimals = 2) {
  if (m.n == 0) return "--";
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f ± %.*f", decimals, m.mean, decimals, m.std);
  return buf;
}

struct SummaryGroup {
  std::string method;  // e.g. "simkd"
  std::string head;    // e.g. "teacher_cls"
  double alpha = NAN;
  double r = NAN;
  std::vector<std::uint64_t> seeds;
  std::vector<double> top1, nll, l2, pruning_ratio;

  MeanStd top1_stats() const { return mean_std(top1); }
};

/// Groups summary rows by (method, head, alpha, r) in order of first appearance.
inline std::vector<SummaryGroup> summarize(const std::vector<MetricsRow>& rows) {
  std::vector<SummaryGroup> groups;
  std::map<std::string, std::size_t> index;
  for (const auto& row : rows) {
    if (row.epoch != -1) continue;
    const auto slash = row.method.rfind('/');
    const std::string method = slash == std::string::npos ? row.method : row.method.substr(0, slash);
    const std::string head = slash == std::string::npos ? "student" : row.method.substr(slash + 1);
    const std::string key = method + "|" + head + "|" + format_real(row.alpha) + "|" + format_real(row.r);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, groups.size()).first;
      groups.push_back({method, head, row.alpha, row.r, {}, {}, {}, {}, {}});
    }
    SummaryGroup& g = groups[it->second];
    g.seeds.push_back(row.seed);
    g.top1.push_back(row.test_top1);
    g.nll.push_back(row.test_nll);
    g.l2.push_back(row.test_l2);
    g.pruning_ratio.push_back(row.pruning_ratio);
  }
  return groups;
}

namespace detail {

inline std::string pad(const std::string& s, std::size_t w) {
  // count code points so the +/- sign does not skew alignment
  std::size_t len = 0;
  for (unsigned char c : s) len += (c & 0xC0) != 0x80;
  return s + std::string(w > len ? w - len : 0, ' ');
}

inline std::string table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(header.size());
  auto width = [](const std::string& s) {
    std::size_t len = 0;
    for (unsigned char c : s) len += (c & 0xC0) != 0x80;
    return len;
  };
  for (std::size_t i = 0; i < header.size(); ++i) w[i] = width(header[i]);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size() && i < w.size(); ++i) w[i] = std::max(w[i], width(r[i]));
  auto line = [&](const std::vector<std::string>& cells) {
    std::string s = "|";
    for (std::size_t i = 0; i < w.size(); ++i) s += " " + pad(i < cells.size() ? cells[i] : "", w[i]) + " |";
    return s + "\n";
  };
  std::string out = line(header);
  std::string sep = "|";
  for (auto x : w) sep += std::string(x + 2, '-') + "|";
  out += sep + "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

inline std::string fixed(double v, int decimals) {
  if (std::isnan(v)) return "--";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline const SummaryGroup* find_group(const std::vector<SummaryGroup>& gs, const std::string& method,
                                      const std::string& head, double alpha = NAN) {
  for (const auto& g : gs)
    if (g.method == method && g.head == head && (std::isnan(alpha) ? std::isnan(g.alpha) : g.alpha == alpha))
      return &g;
  return nullptr;
}

}  // namespace detail

/// Markdown report: overall table plus the joint, sequential and reuse-more
/// views whenever the corresponding runs are present.
inline std::string format_report(const std::vector<MetricsRow>& rows) {
  const auto groups = summarize(rows);
  if (groups.empty()) throw InputError("report: no summary rows (epoch -1) found");
  std::string out = "## Accuracy (top-1 %, mean ± std over runs)\n\n";
  std::vector<std::vector<std::string>> main;
  for (const auto& g : groups)
    main.push_back({g.method, g.head, std::isnan(g.alpha) ? "--" : format_real(g.alpha),
                    std::isnan(g.r) ? "--" : format_real(g.r), std::to_string(g.top1.size()), format_pm(g.top1_stats()),
                    format_pm(mean_std(g.nll), 4), format_pm(mean_std(g.l2), 4),
                    detail::fixed(mean_std(g.pruning_ratio).mean, 4)});
  out += detail::table({"method", "head", "alpha", "r", "runs", "top-1", "NLL", "test l2", "pruning ratio"}, main);

  std::vector<double> alphas;
  for (const auto& g : groups)
    if (g.method == "joint" && !std::isnan(g.alpha) && std::find(alphas.begin(), alphas.end(), g.alpha) == alphas.end())
      alphas.push_back(g.alpha);
  if (!alphas.empty()) {
    std::sort(alphas.begin(), alphas.end());
    std::vector<std::vector<std::string>> t;
    for (double a : alphas) {
      const auto* s = detail::find_group(groups, "joint", "student", a);
      const auto* c = detail::find_group(groups, "joint", "teacher_cls", a);
      t.push_back({format_real(a), s ? format_pm(s->top1_stats()) : "--", c ? format_pm(c->top1_stats()) : "--"});
    }
    out += "\n## Joint training: alpha sweep (top-1 %)\n\n";
    out += detail::table({"alpha", "student classifier", "teacher classifier"}, t);
  }

  if (const auto* seq = detail::find_group(groups, "sequential", "sequential")) {
    const auto* reused = detail::find_group(groups, "sequential", "teacher_cls");
    out += "\n## Sequential training vs. reused classifier (top-1 %)\n\n";
    out += detail::table({"new classifier", "reused teacher classifier"},
                         {{format_pm(seq->top1_stats()), reused ? format_pm(reused->top1_stats()) : "--"}});
  }

  std::vector<std::vector<std::string>> plus;
  for (const auto& g : groups)
    if (g.head == "teacher_cls" && (g.method == "simkd" || g.method.rfind("simkd+k", 0) == 0))
      plus.push_back({g.method, format_pm(g.top1_stats()), format_pm(mean_std(g.nll), 4),
                      detail::fixed(mean_std(g.pruning_ratio).mean, 4)});
  if (plus.size() > 1) {
    out += "\n## Reusing more teacher layers: accuracy vs. pruning ratio\n\n";
    out += detail::table({"variant", "top-1", "NLL", "pruning ratio"}, plus);
  }
  return out;
}

}  // namespace simkd
