#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "preempt/errors.hpp"
#include "preempt/harness.hpp"

namespace preempt::harness {

Stat summarize(const std::vector<double>& values) {
  if (values.empty()) return {};
  Stat s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) /
           static_cast<double>(values.size());
  return s;
}

bool spread_ok(const Stat& s) { return s.max <= 1.05 * s.mean && s.min >= 0.95 * s.mean; }

std::vector<AggregateMetrics> aggregate(const std::vector<RunMetrics>& rows) {
  std::vector<AggregateMetrics> out;
  std::vector<std::vector<const RunMetrics*>> members;
  for (const auto& m : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const AggregateMetrics& a) {
      return a.primitive == m.primitive && a.r == m.r;
    });
    if (it == out.end()) {
      AggregateMetrics a;
      a.primitive = m.primitive;
      a.r = m.r;
      out.push_back(a);
      members.emplace_back();
      it = out.end() - 1;
    }
    members[static_cast<std::size_t>(it - out.begin())].push_back(&m);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::vector<double> sojourn, makespan, swapped, tuples, low_run, high_run;
    for (const RunMetrics* m : members[i]) {
      if (!m->ok) {
        ++out[i].failed_runs;
        continue;
      }
      sojourn.push_back(static_cast<double>(m->sojourn_high_ms));
      makespan.push_back(static_cast<double>(m->makespan_ms));
      swapped.push_back(static_cast<double>(m->swapped_bytes_low));
      tuples.push_back(static_cast<double>(m->tuples_total_low));
      low_run.push_back(static_cast<double>(m->low_run_ms));
      high_run.push_back(static_cast<double>(m->high_run_ms));
    }
    auto& a = out[i];
    a.runs = sojourn.size();
    a.sojourn_high_ms = summarize(sojourn);
    a.makespan_ms = summarize(makespan);
    a.swapped_bytes_low = summarize(swapped);
    a.tuples_total_low = summarize(tuples);
    a.low_run_ms = summarize(low_run);
    a.high_run_ms = summarize(high_run);
    a.spread_ok = a.runs > 0 && spread_ok(a.sojourn_high_ms) && spread_ok(a.makespan_ms);
  }
  return out;
}

const std::vector<std::string> kRunColumns{
    "primitive",         "r",
    "run_index",         "status",
    "sojourn_high_ms",   "makespan_ms",
    "swapped_bytes_low", "tuples_total_low",
    "input_tuples_low",  "low_summary_tuples",
    "low_attempts",      "progress_records_while_suspended",
    "trigger_progress",  "completion_won_race",
    "low_run_ms",        "high_run_ms",
    "high_ballast_bytes", "illegal_events",
    "attempts_used",     "error"};

const std::vector<std::string> kAggregateColumns{
    "primitive",          "r",
    "runs",               "failed_runs",
    "sojourn_mean_ms",    "sojourn_min_ms",
    "sojourn_max_ms",     "makespan_mean_ms",
    "makespan_min_ms",    "makespan_max_ms",
    "swapped_mean_bytes", "swapped_min_bytes",
    "swapped_max_bytes",  "tuples_total_mean",
    "tuples_total_min",   "tuples_total_max",
    "low_run_mean_ms",    "high_run_mean_ms",
    "spread_ok"};

const std::vector<std::string> kSweepColumns{
    "high_ballast_bytes",  "swapped_bytes_low",   "sojourn_suspend_ms",
    "sojourn_kill_ms",     "makespan_suspend_ms", "makespan_wait_ms",
    "sojourn_degradation", "makespan_degradation"};

namespace {

std::string num(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

template <typename T>
std::string num(T v) requires std::is_integral_v<T> {
  return std::to_string(v);
}

struct Cells {
  const std::vector<std::string>& cells;
  std::size_t row;

  const std::string& at(std::size_t i) const { return cells.at(i); }

  double real(std::size_t i, const std::vector<std::string>& names) const {
    try {
      std::size_t used = 0;
      double v = std::stod(at(i), &used);
      if (used != at(i).size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw SchemaMismatch("row " + std::to_string(row) + ": column " + names[i] +
                           " is not a number: '" + at(i) + "'");
    }
  }

  std::uint64_t whole(std::size_t i, const std::vector<std::string>& names) const {
    try {
      std::size_t used = 0;
      if (!at(i).empty() && at(i)[0] == '-') throw std::invalid_argument("negative");
      auto v = std::stoull(at(i), &used);
      if (used != at(i).size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw SchemaMismatch("row " + std::to_string(row) + ": column " + names[i] +
                           " is not a non-negative integer: '" + at(i) + "'");
    }
  }

  bool flag(std::size_t i, const std::vector<std::string>& names) const {
    if (at(i) == "true" || at(i) == "1") return true;
    if (at(i) == "false" || at(i) == "0") return false;
    throw SchemaMismatch("row " + std::to_string(row) + ": column " + names[i] +
                         " is not a boolean: '" + at(i) + "'");
  }

  ScheduleAction primitive() const {
    auto p = parse_schedule_action(at(0));
    if (!p) {
      throw SchemaMismatch("row " + std::to_string(row) + ": unknown primitive '" + at(0) +
                           "'");
    }
    return *p;
  }
};

void check_width(const std::vector<std::string>& cells, std::size_t want, std::size_t row) {
  if (cells.size() != want) {
    throw SchemaMismatch("row " + std::to_string(row) + ": expected " + std::to_string(want) +
                         " columns, found " + std::to_string(cells.size()));
  }
}

}  // namespace

std::vector<std::string> to_row(const RunMetrics& m) {
  return {std::string(to_string(m.primitive)),
          num(m.r),
          num(m.run_index),
          m.ok ? "ok" : "failed",
          num(m.sojourn_high_ms),
          num(m.makespan_ms),
          num(m.swapped_bytes_low),
          num(m.tuples_total_low),
          num(m.input_tuples_low),
          num(m.low_summary_tuples),
          num(m.low_attempts),
          num(m.progress_records_while_suspended),
          num(m.trigger_progress),
          m.completion_won_race ? "true" : "false",
          num(m.low_run_ms),
          num(m.high_run_ms),
          num(m.high_ballast_bytes),
          num(m.illegal_events),
          num(m.attempts_used),
          m.error};
}

std::vector<std::string> to_row(const AggregateMetrics& a) {
  return {std::string(to_string(a.primitive)),
          num(a.r),
          num(a.runs),
          num(a.failed_runs),
          num(a.sojourn_high_ms.mean),
          num(a.sojourn_high_ms.min),
          num(a.sojourn_high_ms.max),
          num(a.makespan_ms.mean),
          num(a.makespan_ms.min),
          num(a.makespan_ms.max),
          num(a.swapped_bytes_low.mean),
          num(a.swapped_bytes_low.min),
          num(a.swapped_bytes_low.max),
          num(a.tuples_total_low.mean),
          num(a.tuples_total_low.min),
          num(a.tuples_total_low.max),
          num(a.low_run_ms.mean),
          num(a.high_run_ms.mean),
          a.spread_ok ? "true" : "false"};
}

std::vector<std::string> to_row(const SweepPoint& p) {
  return {num(p.high_ballast_bytes),  num(p.swapped_bytes_low),
          num(p.sojourn_suspend_ms),  num(p.sojourn_kill_ms),
          num(p.makespan_suspend_ms), num(p.makespan_wait_ms),
          num(p.sojourn_degradation), num(p.makespan_degradation)};
}

RunMetrics run_from_row(const std::vector<std::string>& cells, std::size_t row_number) {
  check_width(cells, kRunColumns.size(), row_number);
  Cells c{cells, row_number};
  const auto& n = kRunColumns;
  RunMetrics m;
  m.primitive = c.primitive();
  m.r = c.real(1, n);
  m.run_index = static_cast<unsigned>(c.whole(2, n));
  if (cells[3] != "ok" && cells[3] != "failed") {
    throw SchemaMismatch("row " + std::to_string(row_number) + ": status must be ok or failed");
  }
  m.ok = cells[3] == "ok";
  m.sojourn_high_ms = static_cast<Millis>(c.real(4, n));
  m.makespan_ms = static_cast<Millis>(c.real(5, n));
  m.swapped_bytes_low = c.whole(6, n);
  m.tuples_total_low = c.whole(7, n);
  m.input_tuples_low = c.whole(8, n);
  m.low_summary_tuples = c.whole(9, n);
  m.low_attempts = static_cast<std::uint32_t>(c.whole(10, n));
  m.progress_records_while_suspended = c.whole(11, n);
  m.trigger_progress = c.real(12, n);
  m.completion_won_race = c.flag(13, n);
  m.low_run_ms = static_cast<Millis>(c.real(14, n));
  m.high_run_ms = static_cast<Millis>(c.real(15, n));
  m.high_ballast_bytes = c.whole(16, n);
  m.illegal_events = c.whole(17, n);
  m.attempts_used = static_cast<unsigned>(c.whole(18, n));
  m.error = cells[19];
  return m;
}

AggregateMetrics aggregate_from_row(const std::vector<std::string>& cells,
                                    std::size_t row_number) {
  check_width(cells, kAggregateColumns.size(), row_number);
  Cells c{cells, row_number};
  const auto& n = kAggregateColumns;
  AggregateMetrics a;
  a.primitive = c.primitive();
  a.r = c.real(1, n);
  a.runs = c.whole(2, n);
  a.failed_runs = c.whole(3, n);
  a.sojourn_high_ms = {c.real(4, n), c.real(5, n), c.real(6, n)};
  a.makespan_ms = {c.real(7, n), c.real(8, n), c.real(9, n)};
  a.swapped_bytes_low = {c.real(10, n), c.real(11, n), c.real(12, n)};
  a.tuples_total_low = {c.real(13, n), c.real(14, n), c.real(15, n)};
  a.low_run_ms.mean = c.real(16, n);
  a.high_run_ms.mean = c.real(17, n);
  a.spread_ok = c.flag(18, n);
  return a;
}

std::string csv_line(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    const auto& v = cells[i];
    if (v.find_first_of(",\"\n\r") == std::string::npos) {
      out += v;
      continue;
    }
    out += '"';
    for (char ch : v) {
      if (ch == '"') out += '"';
      out += (ch == '\n' || ch == '\r') ? ' ' : ch;
    }
    out += '"';
  }
  return out;
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cells.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.emplace_back();
    } else if (ch != '\r') {
      cells.back() += ch;
    }
  }
  return cells;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      if (!line.empty()) t.header = csv_split(line);
      continue;
    }
    if (line.empty()) continue;
    t.rows.push_back(csv_split(line));
  }
  return t;
}

OracleResult timeline_oracle(ScheduleAction primitive, double r, double dl, double dh,
                             const OverheadModel& overhead) {
  if (!(r > 0.0 && r < 1.0)) {
    throw PreconditionViolation("oracle needs 0 < r < 1, got " + std::to_string(r));
  }
  if (!(dl > 0.0) || !(dh > 0.0)) {
    throw PreconditionViolation("oracle needs positive durations");
  }
  switch (primitive) {
    case ScheduleAction::kWait:
      return {(1.0 - r) * dl + dh, dl + dh};
    case ScheduleAction::kKillRestart:
      return {dh + overhead.cleanup_s, r * dl + dh + dl + overhead.cleanup_s};
    case ScheduleAction::kSuspendResume:
      return {dh + overhead.page_penalty_s, dl + dh + overhead.page_penalty_s};
  }
  throw PreconditionViolation("unknown primitive");
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    double avg = (static_cast<double>(i + j) / 2.0) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (x.size() != y.size() || x.size() < 2) return nan;
  auto rx = ranks(x);
  auto ry = ranks(y);
  double n = static_cast<double>(x.size());
  double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return nan;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace preempt::harness
