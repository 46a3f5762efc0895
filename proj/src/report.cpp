#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "preempt/errors.hpp"
#include "preempt/harness.hpp"

namespace preempt::harness {

namespace {

struct Series {
  std::string name;
  std::string color;
  std::vector<std::pair<double, double>> points;
  bool right_axis = false;
};

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> ticks;
};

Axis nice_axis(double lo, double hi, bool from_zero) {
  if (from_zero) lo = std::min(lo, 0.0);
  if (!(hi > lo)) hi = lo + 1.0;
  double span = hi - lo;
  double raw = span / 5.0;
  double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  Axis a;
  a.lo = std::floor(lo / step) * step;
  a.hi = std::ceil(hi / step) * step;
  for (double t = a.lo; t <= a.hi + step * 1e-9; t += step) a.ticks.push_back(t);
  return a;
}

std::string fmt_tick(double v) {
  std::ostringstream s;
  s.precision(4);
  s << (std::abs(v) < 1e-12 ? 0.0 : v);
  return s.str();
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string render_svg(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series,
                       const std::string& y2_label = {}) {
  const double W = 640, H = 420, left = 70, right = y2_label.empty() ? 20 : 80, top = 40,
               bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin, y2min = xmin, y2max = -xmin;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      (s.right_axis ? y2min : ymin) = std::min(s.right_axis ? y2min : ymin, y);
      (s.right_axis ? y2max : ymax) = std::max(s.right_axis ? y2max : ymax, y);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1;
  if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
  if (!std::isfinite(y2min)) y2min = 0, y2max = 1;
  Axis ax = nice_axis(xmin, xmax, false);
  Axis ay = nice_axis(ymin, ymax, true);
  Axis ay2 = nice_axis(y2min, y2max, true);
  auto px = [&](double x) { return left + (x - ax.lo) / (ax.hi - ax.lo) * pw; };
  auto py = [&](const Axis& a, double y) { return top + ph - (y - a.lo) / (a.hi - a.lo) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << escape(title) << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ax.ticks) {
    o << "<line x1=\"" << px(t) << "\" y1=\"" << top + ph << "\" x2=\"" << px(t) << "\" y2=\""
      << top + ph + 5 << "\" stroke=\"black\"/>";
    o << "<text x=\"" << px(t) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
      << fmt_tick(t) << "</text>\n";
  }
  for (double t : ay.ticks) {
    o << "<line x1=\"" << left << "\" y1=\"" << py(ay, t) << "\" x2=\"" << left + pw
      << "\" y2=\"" << py(ay, t) << "\" stroke=\"#e0e0e0\"/>";
    o << "<text x=\"" << left - 6 << "\" y=\"" << py(ay, t) + 4 << "\" text-anchor=\"end\">"
      << fmt_tick(t) << "</text>\n";
  }
  if (!y2_label.empty()) {
    for (double t : ay2.ticks) {
      o << "<text x=\"" << left + pw + 6 << "\" y=\"" << py(ay2, t) + 4 << "\">" << fmt_tick(t)
        << "</text>\n";
    }
    o << "<text transform=\"translate(" << W - 18 << "," << top + ph / 2
      << ") rotate(90)\" text-anchor=\"middle\">" << escape(y2_label) << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 20 << "\" text-anchor=\"middle\">"
    << escape(x_label) << "</text>\n";
  o << "<text transform=\"translate(18," << top + ph / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";

  double legend_y = top + 14;
  for (const auto& s : series) {
    const Axis& a = s.right_axis ? ay2 : ay;
    std::ostringstream pts;
    for (auto [x, y] : s.points) pts << px(x) << "," << py(a, y) << " ";
    o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\""
      << (s.right_axis ? " stroke-dasharray=\"6,4\"" : "") << " points=\"" << pts.str()
      << "\"/>\n";
    for (auto [x, y] : s.points) {
      o << "<circle cx=\"" << px(x) << "\" cy=\"" << py(a, y) << "\" r=\"3\" fill=\"" << s.color
        << "\"/>";
    }
    o << "\n<line x1=\"" << left + 10 << "\" y1=\"" << legend_y - 4 << "\" x2=\"" << left + 30
      << "\" y2=\"" << legend_y - 4 << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>";
    o << "<text x=\"" << left + 36 << "\" y=\"" << legend_y << "\">" << escape(s.name)
      << "</text>\n";
    legend_y += 16;
  }
  o << "</svg>\n";
  return o.str();
}

const char* color_of(ScheduleAction a) {
  switch (a) {
    case ScheduleAction::kWait: return "#1f77b4";
    case ScheduleAction::kKillRestart: return "#d62728";
    case ScheduleAction::kSuspendResume: return "#2ca02c";
  }
  return "black";
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

void render_baseline(const std::vector<AggregateMetrics>& aggs, const std::filesystem::path& out,
                     ReportFiles& files) {
  std::vector<ScheduleAction> order;
  for (const auto& a : aggs) {
    if (std::find(order.begin(), order.end(), a.primitive) == order.end()) {
      order.push_back(a.primitive);
    }
  }
  auto series_of = [&](auto metric) {
    std::vector<Series> out_series;
    for (auto p : order) {
      Series s{std::string(to_string(p)), color_of(p), {}, false};
      for (const auto& a : aggs) {
        if (a.primitive == p && a.runs > 0) s.points.emplace_back(a.r * 100, metric(a) / 1000.0);
      }
      std::sort(s.points.begin(), s.points.end());
      out_series.push_back(std::move(s));
    }
    return out_series;
  };
  auto sojourn = series_of([](const AggregateMetrics& a) { return a.sojourn_high_ms.mean; });
  auto makespan = series_of([](const AggregateMetrics& a) { return a.makespan_ms.mean; });
  write_file(out / "sojourn.svg",
             render_svg("Sojourn time of t_h", "completion rate of t_l at arrival of t_h (%)",
                        "sojourn (s)", sojourn));
  write_file(out / "makespan.svg", render_svg("Makespan", "completion rate of t_l at arrival of t_h (%)",
                                              "makespan (s)", makespan));
  files.plots = {out / "sojourn.svg", out / "makespan.svg"};

  std::ostringstream md;
  md << "# Preemption primitives\n\n";
  if (aggs.empty()) md << "No data.\n";
  std::vector<double> dl, dh;
  for (const auto& a : aggs) {
    if (a.primitive == ScheduleAction::kWait && a.runs > 0 && a.low_run_ms.mean > 0 &&
        a.high_run_ms.mean > 0) {
      dl.push_back(a.low_run_ms.mean / 1000.0);
      dh.push_back(a.high_run_ms.mean / 1000.0);
    }
  }
  std::optional<std::pair<double, double>> durations;
  if (!dl.empty()) {
    durations.emplace(summarize(dl).mean, summarize(dh).mean);
    md << "Task durations from the wait runs: D_l = " << fixed(durations->first, 2)
       << " s, D_h = " << fixed(durations->second, 2) << " s.\n\n";
  }
  if (!aggs.empty()) {
    md << "| primitive | r | runs | failed | sojourn s (min..max) | makespan s (min..max) | "
          "oracle sojourn s | oracle makespan s | swapped MiB | tuples of t_l | spread_ok |\n";
    md << "|---|---|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& a : aggs) {
      std::string os = "-", om = "-";
      if (durations && a.r > 0 && a.r < 1) {
        auto o = timeline_oracle(a.primitive, a.r, durations->first, durations->second);
        os = fixed(o.sojourn_s, 2);
        om = fixed(o.makespan_s, 2);
      }
      md << "| " << to_string(a.primitive) << " | " << fixed(a.r, 2) << " | " << a.runs << " | "
         << a.failed_runs << " | " << fixed(a.sojourn_high_ms.mean / 1000, 2) << " ("
         << fixed(a.sojourn_high_ms.min / 1000, 2) << ".." << fixed(a.sojourn_high_ms.max / 1000, 2)
         << ") | " << fixed(a.makespan_ms.mean / 1000, 2) << " ("
         << fixed(a.makespan_ms.min / 1000, 2) << ".." << fixed(a.makespan_ms.max / 1000, 2)
         << ") | " << os << " | " << om << " | "
         << fixed(a.swapped_bytes_low.mean / (1 << 20), 1) << " | "
         << fixed(a.tuples_total_low.mean, 0) << " | " << (a.spread_ok ? "yes" : "no") << " |\n";
    }
  }
  for (const auto& w : files.warnings) md << "\nWarning: " << w << "\n";
  write_file(out / "summary.md", md.str());
  files.summary = out / "summary.md";
}

SweepPoint sweep_from_row(const std::vector<std::string>& cells, std::size_t row) {
  if (cells.size() != kSweepColumns.size()) {
    throw SchemaMismatch("row " + std::to_string(row) + ": expected " +
                         std::to_string(kSweepColumns.size()) + " columns, found " +
                         std::to_string(cells.size()));
  }
  std::vector<double> v;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(cells[i], &used));
      if (used != cells[i].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw SchemaMismatch("row " + std::to_string(row) + ": column " + kSweepColumns[i] +
                           " is not a number: '" + cells[i] + "'");
    }
  }
  return {static_cast<std::uint64_t>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
}

void render_sweep(const std::vector<SweepPoint>& points, const std::filesystem::path& out,
                  ReportFiles& files) {
  Series sojourn{"sojourn degradation vs kill (%)", "#d62728", {}, false};
  Series makespan{"makespan degradation vs wait (%)", "#1f77b4", {}, false};
  Series swapped{"swapped bytes of t_l (MiB)", "#2ca02c", {}, true};
  for (const auto& p : points) {
    double x = static_cast<double>(p.high_ballast_bytes) / (1 << 20);
    sojourn.points.emplace_back(x, p.sojourn_degradation * 100);
    makespan.points.emplace_back(x, p.makespan_degradation * 100);
    swapped.points.emplace_back(x, p.swapped_bytes_low / (1 << 20));
  }
  write_file(out / "footprint.svg",
             render_svg("Overheads when varying memory usage", "memory allocated by t_h (MiB)",
                        "degradation (%)", {sojourn, makespan, swapped}, "swapped (MiB)"));
  files.plots = {out / "footprint.svg"};

  std::vector<double> sw, ds, dm;
  for (const auto& p : points) {
    sw.push_back(p.swapped_bytes_low);
    ds.push_back(p.sojourn_degradation);
    dm.push_back(p.makespan_degradation);
  }
  std::ostringstream md;
  md << "# Footprint sweep\n\n";
  if (points.empty()) md << "No data.\n";
  else {
    md << "| t_h ballast MiB | swapped MiB | sojourn degradation vs kill | makespan degradation vs "
          "wait |\n|---|---|---|---|\n";
    for (const auto& p : points) {
      md << "| " << fixed(static_cast<double>(p.high_ballast_bytes) / (1 << 20), 0) << " | "
         << fixed(p.swapped_bytes_low / (1 << 20), 1) << " | "
         << fixed(p.sojourn_degradation * 100, 1) << "% | "
         << fixed(p.makespan_degradation * 100, 1) << "% |\n";
    }
    md << "\nSpearman(swapped, sojourn degradation) = " << fixed(spearman(sw, ds), 3)
       << "; Spearman(swapped, makespan degradation) = " << fixed(spearman(sw, dm), 3) << ".\n";
  }
  for (const auto& w : files.warnings) md << "\nWarning: " << w << "\n";
  write_file(out / "summary.md", md.str());
  files.summary = out / "summary.md";
}

}  // namespace

ReportFiles render_report(const std::filesystem::path& csv, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  CsvTable table = read_csv(csv);
  ReportFiles files;
  if (table.header.empty()) {
    files.warnings.push_back(csv.string() + " is empty");
    spdlog::warn("{} is empty; writing empty plots", csv.string());
    render_baseline({}, out, files);
    return files;
  }
  if (table.rows.empty()) {
    files.warnings.push_back(csv.string() + " has no data rows");
    spdlog::warn("{} has no data rows; writing empty plots", csv.string());
  }
  if (table.header == kRunColumns) {
    std::vector<RunMetrics> runs;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      runs.push_back(run_from_row(table.rows[i], i + 2));
    }
    render_baseline(aggregate(runs), out, files);
  } else if (table.header == kAggregateColumns) {
    std::vector<AggregateMetrics> aggs;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      aggs.push_back(aggregate_from_row(table.rows[i], i + 2));
    }
    render_baseline(aggs, out, files);
  } else if (table.header == kSweepColumns) {
    std::vector<SweepPoint> points;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      points.push_back(sweep_from_row(table.rows[i], i + 2));
    }
    std::sort(points.begin(), points.end(), [](const auto& a, const auto& b) {
      return a.high_ballast_bytes < b.high_ballast_bytes;
    });
    render_sweep(points, out, files);
  } else {
    throw SchemaMismatch("row 1: header matches neither the runs, aggregates nor sweep schema");
  }
  return files;
}

}  // namespace preempt::harness
