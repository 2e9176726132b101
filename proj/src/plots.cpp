#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

#include "wcmdp/harness.hpp"

namespace wcmdp {

std::vector<AggregatePoint> aggregate(std::span<const MetricRow> rows, int window, Metric metric) {
  const std::size_t w = static_cast<std::size_t>(std::max(window, 1));
  // (env, algo) -> seed -> [(episode, value)] in row order
  std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, std::vector<std::pair<int, double>>>> groups;
  for (const MetricRow& r : rows) {
    std::optional<double> value = metric == Metric::kReturn ? std::optional<double>(r.ret) : r.rel_error;
    if (!value) continue;
    groups[{r.env, r.algo}][r.seed].emplace_back(r.episode, *value);
  }

  std::vector<AggregatePoint> out;
  for (auto& [key, by_seed] : groups) {
    std::map<int, std::vector<double>> per_episode;
    for (auto& [seed, series] : by_seed) {
      std::sort(series.begin(), series.end());
      double running = 0.0;
      for (std::size_t k = 0; k < series.size(); ++k) {
        running += series[k].second;
        if (k >= w) running -= series[k - w].second;
        const std::size_t n = std::min(k + 1, w);
        per_episode[series[k].first].push_back(running / static_cast<double>(n));
      }
    }
    for (const auto& [episode, values] : per_episode) {
      const double k = static_cast<double>(values.size());
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= k;
      double half = 0.0;
      if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        half = 1.96 * std::sqrt(ss / (k - 1.0)) / std::sqrt(k);
      }
      out.push_back(AggregatePoint{key.first, key.second, episode, mean, mean - half, mean + half});
    }
  }
  return out;
}

void write_plot_csv(std::ostream& out, std::span<const AggregatePoint> points) {
  out << "series,episode,mean,ci_lo,ci_hi\n";
  for (const AggregatePoint& p : points) {
    out << p.series << ',' << p.episode << ',' << format_double(p.mean) << ',' << format_double(p.ci_lo) << ','
        << format_double(p.ci_hi) << '\n';
  }
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

void write_plot_svg(std::ostream& out, std::span<const AggregatePoint> points, const std::string& title) {
  constexpr double kWidth = 720, kHeight = 420, kLeft = 60, kRight = 140, kTop = 40, kBottom = 40;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

  std::map<std::string, std::vector<const AggregatePoint*>> series;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const AggregatePoint& p : points) {
    series[p.series].push_back(&p);
    if (first) {
      x0 = x1 = p.episode;
      y0 = p.ci_lo;
      y1 = p.ci_hi;
      first = false;
    }
    x0 = std::min<double>(x0, p.episode);
    x1 = std::max<double>(x1, p.episode);
    y0 = std::min(y0, p.ci_lo);
    y1 = std::max(y1, p.ci_hi);
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kLeft << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
      << "</text>\n";
  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#888\"/>\n";
  out << "<text x=\"4\" y=\"" << kTop + 10 << "\" font-family=\"sans-serif\" font-size=\"10\">" << fixed(y1)
      << "</text>\n";
  out << "<text x=\"4\" y=\"" << kTop + ph << "\" font-family=\"sans-serif\" font-size=\"10\">" << fixed(y0)
      << "</text>\n";
  std::size_t c = 0;
  for (const auto& [name, pts] : series) {
    const char* color = kColors[c % std::size(kColors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < pts.size(); ++k) {
      out << (k ? " " : "") << fixed(sx(pts[k]->episode)) << ',' << fixed(sy(pts[k]->mean));
    }
    out << "\"/>\n";
    out << "<text x=\"" << kWidth - kRight + 10 << "\" y=\"" << kTop + 16 * (c + 1) << "\" fill=\"" << color
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(name) << "</text>\n";
    ++c;
  }
  out << "</svg>\n";
}

std::vector<std::string> emit_plots(std::span<const MetricRow> rows, int window, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir + ": " + ec.message());

  std::vector<std::string> written;
  const std::pair<Metric, const char*> metrics[] = {{Metric::kReturn, "return"}, {Metric::kRelError, "rel_error"}};
  for (const auto& [metric, label] : metrics) {
    const auto points = aggregate(rows, metric == Metric::kReturn ? window : 1, metric);
    std::map<std::string, std::vector<AggregatePoint>> by_env;
    for (const auto& p : points) by_env[p.env].push_back(p);
    for (const auto& [env, env_points] : by_env) {
      const std::string stem = (fs::path(dir) / ("plot_" + env + "_" + label)).string();
      std::ofstream csv(stem + ".csv", std::ios::binary);
      write_plot_csv(csv, env_points);
      std::ofstream svg(stem + ".svg", std::ios::binary);
      write_plot_svg(svg, env_points, env + " " + label);
      if (!csv || !svg) throw std::runtime_error("cannot write " + stem);
      written.push_back(stem + ".csv");
      written.push_back(stem + ".svg");
    }
  }
  return written;
}

}  // namespace wcmdp
