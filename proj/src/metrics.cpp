#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "wcmdp/harness.hpp"

namespace wcmdp {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows) {
  out << "algo,env,seed,episode,return,rel_error\n";
  for (const MetricRow& r : rows) {
    out << r.algo << ',' << r.env << ',' << r.seed << ',' << r.episode << ',' << format_double(r.ret) << ',';
    if (r.rel_error) out << format_double(*r.rel_error);
    out << '\n';
  }
}

void write_timings_csv(std::ostream& out, std::span<const MetricRow> rows) {
  out << "algo,env,seed,episode,wall_ms\n";
  for (const MetricRow& r : rows) {
    out << r.algo << ',' << r.env << ',' << r.seed << ',' << r.episode << ',' << format_double(r.wall_ms) << '\n';
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

template <typename T>
T parse_number(const std::string& text, int line_no) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw std::runtime_error("metrics line " + std::to_string(line_no) + ": bad number '" + text + "'");
  }
  return v;
}

}  // namespace

std::vector<MetricRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "algo,env,seed,episode,return,rel_error") {
    throw std::runtime_error("metrics: unexpected header");
  }
  std::vector<MetricRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw std::runtime_error("metrics line " + std::to_string(line_no) + ": expected 6 fields");
    MetricRow r;
    r.algo = f[0];
    r.env = f[1];
    r.seed = parse_number<std::uint64_t>(f[2], line_no);
    r.episode = parse_number<int>(f[3], line_no);
    r.ret = parse_number<double>(f[4], line_no);
    if (!f[5].empty()) r.rel_error = parse_number<double>(f[5], line_no);
    rows.push_back(std::move(r));
  }
  return rows;
}

double relative_error(std::span<const double> v, std::span<const double> v_star) {
  if (v.size() != v_star.size()) throw std::invalid_argument("relative_error: length mismatch");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double d = v[k] - v_star[k];
    num += d * d;
    den += v_star[k] * v_star[k];
  }
  if (den == 0.0) throw std::invalid_argument("relative_error: reference has zero norm");
  return std::sqrt(num) / std::sqrt(den);
}

std::vector<double> agent_values(const WcmdpSpec& spec, const TabularAgent& agent,
                                 std::span<const std::vector<std::size_t>> feasible) {
  std::vector<double> v(spec.num_states());
  for (std::size_t s = 0; s < v.size(); ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a : feasible[s]) best = std::max(best, agent.q_value(s, a));
    v[s] = best;
  }
  return v;
}

void Manifest::add(std::string key, std::span<const double> values) {
  std::string text;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k) text += ',';
    text += format_double(values[k]);
  }
  add(std::move(key), std::move(text));
}

std::optional<std::string> Manifest::get(const std::string& key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return v;
  }
  return std::nullopt;
}

void write_manifest(std::ostream& out, const Manifest& m) {
  for (const auto& [k, v] : m.entries) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("manifest entry cannot be written: " + k);
    }
    out << k << '=' << v << '\n';
  }
}

Manifest read_manifest(std::istream& in) {
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("manifest: line without '='");
    m.add(line.substr(0, eq), line.substr(eq + 1));
  }
  return m;
}

}  // namespace wcmdp
