#include "adaseg/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace adaseg::cli {

std::string Table::to_tsv() const {
  std::ostringstream os;
  for (std::size_t c = 0; c < header.size(); ++c) os << (c ? "\t" : "") << header[c];
  os << "\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "\t" : "") << row[c];
    os << "\n";
  }
  return os.str();
}

Table Table::from_tsv(const std::string& text) {
  Table t;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t at = 0;
    while (true) {
      const auto tab = line.find('\t', at);
      cells.push_back(line.substr(at, tab == std::string::npos ? std::string::npos : tab - at));
      if (tab == std::string::npos) break;
      at = tab + 1;
    }
    if (t.header.empty()) {
      t.header = std::move(cells);
    } else {
      if (cells.size() != t.header.size())
        throw std::runtime_error("table parse: row width " + std::to_string(cells.size()) +
                                 " != header width " + std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (t.header.empty()) throw std::runtime_error("table parse: empty input");
  return t;
}

std::string Table::pretty() const {
  std::vector<std::size_t> width(header.size(), 0);
  auto widen = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  };
  widen(header);
  for (const auto& r : rows) widen(r);
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      os << row[c] << std::string(width[c] - row[c].size() + (c + 1 < row.size() ? 2 : 0), ' ');
    }
    os << "\n";
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  return os.str();
}

std::string format_delta(double value, double baseline) {
  if (baseline == 0.0) return value == 0.0 ? "(+0.0%)" : "(+inf%)";
  const double delta = 100.0 * (value - baseline) / baseline;
  double rounded = std::round(delta * 10.0) / 10.0;  // half away from zero
  if (rounded == 0.0) rounded = 0.0;                 // never print -0.0
  char buf[32];
  std::snprintf(buf, sizeof(buf), "(%+.1f%%)", rounded);
  return buf;
}

std::string format_metric(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", value);
  return buf;
}

Table metrics_table(const loss::MetricReport& r, const loss::MetricReport* baseline) {
  Table t;
  t.header = {"metric", "value", "delta"};
  const std::pair<const char*, double> vals[] = {
      {"mIoU", r.miou}, {"fwIoU", r.fwiou}, {"mACC", r.macc}, {"pACC", r.pacc}};
  const double base[] = {baseline ? baseline->miou : 0, baseline ? baseline->fwiou : 0,
                         baseline ? baseline->macc : 0, baseline ? baseline->pacc : 0};
  for (int i = 0; i < 4; ++i) {
    // deltas compare displayed precision, so a table against itself is +0.0%
    const double shown = std::stod(format_metric(vals[i].second));
    t.rows.push_back({vals[i].first, format_metric(vals[i].second),
                      baseline ? format_delta(shown, base[i]) : "-"});
  }
  return t;
}

void write_svg_scatter(const std::string& path, const std::vector<ScatterPoint>& points,
                       const std::string& title) {
  double min_x = 0, max_x = 1, min_y = 0, max_y = 1;
  if (!points.empty()) {
    min_x = max_x = points[0].x;
    min_y = max_y = points[0].y;
    for (const auto& p : points) {
      min_x = std::min(min_x, p.x);
      max_x = std::max(max_x, p.x);
      min_y = std::min(min_y, p.y);
      max_y = std::max(max_y, p.y);
    }
  }
  const double span_x = max_x - min_x < 1e-12 ? 1.0 : max_x - min_x;
  const double span_y = max_y - min_y < 1e-12 ? 1.0 : max_y - min_y;
  const int w = 480, h = 400, margin = 40;

  static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  out << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
      << "</text>\n";
  out << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << w - 2 * margin
      << "\" height=\"" << h - 2 * margin << "\" fill=\"none\" stroke=\"#888\"/>\n";
  for (const auto& p : points) {
    const double px = margin + (p.x - min_x) / span_x * (w - 2 * margin);
    const double py = h - margin - (p.y - min_y) / span_y * (h - 2 * margin);
    out << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"3.5\" fill=\""
        << colors[static_cast<std::size_t>(p.series) % 6] << "\" fill-opacity=\"0.75\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace adaseg::cli
