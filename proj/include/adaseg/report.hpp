#pragma once

#include <array>
#include <string>
#include <vector>

#include "adaseg/setloss.hpp"

// Tab-separated tables (the CLI's output format), the relative-delta
// formatting used in result tables, and a dependency-free SVG scatter writer
// for the embedding diagnostics.
namespace adaseg::cli {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_tsv() const;
  static Table from_tsv(const std::string& text);  // throws on ragged rows
  std::string pretty() const;                      // aligned columns for stdout
};

// "(+6.4%)" style: 100*(value-baseline)/baseline, one decimal,
// rounded half away from zero
std::string format_delta(double value, double baseline);
std::string format_metric(double value);  // two decimals

// metric/value[/delta] rows for one evaluation
Table metrics_table(const loss::MetricReport& r, const loss::MetricReport* baseline);

struct ScatterPoint {
  double x = 0, y = 0;
  int series = 0;
};
void write_svg_scatter(const std::string& path, const std::vector<ScatterPoint>& points,
                       const std::string& title);

}  // namespace adaseg::cli
