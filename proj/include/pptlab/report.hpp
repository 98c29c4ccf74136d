#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pptlab/eval.hpp"

namespace pptlab::report {

// Gaussian kernel density estimate evaluated at `grid`, bandwidth by Silverman's
// rule 0.9 min(sd, IQR/1.34) n^(-1/5).
double silverman_bandwidth(std::span<const double> values);
std::vector<double> gaussian_kde(std::span<const double> values, std::span<const double> grid, double bandwidth);

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::string color;
};

struct Panel {
  std::string title, x_label, y_label;
  std::vector<Series> series;
  bool markers = false;
};

// Panels laid out row-major in `columns` columns, one shared legend at the top.
std::string render_svg(const std::vector<Panel>& panels, std::size_t columns, const std::string& title);

// Rows: report label, algorithm, sigma2, final avg_suboptimality, final avg_regret,
// delta (final avg_regret minus its value at sigma2_base; empty when the base level is absent).
std::string delta_table_csv(const std::vector<eval::EvalReport>& reports, const std::vector<std::string>& labels,
                            double sigma2_base);

// Writes the figure set and tables; returns the files written in order.
// One report: per-sigma2 panels. Two reports: also side-by-side regret-vs-sigma2 panels.
std::vector<std::filesystem::path> write_report(const std::vector<eval::EvalReport>& reports,
                                                const std::vector<std::string>& labels,
                                                const std::filesystem::path& out, double sigma2_base);

}  // namespace pptlab::report
