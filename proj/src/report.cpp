#include "pptlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>

#include "pptlab/binary_io.hpp"
#include "pptlab/errors.hpp"
#include "pptlab/text.hpp"

namespace pptlab::report {

namespace fs = std::filesystem;

double silverman_bandwidth(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) throw ContractError("silverman_bandwidth: need at least two values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(n - 1);
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return i + 1 < n ? sorted[i] * (1.0 - frac) + sorted[i + 1] * frac : sorted[i];
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  if (!(spread > 0.0)) spread = std::max(1e-3, 1e-3 * std::abs(mean));  // all values equal
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

std::vector<double> gaussian_kde(std::span<const double> values, std::span<const double> grid, double bandwidth) {
  if (values.empty()) throw ContractError("gaussian_kde: no values");
  if (!(bandwidth > 0.0)) throw ContractError("gaussian_kde: bandwidth must be > 0");
  const double norm = 1.0 / (static_cast<double>(values.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (double v : values) {
      const double z = (grid[g] - v) / bandwidth;
      acc += std::exp(-0.5 * z * z);
    }
    out[g] = acc * norm;
  }
  return out;
}

namespace {

constexpr double kPanelW = 380, kPanelH = 270;
constexpr double kLeft = 64, kRight = 16, kTop = 30, kBottom = 46;
constexpr double kLegendH = 34, kTitleH = 30;

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

struct Axis {
  double lo, hi, step;
};

Axis nice_axis(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0, 0.2};
  if (hi - lo < 1e-12) {
    const double pad = std::abs(lo) > 1e-12 ? 0.5 * std::abs(lo) : 0.5;
    lo -= pad;
    hi += pad;
  }
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  return {std::floor(lo / step + 1e-9) * step, std::ceil(hi / step - 1e-9) * step, step};
}

void draw_panel(std::ostringstream& svg, const Panel& p, double ox, double oy) {
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : p.series) {
    for (double v : s.x) xlo = std::min(xlo, v), xhi = std::max(xhi, v);
    for (double v : s.y)
      if (std::isfinite(v)) ylo = std::min(ylo, v), yhi = std::max(yhi, v);
  }
  const Axis ax = nice_axis(xlo, xhi), ay = nice_axis(ylo, yhi);
  const double pw = kPanelW - kLeft - kRight, ph = kPanelH - kTop - kBottom;
  const double x0 = ox + kLeft, y0 = oy + kTop;
  auto px = [&](double v) { return x0 + (v - ax.lo) / (ax.hi - ax.lo) * pw; };
  auto py = [&](double v) { return y0 + ph - (v - ay.lo) / (ay.hi - ay.lo) * ph; };

  svg << "<g>\n<text x=\"" << num(x0 + pw / 2) << "\" y=\"" << num(oy + 18)
      << "\" text-anchor=\"middle\" font-size=\"13\">" << esc(p.title) << "</text>\n";
  svg << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0;; ++i) {
    const double v = ax.lo + i * ax.step;
    if (v > ax.hi + 1e-9 * ax.step) break;
    svg << "<line x1=\"" << num(px(v)) << "\" y1=\"" << num(y0 + ph) << "\" x2=\"" << num(px(v)) << "\" y2=\""
        << num(y0 + ph + 4) << "\" stroke=\"#444\"/><text x=\"" << num(px(v)) << "\" y=\"" << num(y0 + ph + 16)
        << "\" text-anchor=\"middle\" font-size=\"10\">" << tick_label(v) << "</text>\n";
  }
  for (int i = 0;; ++i) {
    const double v = ay.lo + i * ay.step;
    if (v > ay.hi + 1e-9 * ay.step) break;
    svg << "<line x1=\"" << num(x0) << "\" y1=\"" << num(py(v)) << "\" x2=\"" << num(x0 + pw) << "\" y2=\""
        << num(py(v)) << "\" stroke=\"#ddd\"/><text x=\"" << num(x0 - 5) << "\" y=\"" << num(py(v) + 3)
        << "\" text-anchor=\"end\" font-size=\"10\">" << tick_label(v) << "</text>\n";
  }
  svg << "<text x=\"" << num(x0 + pw / 2) << "\" y=\"" << num(y0 + ph + 34)
      << "\" text-anchor=\"middle\" font-size=\"11\">" << esc(p.x_label) << "</text>\n";
  svg << "<text transform=\"translate(" << num(ox + 14) << "," << num(y0 + ph / 2)
      << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"11\">" << esc(p.y_label) << "</text>\n";

  for (const auto& s : p.series) {
    svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.6\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      svg << (i ? " " : "") << num(px(s.x[i])) << "," << num(py(s.y[i]));
    }
    svg << "\"/>\n";
    if (p.markers) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.y[i])) continue;
        svg << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i])) << "\" r=\"3\" fill=\""
            << s.color << "\"/>\n";
      }
    }
  }
  svg << "</g>\n";
}

// Same algorithm, same color in every figure.
class Palette {
 public:
  std::string operator()(const std::string& name) {
    static const char* fixed[][2] = {{"ucb", "#7f7f7f"}, {"random", "#bcbd22"}};
    for (const auto& f : fixed)
      if (name == f[0]) return f[1];
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                   "#8c564b", "#e377c2", "#17becf", "#393b79", "#637939"};
    auto it = assigned_.find(name);
    if (it != assigned_.end()) return it->second;
    const std::string c = colors[assigned_.size() % std::size(colors)];
    assigned_.emplace(name, c);
    return c;
  }

 private:
  std::map<std::string, std::string> assigned_;
};

std::vector<double> steps(std::size_t n) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(i + 1);
  return t;
}

Panel regret_vs_sigma2(const eval::EvalReport& r, const std::string& title, Palette& color) {
  Panel p{title, "test sigma^2", "final average regret", {}, true};
  for (const auto& algo : r.algorithms) {
    Series s{algo, {}, {}, color(algo)};
    for (double sig : r.config.sigma2_list) {
      s.x.push_back(sig);
      s.y.push_back(r.cell(algo, sig).regret.back());
    }
    p.series.push_back(std::move(s));
  }
  return p;
}

std::vector<Panel> per_sigma2_panels(const eval::EvalReport& r, Palette& color, std::size_t& rows) {
  const auto& sig = r.config.sigma2_list;
  bool any_prediction = false;
  for (const auto& c : r.cells) any_prediction = any_prediction || c.prediction_loss.has_value();
  rows = any_prediction ? 4 : 3;
  std::vector<Panel> panels;
  for (double s : sig) {
    Panel p{"sigma^2 = " + fmt_label(s), "t", "average suboptimality", {}, false};
    for (const auto& a : r.algorithms) {
      const auto& c = r.cell(a, s);
      p.series.push_back({a, steps(c.suboptimality.size()), c.suboptimality, color(a)});
    }
    panels.push_back(std::move(p));
  }
  for (double s : sig) {
    Panel p{"sigma^2 = " + fmt_label(s), "t", "average regret", {}, false};
    for (const auto& a : r.algorithms) {
      const auto& c = r.cell(a, s);
      p.series.push_back({a, steps(c.regret.size()), c.regret, color(a)});
    }
    panels.push_back(std::move(p));
  }
  for (double s : sig) {
    Panel p{"sigma^2 = " + fmt_label(s), "total regret", "density", {}, false};
    double top = 0.0;
    for (const auto& a : r.algorithms)
      for (double v : r.cell(a, s).totals) top = std::max(top, v);
    std::vector<double> grid(200);
    for (std::size_t i = 0; i < grid.size(); ++i)
      grid[i] = top * 1.05 * static_cast<double>(i) / static_cast<double>(grid.size() - 1);
    for (const auto& a : r.algorithms) {
      const auto& totals = r.cell(a, s).totals;
      if (totals.size() < 2) continue;
      p.series.push_back({a, grid, gaussian_kde(totals, grid, silverman_bandwidth(totals)), color(a)});
    }
    panels.push_back(std::move(p));
  }
  if (any_prediction) {
    for (double s : sig) {
      Panel p{"sigma^2 = " + fmt_label(s), "t", "online prediction loss", {}, false};
      for (const auto& a : r.algorithms) {
        const auto& c = r.cell(a, s);
        if (c.prediction_loss) p.series.push_back({a, steps(c.prediction_loss->size()), *c.prediction_loss, color(a)});
      }
      panels.push_back(std::move(p));
    }
  }
  return panels;
}

// Relative final-regret gap of every other learned algorithm against dpt.
std::optional<Panel> gap_panel(const eval::EvalReport& r, const std::string& title, Palette& color) {
  const auto& algos = r.algorithms;
  if (std::find(algos.begin(), algos.end(), "dpt") == algos.end()) return std::nullopt;
  Panel p{title, "test sigma^2", "(regret - regret_dpt) / regret_dpt", {}, true};
  for (const auto& a : algos) {
    if (a == "dpt" || a == "ucb" || a == "random") continue;
    Series s{a, {}, {}, color(a)};
    for (double sig : r.config.sigma2_list) {
      const double base = r.cell("dpt", sig).regret.back();
      s.x.push_back(sig);
      s.y.push_back((r.cell(a, sig).regret.back() - base) / base);
    }
    p.series.push_back(std::move(s));
  }
  if (p.series.empty()) return std::nullopt;
  return p;
}

}  // namespace

std::string render_svg(const std::vector<Panel>& panels, std::size_t columns, const std::string& title) {
  if (panels.empty() || columns == 0) throw ContractError("render_svg: nothing to draw");
  const std::size_t rows = (panels.size() + columns - 1) / columns;
  const double width = kPanelW * static_cast<double>(columns);
  const double height = kTitleH + kLegendH + kPanelH * static_cast<double>(rows);
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" viewBox=\"0 0 " << num(width) << " " << num(height) << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << num(width / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">" << esc(title)
      << "</text>\n";

  std::vector<std::pair<std::string, std::string>> legend;
  for (const auto& p : panels)
    for (const auto& s : p.series)
      if (std::none_of(legend.begin(), legend.end(), [&](const auto& l) { return l.first == s.name; }))
        legend.emplace_back(s.name, s.color);
  double lx = 20;
  for (const auto& [name, color] : legend) {
    svg << "<line x1=\"" << num(lx) << "\" y1=\"" << num(kTitleH + 12) << "\" x2=\"" << num(lx + 22) << "\" y2=\""
        << num(kTitleH + 12) << "\" stroke=\"" << color << "\" stroke-width=\"3\"/><text x=\"" << num(lx + 27)
        << "\" y=\"" << num(kTitleH + 16) << "\" font-size=\"12\">" << esc(name) << "</text>\n";
    lx += 40 + 7.5 * static_cast<double>(name.size());
  }
  for (std::size_t i = 0; i < panels.size(); ++i) {
    draw_panel(svg, panels[i], kPanelW * static_cast<double>(i % columns),
               kTitleH + kLegendH + kPanelH * static_cast<double>(i / columns));
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string delta_table_csv(const std::vector<eval::EvalReport>& reports, const std::vector<std::string>& labels,
                            double sigma2_base) {
  std::ostringstream out;
  out << "report,algorithm,sigma2,final_avg_suboptimality,final_avg_regret,delta_regret\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const auto& sig = r.config.sigma2_list;
    const bool has_base = std::find(sig.begin(), sig.end(), sigma2_base) != sig.end();
    for (const auto& a : r.algorithms) {
      const auto curves = r.curves(a, "regret");
      for (double s : sig) {
        const auto& c = r.cell(a, s);
        out << labels[i] << ',' << a << ',' << fmt_double(s) << ',' << fmt_double(c.suboptimality.back()) << ','
            << fmt_double(c.regret.back()) << ',';
        if (has_base) out << fmt_double(eval::degradation_delta(curves, s, sigma2_base, c.regret.size() - 1));
        out << '\n';
      }
    }
  }
  return out.str();
}

std::vector<fs::path> write_report(const std::vector<eval::EvalReport>& reports,
                                   const std::vector<std::string>& labels, const fs::path& out,
                                   double sigma2_base) {
  if (reports.empty() || reports.size() != labels.size()) throw ContractError("write_report: reports/labels mismatch");
  fs::create_directories(out);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    io::write_text(out / name, text);
    written.push_back(out / name);
  };
  Palette color;
  for (const auto& r : reports)
    for (const auto& a : r.algorithms) color(a);

  if (reports.size() == 2) {
    std::vector<Panel> side{regret_vs_sigma2(reports[0], labels[0], color),
                            regret_vs_sigma2(reports[1], labels[1], color)};
    emit("regret_vs_sigma2.svg", render_svg(side, 2, "Average regret across increasing test variance"));
    std::vector<Panel> gaps;
    for (std::size_t i = 0; i < 2; ++i)
      if (auto g = gap_panel(reports[i], labels[i], color)) gaps.push_back(std::move(*g));
    if (!gaps.empty()) emit("gap_vs_dpt.svg", render_svg(gaps, gaps.size(), "Relative regret gap to DPT"));
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const std::string& label = labels[i];
    if (reports.size() != 2) {
      emit(label + "_regret_vs_sigma2.svg",
           render_svg({regret_vs_sigma2(r, label, color)}, 1, "Average regret across increasing test variance"));
      if (auto g = gap_panel(r, label, color)) emit(label + "_gap_vs_dpt.svg", render_svg({*g}, 1, "Relative regret gap to DPT"));
    }
    std::size_t rows = 0;
    const auto panels = per_sigma2_panels(r, color, rows);
    emit(label + "_rollouts.svg", render_svg(panels, r.config.sigma2_list.size(), "Online rollouts: " + label));
  }
  emit("delta_summary.csv", delta_table_csv(reports, labels, sigma2_base));
  return written;
}

}  // namespace pptlab::report
