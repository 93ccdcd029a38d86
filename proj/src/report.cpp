#include "towerlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace towerlab {

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Series {
  std::string label;
  std::string color;
  std::vector<std::pair<double, double>> points;
};

// Minimal line-chart panel; fixed geometry, deterministic output.
class Panel {
 public:
  Panel(double x, double y, double w, double h, std::string title)
      : x_(x), y_(y), w_(w), h_(h), title_(std::move(title)) {}

  void add_series(Series s) { series_.push_back(std::move(s)); }
  void add_baseline(double y, std::string label) {
    baselines_.emplace_back(y, std::move(label));
  }

  void render(std::ostringstream& svg) const {
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const auto& s : series_) {
      for (const auto& [px, py] : s.points) {
        if (std::isnan(py)) continue;
        if (!any) {
          xmin = xmax = px;
          ymin = ymax = py;
          any = true;
        }
        xmin = std::min(xmin, px);
        xmax = std::max(xmax, px);
        ymin = std::min(ymin, py);
        ymax = std::max(ymax, py);
      }
    }
    for (const auto& [by, label] : baselines_) {
      if (!any) {
        ymin = ymax = by;
        any = true;
      }
      ymin = std::min(ymin, by);
      ymax = std::max(ymax, by);
    }
    if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
    if (ymax - ymin < 1e-12) ymax = ymin + 1.0;
    const double pad_y = 0.08 * (ymax - ymin);
    ymin -= pad_y;
    ymax += pad_y;

    const double plot_x = x_ + 42, plot_y = y_ + 22;
    const double plot_w = w_ - 52, plot_h = h_ - 54;
    auto sx = [&](double v) { return plot_x + (v - xmin) / (xmax - xmin) * plot_w; };
    auto sy = [&](double v) { return plot_y + plot_h - (v - ymin) / (ymax - ymin) * plot_h; };

    svg << "<rect x='" << fmt(plot_x) << "' y='" << fmt(plot_y) << "' width='"
        << fmt(plot_w) << "' height='" << fmt(plot_h)
        << "' fill='white' stroke='#888' stroke-width='1'/>\n";
    svg << "<text x='" << fmt(x_ + w_ / 2) << "' y='" << fmt(y_ + 14)
        << "' font-size='11' text-anchor='middle' font-family='sans-serif'>"
        << title_ << "</text>\n";
    svg << "<text x='" << fmt(plot_x - 4) << "' y='" << fmt(sy(ymin) + 4)
        << "' font-size='9' text-anchor='end' font-family='sans-serif'>"
        << fmt(ymin) << "</text>\n";
    svg << "<text x='" << fmt(plot_x - 4) << "' y='" << fmt(sy(ymax) + 4)
        << "' font-size='9' text-anchor='end' font-family='sans-serif'>"
        << fmt(ymax) << "</text>\n";
    svg << "<text x='" << fmt(sx(xmin)) << "' y='" << fmt(plot_y + plot_h + 12)
        << "' font-size='9' text-anchor='middle' font-family='sans-serif'>"
        << fmt(xmin) << "</text>\n";
    svg << "<text x='" << fmt(sx(xmax)) << "' y='" << fmt(plot_y + plot_h + 12)
        << "' font-size='9' text-anchor='middle' font-family='sans-serif'>"
        << fmt(xmax) << "</text>\n";

    for (const auto& [by, label] : baselines_) {
      svg << "<line x1='" << fmt(plot_x) << "' y1='" << fmt(sy(by)) << "' x2='"
          << fmt(plot_x + plot_w) << "' y2='" << fmt(sy(by))
          << "' stroke='#999' stroke-dasharray='4,3' stroke-width='1'/>\n";
    }

    int legend_i = 0;
    for (const auto& s : series_) {
      std::string pts;
      bool first = true;
      for (const auto& [px, py] : s.points) {
        if (std::isnan(py)) continue;
        pts += (first ? "" : " ") + fmt(sx(px)) + "," + fmt(sy(py));
        first = false;
      }
      if (!pts.empty()) {
        svg << "<polyline points='" << pts << "' fill='none' stroke='" << s.color
            << "' stroke-width='1.5'/>\n";
      }
      svg << "<text x='" << fmt(plot_x + 4) << "' y='"
          << fmt(plot_y + 12 + 11 * legend_i) << "' font-size='9' fill='"
          << s.color << "' font-family='sans-serif'>" << s.label << "</text>\n";
      ++legend_i;
    }
  }

 private:
  double x_, y_, w_, h_;
  std::string title_;
  std::vector<Series> series_;
  std::vector<std::pair<double, std::string>> baselines_;
};

std::string method_color(const std::string& method) {
  if (method == "sft") return "#1f77b4";
  if (method == "grpo") return "#ff7f0e";
  if (method == "gspo") return "#2ca02c";
  return "#7f7f7f";
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("emit_report: cannot write " + path);
  f << content;
}

std::string matrix_svg(const ReportInputs& in) {
  // One panel per (evaluated_on, trained_on); series per method.
  std::vector<std::string> trained, evaluated;
  for (const auto& c : in.matrix.cells) {
    if (std::find(trained.begin(), trained.end(), c.trained_on) == trained.end()) {
      trained.push_back(c.trained_on);
    }
    if (std::find(evaluated.begin(), evaluated.end(), c.evaluated_on) ==
        evaluated.end()) {
      evaluated.push_back(c.evaluated_on);
    }
  }
  std::sort(trained.begin(), trained.end());
  std::sort(evaluated.begin(), evaluated.end());

  const double pw = 280, ph = 190;
  const double width = pw * std::max<std::size_t>(1, trained.size());
  const double height = ph * std::max<std::size_t>(1, evaluated.size());
  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << fmt(width)
      << "' height='" << fmt(height) << "'>\n";
  svg << "<rect width='100%' height='100%' fill='#fafafa'/>\n";

  for (std::size_t r = 0; r < evaluated.size(); ++r) {
    for (std::size_t c = 0; c < trained.size(); ++c) {
      Panel panel(pw * static_cast<double>(c), ph * static_cast<double>(r), pw, ph,
                  "train " + trained[c] + " / eval " + evaluated[r]);
      std::set<std::string> methods;
      for (const auto& cell : in.matrix.cells) methods.insert(cell.method);
      for (const auto& method : methods) {
        Series s;
        s.label = method;
        s.color = method_color(method);
        for (const auto& cell : in.matrix.cells) {
          if (cell.method == method && cell.trained_on == trained[c] &&
              cell.evaluated_on == evaluated[r] && cell.present) {
            s.points.emplace_back(cell.step, cell.result.mean);
          }
        }
        std::sort(s.points.begin(), s.points.end());
        panel.add_series(std::move(s));
      }
      const auto it = in.baselines.find(evaluated[r]);
      if (it != in.baselines.end()) panel.add_baseline(it->second.mean, "baseline");
      panel.render(svg);
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string probes_svg(const ReportInputs& in) {
  // Panels: one per target; series per model_tag (encoder-layer probes only).
  std::vector<ProbeTarget> targets{ProbeTarget::BinaryStability, ProbeTarget::XOffset};
  const double pw = 420, ph = 260;
  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << fmt(pw * 2)
      << "' height='" << fmt(ph) << "'>\n";
  svg << "<rect width='100%' height='100%' fill='#fafafa'/>\n";
  const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                           "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  for (std::size_t t = 0; t < targets.size(); ++t) {
    Panel panel(pw * static_cast<double>(t), 0, pw, ph,
                std::string("decodability: ") + probe_target_name(targets[t]) +
                    (targets[t] == ProbeTarget::BinaryStability ? " (accuracy)"
                                                                : " (R^2)"));
    std::vector<std::string> tags;
    for (const auto& p : in.probes) {
      if (p.target != targets[t] || p.features != ProbeFeatures::EncoderLayer ||
          p.shuffled) {
        continue;
      }
      if (std::find(tags.begin(), tags.end(), p.model_tag) == tags.end()) {
        tags.push_back(p.model_tag);
      }
    }
    std::sort(tags.begin(), tags.end());
    for (std::size_t k = 0; k < tags.size(); ++k) {
      Series s;
      s.label = tags[k];
      s.color = palette[k % 8];
      for (const auto& p : in.probes) {
        if (p.target == targets[t] && p.model_tag == tags[k] &&
            p.features == ProbeFeatures::EncoderLayer && !p.shuffled) {
          s.points.emplace_back(p.layer, p.mean_metric);
        }
      }
      std::sort(s.points.begin(), s.points.end());
      panel.add_series(std::move(s));
    }
    panel.render(svg);
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string logs_svg(const ReportInputs& in) {
  const double pw = 420, ph = 260;
  const std::size_t n = std::max<std::size_t>(1, in.logs.size());
  const std::size_t cols = std::min<std::size_t>(2, n);
  const std::size_t rows = (n + cols - 1) / cols;
  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << fmt(pw * static_cast<double>(cols))
      << "' height='" << fmt(ph * static_cast<double>(rows)) << "'>\n";
  svg << "<rect width='100%' height='100%' fill='#fafafa'/>\n";
  for (std::size_t i = 0; i < in.logs.size(); ++i) {
    const auto& [label, log] = in.logs[i];
    Panel panel(pw * static_cast<double>(i % cols), ph * static_cast<double>(i / cols),
                pw, ph, "training: " + label);
    Series raw;
    raw.label = "per step";
    raw.color = "#bbbbbb";
    Series avg;
    avg.label = "running avg (25)";
    avg.color = "#d62728";
    for (const auto& row : log.rows) {
      raw.points.emplace_back(row.step, row.value);
      avg.points.emplace_back(row.step, row.running25);
    }
    panel.add_series(std::move(raw));
    panel.add_series(std::move(avg));
    panel.render(svg);
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string summary_html(const ReportInputs& in) {
  std::ostringstream html;
  html << "<!DOCTYPE html>\n<html><head><meta charset='utf-8'>"
       << "<title>towerlab report</title>"
       << "<style>body{font-family:sans-serif;margin:24px}"
       << "table{border-collapse:collapse}td,th{border:1px solid #ccc;"
       << "padding:3px 8px;font-size:13px}</style></head><body>\n";
  html << "<h1>towerlab report</h1>\n";

  html << "<h2>Baselines (uniform random legal actions)</h2>\n<table>"
       << "<tr><th>task</th><th>mean</th><th>95% CI</th></tr>\n";
  for (const auto& [task, b] : in.baselines) {
    html << "<tr><td>" << task << "</td><td>" << fmt(b.mean) << "</td><td>["
         << fmt(b.ci_low) << ", " << fmt(b.ci_high) << "]</td></tr>\n";
  }
  html << "</table>\n";

  html << "<h2>Generalization matrix (final checkpoints)</h2>\n";
  if (in.matrix.cells.empty()) {
    html << "<p>no data</p>\n";
  } else {
    html << "<table><tr><th>method</th><th>trained on</th><th>evaluated on</th>"
         << "<th>step</th><th>mean</th><th>95% CI</th><th>legal rate</th></tr>\n";
    // final checkpoint per (method, trained_on, evaluated_on)
    std::map<std::string, const MatrixCell*> finals;
    for (const auto& c : in.matrix.cells) {
      if (!c.present) continue;
      const std::string key = c.method + "|" + c.trained_on + "|" + c.evaluated_on;
      auto it = finals.find(key);
      if (it == finals.end() || it->second->step < c.step) finals[key] = &c;
    }
    for (const auto& [key, c] : finals) {
      html << "<tr><td>" << c->method << "</td><td>" << c->trained_on
           << "</td><td>" << c->evaluated_on << "</td><td>" << c->step
           << "</td><td>" << fmt(c->result.mean) << "</td><td>["
           << fmt(c->result.ci_low) << ", " << fmt(c->result.ci_high)
           << "]</td><td>" << fmt(c->result.legal_rate) << "</td></tr>\n";
    }
    html << "</table>\n<p><img src='matrix.svg' alt='matrix'/></p>\n";
  }

  html << "<h2>Decodability probes</h2>\n";
  if (in.probes.empty()) {
    html << "<p>no data</p>\n";
  } else {
    html << "<table><tr><th>model</th><th>target</th><th>features</th>"
         << "<th>layer</th><th>mean metric</th></tr>\n";
    for (const auto& p : in.probes) {
      html << "<tr><td>" << p.model_tag << (p.shuffled ? " (shuffled)" : "")
           << "</td><td>" << probe_target_name(p.target) << "</td><td>"
           << (p.features == ProbeFeatures::EncoderLayer ? "encoder" : "center row")
           << "</td><td>" << p.layer << "</td><td>" << fmt(p.mean_metric)
           << "</td></tr>\n";
    }
    html << "</table>\n<p><img src='probes.svg' alt='probes'/></p>\n";
  }

  if (!in.logs.empty()) {
    html << "<h2>Training logs</h2>\n<p><img src='train_logs.svg' alt='logs'/></p>\n";
  }
  html << "</body></html>\n";
  return html.str();
}

}  // namespace

void emit_report(const ReportInputs& inputs, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_file(out_dir + "/matrix.csv", inputs.matrix.to_csv());
  write_file(out_dir + "/matrix.svg", matrix_svg(inputs));
  write_file(out_dir + "/probes.csv", probes_to_csv(inputs.probes));
  write_file(out_dir + "/probes.svg", probes_svg(inputs));
  if (!inputs.logs.empty()) {
    write_file(out_dir + "/train_logs.svg", logs_svg(inputs));
  }
  write_file(out_dir + "/summary.html", summary_html(inputs));
}

}  // namespace towerlab
