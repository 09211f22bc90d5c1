#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "kernelspect/report.hpp"

namespace kernelspect {

namespace {

constexpr double kWidth = 760;
constexpr double kHeight = 440;
constexpr double kLeft = 70;
constexpr double kRight = 190;  // legend column
constexpr double kTop = 40;
constexpr double kBottom = 60;

struct Series {
  CompressionMode mode;
  std::vector<std::pair<double, double>> points;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
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

std::size_t column(const ReportDocument& doc, const std::string& name) {
  const auto& cols = report_columns(doc.kind);
  return static_cast<std::size_t>(std::find(cols.begin(), cols.end(), name) - cols.begin());
}

double as_number(const ReportValue& v) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  return std::nan("");
}

std::vector<Series> collect(const ReportDocument& doc, const std::string& x_col,
                            const std::string& y_col, bool log_x) {
  const std::size_t mc = column(doc, "mode");
  const std::size_t xc = column(doc, x_col);
  const std::size_t yc = column(doc, y_col);
  std::vector<Series> series;
  for (CompressionMode mode : kAllModes) {
    Series s{mode, {}};
    for (const auto& row : doc.records) {
      if (std::get<std::string>(row.at(mc)) != mode_name(mode)) continue;
      double x = as_number(row.at(xc));
      if (log_x) x = std::log10(x);
      s.points.emplace_back(x, as_number(row.at(yc)));
    }
    if (!s.points.empty()) series.push_back(std::move(s));
  }
  return series;
}

class Canvas {
 public:
  Canvas(std::string title, std::string x_label, std::string y_label, double x_min, double x_max)
      : x_min_(x_min), x_max_(x_max) {
    if (!(x_max_ > x_min_)) {
      x_min_ -= 0.5;
      x_max_ += 0.5;
    }
    out_ << "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n"
         << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kWidth
         << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight
         << "\">\n"
         << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
         << "\" fill=\"white\"/>\n"
         << "<text x=\"" << num(kLeft) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">"
         << escape(title) << "</text>\n";
    axes(x_label, y_label);
  }

  double px(double x) const {
    return kLeft + (x - x_min_) / (x_max_ - x_min_) * (kWidth - kLeft - kRight);
  }
  double py(double y) const { return kHeight - kBottom - y * (kHeight - kTop - kBottom); }

  void polyline(const Series& s) {
    const std::string color(mode_color(s.mode));
    if (s.points.size() > 1) {
      out_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < s.points.size(); ++i) {
        if (i) out_ << " ";
        out_ << num(px(s.points[i].first)) << "," << num(py(s.points[i].second));
      }
      out_ << "\"/>\n";
    }
    for (const auto& [x, y] : s.points) {
      out_ << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"2.5\" fill=\""
           << color << "\"/>\n";
    }
  }

  void bar(std::size_t slot, std::size_t slots, CompressionMode mode, double value) {
    const double plot_w = kWidth - kLeft - kRight;
    const double width = plot_w / static_cast<double>(slots);
    const double x = kLeft + width * static_cast<double>(slot) + 0.15 * width;
    out_ << "<rect x=\"" << num(x) << "\" y=\"" << num(py(value)) << "\" width=\""
         << num(0.7 * width) << "\" height=\"" << num(py(0.0) - py(value)) << "\" fill=\""
         << mode_color(mode) << "\"/>\n";
  }

  void legend(const std::vector<CompressionMode>& modes) {
    const double x = kWidth - kRight + 20;
    double y = kTop + 10;
    for (CompressionMode mode : modes) {
      out_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y - 9) << "\" width=\"14\" height=\"10\" fill=\""
           << mode_color(mode) << "\"/>\n"
           << "<text x=\"" << num(x + 20) << "\" y=\"" << num(y) << "\" font-family=\"sans-serif\" "
           << "font-size=\"12\">" << mode_name(mode) << "</text>\n";
      y += 18;
    }
  }

  void x_ticks(int count) {
    for (int i = 0; i <= count; ++i) {
      const double v = x_min_ + (x_max_ - x_min_) * i / count;
      out_ << "<text x=\"" << num(px(v)) << "\" y=\"" << num(kHeight - kBottom + 16)
           << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">"
           << tick_label(v) << "</text>\n";
    }
  }

  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  void axes(const std::string& x_label, const std::string& y_label) {
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = py(0.0), y1 = py(1.0);
    out_ << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x1)
         << "\" y2=\"" << num(y0) << "\" stroke=\"black\"/>\n"
         << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x0)
         << "\" y2=\"" << num(y1) << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
      const double v = i / 5.0;
      out_ << "<line x1=\"" << num(x0 - 4) << "\" y1=\"" << num(py(v)) << "\" x2=\"" << num(x1)
           << "\" y2=\"" << num(py(v)) << "\" stroke=\"#dddddd\"/>\n"
           << "<text x=\"" << num(x0 - 8) << "\" y=\"" << num(py(v) + 4)
           << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
           << tick_label(v) << "</text>\n";
    }
    out_ << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(kHeight - 18)
         << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">"
         << escape(x_label) << "</text>\n"
         << "<text x=\"18\" y=\"" << num((y0 + y1) / 2)
         << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" "
         << "transform=\"rotate(-90 18 " << num((y0 + y1) / 2) << ")\">" << escape(y_label)
         << "</text>\n";
  }

  std::ostringstream out_;
  double x_min_;
  double x_max_;
};

std::string line_chart(const ReportDocument& doc, const std::string& title,
                       const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series) {
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const Series& s : series) {
    for (const auto& p : s.points) {
      lo = first ? p.first : std::min(lo, p.first);
      hi = first ? p.first : std::max(hi, p.first);
      first = false;
    }
  }
  Canvas canvas(title + " [" + doc.meta.snapshot_label + "]", x_label, y_label, lo, hi);
  canvas.x_ticks(5);
  std::vector<CompressionMode> modes;
  for (const Series& s : series) {
    canvas.polyline(s);
    modes.push_back(s.mode);
  }
  canvas.legend(modes);
  return canvas.finish();
}

}  // namespace

std::string_view mode_color(CompressionMode mode) {
  // blue: determinant based, green: smallest eigenvalue, red: largest
  // eigenvalue / singular value, grey: average weight
  switch (mode) {
    case CompressionMode::Det: return "#1f77b4";
    case CompressionMode::DetGram: return "#6baed6";
    case CompressionMode::MinEig: return "#2ca02c";
    case CompressionMode::MinEigReal: return "#98df8a";
    case CompressionMode::SpectralRadius: return "#d62728";
    case CompressionMode::SpectralRadiusReal: return "#ff9896";
    case CompressionMode::SpectralNorm: return "#8c1c13";
    case CompressionMode::Weight: return "#7f7f7f";
  }
  return "#000000";
}

std::string render_svg(const ReportDocument& doc) {
  switch (doc.kind) {
    case ReportKind::History:
      return line_chart(doc, "Pruning ratio through epochs", "epoch", "kernel pruning ratio",
                        collect(doc, "epoch", "kernel_prune_ratio", false));
    case ReportKind::Layers:
      return line_chart(doc, "Active parameter ratio through layers", "layer index",
                        "active parameter ratio", collect(doc, "layer_index", "activity", false));
    case ReportKind::Sweep:
      return line_chart(doc, "Pruning ratio vs. threshold", "log10(threshold)",
                        "kernel pruning ratio", collect(doc, "threshold", "kernel_prune_ratio", true));
    case ReportKind::Scores: {
      const std::size_t mc = column(doc, "mode");
      const std::size_t rc = column(doc, "kernel_prune_ratio");
      Canvas canvas("Kernel pruning ratio per mode [" + doc.meta.snapshot_label + "]",
                    "compression mode", "kernel pruning ratio", 0.0,
                    static_cast<double>(std::max<std::size_t>(doc.records.size(), 1)));
      std::vector<CompressionMode> modes;
      for (std::size_t i = 0; i < doc.records.size(); ++i) {
        const CompressionMode mode = parse_mode(std::get<std::string>(doc.records[i].at(mc)));
        canvas.bar(i, doc.records.size(), mode, as_number(doc.records[i].at(rc)));
        modes.push_back(mode);
      }
      canvas.legend(modes);
      return canvas.finish();
    }
    default:
      throw Error(ErrorCode::UnsupportedKind,
                  "no chart for report kind '" + std::string(report_kind_name(doc.kind)) + "'");
  }
}

}  // namespace kernelspect
