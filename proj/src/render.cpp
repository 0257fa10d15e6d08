#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "scribe/color.hpp"
#include "scribe/error.hpp"
#include "scribe/harness.hpp"
#include "scribe/png_io.hpp"

namespace scribe {

namespace fs = std::filesystem;

void render_images(const ScribeNet& model, const Dataset& images, double lse_r, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const LsePoolParams lse{lse_r};
  lse.validate();
  const std::vector<double> hues = evenly_spaced_hues(model.config().k_classes);
  constexpr std::size_t chunk = 100;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t stop = std::min(images.size(), start + chunk);
    const std::span<const LabeledImage> items(images.items.data() + start, stop - start);
    const Tensor cam = model.forward_cam(stack_images(items, [](const LabeledImage& li) -> const Image& { return li.rgb; }));
    for (std::size_t i = 0; i < items.size(); ++i) {
      const LabeledImage& li = items[i];
      const Cam<double> c = Cam<double>::from_batch(cam, static_cast<Index>(i));
      const AttentionMap attn = attention_map(c, lse, li.rgb.height, li.rgb.width, li.index);
      const SegmentationMask mask = segmentation_mask(c, attn, hues);
      Image gray(1, attn.rows(), attn.cols());
      for (Index y = 0; y < attn.rows(); ++y)
        for (Index x = 0; x < attn.cols(); ++x) gray.at(0, y, x) = attn.values(y, x);
      const std::string stem = std::to_string(li.index);
      write_png8(mask.rgb, out_dir / ("mask_" + stem + ".png"));
      write_png8(gray, out_dir / ("attention_" + stem + ".png"));
    }
  }
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::optional<double> metric_value(const MetricsReport& r, const std::string& metric) {
  if (metric == "accuracy") return r.accuracy;
  if (metric == "mean_confidence") return r.mean_confidence;
  if (metric == "ece") return r.ece;
  if (metric == "sparsity") return r.sparsity;
  if (metric == "mse_alignment") return r.mse_alignment;
  throw ParameterError("unknown metric '" + metric + "'");
}

const std::vector<std::string>& plot_metrics() {
  static const std::vector<std::string> m = {"accuracy", "mean_confidence", "ece", "sparsity", "mse_alignment"};
  return m;
}

std::string colour(std::size_t i, std::size_t n) {
  double r, g, b;
  hsv_to_rgb(360.0 * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(n, 1)), 0.85, 0.8, r, g, b);
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", quantize8(r), quantize8(g), quantize8(b));
  return buf;
}

}  // namespace

std::string trend_svg(const GridResult& grid, const std::string& metric) {
  // series in first-seen order, points sorted by fraction
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  for (const GridCell& c : grid.cells) {
    if (c.corruption || !c.ok || !c.report) continue;
    const auto v = metric_value(*c.report, metric);
    if (!v) continue;
    const std::string name = to_string(c.config.augmentation);
    if (!series.count(name)) order.push_back(name);
    series[name].emplace_back(c.config.fraction, *v);
  }
  double ymin = 0.0, ymax = 1.0;
  for (auto& [name, pts] : series) {
    std::sort(pts.begin(), pts.end());
    for (const auto& p : pts) {
      ymin = std::min(ymin, p.second);
      ymax = std::max(ymax, p.second);
    }
  }
  const double W = 640, H = 400, left = 70, right = 170, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  auto sx = [&](double f) { return left + f * pw; };
  auto sy = [&](double v) { return top + (ymax - v) / (ymax - ymin) * ph; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " "
    << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">" << metric
    << " vs training fraction</text>\n";
  s << "<g stroke=\"#444\" stroke-width=\"1\">\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\"/>\n";
  s << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#222\">\n";
  for (int t = 0; t <= 10; t += 2) {
    const double f = t / 10.0;
    s << "<text x=\"" << num(sx(f)) << "\" y=\"" << num(top + ph + 16) << "\" text-anchor=\"middle\">" << num(f) << "</text>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    const double v = ymin + (ymax - ymin) * t / 4.0;
    s << "<text x=\"" << left - 6 << "\" y=\"" << num(sy(v) + 4) << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }
  s << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">fraction</text>\n";
  s << "</g>\n";
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& pts = series[order[i]];
    const std::string col = colour(i, order.size());
    s << "<g class=\"series\" data-series=\"" << order[i] << "\">\n<polyline fill=\"none\" stroke=\"" << col
      << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < pts.size(); ++k) s << (k ? " " : "") << num(sx(pts[k].first)) << "," << num(sy(pts[k].second));
    s << "\"/>\n";
    for (const auto& p : pts) {
      s << "<circle class=\"point\" cx=\"" << num(sx(p.first)) << "\" cy=\"" << num(sy(p.second)) << "\" r=\"3.5\" fill=\""
        << col << "\" data-x=\"" << num(p.first) << "\" data-y=\"" << num(p.second) << "\"/>\n";
    }
    s << "<text x=\"" << num(left + pw + 14) << "\" y=\"" << num(top + 14 + 18.0 * static_cast<double>(i))
      << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << col << "\">" << order[i] << "</text>\n</g>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<fs::path> render_trend_plots(const GridResult& grid, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<fs::path> written;
  for (const std::string& m : plot_metrics()) {
    const fs::path p = out_dir / (m + ".svg");
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << trend_svg(grid, m);
    if (!out) throw IoError("write failed for " + p.string());
    written.push_back(p);
  }
  return written;
}

std::string grid_report(const GridResult& grid) {
  std::vector<double> fractions;
  std::vector<std::string> augs;
  std::map<std::pair<std::string, double>, const MetricsReport*> clean;
  for (const GridCell& c : grid.cells) {
    if (c.corruption) continue;
    if (std::find(fractions.begin(), fractions.end(), c.config.fraction) == fractions.end()) fractions.push_back(c.config.fraction);
    const std::string a = to_string(c.config.augmentation);
    if (std::find(augs.begin(), augs.end(), a) == augs.end()) augs.push_back(a);
    if (c.ok && c.report) clean[{a, c.config.fraction}] = &*c.report;
  }
  std::sort(fractions.begin(), fractions.end());

  std::ostringstream s;
  s << "# Grid report\n\n";
  s << "cells: " << grid.cells.size() << ", failed: " << grid.failures() << "\n";
  s << "reference model: " << (grid.reference_model ? *grid.reference_model : std::string("none")) << "\n";
  for (const std::string& m : plot_metrics()) {
    s << "\n## " << m << "\n\n| augmentation |";
    for (double f : fractions) s << " " << num(f) << " |";
    s << "\n|---|";
    for (std::size_t i = 0; i < fractions.size(); ++i) s << "---|";
    s << "\n";
    for (const std::string& a : augs) {
      s << "| " << a << " |";
      for (double f : fractions) {
        const auto it = clean.find({a, f});
        std::optional<double> v;
        if (it != clean.end()) v = metric_value(*it->second, m);
        s << " " << (v ? num(*v) : std::string(it == clean.end() ? "failed" : "-")) << " |";
      }
      s << "\n";
    }
  }
  bool any = false;
  for (const GridCell& c : grid.cells) {
    if (!c.corruption) continue;
    if (!any) {
      s << "\n## corruptions\n\n| fraction | augmentation | corruption | severity | accuracy | sparsity | ece |\n|---|---|---|---|---|---|---|\n";
      any = true;
    }
    s << "| " << num(c.config.fraction) << " | " << to_string(c.config.augmentation) << " | " << to_string(c.corruption->kind)
      << " | " << c.corruption->severity << " | ";
    if (c.ok && c.report) {
      s << num(c.report->accuracy) << " | " << num(c.report->sparsity) << " | " << num(c.report->ece) << " |\n";
    } else {
      s << "failed | | |\n";
    }
  }
  const auto failed = std::count_if(grid.cells.begin(), grid.cells.end(), [](const GridCell& c) { return !c.ok; });
  if (failed) {
    s << "\n## failures\n\n";
    for (const GridCell& c : grid.cells)
      if (!c.ok) s << "- " << c.id << ": " << c.error << "\n";
  }
  return s.str();
}

}  // namespace scribe
