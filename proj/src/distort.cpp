#include "scribe/distort.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <numbers>
#include <random>

#include <jpeglib.h>

#include "scribe/color.hpp"
#include "scribe/error.hpp"
#include "scribe/png_io.hpp"

namespace scribe {

const std::vector<CorruptionKind>& all_corruption_kinds() {
  static const std::vector<CorruptionKind> all = {
      CorruptionKind::gaussian_noise, CorruptionKind::impulse_noise, CorruptionKind::defocus_blur,
      CorruptionKind::motion_blur,    CorruptionKind::zoom_blur,     CorruptionKind::snow,
      CorruptionKind::fog,            CorruptionKind::brightness,    CorruptionKind::contrast,
      CorruptionKind::spatter,        CorruptionKind::saturate,      CorruptionKind::jpeg_compression};
  return all;
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::impulse_noise: return "impulse_noise";
    case CorruptionKind::defocus_blur: return "defocus_blur";
    case CorruptionKind::motion_blur: return "motion_blur";
    case CorruptionKind::zoom_blur: return "zoom_blur";
    case CorruptionKind::snow: return "snow";
    case CorruptionKind::fog: return "fog";
    case CorruptionKind::brightness: return "brightness";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::spatter: return "spatter";
    case CorruptionKind::saturate: return "saturate";
    case CorruptionKind::jpeg_compression: return "jpeg_compression";
  }
  return "?";
}

CorruptionKind parse_corruption_kind(const std::string& name) {
  for (CorruptionKind k : all_corruption_kinds()) {
    if (to_string(k) == name) return k;
  }
  std::string known;
  for (CorruptionKind k : all_corruption_kinds()) known += (known.empty() ? "" : ", ") + to_string(k);
  throw ParameterError("unknown corruption kind '" + name + "' (known: " + known + ")");
}

void CorruptionSpec::validate() const {
  if (severity < 1 || severity > 5) throw ParameterError("corruption severity must be 1..5, got " + std::to_string(severity));
  const auto& all = all_corruption_kinds();
  if (std::find(all.begin(), all.end(), kind) == all.end()) throw ParameterError("unknown corruption kind");
}

const std::array<double, 5>& severity_table(CorruptionKind kind) {
  static const std::array<double, 5> gaussian = {0.04, 0.06, 0.08, 0.09, 0.10};
  static const std::array<double, 5> impulse = {0.01, 0.02, 0.03, 0.05, 0.07};
  static const std::array<double, 5> defocus = {1.0, 1.5, 2.0, 2.5, 3.0};
  static const std::array<double, 5> motion = {3, 5, 7, 9, 11};
  static const std::array<double, 5> zoom = {1.06, 1.11, 1.16, 1.21, 1.26};
  static const std::array<double, 5> snow = {0.02, 0.04, 0.06, 0.08, 0.10};
  static const std::array<double, 5> fog = {0.2, 0.5, 0.75, 1.0, 1.5};
  static const std::array<double, 5> bright = {0.1, 0.2, 0.3, 0.4, 0.5};
  static const std::array<double, 5> contrast = {0.75, 0.5, 0.4, 0.3, 0.15};
  static const std::array<double, 5> spatter = {0.35, 0.45, 0.55, 0.65, 0.75};
  static const std::array<double, 5> saturate = {1.5, 2.0, 3.0, 5.0, 8.0};
  static const std::array<double, 5> jpeg = {25, 18, 15, 10, 7};
  switch (kind) {
    case CorruptionKind::gaussian_noise: return gaussian;
    case CorruptionKind::impulse_noise: return impulse;
    case CorruptionKind::defocus_blur: return defocus;
    case CorruptionKind::motion_blur: return motion;
    case CorruptionKind::zoom_blur: return zoom;
    case CorruptionKind::snow: return snow;
    case CorruptionKind::fog: return fog;
    case CorruptionKind::brightness: return bright;
    case CorruptionKind::contrast: return contrast;
    case CorruptionKind::spatter: return spatter;
    case CorruptionKind::saturate: return saturate;
    case CorruptionKind::jpeg_compression: return jpeg;
  }
  throw ParameterError("unknown corruption kind");
}

namespace {

// secondary tables
constexpr std::array<double, 5> kSnowWhitening = {0.1, 0.2, 0.3, 0.4, 0.5};
constexpr std::array<double, 5> kSpatterThreshold = {1.4, 1.2, 1.0, 0.8, 0.6};
constexpr std::array<double, 5> kSaturateOffset = {0.0, 0.0, 0.05, 0.1, 0.2};

Index clampi(Index v, Index n) { return std::clamp<Index>(v, 0, n - 1); }

// Bilinear sample with replicated edges.
double sample_clamped(const Image& im, Index c, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(im.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(im.height - 1));
  const Index x0 = static_cast<Index>(std::floor(x)), y0 = static_cast<Index>(std::floor(y));
  const Index x1 = std::min(x0 + 1, im.width - 1), y1 = std::min(y0 + 1, im.height - 1);
  const double ax = x - static_cast<double>(x0), ay = y - static_cast<double>(y0);
  const double top = im.at(c, y0, x0) * (1 - ax) + im.at(c, y0, x1) * ax;
  const double bot = im.at(c, y1, x0) * (1 - ax) + im.at(c, y1, x1) * ax;
  return top * (1 - ay) + bot * ay;
}

struct Tap {
  Index dx, dy;
  double w;
};

Image convolve(const Image& im, const std::vector<Tap>& taps) {
  Image out(im.channels, im.height, im.width);
  for (Index c = 0; c < im.channels; ++c) {
    for (Index y = 0; y < im.height; ++y) {
      for (Index x = 0; x < im.width; ++x) {
        double acc = 0.0;
        for (const Tap& t : taps) acc += t.w * im.at(c, clampi(y + t.dy, im.height), clampi(x + t.dx, im.width));
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

Image defocus(const Image& im, double radius) {
  std::vector<Tap> taps;
  const Index r = static_cast<Index>(std::ceil(radius));
  for (Index dy = -r; dy <= r; ++dy) {
    for (Index dx = -r; dx <= r; ++dx) {
      if (static_cast<double>(dx * dx + dy * dy) <= radius * radius) taps.push_back({dx, dy, 1.0});
    }
  }
  for (Tap& t : taps) t.w = 1.0 / static_cast<double>(taps.size());
  return convolve(im, taps);
}

Image motion(const Image& im, double length, double angle) {
  const Index n = static_cast<Index>(length);
  const double ca = std::cos(angle), sa = std::sin(angle);
  Image out(im.channels, im.height, im.width);
  for (Index c = 0; c < im.channels; ++c) {
    for (Index y = 0; y < im.height; ++y) {
      for (Index x = 0; x < im.width; ++x) {
        double acc = 0.0;
        for (Index k = 0; k < n; ++k) {
          const double t = static_cast<double>(k) - 0.5 * static_cast<double>(n - 1);
          acc += sample_clamped(im, c, static_cast<double>(x) + t * ca, static_cast<double>(y) + t * sa);
        }
        out.at(c, y, x) = acc / static_cast<double>(n);
      }
    }
  }
  return out;
}

Image zoom_blur(const Image& im, double max_zoom) {
  Image acc = im;
  int copies = 1;
  const double cx = 0.5 * static_cast<double>(im.width - 1), cy = 0.5 * static_cast<double>(im.height - 1);
  // 1.01, 1.02, ..., max_zoom
  const int steps = static_cast<int>(std::lround((max_zoom - 1.0) / 0.01));
  for (int s = 1; s <= steps; ++s) {
    const double z = 1.0 + 0.01 * s;
    for (Index c = 0; c < im.channels; ++c) {
      for (Index y = 0; y < im.height; ++y) {
        for (Index x = 0; x < im.width; ++x) {
          acc.at(c, y, x) += sample_clamped(im, c, cx + (static_cast<double>(x) - cx) / z,
                                            cy + (static_cast<double>(y) - cy) / z);
        }
      }
    }
    ++copies;
  }
  acc.data /= static_cast<double>(copies);
  return acc;
}

// Diamond-square plasma on a (2^k + 1)^2 grid, normalised to [0,1].
Eigen::ArrayXXd plasma(Index rows, Index cols, std::mt19937_64& rng, double decay = 3.0) {
  Index size = 1;
  while (size < std::max(rows, cols)) size *= 2;
  const Index n = size + 1;
  Eigen::ArrayXXd g = Eigen::ArrayXXd::Zero(n, n);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double amp = 1.0;
  g(0, 0) = u(rng);
  g(0, size) = u(rng);
  g(size, 0) = u(rng);
  g(size, size) = u(rng);
  for (Index step = size; step > 1; step /= 2) {
    const Index half = step / 2;
    for (Index y = half; y < n; y += step) {
      for (Index x = half; x < n; x += step) {
        g(y, x) = 0.25 * (g(y - half, x - half) + g(y - half, x + half) + g(y + half, x - half) + g(y + half, x + half)) +
                  amp * u(rng);
      }
    }
    for (Index y = 0; y < n; y += half) {
      for (Index x = (y / half) % 2 == 0 ? half : 0; x < n; x += step) {
        double s = 0.0;
        int k = 0;
        if (y >= half) { s += g(y - half, x); ++k; }
        if (y + half < n) { s += g(y + half, x); ++k; }
        if (x >= half) { s += g(y, x - half); ++k; }
        if (x + half < n) { s += g(y, x + half); ++k; }
        g(y, x) = s / k + amp * u(rng);
      }
    }
    amp /= decay;
  }
  Eigen::ArrayXXd out = g.topLeftCorner(rows, cols);
  const double lo = out.minCoeff(), hi = out.maxCoeff();
  if (hi > lo) out = (out - lo) / (hi - lo);
  else out.setZero();
  return out;
}

Eigen::ArrayXXd gaussian_blur_field(const Eigen::ArrayXXd& f, double sigma) {
  const Index r = static_cast<Index>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double tot = 0;
  for (Index i = -r; i <= r; ++i) tot += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  for (double& v : k) v /= tot;
  const Index rows = f.rows(), cols = f.cols();
  Eigen::ArrayXXd tmp = Eigen::ArrayXXd::Zero(rows, cols), out = Eigen::ArrayXXd::Zero(rows, cols);
  for (Index y = 0; y < rows; ++y)
    for (Index x = 0; x < cols; ++x)
      for (Index i = -r; i <= r; ++i) tmp(y, x) += k[static_cast<std::size_t>(i + r)] * f(y, clampi(x + i, cols));
  for (Index y = 0; y < rows; ++y)
    for (Index x = 0; x < cols; ++x)
      for (Index i = -r; i <= r; ++i) out(y, x) += k[static_cast<std::size_t>(i + r)] * tmp(clampi(y + i, rows), x);
  return out;
}

template <typename F>
Image map_hsv(const Image& im, F f) {
  Image out = im;
  for (Index i = 0; i < im.pixels(); ++i) {
    double h, s, v;
    rgb_to_hsv(im.plane(0)[i], im.plane(1)[i], im.plane(2)[i], h, s, v);
    f(h, s, v);
    hsv_to_rgb(h, std::clamp(s, 0.0, 1.0), std::clamp(v, 0.0, 1.0), out.plane(0)[i], out.plane(1)[i], out.plane(2)[i]);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace

Image jpeg_roundtrip(const Image& image, int quality) {
  if (image.channels != 3) throw DimensionError("JPEG cycle needs 3 channels, got " + std::to_string(image.channels));
  if (quality < 1 || quality > 100) throw ParameterError("JPEG quality must be 1..100");
  const auto w = static_cast<JDIMENSION>(image.width), h = static_cast<JDIMENSION>(image.height);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(image.pixels() * 3));
  for (Index y = 0; y < image.height; ++y)
    for (Index x = 0; x < image.width; ++x)
      for (Index c = 0; c < 3; ++c) pixels[static_cast<std::size_t>((y * image.width + x) * 3 + c)] = quantize8(image.at(c, y, x));

  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  {
    jpeg_compress_struct cinfo{};
    JpegError err{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
      jpeg_destroy_compress(&cinfo);
      std::free(buffer);
      throw FormatError(std::string("JPEG encode failed: ") + err.message);
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buffer, &size);
    cinfo.image_width = w;
    cinfo.image_height = h;
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    cinfo.dct_method = JDCT_ISLOW;
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
      JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.next_scanline) * w * 3;
      jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
  }

  Image out(3, image.height, image.width);
  {
    jpeg_decompress_struct dinfo{};
    JpegError err{};
    dinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
      jpeg_destroy_decompress(&dinfo);
      std::free(buffer);
      throw FormatError(std::string("JPEG decode failed: ") + err.message);
    }
    jpeg_create_decompress(&dinfo);
    jpeg_mem_src(&dinfo, buffer, size);
    jpeg_read_header(&dinfo, TRUE);
    dinfo.out_color_space = JCS_RGB;
    dinfo.dct_method = JDCT_ISLOW;
    jpeg_start_decompress(&dinfo);
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    while (dinfo.output_scanline < dinfo.output_height) {
      const Index y = dinfo.output_scanline;
      JSAMPROW rp = row.data();
      jpeg_read_scanlines(&dinfo, &rp, 1);
      for (Index x = 0; x < image.width; ++x)
        for (Index c = 0; c < 3; ++c) out.at(c, y, x) = row[static_cast<std::size_t>(x * 3 + c)] / 255.0;
    }
    jpeg_finish_decompress(&dinfo);
    jpeg_destroy_decompress(&dinfo);
  }
  std::free(buffer);
  return out;
}

Image apply_corruption(const Image& image, const CorruptionSpec& spec) {
  spec.validate();
  if (image.channels != 3) throw DimensionError("corruption expects an RGB image, got " + std::to_string(image.channels) + " channels");
  const std::size_t s = static_cast<std::size_t>(spec.severity - 1);
  const double p = severity_table(spec.kind)[s];
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Image x = clamp01(image);
  Image out;

  switch (spec.kind) {
    case CorruptionKind::gaussian_noise: {
      std::normal_distribution<double> z(0.0, 1.0);
      out = x;
      for (Index i = 0; i < out.data.size(); ++i) out.data[i] += p * z(rng);
      break;
    }
    case CorruptionKind::impulse_noise: {
      out = x;
      for (Index i = 0; i < out.data.size(); ++i) {
        const double a = u01(rng), b = u01(rng);
        if (a < p) out.data[i] = b < 0.5 ? 0.0 : 1.0;
      }
      break;
    }
    case CorruptionKind::defocus_blur:
      out = defocus(x, p);
      break;
    case CorruptionKind::motion_blur:
      out = motion(x, p, u01(rng) * std::numbers::pi);
      break;
    case CorruptionKind::zoom_blur:
      out = zoom_blur(x, p);
      break;
    case CorruptionKind::snow: {
      // Flakes where a uniform field falls under the density, streaked along
      // a short diagonal, over a whitened copy of the image.
      Image flakes(1, x.height, x.width);
      for (Index i = 0; i < flakes.data.size(); ++i) flakes.data[i] = u01(rng) < p ? 1.0 : 0.0;
      flakes = convolve(flakes, {{0, 0, 0.5}, {-1, -1, 0.3}, {-2, -2, 0.2}});
      const double white = kSnowWhitening[s];
      out = x;
      const Eigen::ArrayXd gray = luma(1, 0, 0) * x.plane(0) + luma(0, 1, 0) * x.plane(1) + luma(0, 0, 1) * x.plane(2);
      const Eigen::ArrayXd lifted = gray * 1.5 + 0.5;
      for (Index c = 0; c < 3; ++c) {
        out.plane(c) = (1.0 - white) * x.plane(c) + white * x.plane(c).max(lifted);
        out.plane(c) = (out.plane(c) + flakes.plane(0)).min(1.0);
      }
      break;
    }
    case CorruptionKind::fog: {
      const Eigen::ArrayXXd f = plasma(x.height, x.width, rng);
      const double t = p / (1.0 + p);
      out = x;
      for (Index c = 0; c < 3; ++c) {
        for (Index yy = 0; yy < x.height; ++yy)
          for (Index xx = 0; xx < x.width; ++xx)
            out.at(c, yy, xx) = (1.0 - t) * x.at(c, yy, xx) + t * (0.5 + 0.5 * f(yy, xx));
      }
      break;
    }
    case CorruptionKind::brightness:
      out = map_hsv(x, [p](double&, double&, double& v) { v += p; });
      break;
    case CorruptionKind::contrast: {
      out = x;
      for (Index c = 0; c < 3; ++c) {
        const double m = x.plane(c).mean();
        out.plane(c) = (x.plane(c) - m) * p + m;
      }
      break;
    }
    case CorruptionKind::spatter: {
      // Blurred noise, standardised; splashes where it exceeds a threshold
      // that drops with severity.
      Eigen::ArrayXXd f(x.height, x.width);
      std::normal_distribution<double> z(0.0, 1.0);
      for (Index i = 0; i < f.size(); ++i) f(i) = z(rng);
      f = gaussian_blur_field(f, 1.5);
      const double mean = f.mean();
      const double sd = std::sqrt((f - mean).square().mean());
      if (sd > 0) f = (f - mean) / sd;
      const double thr = kSpatterThreshold[s];
      static constexpr double mud[3] = {0.32, 0.22, 0.12};
      out = x;
      for (Index yy = 0; yy < x.height; ++yy)
        for (Index xx = 0; xx < x.width; ++xx)
          if (f(yy, xx) > thr)
            for (Index c = 0; c < 3; ++c) out.at(c, yy, xx) = (1.0 - p) * x.at(c, yy, xx) + p * mud[c];
      break;
    }
    case CorruptionKind::saturate: {
      const double off = kSaturateOffset[s];
      out = map_hsv(x, [p, off](double&, double& sat, double&) { sat = sat * p + off; });
      break;
    }
    case CorruptionKind::jpeg_compression:
      out = jpeg_roundtrip(x, static_cast<int>(p));
      break;
  }
  return clamp01(std::move(out));
}

Dataset corrupt_dataset(const Dataset& dataset, const CorruptionSpec& spec) {
  spec.validate();
  Dataset out;
  out.split = dataset.split;
  out.provenance = dataset.provenance;
  out.k_classes = dataset.k_classes;
  out.items.reserve(dataset.size());
  for (const LabeledImage& item : dataset.items) {
    CorruptionSpec per = spec;
    per.seed = mix_seed(spec.seed, static_cast<std::uint64_t>(item.index));
    LabeledImage c = item;
    c.rgb = apply_corruption(item.rgb, per);
    out.items.push_back(std::move(c));
  }
  return out;
}

void export_corrupted_tree(const Dataset& corrupted, const CorruptionSpec& spec, const std::filesystem::path& root) {
  const std::filesystem::path dir = root / to_string(spec.kind) / std::to_string(spec.severity);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const LabeledImage& item : corrupted.items) write_png8(item.rgb, dir / (std::to_string(item.index) + ".png"));
}

}  // namespace scribe
