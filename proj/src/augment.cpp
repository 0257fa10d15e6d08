#include "scribe/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "scribe/color.hpp"
#include "scribe/dataio.hpp"
#include "scribe/error.hpp"

namespace scribe {

const std::vector<AugmentSetting>& all_augment_settings() {
  static const std::vector<AugmentSetting> all = {AugmentSetting::none,        AugmentSetting::crop,
                                                  AugmentSetting::hflip,       AugmentSetting::rotate,
                                                  AugmentSetting::perspective, AugmentSetting::colorjitter,
                                                  AugmentSetting::combined};
  return all;
}

std::string to_string(AugmentSetting s) {
  switch (s) {
    case AugmentSetting::none: return "none";
    case AugmentSetting::crop: return "crop";
    case AugmentSetting::hflip: return "hflip";
    case AugmentSetting::rotate: return "rotate";
    case AugmentSetting::perspective: return "perspective";
    case AugmentSetting::colorjitter: return "colorjitter";
    case AugmentSetting::combined: return "combined";
  }
  return "?";
}

AugmentSetting parse_augment_setting(const std::string& name) {
  for (AugmentSetting s : all_augment_settings()) {
    if (to_string(s) == name) return s;
  }
  throw ParameterError("unknown augmentation setting '" + name +
                       "' (expected none, crop, hflip, rotate, perspective, colorjitter or combined)");
}

std::mt19937_64 augment_stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
  return std::mt19937_64(mix_seed(mix_seed(seed, epoch), index));
}

AugmentDraw sample_draw(const AugmentationSpec& spec, Index height, Index width, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const Index pad = std::max<Index>(spec.crop_padding, 0);
  const double pflip = std::clamp(spec.flip_probability, 0.0, 1.0);
  const double ppersp = std::clamp(spec.perspective_probability, 0.0, 1.0);
  const double pscale = std::clamp(spec.perspective_scale, 0.0, 1.0);

  // Fixed consumption order, whatever the setting.
  AugmentDraw d;
  std::uniform_int_distribution<Index> off(0, 2 * pad);
  d.crop_x = off(rng);
  d.crop_y = off(rng);
  d.flip = u01(rng) < pflip;
  d.angle_degrees = uniform(-spec.rotation_degrees, spec.rotation_degrees);
  d.perspective = u01(rng) < ppersp;
  const double dx = pscale * 0.5 * static_cast<double>(width - 1);
  const double dy = pscale * 0.5 * static_cast<double>(height - 1);
  static constexpr int sx[4] = {1, -1, -1, 1};
  static constexpr int sy[4] = {1, 1, -1, -1};
  for (int c = 0; c < 4; ++c) {
    d.corner_shift[c][0] = sx[c] * uniform(0.0, dx);
    d.corner_shift[c][1] = sy[c] * uniform(0.0, dy);
  }
  double lo = std::max(spec.jitter_low, 0.0), hi = std::max(spec.jitter_high, lo);
  d.brightness = uniform(lo, hi);
  d.contrast = uniform(lo, hi);
  d.saturation = uniform(lo, hi);
  const double h = std::abs(spec.hue_shift);
  d.hue = uniform(-h, h);
  return d;
}

Image reflect_pad_crop(const Image& image, Index padding, Index crop_x, Index crop_y) {
  const Index w = image.width, h = image.height;
  if (padding < 0 || padding >= std::min(w, h)) throw ParameterError("reflection padding must be in [0, side)");
  crop_x = std::clamp<Index>(crop_x, 0, 2 * padding);
  crop_y = std::clamp<Index>(crop_y, 0, 2 * padding);
  auto reflect = [](Index i, Index n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  Image out(image.channels, h, w);
  for (Index c = 0; c < image.channels; ++c) {
    for (Index y = 0; y < h; ++y) {
      const Index sy = reflect(y + crop_y - padding, h);
      for (Index x = 0; x < w; ++x) out.at(c, y, x) = image.at(c, sy, reflect(x + crop_x - padding, w));
    }
  }
  return out;
}

Image hflip(const Image& image) {
  Image out(image.channels, image.height, image.width);
  for (Index c = 0; c < image.channels; ++c) {
    for (Index y = 0; y < image.height; ++y) {
      for (Index x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
    }
  }
  return out;
}

double sample_bilinear_zero(const Image& image, Index channel, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const Index x0 = static_cast<Index>(fx), y0 = static_cast<Index>(fy);
  const double ax = x - fx, ay = y - fy;
  auto px = [&](Index yy, Index xx) {
    if (xx < 0 || yy < 0 || xx >= image.width || yy >= image.height) return 0.0;
    return image.at(channel, yy, xx);
  };
  // Skip zero-weight neighbours so integer coordinates reproduce exactly.
  double top = px(y0, x0) * (1.0 - ax);
  if (ax > 0.0) top += px(y0, x0 + 1) * ax;
  if (ay == 0.0) return top;
  double bot = px(y0 + 1, x0) * (1.0 - ax);
  if (ax > 0.0) bot += px(y0 + 1, x0 + 1) * ax;
  return top * (1.0 - ay) + bot * ay;
}

namespace {

template <typename Map>
Image warp(const Image& image, Map to_input) {
  Image out(image.channels, image.height, image.width);
  for (Index y = 0; y < image.height; ++y) {
    for (Index x = 0; x < image.width; ++x) {
      double sx, sy;
      to_input(static_cast<double>(x), static_cast<double>(y), sx, sy);
      for (Index c = 0; c < image.channels; ++c) out.at(c, y, x) = sample_bilinear_zero(image, c, sx, sy);
    }
  }
  return out;
}

}  // namespace

Image rotate(const Image& image, double degrees) {
  if (degrees == 0.0) return image;
  const double t = degrees * std::numbers::pi / 180.0;
  const double ct = std::cos(t), st = std::sin(t);
  const double cx = 0.5 * static_cast<double>(image.width - 1), cy = 0.5 * static_cast<double>(image.height - 1);
  // Counter-clockwise on screen; inverse map from output to input.
  return warp(image, [&](double x, double y, double& sx, double& sy) {
    const double dx = x - cx, dy = y - cy;
    sx = cx + ct * dx - st * dy;
    sy = cy + st * dx + ct * dy;
  });
}

Image perspective_warp(const Image& image, const std::array<std::array<double, 2>, 4>& corner_shift) {
  const double w1 = static_cast<double>(image.width - 1), h1 = static_cast<double>(image.height - 1);
  const double src[4][2] = {{0, 0}, {w1, 0}, {w1, h1}, {0, h1}};
  double dst[4][2];
  for (int c = 0; c < 4; ++c) {
    dst[c][0] = src[c][0] + corner_shift[c][0];
    dst[c][1] = src[c][1] + corner_shift[c][1];
  }
  // Homography taking output (dst) points back to input (src) points.
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int c = 0; c < 4; ++c) {
    const double x = dst[c][0], y = dst[c][1], u = src[c][0], v = src[c][1];
    a.row(2 * c) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * c + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b[2 * c] = u;
    b[2 * c + 1] = v;
  }
  const Eigen::Matrix<double, 8, 1> p = a.fullPivLu().solve(b);
  if (!p.allFinite()) throw NumericError("degenerate perspective corners");
  return warp(image, [&](double x, double y, double& sx, double& sy) {
    const double den = p[6] * x + p[7] * y + 1.0;
    sx = (p[0] * x + p[1] * y + p[2]) / den;
    sy = (p[3] * x + p[4] * y + p[5]) / den;
  });
}

Image color_jitter(const Image& image, double brightness, double contrast, double saturation, double hue) {
  if (image.channels != 3) throw DimensionError("color jitter needs 3 channels, got " + std::to_string(image.channels));
  Image out = clamp01(image);
  out.data = (out.data * std::max(brightness, 0.0)).min(1.0);

  const Index n = out.pixels();
  auto r = out.plane(0), g = out.plane(1), b = out.plane(2);
  const double m = (0.299 * r + 0.587 * g + 0.114 * b).mean();
  out.data = ((out.data - m) * std::max(contrast, 0.0) + m).max(0.0).min(1.0);

  const Eigen::ArrayXd gray = 0.299 * r + 0.587 * g + 0.114 * b;
  const double s = std::max(saturation, 0.0);
  for (Index c = 0; c < 3; ++c) out.plane(c) = ((out.plane(c) - gray) * s + gray).max(0.0).min(1.0);

  if (hue != 0.0) {
    for (Index i = 0; i < n; ++i) {
      double hh, ss, vv;
      rgb_to_hsv(r[i], g[i], b[i], hh, ss, vv);
      hsv_to_rgb(hh + 360.0 * hue, ss, vv, r[i], g[i], b[i]);
    }
    out = clamp01(std::move(out));
  }
  return out;
}

std::pair<Image, int> augment_image(const Image& image, int label, const AugmentationSpec& spec,
                                    const AugmentDraw& draw) {
  const AugmentSetting s = spec.setting;
  if (s == AugmentSetting::none) return {image, label};
  const bool all = s == AugmentSetting::combined;
  Image out = image;
  if (all || s == AugmentSetting::crop) out = reflect_pad_crop(out, spec.crop_padding, draw.crop_x, draw.crop_y);
  if ((all || s == AugmentSetting::hflip) && draw.flip) out = hflip(out);
  if (all || s == AugmentSetting::rotate) out = rotate(out, draw.angle_degrees);
  if ((all || s == AugmentSetting::perspective) && draw.perspective) out = perspective_warp(out, draw.corner_shift);
  if (all || s == AugmentSetting::colorjitter) {
    out = color_jitter(out, draw.brightness, draw.contrast, draw.saturation, draw.hue);
  }
  return {clamp01(std::move(out)), label};
}

}  // namespace scribe
