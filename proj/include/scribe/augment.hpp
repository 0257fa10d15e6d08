#ifndef SCRIBE_AUGMENT_HPP
#define SCRIBE_AUGMENT_HPP

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "scribe/image.hpp"

namespace scribe {

enum class AugmentSetting { none, crop, hflip, rotate, perspective, colorjitter, combined };

const std::vector<AugmentSetting>& all_augment_settings();
std::string to_string(AugmentSetting s);
AugmentSetting parse_augment_setting(const std::string& name);

struct AugmentationSpec {
  AugmentSetting setting = AugmentSetting::none;
  Index crop_padding = 4;
  double flip_probability = 0.5;
  double rotation_degrees = 15.0;  // uniform in [-d, +d]
  double perspective_scale = 0.5;
  double perspective_probability = 0.5;
  double jitter_low = 0.8;   // brightness/contrast/saturation factor range
  double jitter_high = 1.25;
  double hue_shift = 0.1;    // turns, uniform in [-h, +h]
};

// Every random choice an augmentation can make, drawn up front so a draw can
// be replayed or forced in tests.
struct AugmentDraw {
  Index crop_x = 0;  // top-left of the crop inside the padded canvas
  Index crop_y = 0;
  bool flip = false;
  double angle_degrees = 0.0;
  bool perspective = false;
  // Corner displacements (x, y) for top-left, top-right, bottom-right,
  // bottom-left, in pixels, pointing inward.
  std::array<std::array<double, 2>, 4> corner_shift{};
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;  // turns
};

AugmentDraw sample_draw(const AugmentationSpec& spec, Index height, Index width, std::mt19937_64& rng);

// Stream for (seed, epoch, image index); independent of iteration order.
std::mt19937_64 augment_stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index);

std::pair<Image, int> augment_image(const Image& image, int label, const AugmentationSpec& spec,
                                    const AugmentDraw& draw);

// Individual transforms, also used by corruption code.
Image reflect_pad_crop(const Image& image, Index padding, Index crop_x, Index crop_y);
Image hflip(const Image& image);
Image rotate(const Image& image, double degrees);
Image perspective_warp(const Image& image, const std::array<std::array<double, 2>, 4>& corner_shift);
Image color_jitter(const Image& image, double brightness, double contrast, double saturation, double hue);

// Bilinear sample at fractional pixel-index coordinates; zero outside.
double sample_bilinear_zero(const Image& image, Index channel, double x, double y);

}  // namespace scribe

#endif  // SCRIBE_AUGMENT_HPP
