#ifndef SCRIBE_DISTORT_HPP
#define SCRIBE_DISTORT_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scribe/dataio.hpp"
#include "scribe/image.hpp"

namespace scribe {

enum class CorruptionKind {
  gaussian_noise,
  impulse_noise,
  defocus_blur,
  motion_blur,
  zoom_blur,
  snow,
  fog,
  brightness,
  contrast,
  spatter,
  saturate,
  jpeg_compression,
};

const std::vector<CorruptionKind>& all_corruption_kinds();
std::string to_string(CorruptionKind kind);
CorruptionKind parse_corruption_kind(const std::string& name);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 1;  // 1..5
  std::uint64_t seed = 0;

  void validate() const;
};

// The headline parameter of each kind, indexed by severity - 1:
//   gaussian_noise   noise sigma
//   impulse_noise    fraction of channel values replaced by 0 or 1
//   defocus_blur     disk radius (pixels)
//   motion_blur      streak length (pixels)
//   zoom_blur        largest zoom factor
//   snow             flake density
//   fog              fog strength a (blend weight a / (1 + a))
//   brightness       added to HSV value
//   contrast         deviation scale around the channel mean
//   spatter          blend opacity of the splash colour
//   saturate         HSV saturation factor
//   jpeg_compression encoder quality
const std::array<double, 5>& severity_table(CorruptionKind kind);

// Output is in [0,1] and fully determined by (image, spec). Stochastic kinds
// draw the same random field at every severity, so stronger settings extend
// weaker ones.
Image apply_corruption(const Image& image, const CorruptionSpec& spec);

// Seed of image i is mix_seed(spec.seed, index_i). Labels are untouched.
Dataset corrupt_dataset(const Dataset& dataset, const CorruptionSpec& spec);

// Writes <root>/<kind>/<severity>/<index>.png.
void export_corrupted_tree(const Dataset& corrupted, const CorruptionSpec& spec, const std::filesystem::path& root);

// Baseline JPEG encode/decode cycle through libjpeg.
Image jpeg_roundtrip(const Image& image, int quality);

}  // namespace scribe

#endif  // SCRIBE_DISTORT_HPP
