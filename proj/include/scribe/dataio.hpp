#ifndef SCRIBE_DATAIO_HPP
#define SCRIBE_DATAIO_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scribe/error.hpp"
#include "scribe/image.hpp"

namespace scribe {

class DataCorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

enum class Provenance { cifar10, synthetic, imported };

struct LabeledImage {
  Image rgb;
  int label = 0;
  Index index = 0;  // stable across runs and subsets
  // Ground-truth foreground (1 inside the object), synthetic corpus only.
  std::optional<Eigen::ArrayXXd> foreground;
};

struct Dataset {
  std::vector<LabeledImage> items;
  std::string split;
  Provenance provenance = Provenance::synthetic;
  Index k_classes = 0;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  std::vector<int> labels() const;
};

inline constexpr Index kCifarRecordBytes = 1 + 3 * 32 * 32;
inline constexpr Index kCifarRecordsPerBatch = 10000;

// Parses one binary batch; the file must hold exactly expected_records
// records of (label byte, 1024 R, 1024 G, 1024 B).
std::vector<LabeledImage> load_cifar10_batch(const std::filesystem::path& file, Index expected_records,
                                             Index first_index);

// data_batch_1..5.bin and test_batch.bin from the binary distribution.
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);

inline const std::vector<std::string>& synth_class_names() {
  static const std::vector<std::string> names = {"circle", "square", "triangle", "cross"};
  return names;
}

// Shape corpus, label = index % 4. Each 32x32 image has one object (hue
// drawn around 90 * label degrees) covering 20-60% of the canvas over
// random two-colour stripes, five small distractor shapes in arbitrary class
// hues, and N(0, 0.03) pixel noise. The foreground mask covers the object
// only.
Dataset synth_shapes(Index n, std::uint64_t seed, const std::string& split = "train");

// Stratified by class: round(fraction * count_c) images per class, chosen by
// a seeded per-class shuffle so smaller fractions nest in larger ones.
// Original order is preserved.
Dataset subset(const Dataset& dataset, double fraction, std::uint64_t seed);

// <dir>/<index>.png plus <dir>/labels.csv (index,label,file).
void export_png_tree(const Dataset& dataset, const std::filesystem::path& dir);
Dataset import_png_tree(const std::filesystem::path& dir, Index k_classes);

// SplitMix64 finaliser, used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace scribe

#endif  // SCRIBE_DATAIO_HPP
