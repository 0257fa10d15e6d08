#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "scribe/dataio.hpp"
#include "support.hpp"

using namespace scribe;

namespace {

// Writes a CIFAR-style batch of n records; record r has label r % 10 and
// pixel bytes (r + c*7 + p) % 256.
void write_fake_batch(const std::filesystem::path& path, Index n, int bad_label_at = -1) {
  std::ofstream out(path, std::ios::binary);
  for (Index r = 0; r < n; ++r) {
    out.put(static_cast<char>(r == bad_label_at ? 12 : r % 10));
    for (Index c = 0; c < 3; ++c)
      for (Index p = 0; p < 1024; ++p) out.put(static_cast<char>((r + c * 7 + p) % 256));
  }
}

}  // namespace

TEST(Cifar, FormatArithmetic) { EXPECT_EQ(kCifarRecordsPerBatch * kCifarRecordBytes, 30730000); }

TEST(Cifar, ParsesSmallBatch) {
  const auto dir = scribe::test::scratch_dir("cifar_small");
  write_fake_batch(dir / "b.bin", 5);
  const auto items = load_cifar10_batch(dir / "b.bin", 5, 100);
  ASSERT_EQ(items.size(), 5u);
  std::ifstream in(dir / "b.bin", std::ios::binary);
  const int first_label = in.get();
  EXPECT_EQ(items[0].label, first_label);
  EXPECT_EQ(items[3].label, 3);
  EXPECT_EQ(items[0].index, 100);
  EXPECT_EQ(items[2].rgb.channels, 3);
  EXPECT_EQ(items[2].rgb.at(0, 0, 5), (2 + 5) / 255.0);
  EXPECT_EQ(items[2].rgb.at(1, 1, 0), ((2 + 7 + 32) % 256) / 255.0);
}

TEST(Cifar, SizeErrorReportsCounts) {
  const auto dir = scribe::test::scratch_dir("cifar_trunc");
  write_fake_batch(dir / "b.bin", 5);
  std::filesystem::resize_file(dir / "b.bin", 5 * 3073 - 10);
  try {
    load_cifar10_batch(dir / "b.bin", 5, 0);
    FAIL();
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(5 * 3073)), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(5 * 3073 - 10)), std::string::npos) << msg;
  }
}

TEST(Cifar, BadLabel) {
  const auto dir = scribe::test::scratch_dir("cifar_label");
  write_fake_batch(dir / "b.bin", 4, 2);
  EXPECT_THROW(load_cifar10_batch(dir / "b.bin", 4, 0), DataCorruptionError);
}

TEST(Cifar, MissingDirectory) {
  EXPECT_THROW(load_cifar10(scribe::test::scratch_dir("cifar_none")), Error);
}

TEST(Synth, DeterministicAndBalanced) {
  const Dataset a = synth_shapes(100, 9), b = synth_shapes(100, 9);
  ASSERT_EQ(a.size(), 100u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a.items[i].rgb == b.items[i].rgb);
    EXPECT_EQ(a.items[i].label, b.items[i].label);
  }
  std::array<int, 4> counts{};
  for (const auto& it : a.items) ++counts[static_cast<std::size_t>(it.label)];
  EXPECT_EQ(counts, (std::array<int, 4>{25, 25, 25, 25}));
  EXPECT_EQ(a.k_classes, 4);
  const Dataset c = synth_shapes(10, 9);
  std::array<int, 4> c10{};
  for (const auto& it : c.items) ++c10[static_cast<std::size_t>(it.label)];
  EXPECT_LE(*std::max_element(c10.begin(), c10.end()) - *std::min_element(c10.begin(), c10.end()), 1);
  EXPECT_FALSE(synth_shapes(8, 10).items[0].rgb == synth_shapes(8, 11).items[0].rgb);
}

TEST(Synth, MaskAreaAndRange) {
  const Dataset d = synth_shapes(200, 3);
  for (const auto& it : d.items) {
    ASSERT_TRUE(it.foreground.has_value());
    const double area = it.foreground->sum() / static_cast<double>(it.foreground->size());
    EXPECT_GE(area, 0.2) << it.index;
    EXPECT_LE(area, 0.6) << it.index;
    EXPECT_GE(it.rgb.data.minCoeff(), 0.0);
    EXPECT_LE(it.rgb.data.maxCoeff(), 1.0);
    EXPECT_EQ(it.rgb.height, 32);
  }
}

TEST(Synth, TooSmall) { EXPECT_THROW(synth_shapes(3, 0), ParameterError); }

TEST(Subset, IdentityAtOne) {
  const Dataset d = synth_shapes(40, 1);
  const Dataset s = subset(d, 1.0, 5);
  ASSERT_EQ(s.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(s.items[i].index, d.items[i].index);
}

TEST(Subset, StratifiedNestedNoDuplicates) {
  const Dataset d = synth_shapes(400, 2);
  std::set<Index> prev;
  for (int tenth = 1; tenth <= 10; ++tenth) {
    const Dataset s = subset(d, tenth / 10.0, 77);
    std::array<int, 4> counts{};
    std::set<Index> ids;
    for (const auto& it : s.items) {
      ++counts[static_cast<std::size_t>(it.label)];
      ids.insert(it.index);
    }
    EXPECT_EQ(ids.size(), s.size());
    for (int c : counts) EXPECT_EQ(c, static_cast<int>(std::lround(tenth / 10.0 * 100)));
    EXPECT_TRUE(std::includes(ids.begin(), ids.end(), prev.begin(), prev.end())) << tenth;
    prev = ids;
  }
  EXPECT_FALSE(subset(d, 0.3, 1).items[0].index == subset(d, 0.3, 2).items[0].index &&
               subset(d, 0.3, 1).items[5].index == subset(d, 0.3, 2).items[5].index);
}

TEST(Subset, CifarArithmetic) {
  // 50,000 labelled stand-ins: only labels matter for the count.
  Dataset d;
  d.k_classes = 10;
  for (Index i = 0; i < 50000; ++i) d.items.push_back(LabeledImage{Image(), static_cast<int>(i % 10), i, std::nullopt});
  const Dataset s = subset(d, 0.1, 0);
  EXPECT_EQ(s.size(), 5000u);
  std::array<int, 10> counts{};
  for (const auto& it : s.items) ++counts[static_cast<std::size_t>(it.label)];
  for (int c : counts) EXPECT_EQ(c, 500);
}

TEST(Subset, FractionOutOfRange) {
  const Dataset d = synth_shapes(8, 1);
  EXPECT_THROW(subset(d, 0.0, 0), ParameterError);
  EXPECT_THROW(subset(d, 1.5, 0), ParameterError);
}

TEST(PngTree, RoundTrip) {
  const auto dir = scribe::test::scratch_dir("png_tree");
  const Dataset d = synth_shapes(8, 4);
  export_png_tree(d, dir);
  const Dataset back = import_png_tree(dir, 4);
  ASSERT_EQ(back.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(back.items[i].label, d.items[i].label);
    EXPECT_EQ(back.items[i].index, d.items[i].index);
    EXPECT_LE((back.items[i].rgb.data - d.items[i].rgb.data).abs().maxCoeff(), 0.5 / 255 + 1e-12);
  }
  EXPECT_THROW(import_png_tree(dir, 2), DataCorruptionError);
}

TEST(MixSeed, SpreadsNearbyInputs) {
  EXPECT_NE(mix_seed(1, 0), mix_seed(0, 1));
  EXPECT_NE(mix_seed(0, 0), mix_seed(0, 1));
  EXPECT_EQ(mix_seed(5, 6), mix_seed(5, 6));
}
