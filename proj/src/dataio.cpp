#include "scribe/dataio.hpp"
#include "scribe/color.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "scribe/png_io.hpp"

namespace scribe {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.label);
  return out;
}

// ---------------------------------------------------------------- CIFAR-10

std::vector<LabeledImage> load_cifar10_batch(const std::filesystem::path& file, Index expected_records,
                                             Index first_index) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 batch " + file.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const Index expected = expected_records * kCifarRecordBytes;
  if (static_cast<Index>(bytes.size()) != expected) {
    throw FormatError("CIFAR-10 batch " + file.string() + " has " + std::to_string(bytes.size()) +
                      " bytes, expected " + std::to_string(expected) + " (" + std::to_string(expected_records) +
                      " records of " + std::to_string(kCifarRecordBytes) + " bytes)");
  }
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(expected_records));
  for (Index r = 0; r < expected_records; ++r) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + r * kCifarRecordBytes);
    if (rec[0] > 9) {
      throw DataCorruptionError("record " + std::to_string(r) + " of " + file.string() + " has label byte " +
                                std::to_string(rec[0]) + " (> 9)");
    }
    LabeledImage li{Image(3, 32, 32), rec[0], first_index + r, std::nullopt};
    for (Index i = 0; i < 3 * 1024; ++i) li.rgb.data[i] = rec[1 + i] / 255.0;
    out.push_back(std::move(li));
  }
  return out;
}

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
  Dataset train{{}, "train", Provenance::cifar10, 10};
  Dataset test{{}, "test", Provenance::cifar10, 10};
  for (int b = 1; b <= 5; ++b) {
    auto part = load_cifar10_batch(dir / ("data_batch_" + std::to_string(b) + ".bin"), kCifarRecordsPerBatch,
                                   (b - 1) * kCifarRecordsPerBatch);
    std::move(part.begin(), part.end(), std::back_inserter(train.items));
  }
  test.items = load_cifar10_batch(dir / "test_batch.bin", kCifarRecordsPerBatch, 0);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------- synthetic shapes

namespace {

struct Vec2 {
  double x, y;
};

struct ShapeDraw {
  int kind;          // 0 circle, 1 square, 2 triangle, 3 cross
  double size;       // circle radius, square side, triangle base (= height), cross extent
  double angle;      // radians
  Vec2 center;
};

// Inside test in the shape's own frame (origin at the centre, unrotated).
bool inside_local(const ShapeDraw& s, double u, double v) {
  switch (s.kind) {
    case 0:
      return u * u + v * v <= s.size * s.size;
    case 1:
      return std::abs(u) <= s.size / 2 && std::abs(v) <= s.size / 2;
    case 2: {
      // Apex at v = -h/2, base at v = +h/2.
      const double h = s.size;
      if (v < -h / 2 || v > h / 2) return false;
      return std::abs(u) <= (s.size / 2) * (v + h / 2) / h;
    }
    default: {
      const double t = 0.4 * s.size;
      const double half = s.size / 2;
      return (std::abs(u) <= half && std::abs(v) <= t / 2) || (std::abs(v) <= half && std::abs(u) <= t / 2);
    }
  }
}

std::vector<Vec2> outline(const ShapeDraw& s) {
  std::vector<Vec2> pts;
  const double h = s.size / 2;
  switch (s.kind) {
    case 0:
      for (int k = 0; k < 16; ++k) {
        const double a = 2 * std::numbers::pi * k / 16;
        pts.push_back({s.size * std::cos(a), s.size * std::sin(a)});
      }
      break;
    case 1:
      pts = {{-h, -h}, {h, -h}, {h, h}, {-h, h}};
      break;
    case 2:
      pts = {{0, -h}, {h, h}, {-h, h}};
      break;
    default: {
      const double t = 0.2 * s.size;
      pts = {{-h, -t}, {h, -t}, {h, t}, {-h, t}, {-t, -h}, {t, -h}, {t, h}, {-t, h}};
    }
  }
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  for (Vec2& p : pts) p = {c * p.x - sn * p.y, sn * p.x + c * p.y};
  return pts;
}

double size_for_area(int kind, double area_px) {
  switch (kind) {
    case 0: return std::sqrt(area_px / std::numbers::pi);
    case 1: return std::sqrt(area_px);
    case 2: return std::sqrt(2.0 * area_px);
    default: return std::sqrt(area_px / 0.64);
  }
}

Eigen::Array3d random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {u(rng), u(rng), u(rng)};
}

constexpr int kDistractors = 5;

LabeledImage make_shape_image(Index index, int label, std::uint64_t seed) {
  constexpr Index kSide = 32;
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // Background: two-colour sinusoidal stripes.
  Eigen::Array3d bg1 = random_color(rng), bg2 = random_color(rng);
  const double freq = 0.35 + 0.8 * u(rng);
  const double phi = std::numbers::pi * u(rng);
  const double psi = 2 * std::numbers::pi * u(rng);

  // Object hue is tied to the class; saturation and value vary.
  auto class_color = [&](int cls) {
    double r, g, b;
    hsv_to_rgb(90.0 * cls + 40.0 * (u(rng) - 0.5), 0.6 + 0.4 * u(rng), 0.6 + 0.4 * u(rng), r, g, b);
    return Eigen::Array3d(r, g, b);
  };
  Eigen::Array3d fg;
  for (int tries = 0;; ++tries) {
    if (tries % 32 == 31) {
      bg1 = random_color(rng);
      bg2 = random_color(rng);
    }
    fg = class_color(label);
    if (std::min((fg - bg1).matrix().norm(), (fg - bg2).matrix().norm()) >= 0.45) break;
  }

  ShapeDraw s{label, 0.0, 0.0, {0, 0}};
  Eigen::ArrayXXd mask(kSide, kSide);
  for (int attempt = 0;; ++attempt) {
    const double area = (0.2 + 0.2 * u(rng)) * kSide * kSide;
    s.size = size_for_area(label, area);
    const double jitter = (u(rng) - 0.5) * (std::numbers::pi / 6);
    s.angle = (label == 2 ? std::floor(4 * u(rng)) * std::numbers::pi / 2 : 0.0) + jitter;
    const auto pts = outline(s);
    double minx = 1e9, maxx = -1e9, miny = 1e9, maxy = -1e9;
    for (const Vec2& p : pts) {
      minx = std::min(minx, p.x);
      maxx = std::max(maxx, p.x);
      miny = std::min(miny, p.y);
      maxy = std::max(maxy, p.y);
    }
    const double lo_x = 0.5 - minx, hi_x = kSide - 0.5 - maxx;
    const double lo_y = 0.5 - miny, hi_y = kSide - 0.5 - maxy;
    if (lo_x > hi_x || lo_y > hi_y) continue;
    s.center = {lo_x + (hi_x - lo_x) * u(rng), lo_y + (hi_y - lo_y) * u(rng)};

    const double c = std::cos(-s.angle), sn = std::sin(-s.angle);
    for (Index y = 0; y < kSide; ++y) {
      for (Index x = 0; x < kSide; ++x) {
        const double dx = x + 0.5 - s.center.x, dy = y + 0.5 - s.center.y;
        mask(y, x) = inside_local(s, c * dx - sn * dy, sn * dx + c * dy) ? 1.0 : 0.0;
      }
    }
    const double frac = mask.mean();
    if (frac >= 0.2 && frac <= 0.6) break;
    if (attempt > 1000) throw NumericError("synthetic shape generation did not converge");
  }

  // Small distractor shapes in class colours, under the object and outside
  // its mask.
  Eigen::ArrayXXi clutter = Eigen::ArrayXXi::Constant(kSide, kSide, -1);
  std::vector<Eigen::Array3d> ccol;
  for (int k = 0; k < kDistractors; ++k) {
    ShapeDraw d{static_cast<int>(4 * u(rng)) % 4, 0.0, 2 * std::numbers::pi * u(rng), {kSide * u(rng), kSide * u(rng)}};
    d.size = size_for_area(d.kind, (0.015 + 0.025 * u(rng)) * kSide * kSide);
    ccol.push_back(class_color(static_cast<int>(4 * u(rng)) % 4));
    const double c = std::cos(-d.angle), sn = std::sin(-d.angle);
    for (Index y = 0; y < kSide; ++y)
      for (Index x = 0; x < kSide; ++x) {
        const double dx = x + 0.5 - d.center.x, dy = y + 0.5 - d.center.y;
        if (inside_local(d, c * dx - sn * dy, sn * dx + c * dy)) clutter(y, x) = k;
      }
  }
  std::normal_distribution<double> noise(0.0, 0.03);
  LabeledImage li{Image(3, kSide, kSide), label, index, mask};
  const double shade = 0.15 * (u(rng) - 0.5);
  for (Index y = 0; y < kSide; ++y) {
    for (Index x = 0; x < kSide; ++x) {
      const double t = 0.5 + 0.5 * std::sin(freq * (x * std::cos(phi) + y * std::sin(phi)) + psi);
      const double g = shade * ((x + y) / (2.0 * kSide) - 0.5);
      for (Index ch = 0; ch < 3; ++ch) {
        double bg = bg1[ch] * (1 - t) + bg2[ch] * t;
        if (clutter(y, x) >= 0) bg = ccol[static_cast<std::size_t>(clutter(y, x))][ch];
        const double v = mask(y, x) > 0 ? fg[ch] + g : bg;
        li.rgb.at(ch, y, x) = std::clamp(v + noise(rng), 0.0, 1.0);
      }
    }
  }
  return li;
}

}  // namespace

Dataset synth_shapes(Index n, std::uint64_t seed, const std::string& split) {
  if (n < 4) throw ParameterError("synthetic corpus needs n >= 4, got " + std::to_string(n));
  Dataset ds{{}, split, Provenance::synthetic, 4};
  ds.items.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) ds.items.push_back(make_shape_image(i, static_cast<int>(i % 4), seed));
  return ds;
}

// ------------------------------------------------------------------ subsets

Dataset subset(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ParameterError("subset fraction must be in (0,1], got " + std::to_string(fraction));
  }
  std::vector<std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.items.size(); ++i) {
    const auto c = static_cast<std::size_t>(dataset.items[i].label);
    if (c >= by_class.size()) by_class.resize(c + 1);
    by_class[c].push_back(i);
  }
  std::vector<char> keep(dataset.items.size(), 0);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    std::vector<std::size_t> order = by_class[c];
    std::mt19937_64 rng(mix_seed(seed, c));
    std::shuffle(order.begin(), order.end(), rng);
    const auto take = static_cast<std::size_t>(std::round(fraction * static_cast<double>(order.size())));
    for (std::size_t k = 0; k < take; ++k) keep[order[k]] = 1;
  }
  Dataset out{{}, dataset.split, dataset.provenance, dataset.k_classes};
  for (std::size_t i = 0; i < dataset.items.size(); ++i) {
    if (keep[i]) out.items.push_back(dataset.items[i]);
  }
  return out;
}

// ------------------------------------------------------------- PNG export

void export_png_tree(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "labels.csv");
  if (!csv) throw IoError("cannot write " + (dir / "labels.csv").string());
  csv << "index,label,file\n";
  for (const LabeledImage& li : dataset.items) {
    const std::string file = std::to_string(li.index) + ".png";
    write_png8(li.rgb, dir / file);
    csv << li.index << ',' << li.label << ',' << file << '\n';
  }
  if (!csv) throw IoError("write failed for " + (dir / "labels.csv").string());
}

Dataset import_png_tree(const std::filesystem::path& dir, Index k_classes) {
  std::ifstream csv(dir / "labels.csv");
  if (!csv) throw IoError("cannot open " + (dir / "labels.csv").string());
  Dataset ds{{}, dir.filename().string(), Provenance::imported, k_classes};
  std::string line;
  std::getline(csv, line);  // header
  Index row = 0;
  while (std::getline(csv, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string idx, label, file;
    if (!std::getline(ss, idx, ',') || !std::getline(ss, label, ',') || !std::getline(ss, file)) {
      throw FormatError("labels.csv row " + std::to_string(row) + " is malformed");
    }
    LabeledImage li{read_png(dir / file), std::stoi(label), std::stoll(idx), std::nullopt};
    if (li.label < 0 || li.label >= k_classes) {
      throw DataCorruptionError("labels.csv row " + std::to_string(row) + " has label " + label);
    }
    ds.items.push_back(std::move(li));
  }
  return ds;
}

}  // namespace scribe
