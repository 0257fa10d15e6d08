#include <gtest/gtest.h>

#include <fstream>
#include <regex>
#include <sstream>

#include "scribe/harness.hpp"
#include "scribe/png_io.hpp"
#include "support.hpp"

using namespace scribe;
namespace fs = std::filesystem;

namespace {

RunConfig small_config(const std::string& out) {
  RunConfig c;
  c.n_train = 256;
  c.n_test = 64;
  c.width = 8;
  c.epochs = 15;
  c.lr_milestones = {10};
  c.output_dir = scribe::test::scratch_dir(out).string();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One deliberately overfit model shared by several tests.
struct OverfitFixture {
  RunConfig config;
  DataSplits data;
  TrainResult trained;
};

const OverfitFixture& overfit() {
  static const OverfitFixture f = [] {
    RunConfig c = small_config("overfit");
    c.n_train = 128;
    c.epochs = 40;
    c.lr_milestones = {30};
    DataSplits d = load_data(c);
    TrainResult t = train(c, d.train);
    return OverfitFixture{c, std::move(d), std::move(t)};
  }();
  return f;
}

}  // namespace

TEST(Config, HashIgnoresFieldOrderAndOutputDir) {
  const RunConfig a = parse_config_text("seed=3\nfraction=0.5\naugmentation=crop\n");
  const RunConfig b = parse_config_text("# comment\naugmentation = crop\n\nfraction=0.5\nseed=3\noutput_dir=elsewhere\n");
  EXPECT_EQ(config_hash(a), config_hash(b));
  RunConfig c = a;
  c.seed = 4;
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(hash_hex(0xabcULL), "0000000000000abc");
}

TEST(Config, TextRoundTripsThroughParser) {
  RunConfig c;
  c.fraction = 0.3;
  c.augmentation = AugmentSetting::perspective;
  c.head_kind = HeadKind::softmax_baseline;
  c.lr_milestones = {3, 9};
  c.base_lr = 0.0123456789;
  const RunConfig back = parse_config_text(config_text(c));
  EXPECT_EQ(config_text(back), config_text(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, KebabKeysAndErrors) {
  RunConfig c;
  set_config_field(c, "base-lr", "0.2");
  set_config_field(c, "lr-milestones", "5,7");
  EXPECT_EQ(c.base_lr, 0.2);
  EXPECT_EQ(c.lr_milestones, (std::vector<int>{5, 7}));
  EXPECT_THROW(set_config_field(c, "learning_rate", "1"), ConfigError);
  EXPECT_THROW(set_config_field(c, "epochs", "many"), ConfigError);
  EXPECT_THROW(set_config_field(c, "augmentation", "mixup"), Error);
  try {
    parse_config_text("seed=1\nepochs 3\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  RunConfig bad;
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.fraction = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Config, LoadFileLayersOverBase) {
  const auto dir = scribe::test::scratch_dir("cfg_file");
  std::ofstream(dir / "a.cfg") << "epochs=7\n";
  RunConfig base;
  base.seed = 9;
  const RunConfig c = load_config_file(dir / "a.cfg", base);
  EXPECT_EQ(c.epochs, 7);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_THROW(load_config_file(dir / "none.cfg"), Error);
}

TEST(Schedule, MultiStep) {
  RunConfig c;
  EXPECT_EQ(learning_rate(c, 0), 0.05);
  EXPECT_EQ(learning_rate(c, 14), 0.05);
  EXPECT_NEAR(learning_rate(c, 15), 0.005, 1e-15);
  EXPECT_NEAR(learning_rate(c, 24), 0.005, 1e-15);
  EXPECT_NEAR(learning_rate(c, 25), 0.0005, 1e-15);
}

TEST(Train, OneEpochSmoke) {
  RunConfig c = small_config("smoke");
  c.n_train = 64;
  c.epochs = 1;
  const DataSplits d = load_data(c);
  const TrainResult r = train(c, d.train);
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.log[0].loss));
  const fs::path p = fs::path(c.output_dir) / "m.scrb";
  save_checkpoint(r.model, p);
  EXPECT_TRUE(fs::exists(p));
  EXPECT_EQ(r.model.metadata.config_hash, config_hash(c));
  EXPECT_EQ(r.model.metadata.epoch, 1u);
}

TEST(Train, LossDropsOnFixture) {
  RunConfig c = small_config("loss_drop");
  c.batch_size = 16;
  const DataSplits d = load_data(c);
  std::ostringstream progress;
  const TrainResult r = train(c, d.train, &progress);
  ASSERT_EQ(r.log.size(), 15u);
  EXPECT_LT(r.log.back().loss, 0.3 * r.log.front().loss) << r.log.front().loss << " -> " << r.log.back().loss;
  EXPECT_FALSE(progress.str().empty());
  write_epoch_log(r.log, fs::path(c.output_dir) / "log.csv");
  EXPECT_NE(slurp(fs::path(c.output_dir) / "log.csv").find("epoch"), std::string::npos);
}

TEST(Train, SameSeedGivesIdenticalCheckpoints) {
  RunConfig c = small_config("determinism");
  c.n_train = 64;
  c.epochs = 2;
  c.augmentation = AugmentSetting::combined;
  const DataSplits d = load_data(c);
  save_checkpoint(train(c, d.train).model, fs::path(c.output_dir) / "a.scrb");
  save_checkpoint(train(c, d.train).model, fs::path(c.output_dir) / "b.scrb");
  EXPECT_EQ(slurp(fs::path(c.output_dir) / "a.scrb"), slurp(fs::path(c.output_dir) / "b.scrb"));
}

TEST(Train, DivergenceNamesEpochAndBatch) {
  RunConfig c = small_config("diverge");
  c.n_train = 64;
  c.epochs = 3;
  c.base_lr = 1e200;
  c.batch_size = 16;
  const DataSplits d = load_data(c);
  try {
    train(c, d.train);
    FAIL() << "training should diverge";
  } catch (const NumericError& e) {
    EXPECT_TRUE(std::regex_search(std::string(e.what()), std::regex("epoch [0-9]+, batch [0-9]+"))) << e.what();
  }
}

TEST(Evaluate, OverfitFixtureFitsTrainingData) {
  const auto& f = overfit();
  const Evaluation e = evaluate(f.trained.model, f.data.train, std::nullopt, f.config.lse_r);
  EXPECT_GT(e.report.accuracy, 0.95);
  EXPECT_EQ(e.report.n_images, static_cast<Index>(f.data.train.size()));
  ASSERT_EQ(e.maps.size(), f.data.train.size());
  EXPECT_EQ(e.maps[5].image_id, f.data.train.items[5].index);
  EXPECT_EQ(e.maps[5].rows(), 32);
}

TEST(Evaluate, TwiceIsIdentical) {
  const auto& f = overfit();
  const Evaluation a = evaluate(f.trained.model, f.data.test, std::nullopt, 4.0);
  const Evaluation b = evaluate(f.trained.model, f.data.test, std::nullopt, 4.0);
  EXPECT_EQ(a.report.csv_row(), b.report.csv_row());
}

TEST(Evaluate, GaussianNoiseDoesNotHelp) {
  const auto& f = overfit();
  const Evaluation clean = evaluate(f.trained.model, f.data.test, std::nullopt, 4.0);
  const Evaluation noisy =
      evaluate(f.trained.model, f.data.test, CorruptionSpec{CorruptionKind::gaussian_noise, 5, 0}, 4.0);
  EXPECT_GE(clean.report.accuracy, noisy.report.accuracy);
}

TEST(Evaluate, ClassCountMismatch) {
  const auto& f = overfit();
  Dataset d = f.data.test;
  d.k_classes = 10;
  EXPECT_THROW(evaluate(f.trained.model, d, std::nullopt, 4.0), ConfigError);
}

TEST(Grid, DegenerateGridEqualsDirectRun) {
  RunConfig c = small_config("grid1");
  c.n_train = 64;
  c.n_test = 32;
  c.epochs = 2;
  const GridResult g = run_grid(c, {{0.5}, {AugmentSetting::hflip}, {}});
  ASSERT_EQ(g.cells.size(), 1u);
  ASSERT_TRUE(g.cells[0].ok) << g.cells[0].error;
  RunConfig direct = c;
  direct.fraction = 0.5;
  direct.augmentation = AugmentSetting::hflip;
  const DataSplits d = load_data(direct);
  const TrainResult t = train(direct, d.train);
  const Evaluation e = evaluate(t.model, d.test, std::nullopt, direct.lse_r, direct.ece_bins);
  const MetricsReport& r = *g.cells[0].report;
  EXPECT_EQ(r.accuracy, e.report.accuracy);
  EXPECT_EQ(r.sparsity, e.report.sparsity);
  EXPECT_EQ(r.ece, e.report.ece);
  EXPECT_EQ(r.mean_confidence, e.report.mean_confidence);
  EXPECT_TRUE(g.cells[0].reference);
  EXPECT_EQ(*r.mse_alignment, 0.0);
}

TEST(Grid, ThreeByTwoReferenceAndResume) {
  RunConfig c = small_config("grid32");
  c.n_train = 64;
  c.n_test = 32;
  c.epochs = 2;
  const GridAxes axes{{0.1, 0.5, 1.0}, {AugmentSetting::none, AugmentSetting::crop}, {}};
  const GridResult g = run_grid(c, axes);
  ASSERT_EQ(g.cells.size(), 6u);
  EXPECT_EQ(g.failures(), 0u);
  EXPECT_EQ(g.computed.size(), 6u);
  ASSERT_TRUE(g.reference_model.has_value());
  int refs = 0;
  for (const auto& cell : g.cells) {
    ASSERT_TRUE(cell.report.has_value());
    ASSERT_TRUE(cell.report->mse_alignment.has_value());
    EXPECT_GE(*cell.report->mse_alignment, 0.0);
    if (cell.reference) {
      ++refs;
      EXPECT_EQ(*cell.report->mse_alignment, 0.0);
      for (const auto& other : g.cells) EXPECT_LE(other.report->accuracy, cell.report->accuracy);
    }
  }
  EXPECT_EQ(refs, 1);
  const fs::path out(c.output_dir);
  EXPECT_TRUE(fs::exists(out / "results.csv"));
  EXPECT_TRUE(fs::exists(out / "grid.json"));

  // A second run loads everything.
  EXPECT_TRUE(run_grid(c, axes).computed.empty());
  // Deleting one cell's record recomputes only that cell.
  const std::string victim = g.cells[3].id;
  fs::remove(out / "cells" / (victim + ".json"));
  const std::string before = slurp(out / "results.csv");
  const GridResult again = run_grid(c, axes);
  EXPECT_EQ(again.computed, std::vector<std::string>{victim});
  EXPECT_EQ(slurp(out / "results.csv"), before);

  const GridResult loaded = load_grid(out);
  EXPECT_EQ(loaded.cells.size(), 6u);
  EXPECT_EQ(loaded.reference_model, g.reference_model);
}

TEST(Grid, CorruptionCellsAndFailureRecords) {
  RunConfig c = small_config("grid_corrupt");
  c.n_train = 32;
  c.n_test = 16;
  c.epochs = 1;
  const GridResult g = run_grid(c, {{1.0}, {AugmentSetting::none}, {{CorruptionKind::fog, 5}, {CorruptionKind::contrast, 2}}});
  ASSERT_EQ(g.cells.size(), 3u);
  EXPECT_FALSE(g.cells[0].corruption.has_value());
  EXPECT_EQ(g.cells[1].id, g.cells[0].id + "_fog_5");
  for (const auto& cell : g.cells) EXPECT_TRUE(cell.ok) << cell.error;

  RunConfig broken = small_config("grid_fail");
  broken.n_train = 32;
  broken.n_test = 16;
  broken.epochs = 1;
  broken.base_lr = 1e200;
  const GridResult f = run_grid(broken, {{0.5, 1.0}, {AugmentSetting::none}, {}});
  EXPECT_EQ(f.cells.size(), 2u);
  EXPECT_EQ(f.failures(), 2u);
  for (const auto& cell : f.cells) EXPECT_FALSE(cell.error.empty());
}

TEST(Render, ImageDimensionsAndQuantization) {
  const auto& f = overfit();
  const auto dir = scribe::test::scratch_dir("render");
  Dataset few = f.data.test;
  few.items.resize(3);
  render_images(f.trained.model, few, 4.0, dir);
  const Evaluation e = evaluate(f.trained.model, few, std::nullopt, 4.0);
  for (std::size_t i = 0; i < few.size(); ++i) {
    const Index idx = few.items[i].index;
    const Image mask = read_png(dir / ("mask_" + std::to_string(idx) + ".png"));
    EXPECT_EQ(mask.channels, 3);
    EXPECT_EQ(mask.height, 32);
    EXPECT_EQ(mask.width, 32);
    const Image attn = read_png(dir / ("attention_" + std::to_string(idx) + ".png"));
    ASSERT_EQ(attn.channels, 1);
    for (Index y = 0; y < 32; ++y)
      for (Index x = 0; x < 32; ++x)
        EXPECT_EQ(std::lround(attn.at(0, y, x) * 255.0), std::lround(255.0 * e.maps[i].values(y, x)));
  }
}

TEST(Render, TrendSvgHasOnePointPerFraction) {
  RunConfig c = small_config("svg");
  c.n_train = 32;
  c.n_test = 16;
  c.epochs = 1;
  const GridResult g = run_grid(c, {{0.1, 0.5, 1.0}, {AugmentSetting::none, AugmentSetting::hflip}, {}});
  const std::string svg = trend_svg(g, "sparsity");
  for (const std::string aug : {"none", "hflip"}) {
    const auto start = svg.find("data-series=\"" + aug + "\"");
    ASSERT_NE(start, std::string::npos) << aug;
    const auto end = svg.find("</g>", start);
    const std::string block = svg.substr(start, end - start);
    int points = 0;
    for (auto p = block.find("class=\"point\""); p != std::string::npos; p = block.find("class=\"point\"", p + 1)) ++points;
    EXPECT_EQ(points, 3) << aug;
  }
  const auto paths = render_trend_plots(g, fs::path(c.output_dir) / "plots");
  EXPECT_EQ(paths.size(), 5u);
  for (const auto& p : paths) EXPECT_TRUE(fs::exists(p));
  const std::string md = grid_report(g);
  EXPECT_NE(md.find("sparsity"), std::string::npos);
}
