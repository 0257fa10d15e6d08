#ifndef SCRIBE_HARNESS_HPP
#define SCRIBE_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scribe/augment.hpp"
#include "scribe/dataio.hpp"
#include "scribe/distort.hpp"
#include "scribe/metrics.hpp"
#include "scribe/net.hpp"

namespace scribe {

struct RunConfig {
  std::string dataset = "synthetic";  // synthetic | cifar10 | png
  std::string data_dir;               // cifar10 batch directory or png tree root (train/ and test/)
  Index k_classes = 10;               // png trees only; the other datasets know their classes
  Index n_train = 2000;               // synthetic only
  Index n_test = 500;
  std::uint64_t data_seed = 1234;     // synthetic corpus seed
  double fraction = 1.0;
  AugmentSetting augmentation = AugmentSetting::none;
  HeadKind head_kind = HeadKind::scribe;
  int epochs = 30;
  double base_lr = 0.05;
  std::vector<int> lr_milestones = {15, 25};
  double lr_decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Index batch_size = 64;
  double lse_r = 4.0;
  std::uint64_t seed = 0;
  Index width = 32;
  int ece_bins = 15;
  std::string output_dir = "runs";

  void validate() const;
};

// key=value lines in key order. output_dir is left out: it names where
// results go, not what they are.
std::string config_text(const RunConfig& config);
// FNV-1a 64 of config_text; independent of the order fields were set in.
std::uint64_t config_hash(const RunConfig& config);
std::string hash_hex(std::uint64_t h);

// Keys use the snake_case field names; '-' is accepted in place of '_'.
void set_config_field(RunConfig& config, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();
// '#' starts a comment; blank lines are ignored.
RunConfig parse_config_text(const std::string& text, RunConfig base = {});
RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {});

struct DataSplits {
  Dataset train;
  Dataset test;
};
DataSplits load_data(const RunConfig& config);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_accuracy = 0.0;  // running accuracy over the epoch's batches
};

struct TrainResult {
  ScribeNet model;
  std::vector<EpochLog> log;
};

// Learning rate in effect during a 0-based epoch.
double learning_rate(const RunConfig& config, int epoch);

// Trains on subset(train, fraction, seed). Throws NumericError naming the
// epoch and batch if the loss stops being finite.
TrainResult train(const RunConfig& config, const Dataset& train, std::ostream* progress = nullptr);
void write_epoch_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

struct Evaluation {
  MetricsReport report;
  std::vector<AttentionMap> maps;  // image_id = dataset index
  std::vector<PredictionRecord> records;
};

// Corrupts the dataset first when a spec is given.
Evaluation evaluate(const ScribeNet& model, const Dataset& data, const std::optional<CorruptionSpec>& corruption,
                    double lse_r, int ece_bins = 15, const std::string& descriptor = "");

struct CorruptionAxis {
  CorruptionKind kind;
  int severity;
};

struct GridAxes {
  std::vector<double> fractions;
  std::vector<AugmentSetting> augmentations;
  std::vector<CorruptionAxis> corruptions;  // clean evaluation is always included
};

struct GridCell {
  std::string id;  // <config hash>[_<kind>_<severity>]
  RunConfig config;
  std::optional<CorruptionAxis> corruption;
  bool ok = false;
  std::string error;
  std::optional<MetricsReport> report;
  bool reference = false;
};

struct GridResult {
  std::vector<GridCell> cells;  // fraction-major, then augmentation, clean first
  std::optional<std::string> reference_model;  // config hash of the best clean cell
  std::vector<std::string> computed;           // cell ids evaluated by this run (not loaded)
  std::size_t failures() const;
};

// Layout under base.output_dir:
//   models/<hash>.scrb, models/<hash>.log.csv
//   maps/<cell id>/<index>.png (16-bit attention maps)
//   cells/<cell id>.json
//   results.csv, grid.json
// Cells whose JSON already records success are loaded, not recomputed.
GridResult run_grid(const RunConfig& base, const GridAxes& axes, std::ostream* progress = nullptr);
GridResult load_grid(const std::filesystem::path& dir);
void write_results_csv(const GridResult& grid, const std::filesystem::path& path);

// Attention maps for a cell, read back from the 16-bit cache.
std::vector<AttentionMap> load_cached_maps(const std::filesystem::path& dir);

// One mask_<index>.png and attention_<index>.png per image.
void render_images(const ScribeNet& model, const Dataset& images, double lse_r, const std::filesystem::path& out_dir);
// One SVG per metric (metric against fraction, one polyline per
// augmentation) from the clean cells of a grid.
std::vector<std::filesystem::path> render_trend_plots(const GridResult& grid, const std::filesystem::path& out_dir);
std::string trend_svg(const GridResult& grid, const std::string& metric);

// Markdown tables: each metric by fraction x augmentation, plus corruption
// accuracy.
std::string grid_report(const GridResult& grid);

}  // namespace scribe

#endif  // SCRIBE_HARNESS_HPP
