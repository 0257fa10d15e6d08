#ifndef SCRIBE_METRICS_HPP
#define SCRIBE_METRICS_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scribe/ibe.hpp"

namespace scribe {

struct PredictionRecord {
  int predicted = 0;
  double confidence = 0.0;
  std::optional<int> true_class;  // absent for unlabeled data
};

// Fraction of attention-map pixels that round to 0 (A < 0.5, with 0.5
// rounding up), averaged over maps. Needs no labels.
double sparsity(std::span<const AttentionMap> maps);

// Equal-width, right-closed confidence bins; confidence 0 lands in the
// first bin.
double ece(std::span<const PredictionRecord> records, int n_bins = 15);

// Bin index under the right-closed convention, exposed for diagnostics.
int confidence_bin(double confidence, int n_bins);

// Mean over image pairs of the per-pixel squared difference, pairs matched
// by position and checked by image id.
double mse_alignment(std::span<const AttentionMap> maps, std::span<const AttentionMap> reference);

struct AccuracyConfidence {
  std::optional<double> accuracy;  // empty when any record lacks a label
  double mean_confidence = 0.0;
};

AccuracyConfidence accuracy_and_confidence(std::span<const PredictionRecord> records);

struct MetricsReport {
  double accuracy = 0.0;
  double mean_confidence = 0.0;
  double ece = 0.0;
  double sparsity = 0.0;
  std::optional<double> mse_alignment;
  Index n_images = 0;
  std::string config;  // descriptor of the producing configuration

  static const std::vector<std::string>& csv_columns();
  std::string csv_header() const;
  // Doubles are written with 17 significant digits; a missing MSE is empty.
  std::string csv_row() const;
  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

// Label-aware summary of one evaluation pass.
MetricsReport summarize(std::span<const PredictionRecord> records, std::span<const AttentionMap> maps, int n_bins,
                        const std::string& config);

}  // namespace scribe

#endif  // SCRIBE_METRICS_HPP
