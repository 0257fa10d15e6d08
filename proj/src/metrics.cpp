#include "scribe/metrics.hpp"

#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "scribe/error.hpp"

namespace scribe {

double sparsity(std::span<const AttentionMap> maps) {
  if (maps.empty()) throw ParameterError("sparsity needs at least one attention map");
  const Index rows = maps.front().rows(), cols = maps.front().cols();
  double total = 0.0;
  for (const AttentionMap& m : maps) {
    if (m.rows() != rows || m.cols() != cols) {
      throw DimensionError("attention maps differ in size: " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " vs " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    // std::round is half-away-from-zero, so round(A) == 0 iff A < 0.5 on [0,1].
    const Index zeros = (m.values.unaryExpr([](double a) { return std::round(a); }) == 0.0).count();
    total += static_cast<double>(zeros) / static_cast<double>(rows * cols);
  }
  return total / static_cast<double>(maps.size());
}

int confidence_bin(double confidence, int n_bins) {
  if (n_bins < 1) throw ParameterError("ECE needs n_bins >= 1");
  const double c = std::clamp(confidence, 0.0, 1.0);
  int b = static_cast<int>(std::ceil(c * n_bins)) - 1;
  b = std::clamp(b, 0, n_bins - 1);
  // Settle rounding of c * n_bins against the exact bin edges b / n_bins.
  while (b > 0 && c <= static_cast<double>(b) / n_bins) --b;
  while (b < n_bins - 1 && c > static_cast<double>(b + 1) / n_bins) ++b;
  return b;
}

double ece(std::span<const PredictionRecord> records, int n_bins) {
  if (n_bins < 1) throw ParameterError("ECE needs n_bins >= 1");
  if (records.empty()) throw ParameterError("ECE of an empty record set");
  std::vector<double> conf_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> correct(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<Index> count(static_cast<std::size_t>(n_bins), 0);
  for (const PredictionRecord& r : records) {
    if (!r.true_class) {
      throw UsageError("ECE needs true labels; use sparsity for label-free evaluation");
    }
    if (r.confidence < 0.0 || r.confidence > 1.0) throw ParameterError("confidence outside [0,1]");
    const auto b = static_cast<std::size_t>(confidence_bin(r.confidence, n_bins));
    conf_sum[b] += r.confidence;
    correct[b] += (r.predicted == *r.true_class) ? 1.0 : 0.0;
    ++count[b];
  }
  const double total = static_cast<double>(records.size());
  double e = 0.0;
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    const double n = static_cast<double>(count[b]);
    e += (n / total) * std::abs(correct[b] / n - conf_sum[b] / n);
  }
  return e;
}

double mse_alignment(std::span<const AttentionMap> maps, std::span<const AttentionMap> reference) {
  if (maps.size() != reference.size()) {
    throw PairingError("cannot pair " + std::to_string(maps.size()) + " maps with " + std::to_string(reference.size()) +
                       " reference maps");
  }
  if (maps.empty()) throw ParameterError("MSE alignment of an empty map set");
  double total = 0.0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const AttentionMap& a = maps[i];
    const AttentionMap& r = reference[i];
    if (a.image_id != r.image_id) {
      throw PairingError("map " + std::to_string(i) + " is image " + std::to_string(a.image_id) +
                         " but the reference is image " + std::to_string(r.image_id));
    }
    if (a.rows() != r.rows() || a.cols() != r.cols()) {
      throw DimensionError("map " + std::to_string(i) + " size differs from its reference");
    }
    total += (a.values - r.values).square().mean();
  }
  return total / static_cast<double>(maps.size());
}

AccuracyConfidence accuracy_and_confidence(std::span<const PredictionRecord> records) {
  if (records.empty()) throw ParameterError("accuracy of an empty record set");
  AccuracyConfidence out;
  double conf = 0.0, correct = 0.0;
  bool labelled = true;
  for (const PredictionRecord& r : records) {
    conf += r.confidence;
    if (!r.true_class) {
      labelled = false;
    } else if (r.predicted == *r.true_class) {
      correct += 1.0;
    }
  }
  const double n = static_cast<double>(records.size());
  out.mean_confidence = conf / n;
  if (labelled) out.accuracy = correct / n;
  return out;
}

MetricsReport summarize(std::span<const PredictionRecord> records, std::span<const AttentionMap> maps, int n_bins,
                        const std::string& config) {
  MetricsReport rep;
  const AccuracyConfidence ac = accuracy_and_confidence(records);
  if (!ac.accuracy) throw UsageError("summaries need labelled records; use sparsity for label-free evaluation");
  rep.accuracy = *ac.accuracy;
  rep.mean_confidence = ac.mean_confidence;
  rep.ece = ece(records, n_bins);
  rep.sparsity = maps.empty() ? 0.0 : sparsity(maps);
  rep.n_images = static_cast<Index>(records.size());
  rep.config = config;
  return rep;
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

const std::vector<std::string>& MetricsReport::csv_columns() {
  static const std::vector<std::string> cols = {"config",   "n_images", "accuracy",     "mean_confidence",
                                                "ece",      "sparsity", "mse_alignment"};
  return cols;
}

std::string MetricsReport::csv_header() const {
  std::string out;
  for (const auto& c : csv_columns()) out += (out.empty() ? "" : ",") + c;
  return out;
}

std::string MetricsReport::csv_row() const {
  return csv_escape(config) + "," + std::to_string(n_images) + "," + fmt17(accuracy) + "," + fmt17(mean_confidence) +
         "," + fmt17(ece) + "," + fmt17(sparsity) + "," + (mse_alignment ? fmt17(*mse_alignment) : std::string());
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = config;
  j["n_images"] = n_images;
  j["accuracy"] = accuracy;
  j["mean_confidence"] = mean_confidence;
  j["ece"] = ece;
  j["sparsity"] = sparsity;
  j["mse_alignment"] = mse_alignment ? nlohmann::ordered_json(*mse_alignment) : nlohmann::ordered_json(nullptr);
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MetricsReport r;
  r.config = j.at("config").get<std::string>();
  r.n_images = j.at("n_images").get<Index>();
  r.accuracy = j.at("accuracy").get<double>();
  r.mean_confidence = j.at("mean_confidence").get<double>();
  r.ece = j.at("ece").get<double>();
  r.sparsity = j.at("sparsity").get<double>();
  if (j.contains("mse_alignment") && !j.at("mse_alignment").is_null()) r.mse_alignment = j.at("mse_alignment").get<double>();
  return r;
}

}  // namespace scribe
