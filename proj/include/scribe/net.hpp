#ifndef SCRIBE_NET_HPP
#define SCRIBE_NET_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "scribe/autograd.hpp"
#include "scribe/ibe.hpp"

namespace scribe {

enum class HeadKind { scribe, softmax_baseline };

std::string to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& name);

struct NetConfig {
  Index k_classes = 10;
  Index width = 32;  // channels of the first stage; later stages use 2x and 4x
  Index groups = 4;  // group-norm groups
  HeadKind head = HeadKind::scribe;
};

struct Parameter {
  std::string name;
  Tensor value;
};

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;
  std::uint64_t config_hash = 0;
};

// Per-image head outputs used by evaluation.
struct Prediction {
  int predicted = 0;
  double confidence = 0.0;
};

// Fully convolutional classifier that emits a K-channel CAM at 1/4 input
// resolution:
//   conv1(3->w) gn relu
//   conv2(w->w) gn (+conv1 out) relu
//   conv3(w->2w, stride 2) gn relu
//   conv4(2w->2w) gn (+conv3 out) relu
//   conv5(2w->4w, stride 2) gn relu
//   conv6(4w->4w) gn relu
//   head 1x1 (4w->K) + bias
// There is no background channel. The scribe head LSE-pools the CAM and
// trains with the implicit-background loss. The baseline head averages the
// CAM spatially and trains with softmax cross-entropy.
class ScribeNet {
 public:
  explicit ScribeNet(NetConfig config);

  const NetConfig& config() const { return config_; }
  HeadKind head_kind() const { return config_.head; }
  void set_head_kind(HeadKind kind) { config_.head = kind; }

  // Kaiming fan-in normal kernels, zero head bias, unit/zero norm affine.
  void init_parameters(std::uint64_t seed);

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const Parameter& parameter(const std::string& name) const;
  Index parameter_count() const;

  // Per-channel normalization applied inside forward.
  Eigen::Array3d input_mean = Eigen::Array3d::Zero();
  Eigen::Array3d input_std = Eigen::Array3d::Ones();
  void fit_input_normalization(const Tensor& images);

  TrainingMetadata metadata;

  struct Bound {
    std::vector<Variable> params;  // same order as parameters()
    Variable cam;                  // [N,K,H/4,W/4]
  };
  // Records the forward pass on the tape with parameters as grad leaves.
  Bound forward_cam(Tape& tape, const Tensor& batch, bool params_require_grad = true) const;
  // Value-only forward.
  Tensor forward_cam(const Tensor& batch) const;

  // Image-level logits from a CAM variable, per the head kind.
  Variable pooled_logits(const Variable& cam, const LsePoolParams& lse) const;
  Variable loss(const Variable& cam, const std::vector<int>& targets, const LsePoolParams& lse) const;

  std::vector<Prediction> predict(const Tensor& cam, const LsePoolParams& lse) const;

 private:
  void add_param(const std::string& name, Shape shape);

  NetConfig config_;
  std::vector<Parameter> params_;
};

void save_checkpoint(const ScribeNet& model, const std::filesystem::path& path);
ScribeNet load_checkpoint(const std::filesystem::path& path);
// Loads into an existing model; every tensor must match by name and shape.
void load_checkpoint_into(ScribeNet& model, const std::filesystem::path& path);

}  // namespace scribe

#endif  // SCRIBE_NET_HPP
