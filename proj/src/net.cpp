#include "scribe/net.hpp"

#include <cmath>
#include <random>

#include "scribe/error.hpp"
#include "scribe/ops.hpp"

namespace scribe {

std::string to_string(HeadKind kind) { return kind == HeadKind::scribe ? "scribe" : "softmax_baseline"; }

HeadKind parse_head_kind(const std::string& name) {
  if (name == "scribe") return HeadKind::scribe;
  if (name == "softmax_baseline" || name == "baseline") return HeadKind::softmax_baseline;
  throw ParameterError("unknown head kind '" + name + "' (expected scribe or softmax_baseline)");
}

namespace {

struct ConvSpec {
  const char* name;
  int in_mult;   // 0 means the 3 input channels
  int out_mult;
  Index stride;
};

// Multipliers of the base width.
constexpr ConvSpec kConvs[] = {
    {"conv1", 0, 1, 1}, {"conv2", 1, 1, 1}, {"conv3", 1, 2, 2},
    {"conv4", 2, 2, 1}, {"conv5", 2, 4, 2}, {"conv6", 4, 4, 1},
};

}  // namespace

ScribeNet::ScribeNet(NetConfig config) : config_(config) {
  if (config_.k_classes < 1) throw ParameterError("k_classes must be >= 1");
  if (config_.width < 1 || config_.groups < 1 || config_.width % config_.groups != 0) {
    throw ParameterError("width " + std::to_string(config_.width) + " must be a positive multiple of groups " +
                         std::to_string(config_.groups));
  }
  const Index w = config_.width;
  for (const ConvSpec& c : kConvs) {
    const Index in = c.in_mult == 0 ? 3 : c.in_mult * w;
    const Index out = c.out_mult * w;
    const std::string n = c.name;
    add_param(n + ".weight", {out, in, 3, 3});
    add_param("gn" + n.substr(4) + ".gamma", {out});
    add_param("gn" + n.substr(4) + ".beta", {out});
  }
  add_param("head.weight", {config_.k_classes, 4 * w, 1, 1});
  add_param("head.bias", {config_.k_classes});
}

void ScribeNet::add_param(const std::string& name, Shape shape) { params_.push_back({name, Tensor::zeros(std::move(shape))}); }

const Parameter& ScribeNet::parameter(const std::string& name) const {
  for (const Parameter& p : params_) {
    if (p.name == name) return p;
  }
  throw ParameterError("no parameter named '" + name + "'");
}

Index ScribeNet::parameter_count() const {
  Index n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

void ScribeNet::init_parameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (Parameter& p : params_) {
    const bool is_kernel = p.value.rank() == 4;
    if (is_kernel) {
      const Index fan_in = p.value.dim(1) * p.value.dim(2) * p.value.dim(3);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (Index i = 0; i < p.value.size(); ++i) p.value[i] = dist(rng);
    } else if (p.name.ends_with(".gamma")) {
      p.value.data().setOnes();
    } else {
      p.value.data().setZero();
    }
  }
  metadata.seed = seed;
}

void ScribeNet::fit_input_normalization(const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 3) {
    throw DimensionError("normalization statistics need [N,3,H,W] images, got " + shape_string(images.shape()));
  }
  const Index n = images.dim(0), hw = images.dim(2) * images.dim(3);
  for (Index c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    for (Index i = 0; i < n; ++i) {
      const Eigen::Map<const Eigen::ArrayXd> plane(images.raw() + (i * 3 + c) * hw, hw);
      s += plane.sum();
      s2 += plane.square().sum();
    }
    const double cnt = static_cast<double>(n * hw);
    const double mu = s / cnt;
    const double var = std::max(s2 / cnt - mu * mu, 0.0);
    input_mean[c] = mu;
    input_std[c] = std::max(std::sqrt(var), 1e-3);
  }
}

ScribeNet::Bound ScribeNet::forward_cam(Tape& tape, const Tensor& batch, bool params_require_grad) const {
  if (batch.rank() != 4 || batch.dim(1) != 3) {
    throw DimensionError("forward_cam expects [N,3,H,W] input, got " + shape_string(batch.shape()) +
                         " (axis 1 must be 3 channels)");
  }
  Tensor normalized = batch;
  const Index n = batch.dim(0), hw = batch.dim(2) * batch.dim(3);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < 3; ++c) {
      auto plane = normalized.data().segment((i * 3 + c) * hw, hw);
      plane = (plane - input_mean[c]) / input_std[c];
    }
  }

  Bound bound;
  for (const Parameter& p : params_) bound.params.push_back(tape.leaf(p.value, params_require_grad));
  auto param = [&](std::size_t i) { return bound.params[i]; };

  Variable x = tape.constant(std::move(normalized));
  Variable skip;
  std::size_t pi = 0;
  for (std::size_t layer = 0; layer < std::size(kConvs); ++layer) {
    x = conv2d(x, param(pi), kConvs[layer].stride, 1);
    x = group_norm(x, param(pi + 1), param(pi + 2), config_.groups);
    pi += 3;
    // conv2 and conv4 close a residual block opened by conv1 / conv3.
    if (layer == 1 || layer == 3) x = add(x, skip);
    x = relu(x);
    if (layer == 0 || layer == 2) skip = x;
  }
  const Index k = config_.k_classes;
  Variable cam = conv2d(x, param(pi), 1, 0);
  cam = add(cam, reshape(param(pi + 1), {1, k, 1, 1}));
  bound.cam = cam;
  return bound;
}

Tensor ScribeNet::forward_cam(const Tensor& batch) const {
  Tape tape;
  return forward_cam(tape, batch, false).cam.value();
}

Variable ScribeNet::pooled_logits(const Variable& cam, const LsePoolParams& lse) const {
  return config_.head == HeadKind::scribe ? lse_pool(cam, lse) : global_avg_pool(cam);
}

Variable ScribeNet::loss(const Variable& cam, const std::vector<int>& targets, const LsePoolParams& lse) const {
  const Variable pooled = pooled_logits(cam, lse);
  return config_.head == HeadKind::scribe ? ibe_loss(pooled, targets) : softmax_cross_entropy(pooled, targets);
}

std::vector<Prediction> ScribeNet::predict(const Tensor& cam, const LsePoolParams& lse) const {
  Tape tape;
  const Variable pooled = pooled_logits(tape.constant(cam), lse);
  const Index n = pooled.shape()[0], k = pooled.shape()[1];
  const Eigen::Map<const Eigen::ArrayXXd> s(pooled.value().raw(), k, n);
  std::vector<Prediction> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    s.col(i).maxCoeff(&best);
    Prediction& p = out[static_cast<std::size_t>(i)];
    p.predicted = static_cast<int>(best);
    if (config_.head == HeadKind::scribe) {
      p.confidence = detail::stable_sigmoid(s(best, i));
    } else {
      p.confidence = 1.0 / ((s.col(i) - s(best, i)).exp().sum());
    }
  }
  return out;
}

}  // namespace scribe
