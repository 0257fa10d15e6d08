#ifndef SCRIBE_IBE_HPP
#define SCRIBE_IBE_HPP

// Implicit-background weak segmentation: LogSumExp pooling of class
// activation maps, the implicit-background loss, attention maps and
// hue-coded segmentation masks.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "scribe/autograd.hpp"
#include "scribe/error.hpp"
#include "scribe/image.hpp"

namespace scribe {

struct LsePoolParams {
  double r = 4.0;  // sharpness; r -> 0 is mean pooling, r -> inf is max pooling

  void validate() const {
    if (!(r > 0.0) || !std::isfinite(r)) throw ParameterError("LSE sharpness r must be positive, got " + std::to_string(r));
  }
};

// Per-class spatial logits. values(n, y * width + x) holds the logit of class
// n at pixel (y, x).
template <typename Scalar>
struct Cam {
  using Values = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Index height = 0;
  Index width = 0;
  Values values;

  Cam() = default;
  Cam(Index k, Index h, Index w) : height(h), width(w), values(Values::Zero(k, h * w)) {}

  Index k_classes() const { return values.rows(); }

  Scalar& at(Index n, Index y, Index x) { return values(n, y * width + x); }
  Scalar at(Index n, Index y, Index x) const { return values(n, y * width + x); }

  void validate() const {
    if (k_classes() < 1 || height < 1 || width < 1 || values.cols() != height * width) {
      throw DimensionError("CAM needs K>=1 and a non-empty spatial grid, got K=" + std::to_string(k_classes()) +
                           " grid " + std::to_string(height) + "x" + std::to_string(width));
    }
    if (!values.allFinite()) throw NumericError("CAM contains non-finite values");
  }

  // Slice sample n out of an [N,K,H,W] tensor.
  static Cam from_batch(const Tensor& batch, Index n) {
    if (batch.rank() != 4) throw DimensionError("CAM batch must be [N,K,H,W], got " + shape_string(batch.shape()));
    Cam cam(batch.dim(1), batch.dim(2), batch.dim(3));
    const Index per = cam.values.size();
    // Tensor stores [K][H*W] row-major; Cam stores K rows column-major.
    const Eigen::Map<const Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> src(
        batch.raw() + n * per, cam.k_classes(), cam.height * cam.width);
    cam.values = src.template cast<Scalar>();
    return cam;
  }
};

namespace detail {

// (1/r) log( mean_i exp(r x_i) ), evaluated around the max for stability.
template <typename Derived>
typename Derived::Scalar mean_lse(const Eigen::ArrayBase<Derived>& x, double r) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = x.maxCoeff();
  const Scalar acc = ((x - m) * Scalar(r)).exp().mean();
  return m + std::log(acc) / Scalar(r);
}

template <typename Scalar>
Scalar stable_sigmoid(Scalar v) {
  if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
  const Scalar e = std::exp(v);
  return e / (Scalar(1) + e);
}

}  // namespace detail

// s_n = (1/r) log( (1/(H*W)) sum_{i,j} exp(r v_{i,j,n}) ) for every class n.
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, 1> lse_pool_spatial(const Cam<Scalar>& cam, const LsePoolParams& params) {
  params.validate();
  cam.validate();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> pooled(cam.k_classes());
  for (Index n = 0; n < cam.k_classes(); ++n) pooled[n] = detail::mean_lse(cam.values.row(n), params.r);
  return pooled;
}

template <typename Scalar>
struct IbeLossResult {
  Scalar loss;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> grad;  // dL/ds
};

// L = -log sigma(s_t) + log(1 + sum_{m != t} exp(s_m)).
// The implicit background logit is fixed at 0, which is the "1 +" term.
template <typename Derived>
IbeLossResult<typename Derived::Scalar> ibe_loss(const Eigen::ArrayBase<Derived>& pooled, int target) {
  using Scalar = typename Derived::Scalar;
  const Index k = pooled.size();
  if (target < 0 || target >= k) {
    throw ParameterError("target class " + std::to_string(target) + " out of range [0," + std::to_string(k) + ")");
  }
  const Scalar st = pooled[target];
  // softplus(-s_t)
  const Scalar fg = std::max(-st, Scalar(0)) + std::log1p(std::exp(-std::abs(st)));

  Scalar shift = Scalar(0);
  for (Index m = 0; m < k; ++m) {
    if (m != target) shift = std::max(shift, pooled[m]);
  }
  Scalar denom = std::exp(-shift);  // the background's e^0, rescaled
  for (Index m = 0; m < k; ++m) {
    if (m != target) denom += std::exp(pooled[m] - shift);
  }
  const Scalar bg = shift + std::log(denom);

  IbeLossResult<Scalar> out{fg + bg, Eigen::Array<Scalar, Eigen::Dynamic, 1>(k)};
  for (Index m = 0; m < k; ++m) {
    out.grad[m] = (m == target) ? detail::stable_sigmoid(st) - Scalar(1) : std::exp(pooled[m] - shift) / denom;
  }
  return out;
}

// Bilinear resize with half-pixel centres and edge clamping.
template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> bilinear_resize(
    const Eigen::ArrayBase<Derived>& src, Index out_rows, Index out_cols) {
  using Scalar = typename Derived::Scalar;
  const Index in_rows = src.rows(), in_cols = src.cols();
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(out_rows, out_cols);
  auto coord = [](Index o, Index in, Index outn, Index& lo, Index& hi, Scalar& frac) {
    Scalar s = (Scalar(o) + Scalar(0.5)) * Scalar(in) / Scalar(outn) - Scalar(0.5);
    s = std::clamp(s, Scalar(0), Scalar(in - 1));
    lo = static_cast<Index>(std::floor(s));
    hi = std::min(lo + 1, in - 1);
    frac = s - Scalar(lo);
  };
  for (Index c = 0; c < out_cols; ++c) {
    Index c0, c1;
    Scalar fc;
    coord(c, in_cols, out_cols, c0, c1, fc);
    for (Index r = 0; r < out_rows; ++r) {
      Index r0, r1;
      Scalar fr;
      coord(r, in_rows, out_rows, r0, r1, fr);
      const Scalar top = src(r0, c0) * (Scalar(1) - fc) + src(r0, c1) * fc;
      const Scalar bot = src(r1, c0) * (Scalar(1) - fc) + src(r1, c1) * fc;
      out(r, c) = top * (Scalar(1) - fr) + bot * fr;
    }
  }
  return out;
}

struct AttentionMap {
  Eigen::ArrayXXd values;  // (rows, cols) = image (height, width), entries in (0,1)
  Index image_id = -1;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
};

// Per-pixel sigma(across-class LSE) at CAM resolution, before resizing.
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> attention_at_cam_resolution(const Cam<Scalar>& cam,
                                                                                 const LsePoolParams& params) {
  params.validate();
  cam.validate();
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> a(cam.height, cam.width);
  for (Index y = 0; y < cam.height; ++y) {
    for (Index x = 0; x < cam.width; ++x) {
      a(y, x) = detail::stable_sigmoid(detail::mean_lse(cam.values.col(y * cam.width + x), params.r));
    }
  }
  return a;
}

AttentionMap attention_map(const Cam<double>& cam, const LsePoolParams& params, Index out_rows, Index out_cols,
                           Index image_id = -1);

// Hues in degrees, evenly spaced from 0.
std::vector<double> evenly_spaced_hues(Index k);

struct SegmentationMask {
  Image rgb;               // 3 x rows x cols
  Eigen::ArrayXXi classes;  // argmax class per pixel
};

SegmentationMask segmentation_mask(const Cam<double>& cam, const AttentionMap& attn, const std::vector<double>& hues);

// Tape ops. cam [N,K,H,W] -> pooled [N,K].
Variable lse_pool(const Variable& cam, const LsePoolParams& params);
// pooled [N,K] -> mean implicit-background loss over the batch.
Variable ibe_loss(const Variable& pooled, const std::vector<int>& targets);

}  // namespace scribe

#endif  // SCRIBE_IBE_HPP
