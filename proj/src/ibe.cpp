#include "scribe/ibe.hpp"

#include <memory>

#include "scribe/color.hpp"

namespace scribe {

AttentionMap attention_map(const Cam<double>& cam, const LsePoolParams& params, Index out_rows, Index out_cols,
                           Index image_id) {
  cam.validate();
  if (out_rows < cam.height || out_cols < cam.width) {
    throw ParameterError("attention map size " + std::to_string(out_rows) + "x" + std::to_string(out_cols) +
                         " is smaller than the CAM grid " + std::to_string(cam.height) + "x" + std::to_string(cam.width));
  }
  const Eigen::ArrayXXd low = attention_at_cam_resolution(cam, params);
  return AttentionMap{bilinear_resize(low, out_rows, out_cols), image_id};
}

std::vector<double> evenly_spaced_hues(Index k) {
  if (k < 1) throw ParameterError("palette needs at least one class");
  std::vector<double> hues(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) hues[static_cast<std::size_t>(i)] = 360.0 * static_cast<double>(i) / static_cast<double>(k);
  return hues;
}

SegmentationMask segmentation_mask(const Cam<double>& cam, const AttentionMap& attn, const std::vector<double>& hues) {
  cam.validate();
  const Index k = cam.k_classes();
  if (static_cast<Index>(hues.size()) != k) {
    throw ParameterError("palette has " + std::to_string(hues.size()) + " hues for " + std::to_string(k) + " classes");
  }
  const Index rows = attn.rows(), cols = attn.cols();
  std::vector<Eigen::ArrayXXd> up;
  up.reserve(static_cast<std::size_t>(k));
  for (Index n = 0; n < k; ++n) {
    const Eigen::Map<const Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
                     Eigen::InnerStride<>>
        plane(cam.values.data() + n, cam.height, cam.width, Eigen::InnerStride<>(k));
    up.push_back(bilinear_resize(plane, rows, cols));
  }
  SegmentationMask mask{Image(3, rows, cols), Eigen::ArrayXXi(rows, cols)};
  for (Index y = 0; y < rows; ++y) {
    for (Index x = 0; x < cols; ++x) {
      int best = 0;
      for (Index n = 1; n < k; ++n) {
        if (up[static_cast<std::size_t>(n)](y, x) > up[static_cast<std::size_t>(best)](y, x)) best = static_cast<int>(n);
      }
      mask.classes(y, x) = best;
      double r, g, b;
      hsv_to_rgb(hues[static_cast<std::size_t>(best)], 1.0, attn.values(y, x), r, g, b);
      mask.rgb.at(0, y, x) = r;
      mask.rgb.at(1, y, x) = g;
      mask.rgb.at(2, y, x) = b;
    }
  }
  return mask;
}

Variable lse_pool(const Variable& cam, const LsePoolParams& params) {
  params.validate();
  const Shape& cs = cam.shape();
  if (cs.size() != 4) throw DimensionError("lse_pool input must be [N,K,H,W], got " + shape_string(cs));
  const Index nk = cs[0] * cs[1], hw = cs[2] * cs[3];
  const double r = params.r;
  const Eigen::Map<const Eigen::ArrayXXd> planes(cam.value().raw(), hw, nk);
  Tensor out({cs[0], cs[1]});
  // Spatial softmax of r*v is the derivative of the pooled value.
  auto weights = std::make_shared<Eigen::ArrayXXd>(hw, nk);
  for (Index j = 0; j < nk; ++j) {
    const auto col = planes.col(j);
    out[j] = detail::mean_lse(col, r);
    const double m = col.maxCoeff();
    const Eigen::ArrayXd e = ((col - m) * r).exp();
    weights->col(j) = e / e.sum();
  }
  return cam.tape()->record("lse_pool", std::move(out), {cam}, [cam, weights, nk, hw](Tape& tape, const Eigen::ArrayXd& g) {
    if (Eigen::ArrayXd* d = tape.grad_buffer(cam)) {
      Eigen::Map<Eigen::ArrayXXd> dm(d->data(), hw, nk);
      dm += weights->rowwise() * g.transpose();
    }
  });
}

Variable ibe_loss(const Variable& pooled, const std::vector<int>& targets) {
  const Shape& ps = pooled.shape();
  if (ps.size() != 2) throw DimensionError("ibe_loss input must be [N,K], got " + shape_string(ps));
  const Index n = ps[0], k = ps[1];
  if (static_cast<Index>(targets.size()) != n) {
    throw DimensionError("ibe_loss: " + std::to_string(targets.size()) + " targets for batch axis 0 of " +
                         std::to_string(n));
  }
  const Eigen::Map<const Eigen::ArrayXXd> s(pooled.value().raw(), k, n);
  auto grad = std::make_shared<Eigen::ArrayXXd>(k, n);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const auto res = scribe::ibe_loss(s.col(i), targets[static_cast<std::size_t>(i)]);
    total += res.loss;
    grad->col(i) = res.grad;
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  return pooled.tape()->record("ibe_loss", std::move(out), {pooled}, [pooled, grad, n, k](Tape& tape, const Eigen::ArrayXd& g) {
    tape.accumulate(pooled, Eigen::Map<const Eigen::ArrayXd>(grad->data(), n * k) * (g[0] / static_cast<double>(n)));
  });
}

}  // namespace scribe
