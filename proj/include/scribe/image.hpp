#ifndef SCRIBE_IMAGE_HPP
#define SCRIBE_IMAGE_HPP

#include <Eigen/Core>

#include "scribe/tensor.hpp"

namespace scribe {

// Channel-major (C,H,W) image with values nominally in [0,1].
struct Image {
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  Eigen::ArrayXd data;

  Image() = default;
  Image(Index c, Index h, Index w, double fill = 0.0)
      : channels(c), height(h), width(w), data(Eigen::ArrayXd::Constant(c * h * w, fill)) {}

  double& at(Index c, Index y, Index x) { return data[(c * height + y) * width + x]; }
  double at(Index c, Index y, Index x) const { return data[(c * height + y) * width + x]; }

  Eigen::Map<Eigen::ArrayXd> plane(Index c) { return {data.data() + c * height * width, height * width}; }
  Eigen::Map<const Eigen::ArrayXd> plane(Index c) const { return {data.data() + c * height * width, height * width}; }

  Index pixels() const { return height * width; }
  bool same_dims(const Image& o) const { return channels == o.channels && height == o.height && width == o.width; }

  friend bool operator==(const Image& a, const Image& b) { return a.same_dims(b) && (a.data == b.data).all(); }
};

inline Image clamp01(Image img) {
  img.data = img.data.max(0.0).min(1.0);
  return img;
}

// Stacks equally sized images into an [N,C,H,W] tensor.
template <typename Range, typename Proj>
Tensor stack_images(const Range& items, Proj proj) {
  Index n = 0;
  const Image* first = nullptr;
  for (const auto& it : items) {
    if (!first) first = &proj(it);
    ++n;
  }
  if (!first) return Tensor({0, 0, 0, 0});
  Tensor out({n, first->channels, first->height, first->width});
  const Index per = first->data.size();
  Index k = 0;
  for (const auto& it : items) {
    out.data().segment(k * per, per) = proj(it).data;
    ++k;
  }
  return out;
}

}  // namespace scribe

#endif  // SCRIBE_IMAGE_HPP
