#include "scribe/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "scribe/error.hpp"

namespace scribe {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  Index n, c, h, w;
  Index f, kh, kw;
  Index stride, padding;
  Index ho, wo;
};

// Output columns ox whose source column ox*stride - padding + kj lies in [0, w).
inline void valid_range(Index kj, const ConvGeometry& g, Index& lo, Index& hi) {
  const Index off = kj - g.padding;
  lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  hi = (g.w - 1 - off) < 0 ? 0 : std::min(g.wo, (g.w - 1 - off) / g.stride + 1);
  lo = std::min(lo, hi);
}

void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const Index p = g.ho * g.wo;
  for (Index c = 0; c < g.c; ++c) {
    const double* plane = x + c * g.h * g.w;
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        Index lo, hi;
        valid_range(kj, g, lo, hi);
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.padding + ki;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          std::fill(dst, dst + lo, 0.0);
          std::fill(dst + hi, dst + g.wo, 0.0);
          const double* src = plane + iy * g.w + lo * g.stride - g.padding + kj;
          if (g.stride == 1) {
            std::copy(src, src + (hi - lo), dst + lo);
          } else {
            for (Index ox = lo; ox < hi; ++ox) dst[ox] = src[(ox - lo) * g.stride];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
  const Index p = g.ho * g.wo;
  for (Index c = 0; c < g.c; ++c) {
    double* plane = dx + c * g.h * g.w;
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        Index lo, hi;
        valid_range(kj, g, lo, hi);
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.h) continue;
          double* dst = plane + iy * g.w + lo * g.stride - g.padding + kj;
          const double* src = row + oy * g.wo;
          for (Index ox = lo; ox < hi; ++ox) dst[(ox - lo) * g.stride] += src[ox];
        }
      }
    }
  }
}

// Per-output-element source offsets for a broadcast binary op.
struct BroadcastPlan {
  Shape out;
  std::vector<Index> a_index;
  std::vector<Index> b_index;
  bool same_shape = false;
};

std::vector<Index> broadcast_offsets(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t pad = rank - in.size();
  std::vector<Index> strides(rank, 0);
  Index s = 1;
  for (std::size_t k = rank; k-- > pad;) {
    const Index d = in[k - pad];
    strides[k] = (d == 1) ? 0 : s;
    s *= d;
  }
  const Index total = shape_size(out);
  std::vector<Index> offsets(static_cast<std::size_t>(total));
  std::vector<Index> counter(rank, 0);
  Index off = 0;
  for (Index i = 0; i < total; ++i) {
    offsets[static_cast<std::size_t>(i)] = off;
    for (std::size_t k = rank; k-- > 0;) {
      ++counter[k];
      off += strides[k];
      if (counter[k] < out[k]) break;
      off -= strides[k] * counter[k];
      counter[k] = 0;
    }
  }
  return offsets;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  plan.out = broadcast_shape(a, b);
  plan.same_shape = (a == b);
  if (!plan.same_shape) {
    plan.a_index = broadcast_offsets(a, plan.out);
    plan.b_index = broadcast_offsets(b, plan.out);
  }
  return plan;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    const Index da = (k < rank - a.size()) ? 1 : a[k - (rank - a.size())];
    const Index db = (k < rank - b.size()) ? 1 : b[k - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_string(a) + " with " + shape_string(b) + ": axis " +
                           std::to_string(k) + " has sizes " + std::to_string(da) + " and " + std::to_string(db));
    }
    out[k] = std::max(da, db);
  }
  return out;
}

Variable conv2d(const Variable& input, const Variable& kernel, Index stride, Index padding) {
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4) throw DimensionError("conv2d input must be [N,C,H,W], got " + shape_string(xs));
  if (ks.size() != 4) throw DimensionError("conv2d kernel must be [F,C,kh,kw], got " + shape_string(ks));
  if (stride < 1) throw ParameterError("conv2d stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) throw ParameterError("conv2d padding must be >= 0");
  if (xs[1] != ks[1]) {
    throw DimensionError("conv2d channel axis mismatch: input axis 1 = " + std::to_string(xs[1]) +
                         ", kernel axis 1 = " + std::to_string(ks[1]));
  }
  for (int axis : {2, 3}) {
    if (ks[axis] > xs[axis] + 2 * padding) {
      throw DimensionError(std::string("conv2d kernel ") + (axis == 2 ? "height" : "width") + " (axis " +
                           std::to_string(axis) + ") " + std::to_string(ks[axis]) + " exceeds padded input " +
                           std::to_string(xs[axis] + 2 * padding) + " (input " + shape_string(xs) + ", padding " +
                           std::to_string(padding) + ")");
    }
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], stride, padding, 0, 0};
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

  const Index ckk = g.c * g.kh * g.kw;
  const Index p = g.ho * g.wo;
  Tensor out = Tensor::uninitialized({g.n, g.f, g.ho, g.wo});
  const ConstRowMap wmat(kernel.value().raw(), g.f, ckk);
  RowMatrix cols(ckk, p);
  for (Index n = 0; n < g.n; ++n) {
    im2col(input.value().raw() + n * g.c * g.h * g.w, g, cols.data());
    RowMap(out.raw() + n * g.f * p, g.f, p).noalias() = wmat * cols;
  }

  return input.tape()->record(
      "conv2d", std::move(out), {input, kernel}, [input, kernel, g](Tape& tape, const Eigen::ArrayXd& gout) {
        const Index ckk = g.c * g.kh * g.kw;
        const Index p = g.ho * g.wo;
        const ConstRowMap wmat(kernel.value().raw(), g.f, ckk);
        Eigen::ArrayXd* dx = tape.grad_buffer(input);
        Eigen::ArrayXd* dw = tape.grad_buffer(kernel);
        RowMatrix cols(ckk, p);
        RowMatrix dcols(ckk, p);
        for (Index n = 0; n < g.n; ++n) {
          const ConstRowMap go(gout.data() + n * g.f * p, g.f, p);
          if (dw) {
            im2col(input.value().raw() + n * g.c * g.h * g.w, g, cols.data());
            RowMap(dw->data(), g.f, ckk).noalias() += go * cols.transpose();
          }
          if (dx) {
            dcols.noalias() = wmat.transpose() * go;
            col2im_add(dcols.data(), g, dx->data() + n * g.c * g.h * g.w);
          }
        }
      });
}

Variable relu(const Variable& x) {
  Tensor out(x.shape(), x.value().data().max(0.0));
  return x.tape()->record("relu", std::move(out), {x}, [x](Tape& tape, const Eigen::ArrayXd& g) {
    tape.accumulate(x, (x.value().data() > 0.0).select(g, 0.0));
  });
}

Variable sigmoid(const Variable& x) {
  const Eigen::ArrayXd& v = x.value().data();
  // Split by sign so neither branch overflows exp().
  Eigen::ArrayXd s(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    if (v[i] >= 0.0) {
      s[i] = 1.0 / (1.0 + std::exp(-v[i]));
    } else {
      const double e = std::exp(v[i]);
      s[i] = e / (1.0 + e);
    }
  }
  Tensor out(x.shape(), s);
  return x.tape()->record("sigmoid", std::move(out), {x}, [x, s](Tape& tape, const Eigen::ArrayXd& g) {
    tape.accumulate(x, g * s * (1.0 - s));
  });
}

Variable add(const Variable& a, const Variable& b) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  Tensor out = Tensor::uninitialized(plan->out);
  if (plan->same_shape) {
    out.data() = a.value().data() + b.value().data();
  } else {
    const double* pa = a.value().raw();
    const double* pb = b.value().raw();
    for (Index i = 0; i < out.size(); ++i) out[i] = pa[plan->a_index[i]] + pb[plan->b_index[i]];
  }
  return a.tape()->record("add", std::move(out), {a, b}, [a, b, plan](Tape& tape, const Eigen::ArrayXd& g) {
    if (plan->same_shape) {
      tape.accumulate(a, g);
      tape.accumulate(b, g);
      return;
    }
    if (Eigen::ArrayXd* ga = tape.grad_buffer(a)) {
      for (Index i = 0; i < g.size(); ++i) (*ga)[plan->a_index[i]] += g[i];
    }
    if (Eigen::ArrayXd* gb = tape.grad_buffer(b)) {
      for (Index i = 0; i < g.size(); ++i) (*gb)[plan->b_index[i]] += g[i];
    }
  });
}

Variable mul(const Variable& a, const Variable& b) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  Tensor out = Tensor::uninitialized(plan->out);
  if (plan->same_shape) {
    out.data() = a.value().data() * b.value().data();
  } else {
    const double* pa = a.value().raw();
    const double* pb = b.value().raw();
    for (Index i = 0; i < out.size(); ++i) out[i] = pa[plan->a_index[i]] * pb[plan->b_index[i]];
  }
  return a.tape()->record("mul", std::move(out), {a, b}, [a, b, plan](Tape& tape, const Eigen::ArrayXd& g) {
    const Eigen::ArrayXd& va = a.value().data();
    const Eigen::ArrayXd& vb = b.value().data();
    if (plan->same_shape) {
      tape.accumulate(a, g * vb);
      tape.accumulate(b, g * va);
      return;
    }
    if (Eigen::ArrayXd* ga = tape.grad_buffer(a)) {
      for (Index i = 0; i < g.size(); ++i) (*ga)[plan->a_index[i]] += g[i] * vb[plan->b_index[i]];
    }
    if (Eigen::ArrayXd* gb = tape.grad_buffer(b)) {
      for (Index i = 0; i < g.size(); ++i) (*gb)[plan->b_index[i]] += g[i] * va[plan->a_index[i]];
    }
  });
}

Variable scale(const Variable& x, double factor) {
  Tensor out(x.shape(), x.value().data() * factor);
  return x.tape()->record("scale", std::move(out), {x}, [x, factor](Tape& tape, const Eigen::ArrayXd& g) {
    tape.accumulate(x, g * factor);
  });
}

Variable reshape(const Variable& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape()->record("reshape", std::move(out), {x}, [x](Tape& tape, const Eigen::ArrayXd& g) {
    tape.accumulate(x, g);
  });
}

Variable sum(const Variable& x) {
  Tensor out = Tensor::scalar(x.value().data().sum());
  return x.tape()->record("sum", std::move(out), {x}, [x](Tape& tape, const Eigen::ArrayXd& g) {
    tape.accumulate(x, Eigen::ArrayXd::Constant(x.value().size(), g[0]));
  });
}

Variable mean(const Variable& x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw DimensionError("mean of an empty tensor");
  Tensor out = Tensor::scalar(x.value().data().sum() / n);
  return x.tape()->record("mean", std::move(out), {x}, [x, n](Tape& tape, const Eigen::ArrayXd& g) {
    tape.accumulate(x, Eigen::ArrayXd::Constant(x.value().size(), g[0] / n));
  });
}

Variable group_norm(const Variable& x, const Variable& gamma, const Variable& beta, Index groups, double eps) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw DimensionError("group_norm input must be [N,C,H,W], got " + shape_string(xs));
  const Index n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  if (groups < 1 || c % groups != 0) {
    throw ParameterError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                         std::to_string(groups) + " groups");
  }
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("group_norm affine parameters must be [" + std::to_string(c) + "], got gamma " +
                         shape_string(gamma.shape()) + " beta " + shape_string(beta.shape()));
  }
  const Index cg = c / groups;
  const Index group_len = cg * hw;
  const double* px = x.value().raw();
  const double* pg = gamma.value().raw();
  const double* pb = beta.value().raw();

  // xhat kept for backward; inv_std per (sample, group).
  auto xhat = std::make_shared<Eigen::ArrayXd>(x.value().size());
  auto inv_std = std::make_shared<Eigen::ArrayXd>(n * groups);
  Tensor out = Tensor::uninitialized(xs);
  for (Index s = 0; s < n; ++s) {
    for (Index gi = 0; gi < groups; ++gi) {
      const Index base = (s * c + gi * cg) * hw;
      const Eigen::Map<const Eigen::ArrayXd> seg(px + base, group_len);
      const double mu = seg.mean();
      const double var = (seg - mu).square().mean();
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[s * groups + gi] = is;
      xhat->segment(base, group_len) = (seg - mu) * is;
      for (Index ch = 0; ch < cg; ++ch) {
        const Index cc = gi * cg + ch;
        const Index off = base + ch * hw;
        out.data().segment(off, hw) = pg[cc] * xhat->segment(off, hw) + pb[cc];
      }
    }
  }

  return x.tape()->record(
      "group_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, n, c, hw, groups, cg, group_len](Tape& tape, const Eigen::ArrayXd& g) {
        Eigen::ArrayXd* dx = tape.grad_buffer(x);
        Eigen::ArrayXd* dgamma = tape.grad_buffer(gamma);
        Eigen::ArrayXd* dbeta = tape.grad_buffer(beta);
        const double* pg = gamma.value().raw();
        Eigen::ArrayXd dxhat(group_len);
        for (Index s = 0; s < n; ++s) {
          for (Index gi = 0; gi < groups; ++gi) {
            const Index base = (s * c + gi * cg) * hw;
            for (Index ch = 0; ch < cg; ++ch) {
              const Index cc = gi * cg + ch;
              const Index off = base + ch * hw;
              const auto gseg = g.segment(off, hw);
              const auto xh = xhat->segment(off, hw);
              if (dgamma) (*dgamma)[cc] += (gseg * xh).sum();
              if (dbeta) (*dbeta)[cc] += gseg.sum();
              dxhat.segment(ch * hw, hw) = gseg * pg[cc];
            }
            if (dx) {
              const auto xh = xhat->segment(base, group_len);
              const double m1 = dxhat.mean();
              const double m2 = (dxhat * xh).mean();
              dx->segment(base, group_len) += (*inv_std)[s * groups + gi] * (dxhat - m1 - xh * m2);
            }
          }
        }
      });
}

Variable global_avg_pool(const Variable& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw DimensionError("global_avg_pool input must be [N,C,H,W], got " + shape_string(xs));
  const Index nc = xs[0] * xs[1], hw = xs[2] * xs[3];
  Tensor out({xs[0], xs[1]});
  const Eigen::Map<const Eigen::ArrayXXd> planes(x.value().raw(), hw, nc);
  out.data() = planes.colwise().mean().transpose();
  return x.tape()->record("global_avg_pool", std::move(out), {x}, [x, nc, hw](Tape& tape, const Eigen::ArrayXd& g) {
    if (Eigen::ArrayXd* dx = tape.grad_buffer(x)) {
      Eigen::Map<Eigen::ArrayXXd> d(dx->data(), hw, nc);
      d.rowwise() += (g / static_cast<double>(hw)).transpose();
    }
  });
}

Variable softmax_cross_entropy(const Variable& logits, const std::vector<int>& targets) {
  const Shape& ls = logits.shape();
  if (ls.size() != 2) throw DimensionError("softmax_cross_entropy logits must be [N,K], got " + shape_string(ls));
  const Index n = ls[0], k = ls[1];
  if (static_cast<Index>(targets.size()) != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for batch axis 0 of " +
                         std::to_string(n));
  }
  const Eigen::Map<const Eigen::ArrayXXd> z(logits.value().raw(), k, n);  // column per sample
  auto prob = std::make_shared<Eigen::ArrayXXd>(k, n);
  double loss = 0.0;
  for (Index s = 0; s < n; ++s) {
    const int t = targets[static_cast<std::size_t>(s)];
    if (t < 0 || t >= k) throw ParameterError("target class " + std::to_string(t) + " out of range [0," + std::to_string(k) + ")");
    const double m = z.col(s).maxCoeff();
    const Eigen::ArrayXd e = (z.col(s) - m).exp();
    const double se = e.sum();
    prob->col(s) = e / se;
    loss += -(z(t, s) - m - std::log(se));
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(n));
  return logits.tape()->record("softmax_cross_entropy", std::move(out), {logits},
                               [logits, prob, targets, n, k](Tape& tape, const Eigen::ArrayXd& g) {
                                 Eigen::ArrayXXd d = *prob;
                                 for (Index s = 0; s < n; ++s) d(targets[static_cast<std::size_t>(s)], s) -= 1.0;
                                 d *= g[0] / static_cast<double>(n);
                                 tape.accumulate(logits, Eigen::Map<const Eigen::ArrayXd>(d.data(), n * k));
                               });
}

}  // namespace scribe
