#include "mfrflow/ops.hpp"

#include <algorithm>
#include <limits>
#include <memory>

namespace mfrflow {

namespace {

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index normalize_axis(Index axis, Index rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
  return axis;
}

struct AxisSplit {
  Index outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, Index axis) {
  AxisSplit r;
  for (Index i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.n = s[static_cast<std::size_t>(axis)];
  for (Index i = axis + 1; i < static_cast<Index>(s.size()); ++i) {
    r.inner *= s[static_cast<std::size_t>(i)];
  }
  return r;
}

}  // namespace

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() + b.value().array();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() - b.value().array();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.accumulate(ia, g);
    if (auto* gb = t.grad_buffer(ib)) gb->array() -= g.array();
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() * b.value().array();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_buffer(ia)) ga->array() += g.array() * t.value(ib).array();
    if (auto* gb = t.grad_buffer(ib)) gb->array() += g.array() * t.value(ia).array();
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() * s;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, s](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_buffer(ia)) ga->array() += g.array() * s;
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array().max(Scalar(0));
  if (x.tape().tracking_branches()) {
    for (Scalar v : x.value().values()) x.tape().mix_branch(v > Scalar(0) ? 1 : 2);
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(ix)) {
      gx->array() += (t.value(ix).array() > Scalar(0)).select(g.array(), Scalar(0));
    }
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.array() = Scalar(1) / (Scalar(1) + (-x.value().array()).exp());
  const std::size_t ix = x.id();
  auto y = std::make_shared<Tensor<Scalar>>(out);
  return x.tape().record(std::move(out), {x}, [ix, y](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(ix)) {
      gx->array() += g.array() * y->array() * (Scalar(1) - y->array());
    }
  });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array().tanh();
  const std::size_t ix = x.id();
  auto y = std::make_shared<Tensor<Scalar>>(out);
  return x.tape().record(std::move(out), {x}, [ix, y](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(ix)) {
      gx->array() += g.array() * (Scalar(1) - y->array().square());
    }
  });
}

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts.front().shape();
  axis = normalize_axis(axis, static_cast<Index>(s0.size()));
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (static_cast<Index>(d) != axis && s[d] != s0[d]) {
        throw ShapeError("concat: shape mismatch " + to_string(s0) + " vs " + to_string(s));
      }
    }
    widths.push_back(s[static_cast<std::size_t>(axis)]);
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  const AxisSplit so = split_at(out_shape, axis);
  Tensor<Scalar> out(out_shape);
  Index offset = 0;
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<Scalar>& v = parts[k].value();
    const Index block = widths[k] * so.inner;
    for (Index o = 0; o < so.outer; ++o) {
      std::copy_n(v.data() + o * block, block, out.data() + o * so.n * so.inner + offset * so.inner);
    }
    offset += widths[k];
    ids.push_back(parts[k].id());
  }
  return parts.front().tape().record(
      std::move(out), parts, [ids, widths, so](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        Index offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const Index block = widths[k] * so.inner;
          if (auto* gk = t.grad_buffer(ids[k])) {
            for (Index o = 0; o < so.outer; ++o) {
              const Scalar* src = g.data() + o * so.n * so.inner + offset * so.inner;
              Scalar* dst = gk->data() + o * block;
              for (Index i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          offset += widths[k];
        }
      });
}

template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& x, Index axis, Index begin, Index end) {
  const Shape& s = x.shape();
  axis = normalize_axis(axis, static_cast<Index>(s.size()));
  const AxisSplit sp = split_at(s, axis);
  if (begin < 0 || end > sp.n || begin >= end) throw ShapeError("slice: invalid range");
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = end - begin;
  Tensor<Scalar> out(out_shape);
  const Index block = (end - begin) * sp.inner;
  for (Index o = 0; o < sp.outer; ++o) {
    std::copy_n(x.value().data() + o * sp.n * sp.inner + begin * sp.inner, block,
                out.data() + o * block);
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x},
                         [ix, sp, begin, block](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           auto* gx = t.grad_buffer(ix);
                           if (!gx) return;
                           for (Index o = 0; o < sp.outer; ++o) {
                             Scalar* dst = gx->data() + o * sp.n * sp.inner + begin * sp.inner;
                             const Scalar* src = g.data() + o * block;
                             for (Index i = 0; i < block; ++i) dst[i] += src[i];
                           }
                         });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  Tensor<Scalar> out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  const Shape in_shape = x.shape();
  return x.tape().record(std::move(out), {x}, [ix, in_shape](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(ix)) gx->array() += g.array();
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  const std::size_t ix = x.id();
  return x.tape().record(Tensor<Scalar>::scalar(x.value().array().sum()), {x},
                         [ix](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           if (auto* gx = t.grad_buffer(ix)) gx->array() += g[0];
                         });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  const std::size_t ix = x.id();
  const Scalar n = static_cast<Scalar>(x.value().size());
  return x.tape().record(Tensor<Scalar>::scalar(x.value().array().sum() / n), {x},
                         [ix, n](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           if (auto* gx = t.grad_buffer(ix)) gx->array() += g[0] / n;
                         });
}

template <typename Scalar>
Var<Scalar> masked_mean(const Var<Scalar>& x, const Mask& mask) {
  require_same_shape(x.shape(), mask.shape(), "masked_mean");
  const Index count = count_true(mask);
  if (count == 0) throw ShapeError("masked_mean: empty mask");
  const Scalar n = static_cast<Scalar>(count);
  Scalar acc = 0;
  for (Index i = 0; i < x.value().size(); ++i) {
    if (mask[i]) acc += x.value()[i];
  }
  const std::size_t ix = x.id();
  return x.tape().record(Tensor<Scalar>::scalar(acc / n), {x},
                         [ix, n, mask](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           auto* gx = t.grad_buffer(ix);
                           if (!gx) return;
                           for (Index i = 0; i < gx->size(); ++i) {
                             if (mask[i]) (*gx)[i] += g[0] / n;
                           }
                         });
}

template <typename Scalar>
Var<Scalar> l2_norm(const Var<Scalar>& x) {
  const Scalar norm = std::sqrt(x.value().array().square().sum());
  const std::size_t ix = x.id();
  return x.tape().record(Tensor<Scalar>::scalar(norm), {x},
                         [ix, norm](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           auto* gx = t.grad_buffer(ix);
                           if (!gx || norm == Scalar(0)) return;
                           gx->array() += t.value(ix).array() * (g[0] / norm);
                         });
}

template <typename Scalar>
Var<Scalar> l2_norm(const Var<Scalar>& x, Index axis) {
  const Shape& s = x.shape();
  axis = normalize_axis(axis, static_cast<Index>(s.size()));
  const AxisSplit sp = split_at(s, axis);
  Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (static_cast<Index>(d) != axis) out_shape.push_back(s[d]);
  }
  Tensor<Scalar> out(out_shape);
  const Scalar* xv = x.value().data();
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.inner; ++i) {
      Scalar acc = 0;
      for (Index k = 0; k < sp.n; ++k) {
        const Scalar v = xv[(o * sp.n + k) * sp.inner + i];
        acc += v * v;
      }
      out[o * sp.inner + i] = std::sqrt(acc);
    }
  }
  auto norms = std::make_shared<Tensor<Scalar>>(out);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, sp, norms](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    auto* gx = t.grad_buffer(ix);
    if (!gx) return;
    const Scalar* xv = t.value(ix).data();
    for (Index o = 0; o < sp.outer; ++o) {
      for (Index i = 0; i < sp.inner; ++i) {
        const Scalar nrm = (*norms)[o * sp.inner + i];
        if (nrm == Scalar(0)) continue;
        const Scalar c = g[o * sp.inner + i] / nrm;
        for (Index k = 0; k < sp.n; ++k) {
          const Index at = (o * sp.n + k) * sp.inner + i;
          (*gx)[at] += c * xv[at];
        }
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& x, const std::vector<Index>& axes, const Mask* mask) {
  const Shape& s = x.shape();
  const Index rank = static_cast<Index>(s.size());
  if (axes.empty()) throw ShapeError("softmax: empty axis set");
  std::vector<bool> reduced(s.size(), false);
  for (Index a : axes) reduced[static_cast<std::size_t>(normalize_axis(a, rank))] = true;
  if (mask) require_same_shape(s, mask->shape(), "softmax mask");

  // Group id of every element = its multi-index restricted to kept axes.
  const Index n = x.value().size();
  auto group = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n));
  Index groups = 1;
  {
    Shape kept_stride(s.size(), 0);
    for (Index d = rank - 1; d >= 0; --d) {
      if (!reduced[static_cast<std::size_t>(d)]) {
        kept_stride[static_cast<std::size_t>(d)] = groups;
        groups *= s[static_cast<std::size_t>(d)];
      }
    }
    std::vector<Index> idx(s.size(), 0);
    for (Index flat = 0; flat < n; ++flat) {
      Index gid = 0;
      for (std::size_t d = 0; d < s.size(); ++d) gid += idx[d] * kept_stride[d];
      (*group)[static_cast<std::size_t>(flat)] = gid;
      for (Index d = rank - 1; d >= 0; --d) {
        if (++idx[static_cast<std::size_t>(d)] < s[static_cast<std::size_t>(d)]) break;
        idx[static_cast<std::size_t>(d)] = 0;
      }
    }
  }
  const Scalar* xv = x.value().data();
  auto active = [mask](Index i) { return mask == nullptr || (*mask)[i] != 0; };
  std::vector<Scalar> mx(static_cast<std::size_t>(groups), -std::numeric_limits<Scalar>::infinity());
  std::vector<Scalar> den(static_cast<std::size_t>(groups), Scalar(0));
  for (Index i = 0; i < n; ++i) {
    if (!active(i)) continue;
    Scalar& m = mx[static_cast<std::size_t>((*group)[static_cast<std::size_t>(i)])];
    m = std::max(m, xv[i]);
  }
  Tensor<Scalar> out(s);
  for (Index i = 0; i < n; ++i) {
    if (!active(i)) continue;
    const auto gid = static_cast<std::size_t>((*group)[static_cast<std::size_t>(i)]);
    out[i] = std::exp(xv[i] - mx[gid]);
    den[gid] += out[i];
  }
  for (Index i = 0; i < n; ++i) {
    if (!active(i)) continue;
    out[i] /= den[static_cast<std::size_t>((*group)[static_cast<std::size_t>(i)])];
  }
  auto y = std::make_shared<Tensor<Scalar>>(out);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, y, group, groups](Tape<Scalar>& t,
                                                                     const Tensor<Scalar>& g) {
    auto* gx = t.grad_buffer(ix);
    if (!gx) return;
    std::vector<Scalar> dot(static_cast<std::size_t>(groups), Scalar(0));
    const Index n = y->size();
    for (Index i = 0; i < n; ++i) {
      dot[static_cast<std::size_t>((*group)[static_cast<std::size_t>(i)])] += g[i] * (*y)[i];
    }
    for (Index i = 0; i < n; ++i) {
      (*gx)[i] += (*y)[i] * (g[i] - dot[static_cast<std::size_t>((*group)[static_cast<std::size_t>(i)])]);
    }
  });
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& kernel, const Var<Scalar>& bias,
                   Index stride, Index padding) {
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  if (is.size() != 3 || ks.size() != 4 || bias.shape().size() != 1) {
    throw ShapeError("conv2d: expected input [C,H,W], kernel [O,C,kh,kw], bias [O]; got " +
                     to_string(is) + ", " + to_string(ks) + ", " + to_string(bias.shape()));
  }
  const Index c = is[0], h = is[1], w = is[2];
  const Index o = ks[0], kh = ks[2], kw = ks[3];
  if (ks[1] != c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(ks[1]) + " input channels, input " +
                     to_string(is) + " has " + std::to_string(c));
  }
  if (bias.shape()[0] != o) throw ShapeError("conv2d: bias length must equal output channels");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  const Index num_h = h + 2 * padding - kh, num_w = w + 2 * padding - kw;
  if (num_h < 0 || num_w < 0) throw ShapeError("conv2d: kernel larger than padded input");
  const Index ho = num_h / stride + 1, wo = num_w / stride + 1;
  const Index ckk = c * kh * kw, pix = ho * wo;

  auto col = std::make_shared<RowMat<Scalar>>(ckk, pix);
  const Scalar* xv = input.value().data();
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ki = 0; ki < kh; ++ki) {
      for (Index kj = 0; kj < kw; ++kj) {
        Scalar* row = col->data() + ((ci * kh + ki) * kw + kj) * pix;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride - padding + ki;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride - padding + kj;
            row[oy * wo + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w) ? xv[(ci * h + iy) * w + ix] : Scalar(0);
          }
        }
      }
    }
  }
  Tensor<Scalar> out({o, ho, wo});
  Eigen::Map<RowMat<Scalar>> y(out.data(), o, pix);
  Eigen::Map<const RowMat<Scalar>> wm(kernel.value().data(), o, ckk);
  y.noalias() = wm * (*col);
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> b(bias.value().data(), o);
  y.colwise() += b;

  const std::size_t iin = input.id(), ik = kernel.id(), ib = bias.id();
  return input.tape().record(
      std::move(out), {input, kernel, bias},
      [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        Eigen::Map<const RowMat<Scalar>> gy(g.data(), o, pix);
        if (auto* gb = t.grad_buffer(ib)) {
          Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> db(gb->data(), o);
          db += gy.rowwise().sum();
        }
        if (auto* gk = t.grad_buffer(ik)) {
          Eigen::Map<RowMat<Scalar>> dw(gk->data(), o, ckk);
          dw.noalias() += gy * col->transpose();
        }
        if (auto* gx = t.grad_buffer(iin)) {
          Eigen::Map<const RowMat<Scalar>> wm(t.value(ik).data(), o, ckk);
          RowMat<Scalar> dcol = wm.transpose() * gy;
          Scalar* dx = gx->data();
          for (Index ci = 0; ci < c; ++ci) {
            for (Index ki = 0; ki < kh; ++ki) {
              for (Index kj = 0; kj < kw; ++kj) {
                const Scalar* row = dcol.data() + ((ci * kh + ki) * kw + kj) * pix;
                for (Index oy = 0; oy < ho; ++oy) {
                  const Index iy = oy * stride - padding + ki;
                  if (iy < 0 || iy >= h) continue;
                  for (Index ox = 0; ox < wo; ++ox) {
                    const Index ix = ox * stride - padding + kj;
                    if (ix >= 0 && ix < w) dx[(ci * h + iy) * w + ix] += row[oy * wo + ox];
                  }
                }
              }
            }
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> avg_pool2(const Var<Scalar>& x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("avg_pool2: rank must be >= 2");
  const Index h = s[s.size() - 2], w = s[s.size() - 1];
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("avg_pool2: trailing dims must be even, got " + to_string(s));
  }
  const Index outer = x.value().size() / (h * w);
  const Index h2 = h / 2, w2 = w / 2;
  Shape out_shape = s;
  out_shape[s.size() - 2] = h2;
  out_shape[s.size() - 1] = w2;
  Tensor<Scalar> out(out_shape);
  const Scalar* xv = x.value().data();
  for (Index b = 0; b < outer; ++b) {
    const Scalar* src = xv + b * h * w;
    Scalar* dst = out.data() + b * h2 * w2;
    for (Index i = 0; i < h2; ++i) {
      for (Index j = 0; j < w2; ++j) {
        dst[i * w2 + j] = Scalar(0.25) * (src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] +
                                          src[(2 * i + 1) * w + 2 * j] +
                                          src[(2 * i + 1) * w + 2 * j + 1]);
      }
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    auto* gx = t.grad_buffer(ix);
    if (!gx) return;
    for (Index b = 0; b < outer; ++b) {
      Scalar* dst = gx->data() + b * h * w;
      const Scalar* src = g.data() + b * h2 * w2;
      for (Index i = 0; i < h2; ++i) {
        for (Index j = 0; j < w2; ++j) {
          const Scalar q = Scalar(0.25) * src[i * w2 + j];
          dst[2 * i * w + 2 * j] += q;
          dst[2 * i * w + 2 * j + 1] += q;
          dst[(2 * i + 1) * w + 2 * j] += q;
          dst[(2 * i + 1) * w + 2 * j + 1] += q;
        }
      }
    }
  });
}

template <typename Scalar>
SampleResult<Scalar> bilinear_sample(const Var<Scalar>& map, const Var<Scalar>& coords) {
  const Shape& ms = map.shape();
  const Shape& cs = coords.shape();
  if (ms.size() != 3) throw ShapeError("bilinear_sample: map must be [C,H,W], got " + to_string(ms));
  if (cs.size() != 2 || cs[1] != 2) {
    throw ShapeError("bilinear_sample: coords must be [P,2], got " + to_string(cs));
  }
  const Index c = ms[0], h = ms[1], w = ms[2], p = cs[0];
  auto fps = std::make_shared<std::vector<detail::Footprint<Scalar>>>();
  fps->reserve(static_cast<std::size_t>(p));
  std::vector<bool> in_bounds(static_cast<std::size_t>(p));
  for (Index k = 0; k < p; ++k) {
    fps->push_back(detail::footprint(coords.value()(k, 0), coords.value()(k, 1), h, w));
    in_bounds[static_cast<std::size_t>(k)] = fps->back().in_bounds;
    if (map.tape().tracking_branches()) map.tape().mix_branch(detail::footprint_branch(fps->back()));
  }
  Tensor<Scalar> out({c, p});
  for (Index ch = 0; ch < c; ++ch) {
    const Scalar* plane = map.value().data() + ch * h * w;
    for (Index k = 0; k < p; ++k) {
      const auto& f = (*fps)[static_cast<std::size_t>(k)];
      out(ch, k) = f.in_bounds ? detail::sample_plane(plane, h, w, f) : Scalar(0);
    }
  }
  const std::size_t im = map.id(), ic = coords.id();
  Var<Scalar> values = map.tape().record(
      std::move(out), {map, coords}, [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        auto* gm = t.grad_buffer(im);
        auto* gc = t.grad_buffer(ic);
        const Scalar* mv = t.value(im).data();
        for (Index ch = 0; ch < c; ++ch) {
          for (Index k = 0; k < p; ++k) {
            const auto& f = (*fps)[static_cast<std::size_t>(k)];
            if (!f.in_bounds) continue;
            const Scalar gk = g(ch, k);
            if (gm) detail::scatter_plane(gm->data() + ch * h * w, h, w, f, gk);
            if (gc) {
              Scalar dx = 0, dy = 0;
              detail::sample_plane(mv + ch * h * w, h, w, f, &dx, &dy);
              (*gc)(k, 0) += gk * dx;
              (*gc)(k, 1) += gk * dy;
            }
          }
        }
      });
  return {values, std::move(in_bounds)};
}

#define MFRFLOW_INSTANTIATE_OPS(S)                                                          \
  template Var<S> add(const Var<S>&, const Var<S>&);                                        \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                        \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                        \
  template Var<S> scale(const Var<S>&, S);                                                  \
  template Var<S> relu(const Var<S>&);                                                      \
  template Var<S> sigmoid(const Var<S>&);                                                   \
  template Var<S> tanh(const Var<S>&);                                                      \
  template Var<S> concat(const std::vector<Var<S>>&, Index);                                \
  template Var<S> slice(const Var<S>&, Index, Index, Index);                                \
  template Var<S> reshape(const Var<S>&, Shape);                                            \
  template Var<S> sum(const Var<S>&);                                                       \
  template Var<S> mean(const Var<S>&);                                                      \
  template Var<S> masked_mean(const Var<S>&, const Mask&);                                  \
  template Var<S> l2_norm(const Var<S>&);                                                   \
  template Var<S> l2_norm(const Var<S>&, Index);                                            \
  template Var<S> softmax(const Var<S>&, const std::vector<Index>&, const Mask*);           \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, Index, Index);        \
  template Var<S> avg_pool2(const Var<S>&);                                                 \
  template SampleResult<S> bilinear_sample(const Var<S>&, const Var<S>&);

MFRFLOW_INSTANTIATE_OPS(float)
MFRFLOW_INSTANTIATE_OPS(double)
MFRFLOW_INSTANTIATE_OPS(long double)

}  // namespace mfrflow
