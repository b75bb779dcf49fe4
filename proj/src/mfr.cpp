#include "mfrflow/mfr.hpp"

#include <cmath>
#include <memory>

namespace mfrflow {

int MfrConfig::patch_side() const {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(window))));
  return side;
}

void MfrConfig::validate() const {
  if (history_frames < 1) throw ShapeError("mfr: history_frames must be >= 1");
  const int side = patch_side();
  if (window < 1 || side * side != window || side % 2 == 0) {
    throw ShapeError("mfr: window must be the size of a centered odd square patch (1, 9, 25, ...), got " +
                     std::to_string(window));
  }
  if (hidden < 1 || kernel_size < 1 || kernel_size % 2 == 0) {
    throw ShapeError("mfr: invalid coefficient network shape");
  }
}

template <typename Scalar>
CoefficientNetParams<Scalar>::CoefficientNetParams(Index feature_channels, const MfrConfig& cfg,
                                                   std::uint64_t seed) {
  cfg.validate();
  const int count = cfg.shared_net ? 1 : cfg.history_frames;
  const Index k = cfg.kernel_size, pad = k / 2;
  for (int n = 0; n < count; ++n) {
    const std::string prefix = cfg.shared_net ? "mfr" : "mfr" + std::to_string(n + 1);
    nets.push_back({Conv2d<Scalar>(prefix + ".conv1", feature_channels, cfg.hidden, k, 1, pad, seed),
                    Conv2d<Scalar>(prefix + ".conv2", cfg.hidden, cfg.window, k, 1, pad, seed)});
  }
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> CoefficientNetParams<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> out;
  for (auto& n : nets) {
    out.insert(out.end(), {&n.conv1.weight, &n.conv1.bias, &n.conv2.weight, &n.conv2.bias});
  }
  return out;
}

Mask patch_support(const MfrConfig& cfg, Index height, Index width) {
  const Index n = cfg.history_frames, win = cfg.window, side = cfg.patch_side(), pr = side / 2;
  Mask m({n, win, height, width});
  for (Index f = 0; f < n; ++f) {
    for (Index p = 0; p < win; ++p) {
      const Index py = p / side - pr, px = p % side - pr;
      for (Index i = 0; i < height; ++i) {
        for (Index j = 0; j < width; ++j) {
          const bool inside = i + py >= 0 && i + py < height && j + px >= 0 && j + px < width;
          m(f, p, i, j) = inside ? 1 : 0;
        }
      }
    }
  }
  return m;
}

template <typename Scalar>
CoefficientField<Scalar> coefficient_forward(Tape<Scalar>& tape, CoefficientNetParams<Scalar>& params,
                                             const std::vector<MotionFeature<Scalar>>& histories,
                                             const MfrConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(histories.size()) != cfg.history_frames) {
    throw ShapeError("coefficient_forward: expected " + std::to_string(cfg.history_frames) +
                     " history features, got " + std::to_string(histories.size()));
  }
  const Shape& s = histories.front().data.shape();
  for (const auto& h : histories) require_same_shape(s, h.data.shape(), "coefficient_forward");
  const std::size_t expected_nets = cfg.shared_net ? 1 : static_cast<std::size_t>(cfg.history_frames);
  if (params.nets.size() != expected_nets) {
    throw ShapeError("coefficient_forward: parameter set does not match sharing mode");
  }

  std::vector<Var<Scalar>> logits;
  for (std::size_t n = 0; n < histories.size(); ++n) {
    auto& net = params.nets[cfg.shared_net ? 0 : n];
    logits.push_back(net.conv2(tape, relu(net.conv1(tape, histories[n].data))));
  }
  const Index h = s[1], w = s[2];
  Var<Scalar> stacked = reshape(concat(logits, 0), {cfg.history_frames, cfg.window, h, w});
  Mask support = patch_support(cfg, h, w);
  const std::vector<Index> axes =
      cfg.normalization == AlphaNormalization::joint ? std::vector<Index>{0, 1} : std::vector<Index>{1};
  return {softmax(stacked, axes, &support), std::move(support)};
}

template <typename Scalar>
MotionFeature<Scalar> recover(const MotionFeature<Scalar>& forward, const Mask& omega,
                              const std::vector<MotionFeature<Scalar>>& histories,
                              const CoefficientField<Scalar>& alpha, const MfrConfig& cfg) {
  cfg.validate();
  const Shape& s = forward.data.shape();
  if (s.size() != 3) throw ShapeError("recover: motion feature must be [K,H,W]");
  require_same_shape(s, omega.shape(), "recover omega");
  if (static_cast<int>(histories.size()) != cfg.history_frames) {
    throw ShapeError("recover: expected " + std::to_string(cfg.history_frames) + " histories");
  }
  for (const auto& hst : histories) require_same_shape(s, hst.data.shape(), "recover history");
  const Index k = s[0], h = s[1], w = s[2], hw = h * w;
  const Index nf = cfg.history_frames, win = cfg.window, side = cfg.patch_side(), pr = side / 2;
  require_same_shape(alpha.alpha.shape(), Shape{nf, win, h, w}, "recover alpha");

  const Scalar pref = cfg.literal_prefactor ? Scalar(1) / static_cast<Scalar>(win * nf) : Scalar(1);
  const Tensor<Scalar>& a = alpha.alpha.value();
  Tensor<Scalar> out = forward.data.value();
  for (Index c = 0; c < k; ++c) {
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        const Index at = c * hw + i * w + j;
        if (!omega[at]) continue;
        Scalar acc = 0;
        for (Index p = 0; p < win; ++p) {
          const Index y = i + p / side - pr, x = j + p % side - pr;
          if (y < 0 || y >= h || x < 0 || x >= w) continue;
          for (Index n = 0; n < nf; ++n) {
            acc += a(n, p, i, j) * histories[static_cast<std::size_t>(n)].data.value()[c * hw + y * w + x];
          }
        }
        out[at] = pref * acc;
      }
    }
  }

  std::vector<Var<Scalar>> parents{forward.data, alpha.alpha};
  std::vector<std::size_t> hist_ids;
  for (const auto& hst : histories) {
    parents.push_back(hst.data);
    hist_ids.push_back(hst.data.id());
  }
  const std::size_t fid = forward.data.id(), aid = alpha.alpha.id();
  auto om = std::make_shared<Mask>(omega);
  Var<Scalar> data = forward.data.tape().record(
      std::move(out), parents, [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        if (auto* gf = t.grad_buffer(fid)) {
          for (Index at = 0; at < g.size(); ++at) {
            if (!(*om)[at]) (*gf)[at] += g[at];
          }
        }
        auto* ga = t.grad_buffer(aid);
        const Tensor<Scalar>& a = t.value(aid);
        std::vector<Tensor<Scalar>*> gh;
        for (std::size_t id : hist_ids) gh.push_back(t.grad_buffer(id));
        for (Index c = 0; c < k; ++c) {
          for (Index i = 0; i < h; ++i) {
            for (Index j = 0; j < w; ++j) {
              const Index at = c * hw + i * w + j;
              if (!(*om)[at]) continue;
              const Scalar gp = pref * g[at];
              if (gp == Scalar(0)) continue;
              for (Index p = 0; p < win; ++p) {
                const Index y = i + p / side - pr, x = j + p % side - pr;
                if (y < 0 || y >= h || x < 0 || x >= w) continue;
                const Index src = c * hw + y * w + x;
                for (Index n = 0; n < nf; ++n) {
                  const auto ns = static_cast<std::size_t>(n);
                  if (ga) (*ga)(n, p, i, j) += gp * t.value(hist_ids[ns])[src];
                  if (gh[ns]) (*gh[ns])[src] += gp * a(n, p, i, j);
                }
              }
            }
          }
        }
      });
  return {data, forward.direction};
}

ValidityMask recovered_validity(const ValidityMask& forward, const Mask& omega,
                                const std::vector<ValidityMask>& histories, const MfrConfig& cfg) {
  const Mask& f = forward.valid;
  require_same_shape(f.shape(), omega.shape(), "recovered_validity");
  const Index k = f.dim(0), h = f.dim(1), w = f.dim(2), hw = h * w;
  const Index win = cfg.window, side = cfg.patch_side(), pr = side / 2;
  ValidityMask out{f};
  for (Index c = 0; c < k; ++c) {
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        const Index at = c * hw + i * w + j;
        if (!omega[at]) continue;
        bool any = false;
        for (Index p = 0; p < win && !any; ++p) {
          const Index y = i + p / side - pr, x = j + p % side - pr;
          if (y < 0 || y >= h || x < 0 || x >= w) continue;
          for (const auto& hst : histories) {
            if (hst.valid[c * hw + y * w + x]) {
              any = true;
              break;
            }
          }
        }
        out.valid[at] = (f[at] || any) ? 1 : 0;
      }
    }
  }
  return out;
}

template struct CoefficientNetParams<float>;
template struct CoefficientNetParams<double>;
template struct CoefficientNetParams<long double>;
template CoefficientField<float> coefficient_forward(Tape<float>&, CoefficientNetParams<float>&,
                                                     const std::vector<MotionFeature<float>>&,
                                                     const MfrConfig&);
template CoefficientField<double> coefficient_forward(Tape<double>&, CoefficientNetParams<double>&,
                                                      const std::vector<MotionFeature<double>>&,
                                                      const MfrConfig&);
template MotionFeature<float> recover(const MotionFeature<float>&, const Mask&,
                                      const std::vector<MotionFeature<float>>&,
                                      const CoefficientField<float>&, const MfrConfig&);
template MotionFeature<double> recover(const MotionFeature<double>&, const Mask&,
                                       const std::vector<MotionFeature<double>>&,
                                       const CoefficientField<double>&, const MfrConfig&);
template CoefficientField<long double> coefficient_forward(Tape<long double>&, CoefficientNetParams<long double>&,
                                                           const std::vector<MotionFeature<long double>>&,
                                                           const MfrConfig&);
template MotionFeature<long double> recover(const MotionFeature<long double>&, const Mask&,
                                            const std::vector<MotionFeature<long double>>&,
                                            const CoefficientField<long double>&, const MfrConfig&);

}  // namespace mfrflow
