#include "mfrflow/model.hpp"

#include <memory>

namespace mfrflow {

void ModelConfig::validate() const {
  lookup.validate();
  mfr.validate();
  const int dims[] = {encoder_width1, encoder_width2, feature_dim, hidden_dim, context_dim,
                      motion_corr_dim, motion_flow_dim, flow_head_hidden};
  for (int d : dims) {
    if (d < 1) throw ShapeError("model: layer widths must be >= 1");
  }
  if (motion_dim < 3) throw ShapeError("model: motion_dim must be >= 3");
  if (iterations < 0 || history_iterations < 0) throw ShapeError("model: iterations must be >= 0");
}

std::string parameter_group(const std::string& name) {
  std::string g = name.substr(0, name.find('.'));
  if (g.rfind("mfr", 0) == 0) return "mfr";
  return g;
}

template <typename Scalar>
Encoder<Scalar>::Encoder(const std::string& name, const ModelConfig& cfg, Index out, std::uint64_t seed)
    : conv1(name + ".conv1", 3, cfg.encoder_width1, 3, 2, 1, seed),
      conv2(name + ".conv2", cfg.encoder_width1, cfg.encoder_width2, 3, 2, 1, seed),
      conv3(name + ".conv3", cfg.encoder_width2, out, 3, 2, 1, seed) {}

template <typename Scalar>
Var<Scalar> Encoder<Scalar>::operator()(Tape<Scalar>& tape, const Var<Scalar>& image) {
  return conv3(tape, relu(conv2(tape, relu(conv1(tape, image)))));
}

template <typename Scalar>
ModelParams<Scalar>::ModelParams(const ModelConfig& cfg, std::uint64_t seed)
    : feature("feature", cfg, cfg.feature_dim, seed),
      context("context", cfg, cfg.hidden_dim + cfg.context_dim, seed),
      motion{Conv2d<Scalar>("motion.corr", cfg.lookup.channels(), cfg.motion_corr_dim, 1, 1, 0, seed),
             Conv2d<Scalar>("motion.flow", 2, cfg.motion_flow_dim, 3, 1, 1, seed),
             Conv2d<Scalar>("motion.out", cfg.motion_corr_dim + cfg.motion_flow_dim,
                            cfg.motion_dim - 2, 3, 1, 1, seed)},
      gru{Conv2d<Scalar>("gru.z", cfg.hidden_dim + cfg.motion_dim + cfg.context_dim, cfg.hidden_dim, 3, 1,
                         1, seed),
          Conv2d<Scalar>("gru.r", cfg.hidden_dim + cfg.motion_dim + cfg.context_dim, cfg.hidden_dim, 3, 1,
                         1, seed),
          Conv2d<Scalar>("gru.q", cfg.hidden_dim + cfg.motion_dim + cfg.context_dim, cfg.hidden_dim, 3, 1,
                         1, seed)},
      head{Conv2d<Scalar>("head.conv1", cfg.hidden_dim, cfg.flow_head_hidden, 3, 1, 1, seed),
           Conv2d<Scalar>("head.conv2", cfg.flow_head_hidden, 2, 3, 1, 1, seed)},
      mfr(cfg.lookup.channels(), cfg.mfr, seed) {
  cfg.validate();
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> ModelParams<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> out;
  auto add = [&out](Conv2d<Scalar>& c) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  };
  for (Encoder<Scalar>* e : {&feature, &context}) {
    add(e->conv1);
    add(e->conv2);
    add(e->conv3);
  }
  add(motion.corr);
  add(motion.flow);
  add(motion.out);
  add(gru.z);
  add(gru.r);
  add(gru.q);
  add(head.conv1);
  add(head.conv2);
  for (auto* p : mfr.parameters()) out.push_back(p);
  return out;
}

template <typename Scalar>
void ModelParams<Scalar>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename Scalar>
Index ModelParams<Scalar>::parameter_count() {
  Index n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

template <typename Scalar>
template <typename To>
ModelParams<To> ModelParams<Scalar>::cast(const ModelConfig& cfg) const {
  ModelParams<To> out(cfg, 0);
  auto src = const_cast<ModelParams*>(this)->parameters();
  auto dst = out.parameters();
  if (src.size() != dst.size()) throw ShapeError("ModelParams::cast: configuration mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    require_same_shape(src[i]->value.shape(), dst[i]->value.shape(), "ModelParams::cast");
    dst[i]->value = src[i]->value.template cast<To>();
    dst[i]->trainable = src[i]->trainable;
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> extract_features(Tape<Scalar>& tape, ModelParams<Scalar>& params,
                                    const Tensor<Scalar>& image, int frame_id) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("extract_features: image must be [3,H,W], got " + to_string(image.shape()));
  }
  if (image.dim(1) % 8 != 0 || image.dim(2) % 8 != 0) {
    throw ShapeError("extract_features: image size " + to_string(image.shape()) +
                     " not divisible by 8");
  }
  Tensor<Scalar> normalized(image.shape());
  normalized.array() = Scalar(2) * image.array() - Scalar(1);
  return {params.feature(tape, tape.constant(std::move(normalized))), frame_id};
}

template <typename Scalar>
Var<Scalar> upsample_flow(const Var<Scalar>& flow, int factor) {
  const Shape& s = flow.shape();
  if (s.size() != 3 || s[0] != 2) throw ShapeError("upsample_flow: flow must be [2,H,W]");
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  auto interp = [factor](Index n) {
    const Index m = n * factor;
    Mat r = Mat::Zero(m, n);
    for (Index o = 0; o < m; ++o) {
      if (n == 1) {
        r(o, 0) = Scalar(1);
        continue;
      }
      const Scalar src = static_cast<Scalar>(o) * static_cast<Scalar>(n - 1) / static_cast<Scalar>(m - 1);
      const Index i0 = std::min<Index>(static_cast<Index>(src), n - 2);
      const Scalar f = src - static_cast<Scalar>(i0);
      r(o, i0) += Scalar(1) - f;
      r(o, i0 + 1) += f;
    }
    return r;
  };
  const Index h = s[1], w = s[2];
  auto ry = std::make_shared<Mat>(interp(h));
  auto rx = std::make_shared<Mat>(interp(w));
  const Scalar gain = static_cast<Scalar>(factor);
  Tensor<Scalar> out({2, h * factor, w * factor});
  for (Index c = 0; c < 2; ++c) {
    Eigen::Map<const Mat> fc(flow.value().data() + c * h * w, h, w);
    Eigen::Map<Mat> oc(out.data() + c * h * w * factor * factor, h * factor, w * factor);
    oc.noalias() = gain * (*ry) * fc * rx->transpose();
  }
  const std::size_t fid = flow.id();
  return flow.tape().record(std::move(out), {flow}, [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    auto* gf = t.grad_buffer(fid);
    if (!gf) return;
    for (Index c = 0; c < 2; ++c) {
      Eigen::Map<const Mat> gc(g.data() + c * h * w * factor * factor, h * factor, w * factor);
      Eigen::Map<Mat> dc(gf->data() + c * h * w, h, w);
      dc.noalias() += gain * ry->transpose() * gc * (*rx);
    }
  });
}

namespace {

template <typename Scalar>
struct ContextState {
  Var<Scalar> hidden;
  Var<Scalar> context;
};

template <typename Scalar>
ContextState<Scalar> context_state(Tape<Scalar>& tape, ModelParams<Scalar>& params, const ModelConfig& cfg,
                                   const Tensor<Scalar>& image) {
  Tensor<Scalar> normalized(image.shape());
  normalized.array() = Scalar(2) * image.array() - Scalar(1);
  Var<Scalar> out = params.context(tape, tape.constant(std::move(normalized)));
  return {tanh(slice(out, 0, 0, cfg.hidden_dim)),
          relu(slice(out, 0, cfg.hidden_dim, cfg.hidden_dim + cfg.context_dim))};
}

template <typename Scalar>
Scalar cost_scale(const ModelConfig& cfg) {
  return cfg.cost_scale == CostScale::literal ? Scalar(1) : normalized_scale<Scalar>(cfg.feature_dim);
}

template <typename Scalar>
CostVolumePyramid<Scalar> pyramid_for(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& b,
                                      const ModelConfig& cfg) {
  const Scalar scale = cost_scale<Scalar>(cfg);
  return build_pyramid(build_cost_volume(a, b, scale), cfg.lookup.levels, scale);
}

/// Recovery inputs held fixed across iterations.
template <typename Scalar>
struct RecoveryInputs {
  std::vector<MotionFeature<Scalar>> histories;
  std::vector<ValidityMask> history_masks;
  CoefficientField<Scalar> alpha;
  bool force_empty_omega = false;
};

template <typename Scalar>
struct RefineOutput {
  std::vector<Var<Scalar>> flows;
  std::vector<Var<Scalar>> predictions;
  std::vector<ValidityMask> baseline_masks;
  std::vector<ValidityMask> recovered_masks;
};

template <typename Scalar>
RefineOutput<Scalar> refine(Tape<Scalar>& tape, ModelParams<Scalar>& params, const ModelConfig& cfg,
                            const CostVolumePyramid<Scalar>& pyramid, const ContextState<Scalar>& state,
                            int iterations, const RecoveryInputs<Scalar>* recovery) {
  const Shape& fs = pyramid.levels.front().shape();
  const Index h = fs[0], w = fs[1];
  RefineOutput<Scalar> out;
  Var<Scalar> flow = tape.constant(Tensor<Scalar>::zeros({2, h, w}));
  Var<Scalar> hidden = state.hidden;
  for (int it = 0; it < iterations; ++it) {
    Var<Scalar> coords_flow = cfg.detach_flow ? detach(flow) : flow;
    LookupResult<Scalar> look = lookup_motion_feature(pyramid, coords_flow, cfg.lookup);
    Var<Scalar> corr = look.feature.data;
    ValidityMask recovered = look.mask;
    if (recovery) {
      Mask omega = cfg.omega == OmegaMode::geometric ? invalid_support(look.mask)
                                                     : zero_support(corr.value());
      if (recovery->force_empty_omega) omega.set_zero();
      corr = recover(look.feature, omega, recovery->histories, recovery->alpha, cfg.mfr).data;
      recovered = recovered_validity(look.mask, omega, recovery->history_masks, cfg.mfr);
    }
    Var<Scalar> cor = relu(params.motion.corr(tape, corr));
    Var<Scalar> flo = relu(params.motion.flow(tape, coords_flow));
    Var<Scalar> motion = concat<Scalar>({relu(params.motion.out(tape, concat<Scalar>({cor, flo}, 0))),
                                         coords_flow},
                                        0);
    Var<Scalar> x = concat<Scalar>({motion, state.context}, 0);
    Var<Scalar> hx = concat<Scalar>({hidden, x}, 0);
    Var<Scalar> z = sigmoid(params.gru.z(tape, hx));
    Var<Scalar> r = sigmoid(params.gru.r(tape, hx));
    Var<Scalar> q = tanh(params.gru.q(tape, concat<Scalar>({r * hidden, x}, 0)));
    hidden = hidden + z * (q - hidden);
    Var<Scalar> delta = params.head.conv2(tape, relu(params.head.conv1(tape, hidden)));
    flow = coords_flow + delta;
    out.flows.push_back(flow);
    out.predictions.push_back(upsample_flow(flow));
    out.baseline_masks.push_back(std::move(look.mask));
    out.recovered_masks.push_back(std::move(recovered));
  }
  return out;
}

}  // namespace

template <typename Scalar>
PairEstimate<Scalar> estimate_flow_pair(Tape<Scalar>& tape, ModelParams<Scalar>& params,
                                        const ModelConfig& cfg, const Tensor<Scalar>& image_a,
                                        const Tensor<Scalar>& image_b, int iterations) {
  require_same_shape(image_a.shape(), image_b.shape(), "estimate_flow_pair");
  FeatureMap<Scalar> fa = extract_features(tape, params, image_a, 0);
  FeatureMap<Scalar> fb = extract_features(tape, params, image_b, 1);
  ContextState<Scalar> state = context_state(tape, params, cfg, image_a);
  RefineOutput<Scalar> r = refine(tape, params, cfg, pyramid_for(fa, fb, cfg), state, iterations,
                                  static_cast<const RecoveryInputs<Scalar>*>(nullptr));
  PairEstimate<Scalar> out;
  out.final_flow = r.flows.empty() ? tape.constant(Tensor<Scalar>::zeros(
                                         {2, fa.data.shape()[1], fa.data.shape()[2]}))
                                   : r.flows.back();
  out.flows = std::move(r.flows);
  out.predictions = std::move(r.predictions);
  return out;
}

template <typename Scalar>
ForwardResult<Scalar> forward_multiframe(Tape<Scalar>& tape, ModelParams<Scalar>& params,
                                         const ModelConfig& cfg,
                                         const std::vector<Tensor<Scalar>>& frames, int iterations,
                                         const ForwardOptions& options) {
  cfg.validate();
  const int n_hist = cfg.mfr.history_frames;
  if (static_cast<int>(frames.size()) != n_hist + 2) {
    throw ShapeError("forward_multiframe: expected " + std::to_string(n_hist + 2) + " frames, got " +
                     std::to_string(frames.size()));
  }
  for (const auto& f : frames) require_same_shape(frames.front().shape(), f.shape(), "forward_multiframe");
  const auto t_index = static_cast<std::size_t>(n_hist);

  FeatureMap<Scalar> f_t = extract_features(tape, params, frames[t_index], 0);
  FeatureMap<Scalar> f_next = extract_features(tape, params, frames[t_index + 1], 1);
  ContextState<Scalar> state = context_state(tape, params, cfg, frames[t_index]);
  CostVolumePyramid<Scalar> pyramid = pyramid_for(f_t, f_next, cfg);

  ForwardResult<Scalar> result;
  std::unique_ptr<RecoveryInputs<Scalar>> recovery;
  if (options.recovery) {
    recovery = std::make_unique<RecoveryInputs<Scalar>>();
    recovery->force_empty_omega = options.force_empty_omega;
    for (int n = 1; n <= n_hist; ++n) {
      FeatureMap<Scalar> f_prev = extract_features(tape, params, frames[t_index - static_cast<std::size_t>(n)], -n);
      CostVolumePyramid<Scalar> hist_pyr = pyramid_for(f_t, f_prev, cfg);
      RefineOutput<Scalar> hist = refine(tape, params, cfg, hist_pyr, state, cfg.history_iterations,
                                         static_cast<const RecoveryInputs<Scalar>*>(nullptr));
      Var<Scalar> hist_flow = hist.flows.empty()
                                  ? tape.constant(Tensor<Scalar>::zeros({2, f_t.data.shape()[1],
                                                                         f_t.data.shape()[2]}))
                                  : hist.flows.back();
      if (cfg.detach_flow) hist_flow = detach(hist_flow);
      LookupResult<Scalar> look = lookup_motion_feature(hist_pyr, hist_flow, cfg.lookup, Direction::backward);
      result.history_flows.push_back(hist_flow);
      result.history_masks.push_back(look.mask);
      recovery->histories.push_back(look.feature);
      recovery->history_masks.push_back(std::move(look.mask));
    }
    recovery->alpha = coefficient_forward(tape, params.mfr, recovery->histories, cfg.mfr);
  }

  RefineOutput<Scalar> r = refine(tape, params, cfg, pyramid, state, iterations, recovery.get());
  result.predictions = std::move(r.predictions);
  result.flows = std::move(r.flows);
  result.baseline_masks = std::move(r.baseline_masks);
  result.recovered_masks = std::move(r.recovered_masks);
  return result;
}

std::vector<double> LossWeighting::weights(std::size_t count) const {
  std::vector<double> w(count, 1.0);
  if (mode == Mode::exponential) {
    for (std::size_t k = 0; k < count; ++k) w[k] = std::pow(gamma, static_cast<double>(count - 1 - k));
  }
  return w;
}

template <typename Scalar>
Var<Scalar> sequence_loss(const std::vector<Var<Scalar>>& predictions, const Tensor<Scalar>& gt,
                          const Mask& valid, const LossWeighting& weighting) {
  if (predictions.empty()) throw ShapeError("sequence_loss: no predictions");
  if (gt.rank() != 3 || gt.dim(0) != 2) throw ShapeError("sequence_loss: gt must be [2,H,W]");
  require_same_shape(valid.shape(), Shape{gt.dim(1), gt.dim(2)}, "sequence_loss valid mask");
  Tape<Scalar>& tape = predictions.front().tape();
  Var<Scalar> target = tape.constant(gt);
  const std::vector<double> w = weighting.weights(predictions.size());
  Var<Scalar> total;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    require_same_shape(predictions[k].shape(), gt.shape(), "sequence_loss prediction");
    Var<Scalar> term = scale(masked_mean(l2_norm(predictions[k] - target, 0), valid),
                             static_cast<Scalar>(w[k]));
    total = total.valid() ? total + term : term;
  }
  return total;
}

#define MFRFLOW_INSTANTIATE_MODEL(S)                                                                   \
  template struct Encoder<S>;                                                                          \
  template struct ModelParams<S>;                                                                      \
  template FeatureMap<S> extract_features(Tape<S>&, ModelParams<S>&, const Tensor<S>&, int);           \
  template Var<S> upsample_flow(const Var<S>&, int);                                                   \
  template PairEstimate<S> estimate_flow_pair(Tape<S>&, ModelParams<S>&, const ModelConfig&,           \
                                              const Tensor<S>&, const Tensor<S>&, int);                \
  template ForwardResult<S> forward_multiframe(Tape<S>&, ModelParams<S>&, const ModelConfig&,          \
                                               const std::vector<Tensor<S>>&, int, const ForwardOptions&); \
  template Var<S> sequence_loss(const std::vector<Var<S>>&, const Tensor<S>&, const Mask&,             \
                                const LossWeighting&);

MFRFLOW_INSTANTIATE_MODEL(float)
MFRFLOW_INSTANTIATE_MODEL(double)
MFRFLOW_INSTANTIATE_MODEL(long double)

template ModelParams<double> ModelParams<float>::cast<double>(const ModelConfig&) const;
template ModelParams<float> ModelParams<double>::cast<float>(const ModelConfig&) const;
template ModelParams<float> ModelParams<float>::cast<float>(const ModelConfig&) const;
template ModelParams<double> ModelParams<double>::cast<double>(const ModelConfig&) const;
template ModelParams<long double> ModelParams<double>::cast<long double>(const ModelConfig&) const;

}  // namespace mfrflow
