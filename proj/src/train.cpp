#include "mfrflow/train.hpp"

#include "mfrflow/checkpoint.hpp"
#include "mfrflow/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

namespace mfrflow {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

double overall(const std::vector<double>& per_level) {
  if (per_level.empty()) return 1.0;
  double s = 0;
  for (double v : per_level) s += v;
  return s / static_cast<double>(per_level.size());
}

void save_model(const std::filesystem::path& path, const RunConfig& cfg, std::vector<Parameter<float>*> params) {
  save_parameters(path, params);
  save_config(config_path_for(path), cfg);
}

void save_model(const std::filesystem::path& path, const RunConfig& cfg, std::vector<Parameter<double>*> params) {
  save_parameters(path, params);
  save_config(config_path_for(path), cfg);
}

}  // namespace

template <typename Scalar>
void adamw_step(const std::vector<Parameter<Scalar>*>& params, AdamState<Scalar>& state, double lr,
                const AdamHyper& hyper) {
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto* p : params) {
      state.m.push_back(Tensor<Scalar>::zeros(p->value.shape()));
      state.v.push_back(Tensor<Scalar>::zeros(p->value.shape()));
    }
    state.step = 0;
  }
  ++state.step;
  const Scalar b1 = static_cast<Scalar>(hyper.beta1), b2 = static_cast<Scalar>(hyper.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(hyper.beta1, static_cast<double>(state.step)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(hyper.beta2, static_cast<double>(state.step)));
  const Scalar step = static_cast<Scalar>(lr);
  const Scalar decay = static_cast<Scalar>(1.0 - lr * hyper.weight_decay);
  const Scalar eps = static_cast<Scalar>(hyper.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<Scalar>& p = *params[k];
    if (!p.trainable) continue;
    require_same_shape(p.value.shape(), p.grad.shape(), "adamw_step");
    auto& m = state.m[k].array();
    auto& v = state.v[k].array();
    const auto& g = p.grad.array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    if (hyper.weight_decay != 0) p.value.array() *= decay;
    p.value.array() -= step * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

template <typename Scalar>
double global_grad_norm(const std::vector<Parameter<Scalar>*>& params) {
  double acc = 0;
  for (const auto* p : params) {
    if (p->trainable) acc += p->grad.array().template cast<double>().square().sum();
  }
  return std::sqrt(acc);
}

template <typename Scalar>
double clip_grad_norm(const std::vector<Parameter<Scalar>*>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const auto s = static_cast<Scalar>(max_norm / (norm + 1e-6));
    for (auto* p : params) p->grad.array() *= s;
  }
  return norm;
}

double learning_rate_at(const TrainConfig& cfg, int step) {
  const int decay = cfg.effective_decay_steps();
  if (decay <= 0) return cfg.learning_rate;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(decay), 0.0, 1.0);
  return cfg.learning_rate * (1.0 - frac);
}

template <typename Scalar>
std::vector<Tensor<Scalar>> frames_as(const SampleSequence& sample) {
  std::vector<Tensor<Scalar>> out;
  out.reserve(sample.frames.size());
  for (const auto& f : sample.frames) out.push_back(f.template cast<Scalar>());
  return out;
}

template <typename Scalar>
double accumulate_sample_gradient(ModelParams<Scalar>& params, const ModelConfig& cfg,
                                  const SampleSequence& sample, const LossWeighting& weighting) {
  Tape<Scalar> tape;
  ForwardResult<Scalar> fwd = forward_multiframe(tape, params, cfg, frames_as<Scalar>(sample));
  Var<Scalar> loss = sequence_loss(fwd.predictions, sample.flow.data.template cast<Scalar>(), sample.valid,
                                   weighting);
  const double value = static_cast<double>(loss.value()[0]);
  if (!std::isfinite(value)) {
    throw NumericError("non-finite loss on sample " + sample.id);
  }
  tape.backward(loss);
  return value;
}

std::string TrainLog::steps_csv() const {
  std::ostringstream os;
  os << "step,loss,lr,grad_norm\n";
  for (const auto& s : steps) {
    os << s.step << ',' << fmt(s.loss) << ',' << fmt(s.learning_rate) << ',' << fmt(s.grad_norm) << '\n';
  }
  return os.str();
}

std::string TrainLog::evals_csv() const {
  std::ostringstream os;
  os << "step,epe,fl_all,nzr_baseline,nzr_recovered\n";
  for (const auto& e : evals) {
    os << e.step << ',' << fmt(e.epe) << ',' << fmt(e.fl) << ',' << fmt(e.nzr_baseline) << ','
       << fmt(e.nzr_recovered) << '\n';
  }
  return os.str();
}

template <typename Scalar>
EvalReport evaluate(ModelParams<Scalar>& params, const ModelConfig& cfg,
                    const std::vector<SampleSequence>& samples, const EvalOptions& options) {
  EvalReport report;
  const bool recovery = options.recovery.value_or(cfg.recovery);
  std::size_t count = samples.size();
  if (options.max_samples >= 0) count = std::min(count, static_cast<std::size_t>(options.max_samples));
  for (std::size_t k = 0; k < count; ++k) {
    const SampleSequence& s = samples[k];
    Tape<Scalar> tape;
    ForwardResult<Scalar> fwd =
        forward_multiframe(tape, params, cfg, frames_as<Scalar>(s), cfg.iterations, ForwardOptions{recovery, false});
    Mask valid = s.valid;
    if (options.noc_only) valid.array() *= (s.occlusion.array() == 0).template cast<std::uint8_t>();
    EvalRow row;
    row.sample_id = s.id;
    row.regime = to_string(s.regime);
    if (!fwd.predictions.empty()) {
      FlowField<double> pred(fwd.predictions.back().value().template cast<double>());
      row.epe = epe(pred, s.flow, valid);
      row.fl = fl_all(pred, s.flow, valid);
    } else {
      row.epe = epe(FlowField<double>::zeros(s.flow.height(), s.flow.width()), s.flow, valid);
      row.fl = fl_all(FlowField<double>::zeros(s.flow.height(), s.flow.width()), s.flow, valid);
    }
    if (!fwd.baseline_masks.empty()) {
      row.nzr_baseline = nzr_per_level(fwd.baseline_masks.back(), cfg.lookup.levels);
      row.nzr_recovered = fwd.recovered_masks.empty()
                              ? row.nzr_baseline
                              : nzr_per_level(fwd.recovered_masks.back(), cfg.lookup.levels);
    } else {
      row.nzr_baseline.assign(static_cast<std::size_t>(cfg.lookup.levels), 1.0);
      row.nzr_recovered = row.nzr_baseline;
    }
    report.rows.push_back(std::move(row));
  }
  report.finalize();
  return report;
}

std::filesystem::path checkpoint_name(const std::filesystem::path& dir, int step) {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt_%06d.mfrw", step);
  return dir / name;
}

std::filesystem::path config_path_for(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  return p.replace_extension(".cfg");
}

template <typename Scalar>
TrainLog train_loop(const RunConfig& cfg, ModelParams<Scalar>& params, const std::vector<SampleSequence>& train,
                    const std::vector<SampleSequence>& val, const std::optional<std::filesystem::path>& out_dir,
                    const std::function<void(const std::string&)>& progress) {
  cfg.validate();
  const TrainConfig& tc = cfg.train;
  if (train.empty() && tc.steps > 0) throw std::invalid_argument("train_loop: empty training set");
  TrainLog log;
  std::vector<Parameter<Scalar>*> plist = params.parameters();
  AdamState<Scalar> state;
  const AdamHyper hyper{tc.beta1, tc.beta2, tc.adam_eps, tc.weight_decay};

  auto checkpoint = [&](int step) {
    if (!out_dir) return;
    std::filesystem::create_directories(*out_dir);
    const auto path = checkpoint_name(*out_dir, step);
    save_model(path, cfg, plist);
    log.checkpoints.push_back(path);
  };
  auto run_eval = [&](int step) {
    if (val.empty()) return;
    EvalReport rep = evaluate(params, cfg.model, val);
    log.evals.push_back({step, rep.mean_epe, rep.fl_all, overall(rep.nzr_baseline), overall(rep.nzr_recovered)});
    if (progress) progress("eval step " + std::to_string(step) + " epe " + fmt(rep.mean_epe));
  };

  checkpoint(0);
  if (tc.eval_every > 0) run_eval(0);

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
  auto next_index = [&]() {
    if (cursor == order.size()) {
      order.resize(train.size());
      for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
      std::mt19937_64 rng(derive_seed(cfg.seed, 0x7A11ULL + epoch++));
      for (std::size_t k = order.size(); k-- > 1;) {
        std::swap(order[k], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(k)))]);
      }
      cursor = 0;
    }
    return order[cursor++];
  };

  for (int step = 1; step <= tc.steps; ++step) {
    params.zero_grad();
    double loss = 0;
    for (int b = 0; b < tc.batch_size; ++b) {
      const SampleSequence& s = train[next_index()];
      const double l = accumulate_sample_gradient(params, cfg.model, s, tc.loss);
      loss += l;
    }
    const auto inv = static_cast<Scalar>(1.0 / tc.batch_size);
    for (auto* p : plist) p->grad.array() *= inv;
    loss /= tc.batch_size;
    const double norm = clip_grad_norm(plist, tc.clip_norm);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(step));
    const double lr = learning_rate_at(tc, step - 1);
    adamw_step(plist, state, lr, hyper);
    log.steps.push_back({step, loss, lr, norm});
    if (progress && (step % 50 == 0 || step == 1)) {
      progress("step " + std::to_string(step) + " loss " + fmt(loss));
    }
    if (tc.eval_every > 0 && step % tc.eval_every == 0) run_eval(step);
    if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 && step != tc.steps) checkpoint(step);
  }
  if (tc.steps > 0) {
    checkpoint(tc.steps);
    if (tc.eval_every > 0 && tc.steps % tc.eval_every != 0) run_eval(tc.steps);
  }
  return log;
}

bool GradcheckReport::passed() const {
  for (const auto& g : groups) {
    if (!g.passed) return false;
  }
  return !groups.empty();
}

std::string GradcheckReport::to_text() const {
  std::ostringstream os;
  os << "group,coordinates,skipped_at_kinks,max_relative_error,status\n";
  for (const auto& g : groups) {
    os << g.name << ',' << g.coordinates << ',' << g.skipped << ',' << std::setprecision(6) << std::scientific
       << g.max_relative_error << std::defaultfloat << ',' << (g.passed ? "pass" : "FAIL") << '\n';
  }
  return os.str();
}

ModelConfig gradcheck_model_config(const RunConfig& cfg) {
  ModelConfig m = cfg.model;
  m.detach_flow = false;
  m.iterations = cfg.gradcheck.iterations;
  m.history_iterations = cfg.gradcheck.iterations;
  return m;
}

GradcheckReport gradcheck_all(const RunConfig& cfg, ModelParams<double>& params, const SampleSequence& sample,
                              const GradcheckOptions& options) {
  using Wide = long double;
  const ModelConfig mcfg = gradcheck_model_config(cfg);
  const GradcheckConfig& gc = cfg.gradcheck;
  const LossWeighting weighting = cfg.train.loss;

  std::vector<Parameter<double>*> plist = params.parameters();
  params.zero_grad();
  {
    Tape<double> tape;
    ForwardResult<double> fwd = forward_multiframe(tape, params, mcfg, frames_as<double>(sample));
    tape.backward(sequence_loss(fwd.predictions, sample.flow.data, sample.valid, weighting));
  }

  // Central differences run in extended precision on a copy of the
  // parameters, so roundoff stays far below the gradients being checked.
  ModelParams<Wide> wide = params.template cast<Wide>(mcfg);
  std::vector<Parameter<Wide>*> wlist = wide.parameters();
  const std::vector<Tensor<Wide>> frames = frames_as<Wide>(sample);
  const Tensor<Wide> gt = sample.flow.data.template cast<Wide>();
  auto loss_value = [&](std::uint64_t* signature) {
    Tape<Wide> tape;
    tape.track_branches(true);
    ForwardResult<Wide> fwd = forward_multiframe(tape, wide, mcfg, frames);
    const Wide v = sequence_loss(fwd.predictions, gt, sample.valid, weighting).value()[0];
    *signature = tape.branch_signature();
    return v;
  };
  std::uint64_t base_signature = 0;
  loss_value(&base_signature);

  // Coordinates of each group: (parameter index, flat index).
  std::map<std::string, std::vector<std::pair<std::size_t, Index>>> groups;
  std::vector<std::string> group_order;
  for (std::size_t k = 0; k < plist.size(); ++k) {
    if (!plist[k]->trainable) continue;
    const std::string g = parameter_group(plist[k]->name);
    if (!groups.count(g)) group_order.push_back(g);
    auto& coords = groups[g];
    for (Index i = 0; i < plist[k]->value.size(); ++i) coords.emplace_back(k, i);
  }

  GradcheckReport report;
  report.tolerance = gc.tolerance;
  const Wide eps = static_cast<Wide>(gc.eps);
  for (const std::string& name : group_order) {
    auto coords = groups[name];
    std::mt19937_64 rng(derive_seed(cfg.seed, fnv1a(name)));
    for (std::size_t k = coords.size(); k-- > 1;) {
      std::swap(coords[k], coords[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(k)))]);
    }
    const double factor = name == options.corrupt_group ? options.corrupt_factor : 1.0;
    GradcheckGroup g;
    g.name = name;
    double max_diff = 0, max_a = 0, max_n = 0;
    for (const auto& [pk, idx] : coords) {
      if (g.coordinates >= gc.coordinates) break;
      Parameter<Wide>& p = *wlist[pk];
      const Wide saved = p.value[idx];
      std::uint64_t sig_up = 0, sig_down = 0;
      p.value[idx] = saved + eps;
      const Wide up = loss_value(&sig_up);
      p.value[idx] = saved - eps;
      const Wide down = loss_value(&sig_down);
      p.value[idx] = saved;
      // A relu sign or bilinear cell changed inside the stencil: the loss is
      // not differentiable there and central differences do not apply.
      if (sig_up != base_signature || sig_down != base_signature) {
        ++g.skipped;
        continue;
      }
      const double numeric = static_cast<double>((up - down) / (Wide(2) * eps));
      const double analytic = plist[pk]->grad[idx] * factor;
      max_diff = std::max(max_diff, std::abs(analytic - numeric));
      max_a = std::max(max_a, std::abs(analytic));
      max_n = std::max(max_n, std::abs(numeric));
      ++g.coordinates;
    }
    g.max_relative_error = max_diff / std::max({max_a, max_n, 1e-8});
    g.passed = g.coordinates > 0 && g.max_relative_error < gc.tolerance;
    report.groups.push_back(g);
  }
  return report;
}

GradcheckReport gradcheck_all(const RunConfig& cfg, const GradcheckOptions& options) {
  cfg.validate();
  const ModelConfig mcfg = gradcheck_model_config(cfg);
  const SceneSpec spec = random_scene(parse_regime(cfg.gradcheck.regime), derive_seed(cfg.seed, 0x6CULL),
                                      cfg.gradcheck.size, cfg.gradcheck.size, mcfg.mfr.history_frames);
  const SampleSequence sample = generate_sequence(spec, "gradcheck");
  ModelParams<double> params(mcfg, cfg.seed);
  return gradcheck_all(cfg, params, sample, options);
}

#define MFRFLOW_INSTANTIATE_TRAIN(S)                                                                     \
  template void adamw_step(const std::vector<Parameter<S>*>&, AdamState<S>&, double, const AdamHyper&); \
  template double global_grad_norm(const std::vector<Parameter<S>*>&);                                  \
  template double clip_grad_norm(const std::vector<Parameter<S>*>&, double);                            \
  template std::vector<Tensor<S>> frames_as(const SampleSequence&);                                     \
  template double accumulate_sample_gradient(ModelParams<S>&, const ModelConfig&, const SampleSequence&, \
                                             const LossWeighting&);                                     \
  template EvalReport evaluate(ModelParams<S>&, const ModelConfig&, const std::vector<SampleSequence>&,  \
                               const EvalOptions&);                                                     \
  template TrainLog train_loop(const RunConfig&, ModelParams<S>&, const std::vector<SampleSequence>&,    \
                               const std::vector<SampleSequence>&,                                      \
                               const std::optional<std::filesystem::path>&,                             \
                               const std::function<void(const std::string&)>&);

MFRFLOW_INSTANTIATE_TRAIN(float)
MFRFLOW_INSTANTIATE_TRAIN(double)
template std::vector<Tensor<long double>> frames_as(const SampleSequence&);

}  // namespace mfrflow
