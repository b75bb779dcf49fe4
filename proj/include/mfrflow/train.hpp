#pragma once

#include "mfrflow/config.hpp"
#include "mfrflow/metrics.hpp"
#include "mfrflow/model.hpp"
#include "mfrflow/synth.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mfrflow {

template <typename Scalar>
struct AdamState {
  std::vector<Tensor<Scalar>> m, v;
  long step = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0;
};

/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta, with the
/// decay applied as a multiplication by (1 - lr * wd).
template <typename Scalar>
void adamw_step(const std::vector<Parameter<Scalar>*>& params, AdamState<Scalar>& state, double lr,
                const AdamHyper& hyper);

template <typename Scalar>
double global_grad_norm(const std::vector<Parameter<Scalar>*>& params);

/// Rescales all gradients so that their global norm is at most max_norm.
/// Returns the norm before clipping.
template <typename Scalar>
double clip_grad_norm(const std::vector<Parameter<Scalar>*>& params, double max_norm);

/// Linear decay from the initial rate to zero over the decay steps.
double learning_rate_at(const TrainConfig& cfg, int step);

template <typename Scalar>
std::vector<Tensor<Scalar>> frames_as(const SampleSequence& sample);

/// Forward and backward pass for one sample; gradients are added to the
/// parameters. Returns the loss value.
template <typename Scalar>
double accumulate_sample_gradient(ModelParams<Scalar>& params, const ModelConfig& cfg,
                                  const SampleSequence& sample, const LossWeighting& weighting);

struct TrainLog {
  struct Step {
    int step = 0;
    double loss = 0;
    double learning_rate = 0;
    double grad_norm = 0;
  };
  struct Eval {
    int step = 0;
    double epe = 0;
    double fl = 0;
    double nzr_baseline = 0;
    double nzr_recovered = 0;
  };
  std::vector<Step> steps;
  std::vector<Eval> evals;
  std::vector<std::filesystem::path> checkpoints;

  std::string steps_csv() const;
  std::string evals_csv() const;
};

struct EvalOptions {
  std::optional<bool> recovery;  // defaults to the model config
  int max_samples = -1;
  /// Restrict EPE and Fl to non-occluded pixels.
  bool noc_only = false;
};

template <typename Scalar>
EvalReport evaluate(ModelParams<Scalar>& params, const ModelConfig& cfg,
                    const std::vector<SampleSequence>& samples, const EvalOptions& options = {});

/// Trains in place. Step s draws a batch of consecutive entries from a
/// per-epoch seeded permutation of `train`. Checkpoints (and their .cfg) go to
/// `out_dir` when given: one before the first step, every checkpoint_every
/// steps, and one after the last step.
template <typename Scalar>
TrainLog train_loop(const RunConfig& cfg, ModelParams<Scalar>& params,
                    const std::vector<SampleSequence>& train, const std::vector<SampleSequence>& val,
                    const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                    const std::function<void(const std::string&)>& progress = {});

std::filesystem::path checkpoint_name(const std::filesystem::path& dir, int step);
/// Model configuration stored beside a checkpoint.
std::filesystem::path config_path_for(const std::filesystem::path& checkpoint);

struct GradcheckGroup {
  std::string name;
  double max_relative_error = 0;
  int coordinates = 0;
  /// Drawn coordinates whose stencil crossed a relu or bilinear-cell boundary.
  int skipped = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;
  double tolerance = 0;
  bool passed() const;
  std::string to_text() const;
};

struct GradcheckOptions {
  /// Multiplies the analytic gradient of this group by corrupt_factor; used
  /// to probe the checker.
  std::string corrupt_group;
  double corrupt_factor = 1.0;
};

/// Finite-difference check of the sequence loss for each parameter group on
/// a size x size sample. The analytic gradient is computed in 64-bit
/// arithmetic; the central differences in extended precision. Per group the
/// error is max|a - n| / max(max|a|, max|n|, 1e-8) over `coordinates`
/// coordinates drawn from a seeded shuffle, skipping coordinates whose
/// stencil crosses a non-differentiable point. Groups without trainable
/// parameters are left out.
GradcheckReport gradcheck_all(const RunConfig& cfg, ModelParams<double>& params, const SampleSequence& sample,
                              const GradcheckOptions& options = {});
GradcheckReport gradcheck_all(const RunConfig& cfg, const GradcheckOptions& options = {});

/// Model config adjusted for gradient checking: full differentiation through
/// the refinement loop and the configured iteration count.
ModelConfig gradcheck_model_config(const RunConfig& cfg);

}  // namespace mfrflow
