#include "mfrflow/checkpoint.hpp"
#include "mfrflow/train.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <unistd.h>

using namespace mfrflow;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("mfrflow_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig tiny_run() {
  RunConfig cfg;
  ModelConfig& m = cfg.model;
  m.encoder_width1 = 4;
  m.encoder_width2 = 6;
  m.feature_dim = 8;
  m.hidden_dim = 6;
  m.context_dim = 6;
  m.motion_corr_dim = 8;
  m.motion_flow_dim = 4;
  m.motion_dim = 8;
  m.flow_head_hidden = 8;
  m.iterations = 2;
  m.history_iterations = 2;
  m.lookup.radius = 1;
  m.lookup.levels = 2;
  m.mfr.hidden = 4;
  cfg.train.batch_size = 2;
  cfg.train.steps = 4;
  cfg.train.eval_every = 2;
  cfg.train.val_count = 2;
  cfg.gradcheck.size = 32;
  cfg.gradcheck.coordinates = 16;
  cfg.gradcheck.iterations = 2;
  return cfg;
}

std::vector<SampleSequence> tiny_data(int count, std::uint64_t seed, Regime regime = Regime::small) {
  return make_dataset({{regime, 1.0}}, count, seed, 32, 32);
}

// Scalar Adam with decoupled decay, written out per coordinate.
struct ScalarAdam {
  double m = 0, v = 0;
  long t = 0;
  double step(double theta, double g, double lr, const AdamHyper& h) {
    ++t;
    m = h.beta1 * m + (1 - h.beta1) * g;
    v = h.beta2 * v + (1 - h.beta2) * g * g;
    const double mh = m / (1 - std::pow(h.beta1, t)), vh = v / (1 - std::pow(h.beta2, t));
    theta *= 1 - lr * h.weight_decay;
    return theta - lr * mh / (std::sqrt(vh) + h.eps);
  }
};

}  // namespace

TEST_CASE("adamw matches a scalar oracle") {
  AdamHyper hyper;
  hyper.weight_decay = 0.01;
  Parameter<double> p("w", Tensor<double>({3}, {0.5, -1.0, 2.0}));
  std::vector<Parameter<double>*> list{&p};
  AdamState<double> state;
  ScalarAdam oracle[3];
  double theta[3] = {0.5, -1.0, 2.0};
  for (int s = 0; s < 25; ++s) {
    for (int i = 0; i < 3; ++i) p.grad[i] = std::sin(0.7 * s + i) * (i + 1);
    adamw_step(list, state, 0.05, hyper);
    for (int i = 0; i < 3; ++i) theta[i] = oracle[i].step(theta[i], std::sin(0.7 * s + i) * (i + 1), 0.05, hyper);
  }
  for (int i = 0; i < 3; ++i) CHECK(p.value[i] == doctest::Approx(theta[i]).epsilon(1e-12));
  CHECK(state.step == 25);
}

TEST_CASE("adamw first step moves by the learning rate") {
  Parameter<double> p("w", Tensor<double>({2}, {1.0, 1.0}));
  p.grad[0] = 3.0;
  p.grad[1] = -0.002;
  std::vector<Parameter<double>*> list{&p};
  AdamState<double> state;
  adamw_step(list, state, 0.1, AdamHyper{});
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(1.1).epsilon(1e-4));
}

TEST_CASE("adamw minimizes a quadratic") {
  Parameter<double> p("w", Tensor<double>({1}, {0.0}));
  std::vector<Parameter<double>*> list{&p};
  AdamState<double> state;
  for (int s = 0; s < 200; ++s) {
    p.grad[0] = 2 * (p.value[0] - 3.0);
    adamw_step(list, state, 0.1, AdamHyper{});
  }
  CHECK(p.value[0] == doctest::Approx(3.0).epsilon(0.02));
}

TEST_CASE("weight decay with zero gradient and frozen parameters") {
  AdamHyper hyper;
  hyper.weight_decay = 0.5;
  Parameter<double> a("a", Tensor<double>({2}, {2.0, -4.0}));
  Parameter<double> frozen("f", Tensor<double>({1}, {7.0}));
  frozen.trainable = false;
  frozen.grad[0] = 100;
  std::vector<Parameter<double>*> list{&a, &frozen};
  AdamState<double> state;
  const double lrs[3] = {0.1, 0.2, 0.05};
  double expected = 1;
  for (double lr : lrs) {
    adamw_step(list, state, lr, hyper);
    expected *= 1 - lr * 0.5;
  }
  CHECK(a.value[0] == doctest::Approx(2.0 * expected).epsilon(1e-14));
  CHECK(a.value[1] == doctest::Approx(-4.0 * expected).epsilon(1e-14));
  CHECK(frozen.value[0] == 7.0);
}

TEST_CASE("gradient clipping") {
  Parameter<double> a("a", Tensor<double>({2}, {0, 0}));
  Parameter<double> b("b", Tensor<double>({1}, {0}));
  a.grad[0] = 3;
  a.grad[1] = 0;
  b.grad[0] = 4;
  std::vector<Parameter<double>*> list{&a, &b};
  CHECK(global_grad_norm(list) == doctest::Approx(5.0));
  CHECK(clip_grad_norm(list, 10.0) == doctest::Approx(5.0));
  CHECK(a.grad[0] == 3.0);
  CHECK(clip_grad_norm(list, 1.0) == doctest::Approx(5.0));
  CHECK(global_grad_norm(list) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(b.grad[0] / a.grad[0] == doctest::Approx(4.0 / 3.0));
}

TEST_CASE("learning rate schedule") {
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.steps = 100;
  CHECK(learning_rate_at(tc, 0) == 1e-3);
  CHECK(learning_rate_at(tc, 50) == doctest::Approx(5e-4));
  CHECK(learning_rate_at(tc, 100) == 0.0);
  tc.decay_steps = 20;
  CHECK(learning_rate_at(tc, 10) == doctest::Approx(5e-4));
  CHECK(learning_rate_at(tc, 60) == 0.0);
}

TEST_CASE("zero training steps write only the initial checkpoint") {
  RunConfig cfg = tiny_run();
  cfg.train.steps = 0;
  const fs::path dir = temp_dir("train0");
  ModelParams<float> params(cfg.model, cfg.seed);
  const TrainLog log = train_loop(cfg, params, {}, {}, dir);
  CHECK(log.steps.empty());
  REQUIRE(log.checkpoints.size() == 1);
  CHECK(log.checkpoints[0] == checkpoint_name(dir, 0));
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  CHECK(names == std::vector<std::string>{"ckpt_000000.cfg", "ckpt_000000.mfrw"});
  CHECK(parse_config(slurp(dir / "ckpt_000000.cfg")).model.feature_dim == 8);
  fs::remove_all(dir);
}

TEST_CASE("training is deterministic") {
  const RunConfig cfg = tiny_run();
  const auto data = tiny_data(6, 3);
  const std::vector<SampleSequence> train(data.begin(), data.end() - 2), val(data.end() - 2, data.end());
  const fs::path da = temp_dir("det_a"), db = temp_dir("det_b");
  ModelParams<float> pa(cfg.model, cfg.seed), pb(cfg.model, cfg.seed);
  const TrainLog la = train_loop(cfg, pa, train, val, da);
  const TrainLog lb = train_loop(cfg, pb, train, val, db);
  CHECK(la.steps_csv() == lb.steps_csv());
  CHECK(la.evals_csv() == lb.evals_csv());
  REQUIRE(la.checkpoints.size() == 2);
  REQUIRE(lb.checkpoints.size() == 2);
  for (std::size_t k = 0; k < la.checkpoints.size(); ++k) {
    CHECK(slurp(la.checkpoints[k]) == slurp(lb.checkpoints[k]));
  }
  CHECK(la.evals.size() == 3);
  CHECK(la.steps.size() == 4);

  RunConfig other = cfg;
  other.seed = 2;
  ModelParams<float> pc(other.model, other.seed);
  CHECK(train_loop(other, pc, train, val).steps_csv() != la.steps_csv());
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST_CASE("overfitting one sample lowers the loss") {
  RunConfig cfg = tiny_run();
  cfg.train.steps = 60;
  cfg.train.batch_size = 1;
  cfg.train.learning_rate = 2e-3;
  cfg.train.eval_every = 0;
  const auto data = tiny_data(1, 5);
  ModelParams<float> params(cfg.model, cfg.seed);
  const TrainLog log = train_loop(cfg, params, data, {});
  double head = 0, tail = 0;
  for (int k = 0; k < 5; ++k) {
    head += log.steps[static_cast<std::size_t>(k)].loss;
    tail += log.steps[log.steps.size() - 1 - static_cast<std::size_t>(k)].loss;
  }
  CHECK(tail < 0.5 * head);
}

TEST_CASE("non-finite ground truth is a numeric error") {
  RunConfig cfg = tiny_run();
  cfg.train.eval_every = 0;
  auto data = tiny_data(2, 8);
  data[0].flow.data[5] = std::numeric_limits<double>::quiet_NaN();
  data[1].flow.data[5] = std::numeric_limits<double>::quiet_NaN();
  ModelParams<float> params(cfg.model, cfg.seed);
  CHECK_THROWS_AS(train_loop(cfg, params, data, {}), NumericError);
  CHECK_THROWS_AS(train_loop(cfg, params, {}, {}), std::invalid_argument);
}

TEST_CASE("gradcheck on a tiny model") {
  const RunConfig cfg = tiny_run();
  const GradcheckReport rep = gradcheck_all(cfg);
  CHECK(rep.passed());
  CHECK(rep.groups.size() == 6);
  for (const auto& g : rep.groups) {
    CAPTURE(g.name);
    CHECK(g.coordinates == 16);
    CHECK(g.max_relative_error < 1e-5);
  }

  // Scaling the analytic gradient by 1.1 leaves a normwise error of 0.1/1.1.
  GradcheckOptions corrupt;
  corrupt.corrupt_group = "head";
  corrupt.corrupt_factor = 1.1;
  const GradcheckReport bad = gradcheck_all(cfg, corrupt);
  CHECK_FALSE(bad.passed());
  for (const auto& g : bad.groups) {
    if (g.name == "head") CHECK(g.max_relative_error == doctest::Approx(0.1 / 1.1).epsilon(1e-4));
    else CHECK(g.passed);
  }

  ModelParams<double> params(gradcheck_model_config(cfg), cfg.seed);
  for (auto* p : params.parameters()) {
    if (parameter_group(p->name) == "context") p->trainable = false;
  }
  const SampleSequence sample = generate_sequence(random_scene(Regime::occluding, 4, 32, 32), "g");
  const GradcheckReport partial = gradcheck_all(cfg, params, sample);
  CHECK(partial.groups.size() == 5);
  for (const auto& g : partial.groups) CHECK(g.name != "context");
  CHECK(partial.to_text().rfind("group,coordinates,skipped_at_kinks,max_relative_error,status\n", 0) == 0);
}

TEST_CASE("configuration text") {
  RunConfig cfg;
  cfg.seed = 77;
  cfg.train.learning_rate = 1.25e-4;
  cfg.model.recovery = false;
  cfg.precision = Precision::float64;
  const RunConfig back = parse_config(to_text(cfg));
  CHECK(to_text(back) == to_text(cfg));
  CHECK(back.seed == 77);
  CHECK_FALSE(back.model.recovery);

  CHECK(parse_config("# note\n\nseed = 5\n").seed == 5);
  try {
    parse_config("seed=1\n\nmodel.bogus=3\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("model.bogus") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("seed=abc"), ConfigError);
  CHECK_THROWS_AS(parse_config("precision=float16"), ConfigError);
  CHECK_THROWS_AS(parse_config("no equals sign"), ConfigError);
  RunConfig bad;
  apply_override(bad, "train.lr=-1");
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  apply_override(bad, "gradcheck.size=40");
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  for (const auto& key : config_keys()) CHECK(to_text(RunConfig{}).find(key + "=") != std::string::npos);
}
