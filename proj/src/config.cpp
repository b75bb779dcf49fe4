#include "mfrflow/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace mfrflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) throw ConfigError("invalid value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("invalid boolean '" + value + "' for " + key);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define MFRFLOW_INT(name, field)                                                        \
  Entry {                                                                               \
    name, [](RunConfig& c, const std::string& v) { c.field = parse_number<int>(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                      \
  }
#define MFRFLOW_REAL(name, field)                                                          \
  Entry {                                                                                  \
    name, [](RunConfig& c, const std::string& v) { c.field = parse_number<double>(name, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }                                    \
  }
#define MFRFLOW_BOOL(name, field)                                                   \
  Entry {                                                                           \
    name, [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); }, \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }  \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      {"precision",
       [](RunConfig& c, const std::string& v) {
         if (v == "float32" || v == "32") c.precision = Precision::float32;
         else if (v == "float64" || v == "64") c.precision = Precision::float64;
         else throw ConfigError("precision must be float32 or float64, got '" + v + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.precision == Precision::float32 ? "float32" : "float64");
       }},
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      MFRFLOW_INT("model.encoder_width1", model.encoder_width1),
      MFRFLOW_INT("model.encoder_width2", model.encoder_width2),
      MFRFLOW_INT("model.feature_dim", model.feature_dim),
      MFRFLOW_INT("model.hidden_dim", model.hidden_dim),
      MFRFLOW_INT("model.context_dim", model.context_dim),
      MFRFLOW_INT("model.motion_corr_dim", model.motion_corr_dim),
      MFRFLOW_INT("model.motion_flow_dim", model.motion_flow_dim),
      MFRFLOW_INT("model.motion_dim", model.motion_dim),
      MFRFLOW_INT("model.flow_head_hidden", model.flow_head_hidden),
      MFRFLOW_INT("model.iterations", model.iterations),
      MFRFLOW_INT("model.history_iterations", model.history_iterations),
      MFRFLOW_BOOL("model.recovery", model.recovery),
      MFRFLOW_BOOL("model.detach_flow", model.detach_flow),
      {"model.cost_scale",
       [](RunConfig& c, const std::string& v) {
         if (v == "normalized") c.model.cost_scale = CostScale::normalized;
         else if (v == "literal") c.model.cost_scale = CostScale::literal;
         else throw ConfigError("model.cost_scale must be normalized or literal, got '" + v + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.model.cost_scale == CostScale::normalized ? "normalized" : "literal");
       }},
      {"model.omega",
       [](RunConfig& c, const std::string& v) {
         if (v == "geometric") c.model.omega = OmegaMode::geometric;
         else if (v == "zero_value") c.model.omega = OmegaMode::zero_value;
         else throw ConfigError("model.omega must be geometric or zero_value, got '" + v + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.model.omega == OmegaMode::geometric ? "geometric" : "zero_value");
       }},
      MFRFLOW_INT("lookup.radius", model.lookup.radius),
      MFRFLOW_INT("lookup.levels", model.lookup.levels),
      MFRFLOW_INT("mfr.history_frames", model.mfr.history_frames),
      MFRFLOW_INT("mfr.window", model.mfr.window),
      MFRFLOW_BOOL("mfr.literal_prefactor", model.mfr.literal_prefactor),
      {"mfr.normalization",
       [](RunConfig& c, const std::string& v) {
         if (v == "joint") c.model.mfr.normalization = AlphaNormalization::joint;
         else if (v == "spatial") c.model.mfr.normalization = AlphaNormalization::spatial;
         else throw ConfigError("mfr.normalization must be joint or spatial, got '" + v + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.model.mfr.normalization == AlphaNormalization::joint ? "joint" : "spatial");
       }},
      MFRFLOW_BOOL("mfr.shared_net", model.mfr.shared_net),
      MFRFLOW_INT("mfr.hidden", model.mfr.hidden),
      MFRFLOW_INT("mfr.kernel_size", model.mfr.kernel_size),
      MFRFLOW_REAL("train.lr", train.learning_rate),
      MFRFLOW_INT("train.decay_steps", train.decay_steps),
      MFRFLOW_REAL("train.weight_decay", train.weight_decay),
      MFRFLOW_REAL("train.beta1", train.beta1),
      MFRFLOW_REAL("train.beta2", train.beta2),
      MFRFLOW_REAL("train.adam_eps", train.adam_eps),
      MFRFLOW_INT("train.batch_size", train.batch_size),
      MFRFLOW_INT("train.steps", train.steps),
      MFRFLOW_REAL("train.clip_norm", train.clip_norm),
      {"train.loss",
       [](RunConfig& c, const std::string& v) {
         if (v == "uniform") c.train.loss.mode = LossWeighting::Mode::uniform;
         else if (v == "exponential") c.train.loss.mode = LossWeighting::Mode::exponential;
         else throw ConfigError("train.loss must be uniform or exponential, got '" + v + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.train.loss.mode == LossWeighting::Mode::uniform ? "uniform" : "exponential");
       }},
      MFRFLOW_REAL("train.gamma", train.loss.gamma),
      MFRFLOW_INT("train.eval_every", train.eval_every),
      MFRFLOW_INT("train.checkpoint_every", train.checkpoint_every),
      MFRFLOW_INT("train.val_count", train.val_count),
      MFRFLOW_INT("gradcheck.size", gradcheck.size),
      MFRFLOW_REAL("gradcheck.eps", gradcheck.eps),
      MFRFLOW_INT("gradcheck.coordinates", gradcheck.coordinates),
      MFRFLOW_REAL("gradcheck.tolerance", gradcheck.tolerance),
      MFRFLOW_INT("gradcheck.iterations", gradcheck.iterations),
      {"gradcheck.regime", [](RunConfig& c, const std::string& v) { c.gradcheck.regime = v; },
       [](const RunConfig& c) { return c.gradcheck.regime; }},
  };
  return table;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("train.lr must be positive");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (steps < 0) throw ConfigError("train.steps must be >= 0");
  if (decay_steps < 0 || decay_steps > steps) throw ConfigError("train.decay_steps must be in [0, steps]");
  if (!(clip_norm > 0)) throw ConfigError("train.clip_norm must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("train.beta1/beta2 must be in [0,1)");
  if (!(adam_eps > 0)) throw ConfigError("train.adam_eps must be positive");
  if (eval_every < 0 || checkpoint_every < 0 || val_count < 0) {
    throw ConfigError("train.eval_every, checkpoint_every and val_count must be >= 0");
  }
  if (!(loss.gamma > 0)) throw ConfigError("train.gamma must be positive");
}

void GradcheckConfig::validate() const {
  if (size < 8 || size % 8 != 0) throw ConfigError("gradcheck.size must be a positive multiple of 8");
  if (!(eps > 0)) throw ConfigError("gradcheck.eps must be positive");
  if (coordinates < 1) throw ConfigError("gradcheck.coordinates must be >= 1");
  if (!(tolerance > 0)) throw ConfigError("gradcheck.tolerance must be positive");
  if (iterations < 1) throw ConfigError("gradcheck.iterations must be >= 1");
}

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  train.validate();
  gradcheck.validate();
  const int block = 8 << (model.lookup.levels - 1);
  if (gradcheck.size % block != 0) {
    throw ConfigError("gradcheck.size must be a multiple of " + std::to_string(block) + " for " +
                      std::to_string(model.lookup.levels) + " pyramid levels");
  }
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& e : entries()) {
    if (e.key == key) {
      e.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  apply_setting(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      apply_override(base, t);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) out += e.key + "=" + e.get(cfg) + "\n";
  return out;
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write config " + path.string());
  out << to_text(cfg);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : entries()) keys.push_back(e.key);
  return keys;
}

}  // namespace mfrflow
