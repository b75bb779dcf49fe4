#include "mfrflow/cli.hpp"

#include "mfrflow/checkpoint.hpp"
#include "mfrflow/config.hpp"
#include "mfrflow/flow_io.hpp"
#include "mfrflow/image_io.hpp"
#include "mfrflow/synth.hpp"
#include "mfrflow/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

namespace mfrflow::cli {

namespace {

namespace fs = std::filesystem;

/// Raised for missing inputs and bad combinations of flags.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::string checkpoint;
  std::string flo;
  std::string sample;
  std::string spec = "small:1";
  std::string pixels = "all";
  std::string recovery = "config";
  std::string mask = "all";
  std::vector<std::string> overrides;
  int count = 0;
  int size = 64;
  int history = 2;
  int seeds = 5;
  int max_samples = -1;
  std::uint64_t seed = 1;
  bool analytic_flow = false;
  bool zero_flow = false;
};

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot write " + path.string());
  f << text;
  if (!f) throw FormatError("failed writing " + path.string());
}

fs::path output_dir(const Options& o, const std::string& command) {
  if (!o.out.empty()) return o.out;
  if (const char* root = std::getenv("MFRFLOW_OUT"); root && *root) return fs::path(root) / command;
  throw UsageError(command + ": --out is required (or set MFRFLOW_OUT)");
}

void require_path(const std::string& p, const char* what) {
  if (p.empty()) throw UsageError(std::string(what) + " is required");
  if (!fs::exists(p)) throw FormatError(std::string(what) + " '" + p + "' does not exist");
}

RunConfig run_config(const Options& o) {
  RunConfig cfg;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw FormatError("config '" + o.config + "' does not exist");
    cfg = load_config(o.config);
  }
  for (const auto& s : o.overrides) apply_override(cfg, s);
  cfg.validate();
  return cfg;
}

/// Configuration stored beside a checkpoint, plus command-line overrides.
RunConfig checkpoint_config(const Options& o) {
  const fs::path cfg_path = config_path_for(o.checkpoint);
  if (!fs::exists(cfg_path)) throw FormatError("missing model config " + cfg_path.string());
  RunConfig cfg = load_config(cfg_path);
  for (const auto& s : o.overrides) apply_override(cfg, s);
  cfg.validate();
  return cfg;
}

void echo_config(const fs::path& dir, const std::string& command, const std::string& extra, const RunConfig* cfg) {
  std::string text = "command=" + command + "\n" + extra;
  if (cfg) text += to_text(*cfg);
  write_text(dir / "effective_config.txt", text);
}

template <typename Scalar>
ModelParams<Scalar> load_model(const RunConfig& cfg, const fs::path& checkpoint) {
  ModelParams<Scalar> params(cfg.model, cfg.seed);
  load_parameters(checkpoint, params.parameters());
  return params;
}

std::vector<double> mean_levels(const std::vector<std::vector<double>>& rows, std::size_t levels) {
  std::vector<double> out(levels, 0.0);
  for (const auto& r : rows) {
    for (std::size_t l = 0; l < levels; ++l) out[l] += r[l] / static_cast<double>(rows.size());
  }
  return out;
}

/// Paired bars per level: baseline (gray) and recovered (orange).
Image8 nzr_plot(const std::vector<double>& baseline, const std::vector<double>& recovered) {
  const Index bar = 16, gap = 8, height = 128;
  const auto levels = static_cast<Index>(baseline.size());
  const Index width = std::max<Index>(1, levels * (2 * bar + gap) + gap);
  Image8 img({height, width, 3}, 255);
  auto draw = [&](Index x0, double v, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const auto top = static_cast<Index>(std::lround((1.0 - std::clamp(v, 0.0, 1.0)) * (height - 1)));
    for (Index i = top; i < height; ++i) {
      for (Index j = x0; j < x0 + bar; ++j) {
        img(i, j, 0) = r;
        img(i, j, 1) = g;
        img(i, j, 2) = b;
      }
    }
  };
  for (Index l = 0; l < levels; ++l) {
    const Index x = gap + l * (2 * bar + gap);
    draw(x, baseline[static_cast<std::size_t>(l)], 128, 128, 128);
    draw(x + bar, recovered[static_cast<std::size_t>(l)], 230, 120, 20);
  }
  return img;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Options& o, std::ostream& out) {
  const fs::path dir = output_dir(o, "gen-data");
  if (o.count < 0) throw UsageError("--count must be >= 0");
  if (o.size < 8 || o.size % 8 != 0) throw UsageError("--size must be a positive multiple of 8");
  RegimeMix mix;
  try {
    mix = parse_regime_mix(o.spec);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto samples = make_dataset(mix, o.count, o.seed, o.size, o.size, o.history);
  write_dataset(dir, samples);
  std::ostringstream extra;
  extra << "spec=" << o.spec << "\ncount=" << o.count << "\nseed=" << o.seed << "\nsize=" << o.size
        << "\nhistory=" << o.history << "\n";
  echo_config(dir, "gen-data", extra.str(), nullptr);
  out << "wrote " << samples.size() << " samples to " << dir.string() << " (checksum " << std::hex
      << dataset_checksum(samples) << std::dec << ")\n";
  return ok;
}

template <typename Scalar>
int train_with(const RunConfig& cfg, const std::vector<SampleSequence>& train,
               const std::vector<SampleSequence>& val, const fs::path& dir, std::ostream& out) {
  ModelParams<Scalar> params(cfg.model, cfg.seed);
  TrainLog log = train_loop(cfg, params, train, val, dir, [&](const std::string& m) { out << m << std::endl; });
  write_text(dir / "train_log.csv", log.steps_csv());
  write_text(dir / "eval_log.csv", log.evals_csv());
  if (!log.checkpoints.empty()) {
    fs::copy_file(log.checkpoints.back(), dir / "model.mfrw", fs::copy_options::overwrite_existing);
    fs::copy_file(config_path_for(log.checkpoints.back()), dir / "model.cfg", fs::copy_options::overwrite_existing);
  }
  out << "trained " << cfg.train.steps << " steps; checkpoint " << (dir / "model.mfrw").string() << '\n';
  return ok;
}

/// Splits off the last val_count samples unless a separate split is given.
std::pair<std::vector<SampleSequence>, std::vector<SampleSequence>> split(const Options& o, const RunConfig& cfg,
                                                                          const std::string& val_dir) {
  std::vector<SampleSequence> all = read_dataset(o.data);
  if (!val_dir.empty()) return {std::move(all), read_dataset(val_dir)};
  const std::size_t nval = std::min(all.size(), static_cast<std::size_t>(cfg.train.val_count));
  std::vector<SampleSequence> val(all.end() - static_cast<std::ptrdiff_t>(nval), all.end());
  all.resize(all.size() - nval);
  return {std::move(all), std::move(val)};
}

void check_frames(const std::vector<SampleSequence>& samples, const RunConfig& cfg) {
  for (const auto& s : samples) {
    if (static_cast<int>(s.frames.size()) != cfg.model.frame_count()) {
      throw FormatError("sample " + s.id + " has " + std::to_string(s.frames.size()) + " frames, model needs " +
                        std::to_string(cfg.model.frame_count()));
    }
  }
}

int cmd_train(const Options& o, const std::string& val_dir, std::ostream& out) {
  const fs::path dir = output_dir(o, "train");
  const RunConfig cfg = run_config(o);
  require_path(o.data, "--data");
  auto [train, val] = split(o, cfg, val_dir);
  check_frames(train, cfg);
  check_frames(val, cfg);
  if (train.empty() && cfg.train.steps > 0) throw FormatError("no training samples in " + o.data);
  fs::create_directories(dir);
  echo_config(dir, "train", "data=" + o.data + "\n", &cfg);
  if (cfg.precision == Precision::float64) return train_with<double>(cfg, train, val, dir, out);
  return train_with<float>(cfg, train, val, dir, out);
}

template <typename Scalar>
EvalReport eval_with(const RunConfig& cfg, const fs::path& checkpoint, const std::vector<SampleSequence>& samples,
                     const EvalOptions& opts) {
  ModelParams<Scalar> params = load_model<Scalar>(cfg, checkpoint);
  return evaluate(params, cfg.model, samples, opts);
}

EvalOptions eval_options(const Options& o) {
  EvalOptions opts;
  opts.max_samples = o.max_samples;
  if (o.recovery == "on") opts.recovery = true;
  else if (o.recovery == "off") opts.recovery = false;
  else if (o.recovery != "config") throw UsageError("--recovery must be on, off or config");
  if (o.mask != "all" && o.mask != "noc") throw UsageError("--mask must be all or noc");
  opts.noc_only = o.mask == "noc";
  return opts;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const fs::path dir = output_dir(o, "eval");
  require_path(o.checkpoint, "--checkpoint");
  require_path(o.data, "--data");
  const RunConfig cfg = checkpoint_config(o);
  const auto samples = read_dataset(o.data);
  check_frames(samples, cfg);
  const EvalOptions opts = eval_options(o);
  const EvalReport rep = cfg.precision == Precision::float64 ? eval_with<double>(cfg, o.checkpoint, samples, opts)
                                                             : eval_with<float>(cfg, o.checkpoint, samples, opts);
  fs::create_directories(dir);
  echo_config(dir, "eval",
              "checkpoint=" + o.checkpoint + "\ndata=" + o.data + "\nrecovery=" + o.recovery + "\nmask=" + o.mask + "\n",
              &cfg);
  write_text(dir / "eval.csv", rep.to_csv());
  out << "mean_epe " << fmt(rep.mean_epe) << " fl_all " << fmt(rep.fl_all) << '\n';
  return ok;
}

struct NzrRow {
  std::string id;
  std::string regime;
  std::vector<double> baseline, recovered;
  double overall_baseline = 1, overall_recovered = 1;
};

template <typename Scalar>
std::vector<NzrRow> nzr_from_model(const RunConfig& cfg, const fs::path& checkpoint,
                                   const std::vector<SampleSequence>& samples, bool sprite_pixels) {
  ModelParams<Scalar> params = load_model<Scalar>(cfg, checkpoint);
  std::vector<NzrRow> rows;
  for (const auto& s : samples) {
    Tape<Scalar> tape;
    ForwardResult<Scalar> fwd = forward_multiframe(tape, params, cfg.model, frames_as<Scalar>(s), cfg.model.iterations,
                                                   ForwardOptions{true, false});
    const Mask px = downsample_mask(s.sprite_mask, 8);
    const Mask* pixels = sprite_pixels ? &px : nullptr;
    NzrRow r{s.id, to_string(s.regime), {}, {}, 1, 1};
    if (!fwd.baseline_masks.empty()) {
      r.baseline = nzr_per_level(fwd.baseline_masks.back(), cfg.model.lookup.levels, pixels);
      r.recovered = nzr_per_level(fwd.recovered_masks.back(), cfg.model.lookup.levels, pixels);
      r.overall_baseline = nzr_over(fwd.baseline_masks.back(), pixels);
      r.overall_recovered = nzr_over(fwd.recovered_masks.back(), pixels);
    } else {
      r.baseline.assign(static_cast<std::size_t>(cfg.model.lookup.levels), 1.0);
      r.recovered = r.baseline;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<NzrRow> nzr_from_flows(const RunConfig& cfg, const std::vector<SampleSequence>& samples, bool zero_flow,
                                   bool sprite_pixels) {
  std::vector<NzrRow> rows;
  const LookupConfig& lc = cfg.model.lookup;
  for (const auto& s : samples) {
    Tensor<double> flow = downsample_flow(s.flow.data, 8);
    if (zero_flow) flow.set_zero();
    const ValidityMask base = lookup_validity(flow, lc);
    std::vector<ValidityMask> hist;
    for (const auto& h : s.history_flows) hist.push_back(lookup_validity(downsample_flow(h.data, 8), lc));
    hist.resize(std::min(hist.size(), static_cast<std::size_t>(cfg.model.mfr.history_frames)));
    const ValidityMask rec = recovered_validity(base, invalid_support(base), hist, cfg.model.mfr);
    const Mask px = downsample_mask(s.sprite_mask, 8);
    const Mask* pixels = sprite_pixels ? &px : nullptr;
    rows.push_back({s.id, to_string(s.regime), nzr_per_level(base, lc.levels, pixels),
                    nzr_per_level(rec, lc.levels, pixels), nzr_over(base, pixels), nzr_over(rec, pixels)});
  }
  return rows;
}

int cmd_profile_nzr(const Options& o, std::ostream& out) {
  const fs::path dir = output_dir(o, "profile-nzr");
  require_path(o.data, "--data");
  const int sources = (o.checkpoint.empty() ? 0 : 1) + (o.analytic_flow ? 1 : 0) + (o.zero_flow ? 1 : 0);
  if (sources != 1) throw UsageError("profile-nzr: give exactly one of --checkpoint, --analytic-flow, --zero-flow");
  if (o.pixels != "all" && o.pixels != "sprite") throw UsageError("--pixels must be all or sprite");
  const bool sprite = o.pixels == "sprite";
  const auto samples = read_dataset(o.data);
  RunConfig cfg;
  std::vector<NzrRow> rows;
  std::string source;
  if (!o.checkpoint.empty()) {
    require_path(o.checkpoint, "--checkpoint");
    cfg = checkpoint_config(o);
    check_frames(samples, cfg);
    rows = cfg.precision == Precision::float64 ? nzr_from_model<double>(cfg, o.checkpoint, samples, sprite)
                                               : nzr_from_model<float>(cfg, o.checkpoint, samples, sprite);
    source = "checkpoint=" + o.checkpoint;
  } else {
    cfg = run_config(o);
    rows = nzr_from_flows(cfg, samples, o.zero_flow, sprite);
    source = o.zero_flow ? "flow=zero" : "flow=analytic";
  }
  const auto levels = static_cast<std::size_t>(cfg.model.lookup.levels);
  fs::create_directories(dir);
  echo_config(dir, "profile-nzr", source + "\ndata=" + o.data + "\npixels=" + o.pixels + "\n", &cfg);

  std::ostringstream csv, per_sample;
  csv << "sample_id,level,nzr_baseline,nzr_recovered\n";
  per_sample << "sample_id,regime,nzr_baseline,nzr_recovered\n";
  for (const auto& r : rows) {
    for (std::size_t l = 0; l < levels; ++l) {
      csv << r.id << ',' << l + 1 << ',' << fmt(r.baseline[l]) << ',' << fmt(r.recovered[l]) << '\n';
    }
    per_sample << r.id << ',' << r.regime << ',' << fmt(r.overall_baseline) << ',' << fmt(r.overall_recovered)
               << '\n';
  }
  write_text(dir / "nzr_overall.csv", per_sample.str());
  write_text(dir / "nzr.csv", csv.str());

  std::vector<std::vector<double>> b, rc;
  double ob = 0, orc = 0;
  for (const auto& r : rows) {
    b.push_back(r.baseline);
    rc.push_back(r.recovered);
    ob += r.overall_baseline / static_cast<double>(rows.size());
    orc += r.overall_recovered / static_cast<double>(rows.size());
  }
  const auto mb = mean_levels(b, levels), mr = mean_levels(rc, levels);
  std::ostringstream sum;
  sum << "level,nzr_baseline,nzr_recovered,invalid_fraction_baseline\n";
  for (std::size_t l = 0; l < levels; ++l) {
    sum << l + 1 << ',' << fmt(mb[l]) << ',' << fmt(mr[l]) << ',' << fmt(1.0 - mb[l]) << '\n';
  }
  if (!rows.empty()) sum << "all," << fmt(ob) << ',' << fmt(orc) << ',' << fmt(1.0 - ob) << '\n';
  write_text(dir / "nzr_summary.csv", sum.str());
  write_ppm(dir / "nzr_plot.ppm", nzr_plot(mb, mr));
  out << "profiled " << rows.size() << " samples; mean nzr baseline " << fmt(ob) << " recovered " << fmt(orc) << '\n';
  return ok;
}

template <typename Scalar>
FlowField<double> predict(const RunConfig& cfg, const fs::path& checkpoint, const SampleSequence& s) {
  ModelParams<Scalar> params = load_model<Scalar>(cfg, checkpoint);
  Tape<Scalar> tape;
  ForwardResult<Scalar> fwd = forward_multiframe(tape, params, cfg.model, frames_as<Scalar>(s));
  if (fwd.predictions.empty()) return FlowField<double>::zeros(s.flow.height(), s.flow.width());
  return FlowField<double>(fwd.predictions.back().value().template cast<double>());
}

double max_magnitude(const FlowField<double>& f) {
  double m = 0;
  for (Index i = 0; i < f.height(); ++i) {
    for (Index j = 0; j < f.width(); ++j) m = std::max(m, std::hypot(f.u(i, j), f.v(i, j)));
  }
  return m;
}

int cmd_viz(const Options& o, std::ostream& out) {
  const fs::path dir = output_dir(o, "viz");
  if (!o.flo.empty()) {
    require_path(o.flo, "--flo");
    const FlowField<float> f = read_flo(o.flo);
    fs::create_directories(dir);
    echo_config(dir, "viz", "flo=" + o.flo + "\n", nullptr);
    write_ppm(dir / "flow.ppm", flow_to_color(f));
    out << "wrote " << (dir / "flow.ppm").string() << '\n';
    return ok;
  }
  if (o.checkpoint.empty() || o.data.empty() || o.sample.empty()) {
    throw UsageError("viz: give --flo, or --checkpoint with --data and --sample");
  }
  require_path(o.checkpoint, "--checkpoint");
  require_path(o.data, "--data");
  const RunConfig cfg = checkpoint_config(o);
  const auto samples = read_dataset(o.data);
  auto it = std::find_if(samples.begin(), samples.end(), [&](const SampleSequence& s) { return s.id == o.sample; });
  if (it == samples.end()) throw FormatError("sample '" + o.sample + "' not in " + o.data);
  check_frames({*it}, cfg);
  const FlowField<double> pred = cfg.precision == Precision::float64 ? predict<double>(cfg, o.checkpoint, *it)
                                                                     : predict<float>(cfg, o.checkpoint, *it);
  const double mag = std::max(max_magnitude(it->flow), 1e-6);
  fs::create_directories(dir);
  echo_config(dir, "viz", "checkpoint=" + o.checkpoint + "\ndata=" + o.data + "\nsample=" + o.sample + "\n", &cfg);
  write_ppm(dir / "pred_flow.ppm", flow_to_color(pred, mag));
  write_ppm(dir / "gt_flow.ppm", flow_to_color(it->flow, mag));
  write_ppm(dir / "error.ppm", heatmap(epe_map(pred, it->flow)));
  write_ppm(dir / "frame_t.ppm", to_rgb8(it->frames[static_cast<std::size_t>(cfg.model.mfr.history_frames)]));
  const MetricValue e = epe(pred, it->flow, it->valid);
  out << "sample " << o.sample << " epe " << fmt(e.value) << '\n';
  return ok;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const RunConfig cfg = run_config(o);
  const GradcheckReport rep = gradcheck_all(cfg);
  out << rep.to_text();
  if (!o.out.empty() || std::getenv("MFRFLOW_OUT")) {
    const fs::path dir = output_dir(o, "gradcheck");
    fs::create_directories(dir);
    echo_config(dir, "gradcheck", "", &cfg);
    write_text(dir / "gradcheck.csv", rep.to_text());
  }
  out << (rep.passed() ? "gradcheck passed" : "gradcheck FAILED") << '\n';
  return rep.passed() ? ok : numeric;
}

template <typename Scalar>
double ablation_run(const RunConfig& cfg, const std::vector<SampleSequence>& train,
                    const std::vector<SampleSequence>& val, const fs::path& dir) {
  ModelParams<Scalar> params(cfg.model, cfg.seed);
  TrainLog log = train_loop(cfg, params, train, std::vector<SampleSequence>{}, dir);
  write_text(dir / "train_log.csv", log.steps_csv());
  const EvalReport rep = evaluate(params, cfg.model, val);
  write_text(dir / "eval.csv", rep.to_csv());
  return rep.mean_epe;
}

int cmd_ablate(const Options& o, const std::string& val_dir, std::ostream& out) {
  const fs::path dir = output_dir(o, "ablate");
  if (o.seeds < 1) throw UsageError("--seeds must be >= 1");
  const RunConfig base = run_config(o);
  require_path(o.data, "--data");
  auto [train, val] = split(o, base, val_dir);
  check_frames(train, base);
  check_frames(val, base);
  if (val.empty()) throw FormatError("ablate: no held-out samples (set train.val_count or --val)");
  fs::create_directories(dir);
  echo_config(dir, "ablate", "data=" + o.data + "\nseeds=" + std::to_string(o.seeds) + "\n", &base);
  std::ostringstream csv;
  csv << "seed,epe_recovery_on,epe_recovery_off,recovery_better\n";
  int wins = 0;
  double sum_on = 0, sum_off = 0;
  for (int k = 0; k < o.seeds; ++k) {
    double epe_pair[2] = {0, 0};
    for (int mode = 0; mode < 2; ++mode) {
      RunConfig cfg = base;
      cfg.seed = base.seed + static_cast<std::uint64_t>(k);
      cfg.model.recovery = mode == 0;
      const fs::path run_dir = dir / ("seed_" + std::to_string(cfg.seed) + (mode == 0 ? "_on" : "_off"));
      fs::create_directories(run_dir);
      echo_config(run_dir, "ablate-run", "", &cfg);
      epe_pair[mode] = cfg.precision == Precision::float64 ? ablation_run<double>(cfg, train, val, run_dir)
                                                           : ablation_run<float>(cfg, train, val, run_dir);
      out << "seed " << cfg.seed << " recovery " << (mode == 0 ? "on" : "off") << " epe " << fmt(epe_pair[mode])
          << '\n';
    }
    const bool better = epe_pair[0] < epe_pair[1];
    wins += better ? 1 : 0;
    sum_on += epe_pair[0];
    sum_off += epe_pair[1];
    csv << base.seed + static_cast<std::uint64_t>(k) << ',' << fmt(epe_pair[0]) << ',' << fmt(epe_pair[1]) << ','
        << (better ? 1 : 0) << '\n';
  }
  csv << "mean," << fmt(sum_on / o.seeds) << ',' << fmt(sum_off / o.seeds) << ',' << wins << '\n';
  write_text(dir / "ablation.csv", csv.str());
  out << "recovery better in " << wins << " of " << o.seeds << " seeds\n";
  return ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-frame optical flow with motion feature recovery", "mfrflow"};
  app.require_subcommand(1);
  Options o;
  std::string val_dir;

  auto add_out = [&](CLI::App* c) { c->add_option("--out", o.out, "Output directory"); };
  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", o.config, "key=value configuration file");
    c->add_option("--set", o.overrides, "Override a configuration key (key=value)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--spec", o.spec, "Regime mix, e.g. small:0.5,large:0.5");
  gen->add_option("--count", o.count, "Number of samples")->required();
  gen->add_option("--seed", o.seed, "Dataset seed");
  gen->add_option("--size", o.size, "Canvas side in pixels (multiple of 8)");
  gen->add_option("--history", o.history, "History frames per sample");
  add_out(gen);

  auto* train = app.add_subcommand("train", "Train a model");
  add_config(train);
  train->add_option("--data", o.data, "Dataset directory")->required();
  train->add_option("--val", val_dir, "Held-out dataset (default: tail of --data)");
  add_out(train);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", o.data, "Dataset directory")->required();
  eval->add_option("--recovery", o.recovery, "on, off or config");
  eval->add_option("--max-samples", o.max_samples, "Evaluate at most this many samples");
  eval->add_option("--mask", o.mask, "Pixels scored: all, or noc to skip occluded ones");
  eval->add_option("--set", o.overrides, "Override a configuration key (key=value)");
  add_out(eval);

  auto* prof = app.add_subcommand("profile-nzr", "Per-level non-zero ratio with and without recovery");
  prof->add_option("--checkpoint", o.checkpoint, "Use flows estimated by this checkpoint");
  prof->add_flag("--analytic-flow", o.analytic_flow, "Use ground-truth flows");
  prof->add_flag("--zero-flow", o.zero_flow, "Use zero current flow with ground-truth history flows");
  prof->add_option("--data", o.data, "Dataset directory")->required();
  prof->add_option("--pixels", o.pixels, "all or sprite");
  add_config(prof);
  add_out(prof);

  auto* viz = app.add_subcommand("viz", "Color-coded flow images");
  viz->add_option("--flo", o.flo, ".flo file to render");
  viz->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  viz->add_option("--data", o.data, "Dataset directory");
  viz->add_option("--sample", o.sample, "Sample id");
  viz->add_option("--set", o.overrides, "Override a configuration key (key=value)");
  add_out(viz);

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  add_config(grad);
  add_out(grad);

  auto* ablate = app.add_subcommand("ablate", "Paired training runs with recovery on and off");
  add_config(ablate);
  ablate->add_option("--data", o.data, "Dataset directory")->required();
  ablate->add_option("--val", val_dir, "Held-out dataset (default: tail of --data)");
  ablate->add_option("--seeds", o.seeds, "Number of seeds");
  add_out(ablate);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "mfrflow: " << e.what() << '\n';
    return usage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (train->parsed()) return cmd_train(o, val_dir, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (prof->parsed()) return cmd_profile_nzr(o, out);
    if (viz->parsed()) return cmd_viz(o, out);
    if (grad->parsed()) return cmd_gradcheck(o, out);
    if (ablate->parsed()) return cmd_ablate(o, val_dir, out);
  } catch (const UsageError& e) {
    err << "mfrflow: " << e.what() << '\n';
    return usage;
  } catch (const ConfigError& e) {
    err << "mfrflow: " << e.what() << '\n';
    return usage;
  } catch (const NumericError& e) {
    err << "mfrflow: numerical failure: " << e.what() << '\n';
    return numeric;
  } catch (const std::exception& e) {
    err << "mfrflow: " << e.what() << '\n';
    return data;
  }
  return usage;
}

}  // namespace mfrflow::cli
