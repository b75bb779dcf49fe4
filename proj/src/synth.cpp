#include "mfrflow/synth.hpp"

#include "mfrflow/flow_io.hpp"
#include "mfrflow/image_io.hpp"
#include "mfrflow/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <tuple>

namespace mfrflow {

namespace {

constexpr int kSupersample = 4;

double lattice(std::uint64_t seed, std::int64_t ix, std::int64_t iy, int channel) {
  std::uint64_t h = seed;
  h = splitmix64(h ^ static_cast<std::uint64_t>(ix) * 0x9E3779B97F4A7C15ULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(iy) * 0xC2B2AE3D27D4EB4FULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(channel));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(std::uint64_t seed, double x, double y, int channel, double period) {
  const double gx = x / period, gy = y / period;
  const double fx0 = std::floor(gx), fy0 = std::floor(gy);
  const auto ix = static_cast<std::int64_t>(fx0), iy = static_cast<std::int64_t>(fy0);
  double fx = gx - fx0, fy = gy - fy0;
  fx = fx * fx * (3.0 - 2.0 * fx);
  fy = fy * fy * (3.0 - 2.0 * fy);
  const double a = lattice(seed, ix, iy, channel), b = lattice(seed, ix + 1, iy, channel);
  const double c = lattice(seed, ix, iy + 1, channel), d = lattice(seed, ix + 1, iy + 1, channel);
  return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
}

/// Two octaves over a per-texture tint.
double texture(std::uint64_t seed, double x, double y, int channel) {
  const double tint = lattice(seed ^ 0x5bd1e995ULL, 0, 0, channel);
  const double n = 0.6 * value_noise(seed, x, y, channel, 8.0) +
                   0.4 * value_noise(splitmix64(seed), x, y, channel, 3.0);
  return 0.35 * tint + 0.65 * n;
}

bool covers(const Sprite& s, double x, double y, int frame) {
  const double lx = x - (s.x + s.vx * frame);
  const double ly = y - (s.y + s.vy * frame);
  if (s.shape == Sprite::Shape::disc) return lx * lx + ly * ly <= s.half_w * s.half_w;
  return std::abs(lx) <= s.half_w && std::abs(ly) <= s.half_h;
}

/// Sprite a is drawn above sprite b.
bool above(const SceneSpec& spec, int a, int b) {
  const auto& sa = spec.sprites[static_cast<std::size_t>(a)];
  const auto& sb = spec.sprites[static_cast<std::size_t>(b)];
  return sa.layer != sb.layer ? sa.layer > sb.layer : a > b;
}

double shade(const SceneSpec& spec, double x, double y, int frame, int channel) {
  const int top = top_layer(spec, x, y, frame);
  if (top < 0) {
    return texture(spec.background_seed, x - spec.background_vx * frame,
                   y - spec.background_vy * frame, channel);
  }
  const Sprite& s = spec.sprites[static_cast<std::size_t>(top)];
  return texture(s.texture_seed, x - (s.x + s.vx * frame), y - (s.y + s.vy * frame), channel);
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

double to_float_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

FlowField<float> to_float_flow(const FlowField<double>& f) {
  return FlowField<float>(f.data.cast<float>(), f.direction, f.span);
}

FlowField<double> to_double_flow(const FlowField<float>& f, Direction dir, int span) {
  return FlowField<double>(f.data.cast<double>(), dir, span);
}

void hash_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
}

template <typename T>
void hash_tensor(std::uint64_t& h, const Tensor<T>& t) {
  hash_bytes(h, t.data(), static_cast<std::size_t>(t.size()) * sizeof(T));
}

}  // namespace

std::string to_string(Regime r) {
  switch (r) {
    case Regime::small: return "small";
    case Regime::large: return "large";
    case Regime::occluding: return "occluding";
  }
  return "small";
}

Regime parse_regime(const std::string& s) {
  if (s == "small") return Regime::small;
  if (s == "large") return Regime::large;
  if (s == "occluding") return Regime::occluding;
  throw std::invalid_argument("unknown regime '" + s + "' (expected small, large or occluding)");
}

void SceneSpec::validate() const {
  if (height < 8 || width < 8) throw ShapeError("scene: canvas must be at least 8x8");
  if (history_frames < 1) throw ShapeError("scene: history_frames must be >= 1");
  for (const auto& s : sprites) {
    if (!(s.half_w > 0) || (s.shape == Sprite::Shape::rectangle && !(s.half_h > 0))) {
      throw ShapeError("scene: sprite with zero size");
    }
    bool visible = false;
    for (int k = 0; k < length() && !visible; ++k) {
      const double cx = s.x + s.vx * k, cy = s.y + s.vy * k;
      const double hh = s.shape == Sprite::Shape::disc ? s.half_w : s.half_h;
      visible = cx + s.half_w > 0 && cx - s.half_w < static_cast<double>(width) && cy + hh > 0 &&
                cy - hh < static_cast<double>(height);
    }
    if (!visible) throw ShapeError("scene: sprite never intersects the canvas");
  }
}

int top_layer(const SceneSpec& spec, double x, double y, int frame) {
  int top = -1;
  for (int s = 0; s < static_cast<int>(spec.sprites.size()); ++s) {
    if (!covers(spec.sprites[static_cast<std::size_t>(s)], x, y, frame)) continue;
    if (top < 0 || above(spec, s, top)) top = s;
  }
  return top;
}

FlowField<double> analytic_flow(const SceneSpec& spec, int frame, int delta) {
  FlowField<double> out(Tensor<double>::zeros({2, spec.height, spec.width}),
                        delta > 0 ? Direction::forward : Direction::backward, std::abs(delta));
  for (Index i = 0; i < spec.height; ++i) {
    for (Index j = 0; j < spec.width; ++j) {
      const int top = top_layer(spec, static_cast<double>(j) + 0.5, static_cast<double>(i) + 0.5, frame);
      double vx = spec.background_vx, vy = spec.background_vy;
      if (top >= 0) {
        vx = spec.sprites[static_cast<std::size_t>(top)].vx;
        vy = spec.sprites[static_cast<std::size_t>(top)].vy;
      }
      out.data(0, i, j) = to_float_precision(vx * delta);
      out.data(1, i, j) = to_float_precision(vy * delta);
    }
  }
  return out;
}

Tensor<double> render_frame(const SceneSpec& spec, int frame) {
  Tensor<double> out({3, spec.height, spec.width});
  constexpr double inv = 1.0 / (kSupersample * kSupersample);
  for (Index i = 0; i < spec.height; ++i) {
    for (Index j = 0; j < spec.width; ++j) {
      double acc[3] = {0, 0, 0};
      for (int a = 0; a < kSupersample; ++a) {
        for (int b = 0; b < kSupersample; ++b) {
          const double x = static_cast<double>(j) + (b + 0.5) / kSupersample;
          const double y = static_cast<double>(i) + (a + 0.5) / kSupersample;
          for (int c = 0; c < 3; ++c) acc[c] += shade(spec, x, y, frame, c);
        }
      }
      for (int c = 0; c < 3; ++c) out(c, i, j) = quantize(acc[c] * inv);
    }
  }
  return out;
}

SampleSequence generate_sequence(const SceneSpec& spec, const std::string& id) {
  spec.validate();
  SampleSequence seq;
  seq.id = id;
  seq.regime = spec.regime;
  for (int k = 0; k < spec.length(); ++k) seq.frames.push_back(render_frame(spec, k));
  const int t = spec.anchor();
  seq.flow = analytic_flow(spec, t, 1);
  for (int n = 1; n <= spec.history_frames; ++n) seq.history_flows.push_back(analytic_flow(spec, t, -n));

  const Index h = spec.height, w = spec.width;
  seq.occlusion = Mask({h, w});
  seq.valid = Mask({h, w}, 1);
  seq.sprite_mask = Mask({h, w});
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      const double x = static_cast<double>(j) + 0.5, y = static_cast<double>(i) + 0.5;
      const int top = top_layer(spec, x, y, t);
      seq.sprite_mask(i, j) = top >= 0 ? 1 : 0;
      const double dx = x + seq.flow.data(0, i, j), dy = y + seq.flow.data(1, i, j);
      bool occluded = dx < 0 || dy < 0 || dx >= static_cast<double>(w) || dy >= static_cast<double>(h);
      for (int s = 0; s < static_cast<int>(spec.sprites.size()) && !occluded; ++s) {
        if (s == top || (top >= 0 && !above(spec, s, top))) continue;
        occluded = covers(spec.sprites[static_cast<std::size_t>(s)], dx, dy, t + 1);
      }
      seq.occlusion(i, j) = occluded ? 1 : 0;
    }
  }
  return seq;
}

SceneSpec random_scene(Regime regime, std::uint64_t seed, Index height, Index width, int history_frames) {
  std::mt19937_64 rng(seed);
  SceneSpec spec;
  spec.height = height;
  spec.width = width;
  spec.history_frames = history_frames;
  spec.regime = regime;
  spec.background_seed = rng();

  auto polar = [&](double lo, double hi) {
    const double speed = uniform(rng, lo, hi);
    const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    return std::pair{speed * std::cos(angle), speed * std::sin(angle)};
  };

  int count = 0;
  switch (regime) {
    case Regime::small: {
      auto [bx, by] = polar(6.0, 8.0);
      spec.background_vx = bx;
      spec.background_vy = by;
      count = uniform_int(rng, 1, 3);
      break;
    }
    case Regime::large: {
      auto [bx, by] = polar(4.0, 10.0);
      spec.background_vx = bx;
      spec.background_vy = by;
      count = uniform_int(rng, 1, 3);
      break;
    }
    case Regime::occluding: {
      auto [bx, by] = polar(0.0, 4.0);
      spec.background_vx = bx;
      spec.background_vy = by;
      count = uniform_int(rng, 2, 4);
      break;
    }
  }

  const double W = static_cast<double>(width), H = static_cast<double>(height);
  std::vector<int> layers(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) layers[static_cast<std::size_t>(s)] = s + 1;
  for (int s = count - 1; s > 0; --s) std::swap(layers[static_cast<std::size_t>(s)],
                                               layers[static_cast<std::size_t>(uniform_int(rng, 0, s))]);

  for (int s = 0; s < count; ++s) {
    Sprite sp;
    sp.shape = uniform01(rng) < 0.5 ? Sprite::Shape::rectangle : Sprite::Shape::disc;
    sp.texture_seed = rng();
    sp.half_w = sp.shape == Sprite::Shape::disc ? uniform(rng, 6.0, 12.0) : uniform(rng, 6.0, 14.0);
    sp.half_h = sp.shape == Sprite::Shape::disc ? sp.half_w : uniform(rng, 6.0, 14.0);
    double vx = 0, vy = 0;
    if (regime == Regime::small) {
      auto [dx, dy] = polar(0.0, 2.0);
      vx = spec.background_vx + dx;
      vy = spec.background_vy + dy;
    } else if (regime == Regime::large) {
      std::tie(vx, vy) = polar(14.0, 24.0);
    } else {
      std::tie(vx, vy) = polar(6.0, 16.0);
    }
    sp.vx = vx;
    sp.vy = vy;
    double cx = 0, cy = 0;
    if (regime == Regime::occluding) {
      // Anchor positions near the center so that the sprites cross each other.
      cx = uniform(rng, 0.5 * W - 12.0, 0.5 * W + 12.0);
      cy = uniform(rng, 0.5 * H - 12.0, 0.5 * H + 12.0);
    } else {
      cx = uniform(rng, 12.0, W - 12.0);
      cy = uniform(rng, 12.0, H - 12.0);
    }
    sp.x = cx - vx * history_frames;
    sp.y = cy - vy * history_frames;
    sp.layer = layers[static_cast<std::size_t>(s)];
    spec.sprites.push_back(sp);
  }
  return spec;
}

RegimeMix parse_regime_mix(const std::string& text) {
  RegimeMix mix;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    const Regime r = parse_regime(item.substr(0, colon));
    double weight = 1.0;
    if (colon != std::string::npos) {
      try {
        std::size_t used = 0;
        weight = std::stod(item.substr(colon + 1), &used);
        if (used != item.size() - colon - 1) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw std::invalid_argument("bad regime weight in '" + item + "'");
      }
    }
    if (!(weight > 0)) throw std::invalid_argument("regime weight must be positive in '" + item + "'");
    mix.emplace_back(r, weight);
  }
  if (mix.empty()) throw std::invalid_argument("empty regime mix");
  return mix;
}

std::vector<int> regime_counts(const RegimeMix& mix, int count) {
  double total = 0;
  for (const auto& [r, w] : mix) total += w;
  std::vector<int> counts(mix.size());
  std::vector<double> rem(mix.size());
  int assigned = 0;
  for (std::size_t k = 0; k < mix.size(); ++k) {
    const double exact = count * mix[k].second / total;
    counts[k] = static_cast<int>(std::floor(exact));
    rem[k] = exact - counts[k];
    assigned += counts[k];
  }
  while (assigned < count) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < mix.size(); ++k) {
      if (rem[k] > rem[best]) best = k;
    }
    ++counts[best];
    rem[best] = -1;
    ++assigned;
  }
  return counts;
}

std::vector<SampleSequence> make_dataset(const RegimeMix& mix, int count, std::uint64_t seed, Index height,
                                         Index width, int history_frames) {
  if (count < 0) throw std::invalid_argument("dataset count must be >= 0");
  std::vector<Regime> tags;
  const auto counts = regime_counts(mix, count);
  for (std::size_t k = 0; k < mix.size(); ++k) tags.insert(tags.end(), static_cast<std::size_t>(counts[k]), mix[k].first);
  std::mt19937_64 order(derive_seed(seed, ~std::uint64_t{0}));
  for (int k = count - 1; k > 0; --k) {
    std::swap(tags[static_cast<std::size_t>(k)], tags[static_cast<std::size_t>(uniform_int(order, 0, k))]);
  }
  std::vector<SampleSequence> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    char id[16];
    std::snprintf(id, sizeof id, "s%05d", k);
    const SceneSpec spec = random_scene(tags[static_cast<std::size_t>(k)],
                                        derive_seed(seed, static_cast<std::uint64_t>(k)), height, width,
                                        history_frames);
    out.push_back(generate_sequence(spec, id));
  }
  return out;
}

std::uint64_t dataset_checksum(const std::vector<SampleSequence>& samples) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& s : samples) {
    hash_bytes(h, s.id.data(), s.id.size());
    const std::string tag = to_string(s.regime);
    hash_bytes(h, tag.data(), tag.size());
    for (const auto& f : s.frames) hash_tensor(h, f);
    hash_tensor(h, s.flow.data);
    for (const auto& f : s.history_flows) hash_tensor(h, f.data);
    hash_tensor(h, s.occlusion);
    hash_tensor(h, s.valid);
    hash_tensor(h, s.sprite_mask);
  }
  return h;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<SampleSequence>& samples) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError("cannot write " + (dir / "manifest.txt").string());
  const int frames = samples.empty() ? 0 : static_cast<int>(samples.front().frames.size());
  const Index h = samples.empty() ? 0 : samples.front().flow.height();
  const Index w = samples.empty() ? 0 : samples.front().flow.width();
  manifest << "mfrflow-dataset 1 frames=" << frames << " height=" << h << " width=" << w << '\n';
  for (const auto& s : samples) {
    const auto sd = dir / s.id;
    std::filesystem::create_directories(sd);
    for (std::size_t k = 0; k < s.frames.size(); ++k) {
      write_ppm(sd / ("frame_" + std::to_string(k) + ".ppm"), to_rgb8(s.frames[k]));
    }
    write_flo(sd / "flow.flo", to_float_flow(s.flow));
    for (std::size_t n = 0; n < s.history_flows.size(); ++n) {
      write_flo(sd / ("flow_hist_" + std::to_string(n + 1) + ".flo"), to_float_flow(s.history_flows[n]));
    }
    write_pgm(sd / "occlusion.pgm", mask_to_gray(s.occlusion));
    write_pgm(sd / "valid.pgm", mask_to_gray(s.valid));
    write_pgm(sd / "sprite_mask.pgm", mask_to_gray(s.sprite_mask));
    manifest << s.id << ' ' << to_string(s.regime) << '\n';
  }
  if (!manifest) throw FormatError("failed writing manifest in " + dir.string());
}

std::vector<SampleSequence> read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError("cannot open " + (dir / "manifest.txt").string());
  std::string magic, version, line;
  int frames = 0;
  manifest >> magic >> version;
  if (magic != "mfrflow-dataset" || version != "1") throw FormatError("unrecognized manifest in " + dir.string());
  std::getline(manifest, line);
  if (const auto pos = line.find("frames="); pos != std::string::npos) frames = std::atoi(line.c_str() + pos + 7);
  std::vector<SampleSequence> out;
  std::string id, regime;
  while (manifest >> id >> regime) {
    SampleSequence s;
    s.id = id;
    try {
      s.regime = parse_regime(regime);
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what());
    }
    const auto sd = dir / id;
    for (int k = 0; k < frames; ++k) {
      s.frames.push_back(from_rgb8<double>(read_ppm(sd / ("frame_" + std::to_string(k) + ".ppm"))));
    }
    s.flow = to_double_flow(read_flo(sd / "flow.flo"), Direction::forward, 1);
    for (int n = 1; n <= frames - 2; ++n) {
      s.history_flows.push_back(
          to_double_flow(read_flo(sd / ("flow_hist_" + std::to_string(n) + ".flo")), Direction::backward, n));
    }
    s.occlusion = gray_to_mask(read_pgm(sd / "occlusion.pgm"));
    s.valid = gray_to_mask(read_pgm(sd / "valid.pgm"));
    s.sprite_mask = gray_to_mask(read_pgm(sd / "sprite_mask.pgm"));
    out.push_back(std::move(s));
  }
  return out;
}

Mask downsample_mask(const Mask& mask, Index factor) {
  if (mask.rank() != 2 || mask.dim(0) % factor != 0 || mask.dim(1) % factor != 0) {
    throw ShapeError("downsample_mask: dims of " + to_string(mask.shape()) + " not divisible by " +
                     std::to_string(factor));
  }
  const Index h = mask.dim(0) / factor, w = mask.dim(1) / factor;
  Mask out({h, w});
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      Index n = 0;
      for (Index a = 0; a < factor; ++a) {
        for (Index b = 0; b < factor; ++b) n += mask(i * factor + a, j * factor + b) ? 1 : 0;
      }
      out(i, j) = 2 * n >= factor * factor ? 1 : 0;
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> downsample_flow(const Tensor<Scalar>& flow, Index factor) {
  if (flow.rank() != 3 || flow.dim(0) != 2 || flow.dim(1) % factor != 0 || flow.dim(2) % factor != 0) {
    throw ShapeError("downsample_flow: bad flow shape " + to_string(flow.shape()));
  }
  const Index h = flow.dim(1) / factor, w = flow.dim(2) / factor;
  Tensor<Scalar> out({2, h, w});
  const Scalar norm = Scalar(1) / static_cast<Scalar>(factor * factor * factor);
  for (Index c = 0; c < 2; ++c) {
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        Scalar acc = 0;
        for (Index a = 0; a < factor; ++a) {
          for (Index b = 0; b < factor; ++b) acc += flow(c, i * factor + a, j * factor + b);
        }
        out(c, i, j) = acc * norm;
      }
    }
  }
  return out;
}

template Tensor<float> downsample_flow(const Tensor<float>&, Index);
template Tensor<double> downsample_flow(const Tensor<double>&, Index);

}  // namespace mfrflow
