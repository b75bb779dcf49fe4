#include "mfrflow/checkpoint.hpp"
#include "mfrflow/flow_io.hpp"
#include "mfrflow/metrics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <unistd.h>

using namespace mfrflow;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("mfrflow_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

FlowField<double> constant_flow(Index h, Index w, double u, double v) {
  Tensor<double> t({2, h, w});
  for (Index i = 0; i < h * w; ++i) {
    t[i] = u;
    t[h * w + i] = v;
  }
  return FlowField<double>(t);
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// HSV hue in degrees of an RGB triple.
double hue(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  double h = 0;
  if (d == 0) return 0;
  if (mx == r) h = std::fmod((g - b) / d, 6.0);
  else if (mx == g) h = (b - r) / d + 2;
  else h = (r - g) / d + 4;
  h *= 60;
  return h < 0 ? h + 360 : h;
}

}  // namespace

TEST_CASE("epe examples") {
  const Mask all({4, 4}, 1);
  const auto gt = constant_flow(4, 4, 1.5, -2.0);
  CHECK(epe(gt, gt, all).value == 0.0);
  CHECK(epe(constant_flow(4, 4, 4.5, 2.0), gt, all).value == doctest::Approx(5.0));
  FlowField<double> half = gt;
  for (Index i = 0; i < 8; ++i) half.data[i] += 1.0;
  CHECK(epe(half, gt, all).value == doctest::Approx(0.5));

  const MetricValue none = epe(gt, gt, Mask({4, 4}, 0));
  CHECK_FALSE(none.defined);
  CHECK(std::isnan(none.value));
  CHECK_THROWS_AS(epe(constant_flow(2, 4, 0, 0), gt, all), ShapeError);
}

TEST_CASE("fl_all examples") {
  const Mask all({3, 3}, 1);
  const auto unit = constant_flow(3, 3, 1, 0);
  CHECK(fl_all(unit, unit, all).value == 0.0);
  CHECK(fl_all(constant_flow(3, 3, 11, 0), unit, all).value == doctest::Approx(100.0));
  // 4 px error on a 100 px flow: above 3 px but below 5% of the magnitude.
  const auto big = constant_flow(3, 3, 100, 0);
  CHECK(fl_all(constant_flow(3, 3, 104, 0), big, all).value == 0.0);
  CHECK(fl_all(constant_flow(3, 3, 106, 0), big, all).value == doctest::Approx(100.0));
  Mask one({3, 3}, 0);
  one[4] = 1;
  FlowField<double> mixed = unit;
  mixed.data[4] = 20;
  CHECK(fl_all(mixed, unit, one).value == doctest::Approx(100.0));
  CHECK(fl_all(mixed, unit, all).value == doctest::Approx(100.0 / 9));
  CHECK_FALSE(fl_all(unit, unit, Mask({3, 3}, 0)).defined);
}

TEST_CASE("epe is invariant under a common pixel permutation") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Index h = 5, w = 7, n = h * w;
    FlowField<double> pred(oracle::random_tensor<double>(rng, {2, h, w}, -10, 10));
    FlowField<double> gt(oracle::random_tensor<double>(rng, {2, h, w}, -10, 10));
    Mask valid({h, w});
    for (auto& v : valid.values()) v = uniform01(rng) < 0.7;
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    FlowField<double> pp = pred, pg = gt;
    Mask pv = valid;
    for (Index k = 0; k < n; ++k) {
      const Index src = perm[static_cast<std::size_t>(k)];
      for (Index c = 0; c < 2; ++c) {
        pp.data[c * n + k] = pred.data[c * n + src];
        pg.data[c * n + k] = gt.data[c * n + src];
      }
      pv[k] = valid[src];
    }
    CHECK(epe(pp, pg, pv).value == doctest::Approx(epe(pred, gt, valid).value).epsilon(1e-12));
    CHECK(fl_all(pp, pg, pv).value == doctest::Approx(fl_all(pred, gt, valid).value));
  }
}

TEST_CASE("fl_all does not decrease as a constant error grows") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    FlowField<double> gt(oracle::random_tensor<double>(rng, {2, 6, 6}, -20, 20));
    const Mask all({6, 6}, 1);
    const double ex = uniform(rng, -1, 1), ey = uniform(rng, -1, 1);
    double prev = -1;
    for (double s = 0; s <= 30; s += 0.5) {
      FlowField<double> pred = gt;
      for (Index i = 0; i < 36; ++i) {
        pred.data[i] += s * ex;
        pred.data[36 + i] += s * ey;
      }
      const double f = fl_all(pred, gt, all).value;
      CHECK(f >= prev);
      CHECK(f >= 0.0);
      CHECK(f <= 100.0);
      prev = f;
    }
  }
}

TEST_CASE("eval report") {
  EvalReport rep;
  rep.rows.push_back({"a", "small", {1.0, true}, {10.0, true}, {1.0, 0.5}, {1.0, 0.75}});
  rep.rows.push_back({"b", "large", {3.0, true}, {30.0, true}, {0.5, 0.25}, {1.0, 0.25}});
  rep.rows.push_back({"c", "large", {}, {}, {1.0, 1.0}, {1.0, 1.0}});
  rep.finalize();
  CHECK(rep.mean_epe == doctest::Approx(2.0));
  CHECK(rep.fl_all == doctest::Approx(20.0));
  CHECK(rep.nzr_baseline[1] == doctest::Approx(1.75 / 3));
  const std::string csv = rep.to_csv();
  CHECK(csv.rfind("sample_id,regime,epe,fl_all,nzr_baseline_l1,nzr_baseline_l2,nzr_recovered_l1", 0) == 0);
  CHECK(csv.find("\nc,large,nan,nan,") != std::string::npos);
  CHECK(csv.find("\nmean,all,2,20,") != std::string::npos);
}

TEST_CASE("flow color wheel") {
  const auto white = flow_to_color(FlowField<double>::zeros(3, 3));
  CHECK((white.array() == 255).all());

  // atan2(-0, -u) = -pi selects the first entry of the 55-color wheel: red.
  const auto east = flow_to_color(constant_flow(1, 1, 2.5, 0), 2.5);
  CHECK(east(0, 0, 0) == 255);
  CHECK(east(0, 0, 1) == 0);
  CHECK(east(0, 0, 2) == 0);

  const int steps = 360;
  Tensor<double> ring({2, 1, steps});
  for (int k = 0; k < steps; ++k) {
    const double a = 2 * std::numbers::pi * k / steps;
    ring(0, 0, k) = std::cos(a);
    ring(1, 0, k) = std::sin(a);
  }
  const auto img = flow_to_color(FlowField<double>(ring), 1.0);
  double travelled = 0;
  double prev = hue(img(0, 0, 0), img(0, 0, 1), img(0, 0, 2));
  for (int k = 1; k <= steps; ++k) {
    const int j = k % steps;
    const double h = hue(img(0, j, 0), img(0, j, 1), img(0, j, 2));
    double d = h - prev;
    if (d > 180) d -= 360;
    if (d < -180) d += 360;
    CHECK(std::abs(d) < 20);
    travelled += d;
    prev = h;
  }
  CHECK(std::abs(std::abs(travelled) - 360.0) < 1e-9);

  // Beyond the maximum magnitude colors are darkened.
  const auto dark = flow_to_color(constant_flow(1, 1, 5, 0), 2.5);
  CHECK(static_cast<int>(dark(0, 0, 0)) < 255);
}

TEST_CASE("heatmap and epe map") {
  Tensor<double> v({1, 3}, {0.0, 1.0, 2.0});
  const auto hm = heatmap(v);
  CHECK(hm.shape() == Shape{1, 3, 3});
  CHECK(hm(0, 0, 0) == 0);
  CHECK(hm(0, 2, 0) == 255);
  const auto m = epe_map(constant_flow(2, 2, 3, 4), FlowField<double>::zeros(2, 2));
  CHECK(m.shape() == Shape{2, 2});
  CHECK(m(1, 1) == doctest::Approx(5.0));
}

TEST_CASE(".flo format") {
  const fs::path dir = temp_dir("flo");
  SUBCASE("1x1 file is 20 bytes") {
    FlowField<float> f(Tensor<float>({2, 1, 1}, {1.0f, 2.0f}));
    write_flo(dir / "one.flo", f);
    CHECK(fs::file_size(dir / "one.flo") == 20);
    std::ifstream in(dir / "one.flo", std::ios::binary);
    char bytes[20];
    in.read(bytes, 20);
    CHECK(std::string(bytes, 4) == "PIEH");
    std::int32_t w = 0, h = 0;
    float u = 0, v = 0;
    std::memcpy(&w, bytes + 4, 4);
    std::memcpy(&h, bytes + 8, 4);
    std::memcpy(&u, bytes + 12, 4);
    std::memcpy(&v, bytes + 16, 4);
    CHECK(w == 1);
    CHECK(h == 1);
    CHECK(u == 1.0f);
    CHECK(v == 2.0f);
  }
  SUBCASE("round trip is bit exact") {
    std::mt19937_64 rng(11);
    for (int k = 0; k < 100; ++k) {
      const Index h = uniform_int(rng, 1, 9), w = uniform_int(rng, 1, 9);
      FlowField<float> f(oracle::random_tensor<float>(rng, {2, h, w}, -50, 50));
      write_flo(dir / "r.flo", f);
      const auto back = read_flo(dir / "r.flo");
      REQUIRE(back.data.shape() == f.data.shape());
      CHECK(std::memcmp(back.data.data(), f.data.data(), sizeof(float) * f.data.size()) == 0);
    }
  }
  SUBCASE("malformed files") {
    write_bytes(dir / "bad.flo", std::string("XXXX") + std::string(16, '\0'));
    CHECK_THROWS_AS(read_flo(dir / "bad.flo"), FormatError);
    FlowField<float> f(Tensor<float>({2, 2, 2}, 1.0f));
    write_flo(dir / "t.flo", f);
    fs::resize_file(dir / "t.flo", 25);
    CHECK_THROWS_AS(read_flo(dir / "t.flo"), FormatError);
    CHECK_THROWS_AS(read_flo(dir / "absent.flo"), FormatError);
  }
  fs::remove_all(dir);
}

TEST_CASE("images") {
  const fs::path dir = temp_dir("img");
  std::mt19937_64 rng(2);
  const Tensor<double> frame = oracle::random_tensor<double>(rng, {3, 5, 4}, 0, 1);
  const Image8 rgb = to_rgb8(frame);
  write_ppm(dir / "a.ppm", rgb);
  CHECK((read_ppm(dir / "a.ppm").array() == rgb.array()).all());
  const auto back = from_rgb8<double>(rgb);
  CHECK((back.array() - frame.array()).abs().maxCoeff() <= 0.5 / 255 + 1e-12);

  Mask m({3, 2}, 0);
  m[1] = m[4] = 1;
  write_pgm(dir / "m.pgm", mask_to_gray(m));
  CHECK((gray_to_mask(read_pgm(dir / "m.pgm")).array() == m.array()).all());

  write_bytes(dir / "bad.ppm", "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint container") {
  const fs::path dir = temp_dir("ckpt");
  std::mt19937_64 rng(3);
  Parameter<double> a("layer.weight", oracle::random_tensor<double>(rng, {2, 3}));
  Parameter<double> b("layer.bias", oracle::random_tensor<double>(rng, {3}));
  save_parameters<double>(dir / "m.mfrw", {&a, &b});
  Parameter<double> a2("layer.weight", Tensor<double>({2, 3})), b2("layer.bias", Tensor<double>({3}));
  load_parameters<double>(dir / "m.mfrw", {&b2, &a2});
  CHECK((a2.value.array() == a.value.array().cast<float>().cast<double>()).all());
  CHECK((b2.value.array() == b.value.array().cast<float>().cast<double>()).all());

  Parameter<double> wrong("layer.weight", Tensor<double>({3, 2}));
  CHECK_THROWS_AS(load_parameters<double>(dir / "m.mfrw", {&wrong, &b2}), FormatError);
  CHECK_THROWS_AS(load_parameters<double>(dir / "m.mfrw", {&a2}), FormatError);
  write_bytes(dir / "bad.mfrw", "NOPE");
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.mfrw"), FormatError);
  fs::resize_file(dir / "m.mfrw", fs::file_size(dir / "m.mfrw") - 3);
  CHECK_THROWS_AS(load_checkpoint(dir / "m.mfrw"), FormatError);
  fs::remove_all(dir);
}
