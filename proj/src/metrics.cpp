#include "mfrflow/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace mfrflow {

namespace {

template <typename Scalar>
void check_pair(const FlowField<Scalar>& pred, const FlowField<Scalar>& gt, const Mask& valid) {
  require_same_shape(pred.data.shape(), gt.data.shape(), "flow metric");
  require_same_shape(valid.shape(), Shape{gt.height(), gt.width()}, "flow metric mask");
}

/// Standard Middlebury wheel: red-yellow-green-cyan-blue-magenta segments.
std::vector<std::array<double, 3>> color_wheel() {
  constexpr int ry = 15, yg = 6, gc = 4, cb = 11, bm = 13, mr = 6;
  std::vector<std::array<double, 3>> wheel;
  for (int i = 0; i < ry; ++i) wheel.push_back({255, std::floor(255.0 * i / ry), 0});
  for (int i = 0; i < yg; ++i) wheel.push_back({255 - std::floor(255.0 * i / yg), 255, 0});
  for (int i = 0; i < gc; ++i) wheel.push_back({0, 255, std::floor(255.0 * i / gc)});
  for (int i = 0; i < cb; ++i) wheel.push_back({0, 255 - std::floor(255.0 * i / cb), 255});
  for (int i = 0; i < bm; ++i) wheel.push_back({std::floor(255.0 * i / bm), 0, 255});
  for (int i = 0; i < mr; ++i) wheel.push_back({255, 0, 255 - std::floor(255.0 * i / mr)});
  return wheel;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

}  // namespace

template <typename Scalar>
MetricValue epe(const FlowField<Scalar>& pred, const FlowField<Scalar>& gt, const Mask& valid) {
  check_pair(pred, gt, valid);
  double acc = 0;
  Index n = 0;
  for (Index i = 0; i < gt.height(); ++i) {
    for (Index j = 0; j < gt.width(); ++j) {
      if (!valid(i, j)) continue;
      const double du = static_cast<double>(pred.u(i, j)) - static_cast<double>(gt.u(i, j));
      const double dv = static_cast<double>(pred.v(i, j)) - static_cast<double>(gt.v(i, j));
      acc += std::sqrt(du * du + dv * dv);
      ++n;
    }
  }
  if (n == 0) return {};
  return {acc / static_cast<double>(n), true};
}

template <typename Scalar>
MetricValue fl_all(const FlowField<Scalar>& pred, const FlowField<Scalar>& gt, const Mask& valid) {
  check_pair(pred, gt, valid);
  Index n = 0, outliers = 0;
  for (Index i = 0; i < gt.height(); ++i) {
    for (Index j = 0; j < gt.width(); ++j) {
      if (!valid(i, j)) continue;
      const double du = static_cast<double>(pred.u(i, j)) - static_cast<double>(gt.u(i, j));
      const double dv = static_cast<double>(pred.v(i, j)) - static_cast<double>(gt.v(i, j));
      const double err = std::sqrt(du * du + dv * dv);
      const double mag = std::hypot(static_cast<double>(gt.u(i, j)), static_cast<double>(gt.v(i, j)));
      if (err > 3.0 && err > 0.05 * mag) ++outliers;
      ++n;
    }
  }
  if (n == 0) return {};
  return {100.0 * static_cast<double>(outliers) / static_cast<double>(n), true};
}

template <typename Scalar>
Image8 flow_to_color(const FlowField<Scalar>& flow, std::optional<double> max_magnitude) {
  static const auto wheel = color_wheel();
  const auto ncols = static_cast<double>(wheel.size());
  const Index h = flow.height(), w = flow.width();
  double maxrad = 0;
  if (max_magnitude) {
    maxrad = *max_magnitude;
  } else {
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        maxrad = std::max(maxrad, std::hypot(static_cast<double>(flow.u(i, j)),
                                             static_cast<double>(flow.v(i, j))));
      }
    }
  }
  if (maxrad <= 0) maxrad = 1;
  Image8 out({h, w, 3});
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      const double u = static_cast<double>(flow.u(i, j)) / maxrad;
      const double v = static_cast<double>(flow.v(i, j)) / maxrad;
      const double rad = std::sqrt(u * u + v * v);
      const double a = std::atan2(-v, -u) / std::numbers::pi;
      const double fk = (a + 1.0) / 2.0 * (ncols - 1.0);
      const auto k0 = static_cast<std::size_t>(std::floor(fk));
      const std::size_t k1 = (k0 + 1) % wheel.size();
      const double f = fk - static_cast<double>(k0);
      for (int c = 0; c < 3; ++c) {
        double col = ((1.0 - f) * wheel[k0][static_cast<std::size_t>(c)] +
                      f * wheel[k1][static_cast<std::size_t>(c)]) / 255.0;
        col = rad <= 1.0 ? 1.0 - rad * (1.0 - col) : col * 0.75;
        out(i, j, c) = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(col, 0.0, 1.0)));
      }
    }
  }
  return out;
}

Image8 heatmap(const Tensor<double>& values) {
  if (values.rank() != 2) throw ShapeError("heatmap: expected [H,W]");
  const double mx = std::max(values.array().maxCoeff(), 1e-12);
  Image8 out({values.dim(0), values.dim(1), 3});
  for (Index i = 0; i < values.dim(0); ++i) {
    for (Index j = 0; j < values.dim(1); ++j) {
      const double t = std::clamp(values(i, j) / mx, 0.0, 1.0);
      out(i, j, 0) = static_cast<std::uint8_t>(std::lround(255.0 * std::min(1.0, 3.0 * t)));
      out(i, j, 1) = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(3.0 * t - 1.0, 0.0, 1.0)));
      out(i, j, 2) = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(3.0 * t - 2.0, 0.0, 1.0)));
    }
  }
  return out;
}

template <typename Scalar>
Tensor<double> epe_map(const FlowField<Scalar>& pred, const FlowField<Scalar>& gt) {
  require_same_shape(pred.data.shape(), gt.data.shape(), "epe_map");
  Tensor<double> out({gt.height(), gt.width()});
  for (Index i = 0; i < gt.height(); ++i) {
    for (Index j = 0; j < gt.width(); ++j) {
      out(i, j) = std::hypot(static_cast<double>(pred.u(i, j)) - static_cast<double>(gt.u(i, j)),
                             static_cast<double>(pred.v(i, j)) - static_cast<double>(gt.v(i, j)));
    }
  }
  return out;
}

void EvalReport::finalize() {
  double epe_sum = 0, fl_sum = 0;
  Index epe_n = 0, fl_n = 0;
  const std::size_t levels = rows.empty() ? 0 : rows.front().nzr_baseline.size();
  nzr_baseline.assign(levels, 0.0);
  nzr_recovered.assign(levels, 0.0);
  for (const auto& r : rows) {
    if (r.epe.defined) {
      epe_sum += r.epe.value;
      ++epe_n;
    }
    if (r.fl.defined) {
      fl_sum += r.fl.value;
      ++fl_n;
    }
    for (std::size_t l = 0; l < levels; ++l) {
      nzr_baseline[l] += r.nzr_baseline[l] / static_cast<double>(rows.size());
      nzr_recovered[l] += r.nzr_recovered[l] / static_cast<double>(rows.size());
    }
  }
  mean_epe = epe_n ? epe_sum / static_cast<double>(epe_n) : std::numeric_limits<double>::quiet_NaN();
  fl_all = fl_n ? fl_sum / static_cast<double>(fl_n) : std::numeric_limits<double>::quiet_NaN();
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  const std::size_t levels = nzr_baseline.size();
  os << "sample_id,regime,epe,fl_all";
  for (std::size_t l = 0; l < levels; ++l) os << ",nzr_baseline_l" << l + 1;
  for (std::size_t l = 0; l < levels; ++l) os << ",nzr_recovered_l" << l + 1;
  os << '\n';
  for (const auto& r : rows) {
    os << r.sample_id << ',' << r.regime << ',' << fmt(r.epe.value) << ',' << fmt(r.fl.value);
    for (double v : r.nzr_baseline) os << ',' << fmt(v);
    for (double v : r.nzr_recovered) os << ',' << fmt(v);
    os << '\n';
  }
  os << "mean,all," << fmt(mean_epe) << ',' << fmt(fl_all);
  for (double v : nzr_baseline) os << ',' << fmt(v);
  for (double v : nzr_recovered) os << ',' << fmt(v);
  os << '\n';
  return os.str();
}

#define MFRFLOW_INSTANTIATE_METRICS(S)                                                  \
  template MetricValue epe(const FlowField<S>&, const FlowField<S>&, const Mask&);      \
  template MetricValue fl_all(const FlowField<S>&, const FlowField<S>&, const Mask&);   \
  template Image8 flow_to_color(const FlowField<S>&, std::optional<double>);            \
  template Tensor<double> epe_map(const FlowField<S>&, const FlowField<S>&);

MFRFLOW_INSTANTIATE_METRICS(float)
MFRFLOW_INSTANTIATE_METRICS(double)

}  // namespace mfrflow
