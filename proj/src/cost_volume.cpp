#include "mfrflow/cost_volume.hpp"

#include "mfrflow/ops.hpp"

#include <ostream>

namespace mfrflow {

template <typename Scalar>
Var<Scalar> build_cost_volume(const FeatureMap<Scalar>& f_t, const FeatureMap<Scalar>& f_next,
                              Scalar scale_factor) {
  const Shape& a = f_t.data.shape();
  const Shape& b = f_next.data.shape();
  if (a.size() != 3) throw ShapeError("cost volume: features must be [D,H,W], got " + to_string(a));
  require_same_shape(a, b, "cost volume");
  const Index d = a[0], h = a[1], w = a[2], hw = h * w;

  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> fa(f_t.data.value().data(), d, hw);
  Eigen::Map<const Mat> fb(f_next.data.value().data(), d, hw);
  Tensor<Scalar> out({h, w, h, w});
  Eigen::Map<Mat> c(out.data(), hw, hw);
  c.noalias() = fa.transpose() * fb;
  c *= scale_factor;

  const std::size_t ia = f_t.data.id(), ib = f_next.data.id();
  return f_t.data.tape().record(
      std::move(out), {f_t.data, f_next.data}, [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        Eigen::Map<const Mat> gc(g.data(), hw, hw);
        if (auto* ga = t.grad_buffer(ia)) {
          Eigen::Map<const Mat> fb(t.value(ib).data(), d, hw);
          Eigen::Map<Mat>(ga->data(), d, hw).noalias() += scale_factor * (fb * gc.transpose());
        }
        if (auto* gb = t.grad_buffer(ib)) {
          Eigen::Map<const Mat> fa(t.value(ia).data(), d, hw);
          Eigen::Map<Mat>(gb->data(), d, hw).noalias() += scale_factor * (fa * gc);
        }
      });
}

template <typename Scalar>
CostVolumePyramid<Scalar> build_pyramid(const Var<Scalar>& volume, int levels, Scalar scale_factor) {
  const Shape& s = volume.shape();
  if (s.size() != 4) throw ShapeError("pyramid: volume must be [H,W,H,W], got " + to_string(s));
  if (levels < 1) throw ShapeError("pyramid: levels must be >= 1");
  const Index div = Index{1} << (levels - 1);
  if (s[2] % div != 0 || s[3] % div != 0) {
    throw ShapeError("pyramid: trailing dims " + to_string(s) + " not divisible by 2^" +
                     std::to_string(levels - 1));
  }
  CostVolumePyramid<Scalar> pyr;
  pyr.scale_factor = scale_factor;
  pyr.levels.push_back(volume);
  for (int l = 1; l < levels; ++l) pyr.levels.push_back(avg_pool2(pyr.levels.back()));
  return pyr;
}

template <typename Scalar>
void write_volume_slice_csv(std::ostream& os, const Tensor<Scalar>& volume, Index i, Index j) {
  if (volume.rank() != 4) throw ShapeError("volume slice: expected rank-4 volume");
  os << "k,l,value\n";
  for (Index k = 0; k < volume.dim(2); ++k) {
    for (Index l = 0; l < volume.dim(3); ++l) os << k << ',' << l << ',' << volume(i, j, k, l) << '\n';
  }
}

#define MFRFLOW_INSTANTIATE_CV(S)                                                                \
  template Var<S> build_cost_volume(const FeatureMap<S>&, const FeatureMap<S>&, S);              \
  template CostVolumePyramid<S> build_pyramid(const Var<S>&, int, S);                            \
  template void write_volume_slice_csv(std::ostream&, const Tensor<S>&, Index, Index);

MFRFLOW_INSTANTIATE_CV(float)
MFRFLOW_INSTANTIATE_CV(double)
MFRFLOW_INSTANTIATE_CV(long double)

}  // namespace mfrflow
