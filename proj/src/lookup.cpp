#include "mfrflow/lookup.hpp"

#include "mfrflow/ops.hpp"

#include <memory>

namespace mfrflow {

template <typename Scalar>
LookupResult<Scalar> lookup_motion_feature(const CostVolumePyramid<Scalar>& pyramid,
                                           const Var<Scalar>& flow, const LookupConfig& cfg,
                                           Direction direction) {
  cfg.validate();
  if (cfg.levels > pyramid.num_levels()) {
    throw ShapeError("lookup: " + std::to_string(cfg.levels) + " levels requested, pyramid has " +
                     std::to_string(pyramid.num_levels()));
  }
  const Shape& v0 = pyramid.levels.front().shape();
  const Index h = v0[0], w = v0[1];
  if (flow.shape() != Shape{2, h, w}) {
    throw ShapeError("lookup: flow must be " + to_string({2, h, w}) + ", got " + to_string(flow.shape()));
  }
  const Index r = cfg.radius, side = cfg.grid_size(), cells = cfg.cells_per_level();
  const Index channels = cfg.channels(), hw = h * w;
  const int levels = cfg.levels;

  Tensor<Scalar> out({channels, h, w});
  Mask valid({channels, h, w});
  const Scalar* fv = flow.value().data();
  const bool track = flow.tape().tracking_branches();
  for (int l = 0; l < levels; ++l) {
    const Tensor<Scalar>& vol = pyramid.levels[static_cast<std::size_t>(l)].value();
    const Index hl = vol.dim(2), wl = vol.dim(3);
    const Scalar inv = Scalar(1) / static_cast<Scalar>(Index{1} << l);
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        const Index p = i * w + j;
        const Scalar cx = (static_cast<Scalar>(j) + fv[p]) * inv;
        const Scalar cy = (static_cast<Scalar>(i) + fv[hw + p]) * inv;
        const Scalar* plane = vol.data() + p * hl * wl;
        for (Index dy = -r; dy <= r; ++dy) {
          for (Index dx = -r; dx <= r; ++dx) {
            const Index ch = l * cells + (dy + r) * side + (dx + r);
            const auto f = detail::footprint(cx + Scalar(dx), cy + Scalar(dy), hl, wl);
            if (track) flow.tape().mix_branch(detail::footprint_branch(f));
            valid[ch * hw + p] = f.in_bounds ? 1 : 0;
            out[ch * hw + p] = f.in_bounds ? detail::sample_plane(plane, hl, wl, f) : Scalar(0);
          }
        }
      }
    }
  }

  std::vector<Var<Scalar>> parents(pyramid.levels.begin(), pyramid.levels.begin() + levels);
  std::vector<std::size_t> level_ids;
  for (const auto& v : parents) level_ids.push_back(v.id());
  parents.push_back(flow);
  const std::size_t flow_id = flow.id();
  auto valid_ptr = std::make_shared<Mask>(valid);

  Var<Scalar> data = flow.tape().record(
      std::move(out), parents, [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        auto* gf = t.grad_buffer(flow_id);
        const Scalar* fv = t.value(flow_id).data();
        for (int l = 0; l < levels; ++l) {
          const std::size_t vid = level_ids[static_cast<std::size_t>(l)];
          auto* gv = t.grad_buffer(vid);
          if (!gv && !gf) continue;
          const Tensor<Scalar>& vol = t.value(vid);
          const Index hl = vol.dim(2), wl = vol.dim(3);
          const Scalar inv = Scalar(1) / static_cast<Scalar>(Index{1} << l);
          for (Index i = 0; i < h; ++i) {
            for (Index j = 0; j < w; ++j) {
              const Index p = i * w + j;
              const Scalar cx = (static_cast<Scalar>(j) + fv[p]) * inv;
              const Scalar cy = (static_cast<Scalar>(i) + fv[hw + p]) * inv;
              const Scalar* plane = vol.data() + p * hl * wl;
              Scalar du = 0, dv = 0;
              for (Index dy = -r; dy <= r; ++dy) {
                for (Index dx = -r; dx <= r; ++dx) {
                  const Index at = (l * cells + (dy + r) * side + (dx + r)) * hw + p;
                  if (!(*valid_ptr)[at]) continue;
                  const Scalar gk = g[at];
                  if (gk == Scalar(0)) continue;
                  const auto f = detail::footprint(cx + Scalar(dx), cy + Scalar(dy), hl, wl);
                  if (gv) detail::scatter_plane(gv->data() + p * hl * wl, hl, wl, f, gk);
                  if (gf) {
                    Scalar sx = 0, sy = 0;
                    detail::sample_plane(plane, hl, wl, f, &sx, &sy);
                    du += gk * sx;
                    dv += gk * sy;
                  }
                }
              }
              if (gf) {
                (*gf)[p] += du * inv;
                (*gf)[hw + p] += dv * inv;
              }
            }
          }
        }
      });
  return {{data, direction}, {std::move(valid)}};
}

double nzr(const ValidityMask& mask) {
  return static_cast<double>(count_true(mask.valid)) / static_cast<double>(mask.valid.size());
}

std::vector<double> nzr_per_level(const ValidityMask& mask, int levels, const Mask* pixels) {
  const Mask& v = mask.valid;
  if (v.rank() != 3 || v.dim(0) % levels != 0) {
    throw ShapeError("nzr: mask " + to_string(v.shape()) + " incompatible with " +
                     std::to_string(levels) + " levels");
  }
  const Index per_level = v.dim(0) / levels, hw = v.dim(1) * v.dim(2);
  if (pixels && pixels->shape() != Shape{v.dim(1), v.dim(2)}) {
    throw ShapeError("nzr: pixel subset must be [H,W]");
  }
  std::vector<double> out;
  for (int l = 0; l < levels; ++l) {
    Index total = 0, good = 0;
    for (Index c = l * per_level; c < (l + 1) * per_level; ++c) {
      for (Index p = 0; p < hw; ++p) {
        if (pixels && !(*pixels)[p]) continue;
        ++total;
        good += v[c * hw + p] ? 1 : 0;
      }
    }
    out.push_back(total ? static_cast<double>(good) / static_cast<double>(total) : 1.0);
  }
  return out;
}

double nzr_over(const ValidityMask& mask, const Mask* pixels) {
  const Mask& v = mask.valid;
  const Index hw = v.dim(1) * v.dim(2);
  Index total = 0, good = 0;
  for (Index c = 0; c < v.dim(0); ++c) {
    for (Index p = 0; p < hw; ++p) {
      if (pixels && !(*pixels)[p]) continue;
      ++total;
      good += v[c * hw + p] ? 1 : 0;
    }
  }
  return total ? static_cast<double>(good) / static_cast<double>(total) : 1.0;
}

template LookupResult<float> lookup_motion_feature(const CostVolumePyramid<float>&, const Var<float>&,
                                                   const LookupConfig&, Direction);
template LookupResult<double> lookup_motion_feature(const CostVolumePyramid<double>&,
                                                    const Var<double>&, const LookupConfig&, Direction);
template LookupResult<long double> lookup_motion_feature(const CostVolumePyramid<long double>&,
                                                         const Var<long double>&, const LookupConfig&,
                                                         Direction);

}  // namespace mfrflow
