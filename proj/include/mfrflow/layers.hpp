#pragma once

#include "mfrflow/ops.hpp"
#include "mfrflow/random.hpp"

#include <cmath>
#include <random>
#include <string>

namespace mfrflow {

/// Convolution with its own weight/bias parameters.
template <typename Scalar>
struct Conv2d {
  Parameter<Scalar> weight;  // [out, in, k, k]
  Parameter<Scalar> bias;    // [out]
  Index stride = 1;
  Index padding = 0;

  Conv2d() = default;

  /// He-uniform weights, bound sqrt(6/fan_in); bias uniform with bound
  /// 1/sqrt(fan_in). The stream is
  /// derived from (seed, name) so layers initialize independently.
  Conv2d(const std::string& name, Index in, Index out, Index kernel, Index stride_, Index padding_,
         std::uint64_t seed)
      : weight(name + ".weight", Tensor<Scalar>::zeros({out, in, kernel, kernel})),
        bias(name + ".bias", Tensor<Scalar>::zeros({out})),
        stride(stride_),
        padding(padding_) {
    std::mt19937_64 rng(derive_seed(seed, fnv1a(name)));
    const double fan_in = static_cast<double>(in * kernel * kernel);
    const double bound = std::sqrt(6.0 / fan_in), bias_bound = 1.0 / std::sqrt(fan_in);
    for (Scalar& v : weight.value.values()) v = static_cast<Scalar>(uniform(rng, -bound, bound));
    for (Scalar& v : bias.value.values()) v = static_cast<Scalar>(uniform(rng, -bias_bound, bias_bound));
  }

  Var<Scalar> operator()(Tape<Scalar>& tape, const Var<Scalar>& x) {
    return conv2d(x, tape.parameter(weight), tape.parameter(bias), stride, padding);
  }

  Index in_channels() const { return weight.value.dim(1); }
  Index out_channels() const { return weight.value.dim(0); }
};

}  // namespace mfrflow
