#pragma once

#include "mfrflow/autodiff.hpp"

#include <functional>
#include <vector>

namespace mfrflow {

/// Scalar-valued function of the given inputs, built on a fresh tape.
template <typename Scalar>
using ScalarFunction = std::function<Var<Scalar>(Tape<Scalar>&, const std::vector<Var<Scalar>>&)>;

/// Compares the tape gradient of `f` with central differences
/// (f(x+eps) - f(x-eps)) / 2eps for every input coordinate and returns the
/// largest |a - n| / max(|a|, |n|, 1e-8).
template <typename Scalar>
Scalar finite_diff_check(const ScalarFunction<Scalar>& f, const std::vector<Tensor<Scalar>>& inputs,
                         Scalar eps);

}  // namespace mfrflow
