#include "mfrflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mfrflow {

namespace {

template <typename Scalar>
Scalar evaluate(const ScalarFunction<Scalar>& f, const std::vector<Tensor<Scalar>>& inputs) {
  Tape<Scalar> tape;
  std::vector<Var<Scalar>> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return f(tape, vars).value()[0];
}

}  // namespace

template <typename Scalar>
Scalar finite_diff_check(const ScalarFunction<Scalar>& f, const std::vector<Tensor<Scalar>>& inputs,
                         Scalar eps) {
  Tape<Scalar> tape;
  std::vector<Var<Scalar>> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  Var<Scalar> out = f(tape, vars);
  if (out.value().size() != 1) throw ShapeError("finite_diff_check: function must be scalar-valued");
  tape.backward(out);

  Scalar worst = 0;
  std::vector<Tensor<Scalar>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<Scalar> analytic = vars[k].grad();
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const Scalar x = inputs[k][i];
      probe[k][i] = x + eps;
      const Scalar up = evaluate(f, probe);
      probe[k][i] = x - eps;
      const Scalar down = evaluate(f, probe);
      probe[k][i] = x;
      const Scalar numeric = (up - down) / (Scalar(2) * eps);
      const Scalar a = analytic[i];
      const Scalar denom = std::max({std::abs(a), std::abs(numeric), Scalar(1e-8)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

template float finite_diff_check(const ScalarFunction<float>&, const std::vector<Tensor<float>>&, float);
template double finite_diff_check(const ScalarFunction<double>&, const std::vector<Tensor<double>>&, double);

}  // namespace mfrflow
