#pragma once

// Central finite-difference gradient checker shared by the unit and
// acceptance suites. It only relies on forward values, never on the
// backward closures it is checking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "signclip/rng.hpp"
#include "signclip/tensor.hpp"

namespace signclip::testing {

using LossBuilder = std::function<Var(Tape&, std::span<const Var>)>;

struct GradcheckReport {
  double worst_excess = 0.0;  // max of |a - n| - (atol + rtol * max(|a|, |n|)), <= 0 when passing
  double worst_abs = 0.0;
  bool ok = true;
};

inline double evaluate(const std::vector<Matrix>& inputs, const LossBuilder& build) {
  Tape tape;
  std::vector<Var> vars;
  for (const Matrix& m : inputs) vars.push_back(tape.constant(m));
  return build(tape, vars).item();
}

inline GradcheckReport gradcheck(const std::vector<Matrix>& inputs, const LossBuilder& build, double eps = 1e-5,
                                 double rtol = 1e-4, double atol = 1e-7) {
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const Matrix& m : inputs) leaves.emplace_back(m, true);
  Tape tape;
  std::vector<Var> vars;
  for (Tensor& t : leaves) vars.push_back(tape.leaf(t));
  tape.backward(build(tape, vars));

  GradcheckReport report;
  report.worst_excess = -1.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix& analytic = leaves[k].grad();
    for (Index i = 0; i < inputs[k].size(); ++i) {
      std::vector<Matrix> plus = inputs, minus = inputs;
      plus[k].data()[i] += eps;
      minus[k].data()[i] -= eps;
      const double numeric = (evaluate(plus, build) - evaluate(minus, build)) / (2.0 * eps);
      const double a = analytic.data()[i];
      const double diff = std::abs(a - numeric);
      const double excess = diff - (atol + rtol * std::max(std::abs(a), std::abs(numeric)));
      report.worst_excess = std::max(report.worst_excess, excess);
      report.worst_abs = std::max(report.worst_abs, diff);
      if (excess > 0.0) report.ok = false;
    }
  }
  return report;
}

/// Reduces an arbitrary-shaped output to a scalar with fixed random weights,
/// so every output entry contributes a distinct gradient direction.
inline Var weighted_sum(Var out, std::uint64_t seed) {
  Rng rng(seed, 0xC0FFEE);
  Var w = out.tape()->constant(rng.normal_matrix(out.rows(), out.cols(), 1.0));
  return sum(mul(out, w));
}

}  // namespace signclip::testing
