#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hexlink/num/tape.hpp"

namespace hexlink::num {

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double max_abs_grad = 0.0;
  bool frozen = false;
};

struct GradCheckReport {
  std::vector<ParamGradError> params;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-6;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
};

// Builds a scalar (1x1) loss on the given tape.
using LossClosure = std::function<Var(Tape&)>;

// Compares tape gradients of `loss` against central differences for every
// entry of every listed parameter. Frozen parameters report zero gradient and
// are not compared.
GradCheckReport grad_check(const LossClosure& loss, const std::vector<Param*>& params,
                           const GradCheckOptions& options = {});

}  // namespace hexlink::num
