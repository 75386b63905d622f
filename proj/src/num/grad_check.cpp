#include "hexlink/num/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "hexlink/errors.hpp"

namespace hexlink::num {

namespace {

double evaluate(const LossClosure& loss) {
  Tape tape;
  const double v = loss(tape).value()(0, 0);
  if (!std::isfinite(v)) throw NumericGuardError("non-finite loss during gradient check");
  return v;
}

}  // namespace

GradCheckReport grad_check(const LossClosure& loss, const std::vector<Param*>& params,
                           const GradCheckOptions& options) {
  if (!(options.h >= 1e-7 && options.h <= 1e-3)) throw ConfigError("grad_check step must lie in [1e-7, 1e-3]");

  for (Param* p : params) p->zero_grad();
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
  }

  GradCheckReport report;
  report.passed = true;
  for (Param* p : params) {
    ParamGradError e;
    e.name = p->name();
    e.frozen = p->frozen;
    e.max_abs_grad = p->grad().max_abs();
    if (!p->frozen) {
      const Tensor2 analytic = p->grad();
      for (std::size_t i = 0; i < p->value().size(); ++i) {
        const double orig = p->value()[i];
        p->value()[i] = orig + options.h;
        const double up = evaluate(loss);
        p->value()[i] = orig - options.h;
        const double down = evaluate(loss);
        p->value()[i] = orig;
        const double numeric = (up - down) / (2.0 * options.h);
        const double abs_err = std::abs(analytic[i] - numeric);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
        e.max_abs_error = std::max(e.max_abs_error, abs_err);
        e.max_rel_error = std::max(e.max_rel_error, abs_err / denom);
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    if (e.max_rel_error >= options.tol) report.passed = false;
    report.params.push_back(std::move(e));
  }
  return report;
}

}  // namespace hexlink::num
