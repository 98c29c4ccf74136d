#include "pptlab/gradcheck.hpp"

#include <cmath>
#include <string>

#include "pptlab/errors.hpp"

namespace pptlab::ad {

namespace {

double evaluate(const Objective& f, std::vector<Tensor*>& params) {
  Tape tape;
  const double v = f(tape, params).value().data.at(0);
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite objective value");
  return v;
}

}  // namespace

GradCheckResult grad_check(const Objective& f, std::vector<Tensor*> params, double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  std::vector<std::vector<double>> saved;
  for (Tensor* p : params) {
    saved.push_back(p->grad);
    p->grad.assign(p->size(), 0.0);
  }
  {
    Tape tape;
    Var out = f(tape, params);
    if (!std::isfinite(out.value().data.at(0))) throw NumericError("grad_check: non-finite objective value");
    tape.backward(out);
  }
  std::vector<std::vector<double>> backprop;
  for (std::size_t i = 0; i < params.size(); ++i) {
    backprop.push_back(params[i]->grad);
    params[i]->grad = saved[i];
  }

  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double original = p.data[j];
      p.data[j] = original + eps;
      const double plus = evaluate(f, params);
      p.data[j] = original - eps;
      const double minus = evaluate(f, params);
      p.data[j] = original;
      const double fd = (plus - minus) / (2.0 * eps);
      const double bp = backprop[i][j];
      if (!std::isfinite(bp)) throw NumericError("grad_check: non-finite backprop gradient");
      const double err = std::abs(fd - bp) / std::max(1e-8, std::abs(fd) + std::abs(bp));
      if (err > result.max_relative_error || (i == 0 && j == 0)) {
        result = {std::max(err, result.max_relative_error), i, j, fd, bp};
      }
    }
  }
  return result;
}

}  // namespace pptlab::ad
