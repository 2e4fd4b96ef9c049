#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "madl/diffnet.hpp"

namespace madl::testing {

struct GradMismatch {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

// Central differences against reverse-mode gradients for every scalar in
// `params`. Returns the worst entry by relative error, with a small absolute
// floor so that near-zero gradients are compared absolutely.
inline GradMismatch gradcheck(diffnet::ParameterSet& params,
                              const std::function<diffnet::Tensor()>& loss_fn, double step = 1e-5,
                              double floor = 1e-6) {
  params.zero_grad();
  diffnet::backward(loss_fn());
  GradMismatch worst;
  worst.rel_error = -1.0;
  for (const auto& p : params.items()) {
    diffnet::Tensor t = p.tensor;
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.size(), 0.0);
    auto values = t.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss_fn().item();
      values[i] = saved - step;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double rel =
          std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      if (rel > worst.rel_error) worst = {p.name, i, analytic[i], numeric, rel};
    }
  }
  return worst;
}

}  // namespace madl::testing
