#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "llpdc/classifier.hpp"

namespace oracle {

/// Central differences of `loss` with respect to every parameter value.
inline std::vector<double> numeric_gradient(llpdc::ClassifierParams params,
                                            const std::function<double(const llpdc::ClassifierParams&)>& loss,
                                            double eps = 1e-5) {
  std::vector<double*> slots;
  params.for_each_value([&](double& v) { slots.push_back(&v); });
  std::vector<double> grad(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double saved = *slots[i];
    *slots[i] = saved + eps;
    const double up = loss(params);
    *slots[i] = saved - eps;
    const double down = loss(params);
    *slots[i] = saved;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

inline std::vector<double> flatten(const llpdc::ClassifierParams& params) {
  std::vector<double> out;
  params.for_each_value([&](double v) { out.push_back(v); });
  return out;
}

/// Max |a - n| / max(|a|, |n|) over entries where either side exceeds `floor`.
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                 double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    if (scale <= floor) continue;
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

}  // namespace oracle
