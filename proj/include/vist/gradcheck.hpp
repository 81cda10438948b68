#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vist/tensor.hpp"

namespace vist {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error. Gradient entries smaller than
  // this are compared on an absolute scale, where central differences cannot
  // resolve a relative error anyway.
  double relative_floor = 1e-3;
};

struct TensorGradReport {
  std::string name;
  std::size_t elements = 0;
  double worst_relative = 0.0;
  double worst_absolute = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<TensorGradReport> tensors;
  double worst_relative = 0.0;
  bool passed = true;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of `loss_fn` with central finite
/// differences for every element of every named tensor. `loss_fn` must build
/// its graph from the given tensors and return a scalar.
inline GradCheckReport check_gradients(
    const std::vector<std::pair<std::string, Tensor<double>>>& params,
    const std::function<Tensor<double>()>& loss_fn, const GradCheckOptions& opts = {}) {
  for (auto [name, t] : params) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape<double> tape;
    Tensor<double> loss;
    {
      auto rec = tape.record();
      loss = loss_fn();
    }
    tape.backward(loss);
  }

  GradCheckReport report;
  for (auto [name, t] : params) {
    TensorGradReport tr;
    tr.name = name;
    tr.elements = t.size();
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + opts.step;
      const double plus = loss_fn().item();
      data[i] = saved - opts.step;
      const double minus = loss_fn().item();
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * opts.step);
      tr.worst_relative =
          std::max(tr.worst_relative, relative_error(analytic[i], numeric, opts.relative_floor));
      tr.worst_absolute = std::max(tr.worst_absolute, std::abs(analytic[i] - numeric));
    }
    tr.passed = tr.worst_relative <= opts.tolerance;
    report.worst_relative = std::max(report.worst_relative, tr.worst_relative);
    report.passed = report.passed && tr.passed;
    report.tensors.push_back(std::move(tr));
  }
  return report;
}

}  // namespace vist
