#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>

#include "rja/core/tensor.hpp"

namespace rja {

struct GradCheckOptions {
  double step = 1e-5;  // central-difference half width h
  double tol = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
  // gradients that are zero up to rounding from dominating the report.
  double floor = 1e-6;
};

struct GradCheckReport {
  bool pass = false;
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  std::string failure;  // set when an evaluation was non-finite
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares the analytic gradient of a scalar function against central
/// differences (f(x+h) - f(x-h)) / 2h for every entry of every parameter.
/// `f` must rebuild its graph from the current parameter values on each call.
inline GradCheckReport grad_check(const std::function<Tensor()>& f,
                                  std::span<const NamedTensor> params,
                                  const GradCheckOptions& opts = {}) {
  if (!(opts.step > 0.0)) throw ContractError("grad_check: step h must be > 0");
  if (!(opts.tol >= 0.0)) throw ContractError("grad_check: tolerance must be >= 0");

  GradCheckReport report;
  std::vector<Tensor> handles;
  for (const auto& p : params) {
    handles.push_back(p.tensor);
    handles.back().zero_grad();
  }

  std::vector<Matrix> analytic;
  try {
    Tensor root = f();
    backward(root);
  } catch (const NumericError& e) {
    report.failure = std::string("analytic pass: ") + e.what();
    return report;
  }
  for (const auto& h : handles) analytic.push_back(h.grad());

  NoGradGuard no_grad;
  for (std::size_t k = 0; k < handles.size(); ++k) {
    Matrix& value = handles[k].mutable_value();
    for (Eigen::Index idx = 0; idx < value.size(); ++idx) {
      double& entry = value.data()[idx];
      const double saved = entry;
      double plus = 0.0;
      double minus = 0.0;
      try {
        entry = saved + opts.step;
        plus = f().item();
        entry = saved - opts.step;
        minus = f().item();
      } catch (const NumericError& e) {
        entry = saved;
        report.failure = params[k].name + "[" + std::to_string(idx) + "]: " + e.what();
        report.worst_param = params[k].name;
        report.worst_index = idx;
        report.pass = false;
        return report;
      }
      entry = saved;
      const double numeric = (plus - minus) / (2.0 * opts.step);
      const double a = analytic[k].data()[idx];
      const double err = relative_error(a, numeric, opts.floor);
      ++report.entries_checked;
      if (err > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = err;
        report.worst_param = params[k].name;
        report.worst_index = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.pass = report.max_rel_error <= opts.tol;
  return report;
}

}  // namespace rja
