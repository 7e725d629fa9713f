#pragma once

// Test-only reference computations. Nothing here calls into the autodiff
// backward pass; these are the independent routes the suites compare against.

#include <Eigen/Dense>

#include <functional>
#include <vector>

#include "rja/core/rng.hpp"
#include "rja/core/tensor.hpp"
#include "rja/data.hpp"
#include "rja/metrics.hpp"

namespace rja::testing {

/// Central-difference gradient of a scalar function of one matrix.
inline Matrix finite_difference(const std::function<double(const Matrix&)>& f, Matrix at,
                                double h = 1e-5) {
  Matrix g(at.rows(), at.cols());
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    const double saved = at.data()[i];
    at.data()[i] = saved + h;
    const double plus = f(at);
    at.data()[i] = saved - h;
    const double minus = f(at);
    at.data()[i] = saved;
    g.data()[i] = (plus - minus) / (2.0 * h);
  }
  return g;
}

/// Max over entries of |a - b| / max(|a|, |b|, floor).
inline double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-8) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i];
    const double y = b.data()[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

/// Uniform [-1, 1) entries, resampled until every |x| >= min_abs.
inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double min_abs = 0.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double v;
    do {
      v = rng.uniform(-1.0, 1.0);
    } while (std::abs(v) < min_abs);
    m.data()[i] = v;
  }
  return m;
}

/// Least-squares linear probe (with intercept) fitted on train and scored on
/// val; returns the mean ccc over label columns.
inline double linear_probe_ccc(const Matrix& train_x, const Matrix& train_y, const Matrix& val_x,
                               const Matrix& val_y) {
  auto design = [](const Matrix& x) {
    Eigen::MatrixXd d(x.rows(), x.cols() + 1);
    d << x, Eigen::VectorXd::Ones(x.rows());
    return d;
  };
  const Eigen::MatrixXd w = design(train_x).colPivHouseholderQr().solve(Eigen::MatrixXd(train_y));
  const Eigen::MatrixXd pred = design(val_x) * w;
  double total = 0.0;
  for (Eigen::Index k = 0; k < val_y.cols(); ++k) total += ccc(pred.col(k), val_y.col(k));
  return total / static_cast<double>(val_y.cols());
}

struct ProbeScores {
  double audio = 0.0;
  double visual = 0.0;
  double joint = 0.0;
};

inline ProbeScores probe_scores(const SplitData& d) {
  auto cat = [](const FeatureSet& fs) {
    Matrix x(fs.n_clips(), fs.audio_dim() + fs.visual_dim());
    x << fs.audio, fs.visual;
    return x;
  };
  return {linear_probe_ccc(d.train.audio, d.train.labels, d.val.audio, d.val.labels),
          linear_probe_ccc(d.train.visual, d.train.labels, d.val.visual, d.val.labels),
          linear_probe_ccc(cat(d.train), d.train.labels, cat(d.val), d.val.labels)};
}

}  // namespace rja::testing
