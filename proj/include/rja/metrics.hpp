#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rja/config.hpp"
#include "rja/core/tensor.hpp"

namespace rja {

namespace detail {
inline bool is_degenerate_variance(double var, double mean) {
  return !(var > 1e-24 * std::max(1.0, mean * mean));
}
}  // namespace detail

/// Concordance correlation coefficient with population (1/n) moments:
///   2 cov(x, y) / (var x + var y + (mean x - mean y)^2).
/// Throws MetricError when n < 2 or the label sequence is constant.
template <typename DerivedX, typename DerivedY>
double ccc(const Eigen::DenseBase<DerivedX>& pred, const Eigen::DenseBase<DerivedY>& label) {
  const Eigen::Index n = pred.size();
  if (n != label.size()) throw DimensionError("ccc: sequences differ in length");
  if (n < 2) throw MetricError("ccc: needs at least 2 samples");
  const auto x = pred.derived().reshaped().template cast<double>().eval();
  const auto y = label.derived().reshaped().template cast<double>().eval();
  const double mx = x.mean();
  const double my = y.mean();
  const auto xc = (x.array() - mx).eval();
  const auto yc = (y.array() - my).eval();
  const double vx = xc.square().mean();
  const double vy = yc.square().mean();
  if (detail::is_degenerate_variance(vy, my)) throw MetricError("ccc: label variance is zero");
  const double cov = (xc * yc).mean();
  const double dm = mx - my;
  return 2.0 * cov / (vx + vy + dm * dm);
}

/// Pearson correlation (population moments). Returns 0 when pred is constant.
template <typename DerivedX, typename DerivedY>
double pearson(const Eigen::DenseBase<DerivedX>& pred, const Eigen::DenseBase<DerivedY>& label) {
  const Eigen::Index n = pred.size();
  if (n != label.size()) throw DimensionError("pearson: sequences differ in length");
  if (n < 2) throw MetricError("pearson: needs at least 2 samples");
  const auto x = pred.derived().reshaped().template cast<double>().eval();
  const auto y = label.derived().reshaped().template cast<double>().eval();
  const auto xc = (x.array() - x.mean()).eval();
  const auto yc = (y.array() - y.mean()).eval();
  const double vx = xc.square().mean();
  const double vy = yc.square().mean();
  if (detail::is_degenerate_variance(vy, y.mean())) throw MetricError("pearson: label variance is zero");
  if (vx <= 0.0) return 0.0;
  return (xc * yc).mean() / std::sqrt(vx * vy);
}

struct EvalReport {
  std::vector<double> ccc;      // per output dimension
  std::vector<double> pearson;  // per output dimension
  double mse = 0.0;             // over all entries
  std::size_t n = 0;            // clips evaluated

  double mean_ccc() const;
};

/// Column-wise metrics of an n x m prediction against labels.
EvalReport evaluate_predictions(const Matrix& pred, const Matrix& label);

enum class LossKind { ccc, mse };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

/// (1/m) * sum over columns of (1 - ccc), moments pooled over all rows.
/// Throws MetricError if a label column is constant over the batch.
Tensor ccc_loss(const Tensor& pred, const Matrix& label);

/// Mean squared error over all entries.
Tensor mse_loss(const Tensor& pred, const Matrix& label);

Tensor regression_loss(LossKind kind, const Tensor& pred, const Matrix& label);

/// Identifies the run an EvalReport row belongs to.
struct EvalRowContext {
  std::string config_hash;
  int recursion_depth = 1;
  bool use_u_blstm = false;
  bool use_j_blstm = false;
  bool weight_sharing = false;
};

/// CSV header: config_hash,t,use_u_blstm,use_j_blstm,weight_sharing,ccc_valence,ccc_arousal,mse,n
std::string eval_csv_header();

/// One CSV row. ccc_arousal is left empty for single-output runs.
std::string eval_csv_row(const EvalRowContext& ctx, const EvalReport& report);

}  // namespace rja
