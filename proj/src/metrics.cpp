#include "rja/metrics.hpp"

#include <numeric>

namespace rja {

double EvalReport::mean_ccc() const {
  if (ccc.empty()) return 0.0;
  return std::accumulate(ccc.begin(), ccc.end(), 0.0) / static_cast<double>(ccc.size());
}

EvalReport evaluate_predictions(const Matrix& pred, const Matrix& label) {
  if (pred.rows() != label.rows() || pred.cols() != label.cols())
    throw DimensionError("evaluate_predictions: prediction " +
                         detail::shape_str(pred.rows(), pred.cols()) + " vs label " +
                         detail::shape_str(label.rows(), label.cols()));
  EvalReport r;
  r.n = static_cast<std::size_t>(pred.rows());
  for (Eigen::Index k = 0; k < pred.cols(); ++k) {
    r.ccc.push_back(ccc(pred.col(k), label.col(k)));
    r.pearson.push_back(pearson(pred.col(k), label.col(k)));
  }
  r.mse = (pred - label).squaredNorm() / static_cast<double>(std::max<Eigen::Index>(1, pred.size()));
  return r;
}

std::string to_string(LossKind kind) { return kind == LossKind::ccc ? "ccc" : "mse"; }

LossKind parse_loss_kind(const std::string& text) {
  if (text == "ccc") return LossKind::ccc;
  if (text == "mse") return LossKind::mse;
  throw ConfigError("unknown loss '" + text + "' (expected ccc or mse)");
}

Tensor ccc_loss(const Tensor& pred, const Matrix& label) {
  if (pred.rows() != label.rows() || pred.cols() != label.cols())
    throw DimensionError("ccc_loss: prediction " + pred.shape() + " vs label " +
                         detail::shape_str(label.rows(), label.cols()));
  const Eigen::Index n = pred.rows();
  const Eigen::Index m = pred.cols();
  if (n < 2) throw MetricError("ccc_loss: needs at least 2 rows; use a larger batch");
  if (m < 1) throw DimensionError("ccc_loss: prediction has no columns");

  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix dpred(n, m);  // d loss / d pred, filled alongside the forward value
  double loss = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto x = pred.value().col(k).array();
    const auto y = label.col(k).array();
    const double mx = x.mean();
    const double my = y.mean();
    const Eigen::ArrayXd xc = x - mx;
    const Eigen::ArrayXd yc = y - my;
    const double vx = xc.square().mean();
    const double vy = yc.square().mean();
    if (detail::is_degenerate_variance(vy, my))
      throw MetricError("ccc_loss: label column " + std::to_string(k) +
                        " is constant over the batch; use a larger batch");
    const double cov = (xc * yc).mean();
    const double dm = mx - my;
    const double denom = vx + vy + dm * dm;
    const double c = 2.0 * cov / denom;
    loss += 1.0 - c;
    // dc/dx_i = 2 yc_i / (n D) - 2 cov / D^2 * (2 xc_i + 2 dm) / n
    const Eigen::ArrayXd dc =
        (2.0 * inv_n / denom) * yc - (4.0 * cov * inv_n / (denom * denom)) * (xc + dm);
    dpred.col(k) = -dc.matrix() / static_cast<double>(m);
  }
  Matrix out(1, 1);
  out(0, 0) = loss / static_cast<double>(m);
  return Tensor::record("ccc_loss", std::move(out), {pred},
                        [dpred = std::move(dpred)](Tensor::Node& self) {
                          self.parents[0]->accumulate(dpred * self.grad(0, 0));
                        });
}

Tensor mse_loss(const Tensor& pred, const Matrix& label) {
  if (pred.rows() != label.rows() || pred.cols() != label.cols())
    throw DimensionError("mse_loss: prediction " + pred.shape() + " vs label " +
                         detail::shape_str(label.rows(), label.cols()));
  if (pred.size() == 0) throw ContractError("mse_loss: empty prediction");
  const double inv = 1.0 / static_cast<double>(pred.size());
  Matrix diff = pred.value() - label;
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() * inv;
  return Tensor::record("mse_loss", std::move(out), {pred},
                        [diff = std::move(diff), inv](Tensor::Node& self) {
                          self.parents[0]->accumulate(diff * (2.0 * inv * self.grad(0, 0)));
                        });
}

Tensor regression_loss(LossKind kind, const Tensor& pred, const Matrix& label) {
  return kind == LossKind::ccc ? ccc_loss(pred, label) : mse_loss(pred, label);
}

std::string eval_csv_header() {
  return "config_hash,t,use_u_blstm,use_j_blstm,weight_sharing,ccc_valence,ccc_arousal,mse,n";
}

std::string eval_csv_row(const EvalRowContext& ctx, const EvalReport& report) {
  std::string row = ctx.config_hash + "," + std::to_string(ctx.recursion_depth) + "," +
                    (ctx.use_u_blstm ? "1" : "0") + "," + (ctx.use_j_blstm ? "1" : "0") + "," +
                    (ctx.weight_sharing ? "1" : "0") + ",";
  row += report.ccc.empty() ? "" : format_double(report.ccc[0]);
  row += ",";
  row += report.ccc.size() > 1 ? format_double(report.ccc[1]) : "";
  row += "," + format_double(report.mse) + "," + std::to_string(report.n);
  return row;
}

}  // namespace rja
