#include "rja/recurrent.hpp"

namespace rja {

LstmParams LstmParams::init(Eigen::Index input_dim, Eigen::Index hidden, Rng& rng) {
  if (input_dim < 1 || hidden < 1) throw ConfigError("LSTM dimensions must be positive");
  Matrix bias = Matrix::Zero(1, 4 * hidden);
  bias.middleCols(hidden, hidden).setOnes();
  return {Tensor(glorot_uniform(input_dim, 4 * hidden, rng), true),
          Tensor(glorot_uniform(hidden, 4 * hidden, rng), true), Tensor(std::move(bias), true)};
}

LstmParams LstmParams::zeros(Eigen::Index input_dim, Eigen::Index hidden) {
  return {Tensor::zeros(input_dim, 4 * hidden, true), Tensor::zeros(hidden, 4 * hidden, true),
          Tensor::zeros(1, 4 * hidden, true)};
}

void LstmParams::validate() const {
  const Eigen::Index h = W_h.rows();
  if (h < 1 || W_h.cols() != 4 * h || W_x.cols() != 4 * h || b.rows() != 1 || b.cols() != 4 * h)
    throw DimensionError("LSTM parameters do not agree: W_x " + W_x.shape() + ", W_h " +
                         W_h.shape() + ", b " + b.shape());
}

LstmState lstm_step(const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev,
                    const LstmParams& p) {
  const Eigen::Index h = p.hidden();
  if (x_t.rows() != 1 || x_t.cols() != p.input_dim())
    throw DimensionError("lstm_step: input " + x_t.shape() + " does not match W_x " +
                         p.W_x.shape());
  if (h_prev.rows() != 1 || h_prev.cols() != h || c_prev.rows() != 1 || c_prev.cols() != h)
    throw DimensionError("lstm_step: state " + h_prev.shape() + "/" + c_prev.shape() +
                         " does not match hidden size " + std::to_string(h));

  const Tensor gates = add_rowwise(x_t * p.W_x + h_prev * p.W_h, p.b);
  const Tensor i = sigmoid(slice_cols(gates, 0, h));
  const Tensor f = sigmoid(slice_cols(gates, h, h));
  const Tensor g = tanh(slice_cols(gates, 2 * h, h));
  const Tensor o = sigmoid(slice_cols(gates, 3 * h, h));
  Tensor c = hadamard(f, c_prev) + hadamard(i, g);
  Tensor h_t = hadamard(o, tanh(c));
  return {std::move(h_t), std::move(c)};
}

BlstmParams BlstmParams::init(Eigen::Index input_dim, Eigen::Index hidden, Rng& rng,
                              bool bidirectional) {
  BlstmParams p{LstmParams::init(input_dim, hidden, rng), std::nullopt};
  if (bidirectional) p.backward = LstmParams::init(input_dim, hidden, rng);
  return p;
}

BlstmParams BlstmParams::zeros(Eigen::Index input_dim, Eigen::Index hidden, bool bidirectional) {
  BlstmParams p{LstmParams::zeros(input_dim, hidden), std::nullopt};
  if (bidirectional) p.backward = LstmParams::zeros(input_dim, hidden);
  return p;
}

void BlstmParams::validate() const {
  forward.validate();
  if (backward) {
    backward->validate();
    if (backward->input_dim() != forward.input_dim() || backward->hidden() != forward.hidden())
      throw DimensionError("BLSTM directions disagree on input or hidden size");
  }
}

void BlstmParams::append_parameters(const std::string& prefix,
                                    std::vector<NamedTensor>& out) const {
  auto add = [&](const std::string& dir, const LstmParams& p) {
    out.push_back({prefix + "." + dir + ".W_x", p.W_x});
    out.push_back({prefix + "." + dir + ".W_h", p.W_h});
    out.push_back({prefix + "." + dir + ".b", p.b});
  };
  add("fwd", forward);
  if (backward) add("bwd", *backward);
}

namespace {

std::vector<Tensor> run_direction(const Tensor& x, const LstmParams& p, bool reversed) {
  const Eigen::Index steps = x.rows();
  std::vector<Tensor> hs(static_cast<std::size_t>(steps));
  Tensor h = Tensor::zeros(1, p.hidden());
  Tensor c = Tensor::zeros(1, p.hidden());
  for (Eigen::Index k = 0; k < steps; ++k) {
    const Eigen::Index t = reversed ? steps - 1 - k : k;
    auto next = lstm_step(slice_rows(x, t, 1), h, c, p);
    h = std::move(next.h);
    c = std::move(next.c);
    hs[static_cast<std::size_t>(t)] = h;
  }
  return hs;
}

}  // namespace

Tensor blstm_forward(const Tensor& x, const BlstmParams& p) {
  if (x.rows() < 1) throw ContractError("blstm_forward: empty sequence");
  if (x.cols() != p.input_dim())
    throw DimensionError("blstm_forward: input " + x.shape() + " does not match input size " +
                         std::to_string(p.input_dim()));
  Tensor fwd = concat_rows(run_direction(x, p.forward, false));
  if (!p.backward) return fwd;
  Tensor bwd = concat_rows(run_direction(x, *p.backward, true));
  return concat_cols(fwd, bwd);
}

}  // namespace rja
