#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rja/core/rng.hpp"
#include "rja/core/tensor.hpp"

namespace rja {

/// Weights of one LSTM direction. Gate column blocks of width `hidden` are
/// ordered (input, forget, cell, output).
struct LstmParams {
  Tensor W_x;  // d_in x 4h
  Tensor W_h;  // h x 4h
  Tensor b;    // 1 x 4h

  Eigen::Index input_dim() const { return W_x.rows(); }
  Eigen::Index hidden() const { return W_h.rows(); }

  /// Glorot-uniform weights, zero biases except the forget block set to 1.
  static LstmParams init(Eigen::Index input_dim, Eigen::Index hidden, Rng& rng);
  static LstmParams zeros(Eigen::Index input_dim, Eigen::Index hidden);

  /// Throws DimensionError unless the three tensors have consistent shapes.
  void validate() const;
};

struct LstmState {
  Tensor h;
  Tensor c;
};

/// One step of the standard (peephole-free) LSTM recurrence on a 1 x d_in row.
LstmState lstm_step(const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev,
                    const LstmParams& p);

/// A bidirectional layer; without a backward direction it degrades to a
/// plain forward LSTM.
struct BlstmParams {
  LstmParams forward;
  std::optional<LstmParams> backward;

  Eigen::Index input_dim() const { return forward.input_dim(); }
  Eigen::Index hidden() const { return forward.hidden(); }
  bool bidirectional() const { return backward.has_value(); }
  Eigen::Index output_dim() const { return hidden() * (bidirectional() ? 2 : 1); }

  static BlstmParams init(Eigen::Index input_dim, Eigen::Index hidden, Rng& rng,
                          bool bidirectional = true);
  static BlstmParams zeros(Eigen::Index input_dim, Eigen::Index hidden,
                           bool bidirectional = true);

  void validate() const;
  void append_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// Runs both directions over the rows of `x` (L x d_in) from zero initial
/// states. Row t of the result is [forward h_t | backward h_t]; the backward
/// direction consumes rows L..1.
Tensor blstm_forward(const Tensor& x, const BlstmParams& p);

}  // namespace rja
