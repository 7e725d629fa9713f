#pragma once

// Recursive joint cross-attention over audio (A) and visual (V) clip features.
//
// Feature matrices are stored with clips as rows: x_a is L x d_a, x_v is
// L x d_v and the joint representation J = [x_a | x_v] is L x d, d = d_a + d_v.
// With that orientation every weight shape composes:
//   C_m    = tanh(x_m^T W_jm J / sqrt(d))    W_jm: L x L,     C_m: d_m x d
//   H_m    = ReLU((x_m W_cm) C_m)             W_cm: d_m x d_m, H_m: L x d
//   X_att  = H_m W_hm + x_m                   W_hm: d x d_m
// and the attended pair feeds the next iteration with fresh weights.

#include <string>
#include <vector>

#include "rja/core/rng.hpp"
#include "rja/core/tensor.hpp"

namespace rja {

/// The six weights of one joint-attention iteration.
struct JointAttentionWeights {
  Tensor W_ja;
  Tensor W_jv;
  Tensor W_ca;
  Tensor W_cv;
  Tensor W_ha;
  Tensor W_hv;
};

class JointAttentionParams {
 public:
  /// Takes one weight set per iteration, or exactly one set when
  /// weight_sharing is on. Throws DimensionError on any shape mismatch.
  JointAttentionParams(std::vector<JointAttentionWeights> sets, bool weight_sharing,
                       Eigen::Index seq_len, Eigen::Index audio_dim, Eigen::Index visual_dim);

  static JointAttentionParams init(Eigen::Index seq_len, Eigen::Index audio_dim,
                                   Eigen::Index visual_dim, int iterations, bool weight_sharing,
                                   Rng& rng);
  static JointAttentionParams zeros(Eigen::Index seq_len, Eigen::Index audio_dim,
                                    Eigen::Index visual_dim, int iterations, bool weight_sharing);

  Eigen::Index seq_len() const { return seq_len_; }
  Eigen::Index audio_dim() const { return audio_dim_; }
  Eigen::Index visual_dim() const { return visual_dim_; }
  bool weight_sharing() const { return weight_sharing_; }

  /// Number of distinct weight sets held.
  int set_count() const { return static_cast<int>(sets_.size()); }

  /// True when iterations 1..t all have weights.
  bool covers(int t) const { return t >= 1 && (weight_sharing_ || t <= set_count()); }

  /// Weights for 1-based iteration k.
  const JointAttentionWeights& iteration(int k) const;
  JointAttentionWeights& iteration(int k);

  /// Names are <prefix>.iter<k>.W_xx, or <prefix>.shared.W_xx under sharing.
  void append_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;

 private:
  std::vector<JointAttentionWeights> sets_;
  bool weight_sharing_;
  Eigen::Index seq_len_;
  Eigen::Index audio_dim_;
  Eigen::Index visual_dim_;
};

/// Intermediates of one iteration.
struct AttentionStep {
  Tensor C_a, C_v;  // d_a x d, d_v x d; entries in (-1, 1)
  Tensor H_a, H_v;  // L x d; entries >= 0
  Tensor X_att_a;   // L x d_a
  Tensor X_att_v;   // L x d_v
};

using AttentionTrace = std::vector<AttentionStep>;

struct FusionResult {
  Tensor audio;
  Tensor visual;
  AttentionTrace trace;
};

/// J = [x_a | x_v], audio columns first.
Tensor joint_representation(const Tensor& x_a, const Tensor& x_v);

/// C_m = tanh(x_m^T W_jm J / sqrt(d)).
Tensor joint_correlation(const Tensor& x_m, const Tensor& j, const Tensor& w_jm);

/// H_m = ReLU((x_m W_cm) C_m).
Tensor attention_maps(const Tensor& x_m, const Tensor& c_m, const Tensor& w_cm);

/// X_att,m = H_m W_hm + x_m.
Tensor attended_features(const Tensor& h_m, const Tensor& w_hm, const Tensor& x_m);

/// One full joint-attention pass with the given weights.
AttentionStep joint_attention_pass(const Tensor& x_a, const Tensor& x_v,
                                   const JointAttentionWeights& w);

/// Applies t passes, feeding each pass's attended features into the next; J
/// is rebuilt from the current features every iteration.
FusionResult recursive_fuse(const Tensor& x_a, const Tensor& x_v,
                            const JointAttentionParams& params, int t);

}  // namespace rja
