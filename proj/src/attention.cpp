#include "rja/attention.hpp"

#include <cmath>

namespace rja {

namespace {

void expect_shape(const Tensor& t, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (t.rows() != rows || t.cols() != cols)
    throw DimensionError(what + " must be " + detail::shape_str(rows, cols) + ", got " + t.shape());
}

JointAttentionWeights make_weights(Eigen::Index L, Eigen::Index d_a, Eigen::Index d_v, Rng* rng) {
  const Eigen::Index d = d_a + d_v;
  auto w = [&](Eigen::Index r, Eigen::Index c) {
    return rng ? Tensor(glorot_uniform(r, c, *rng), true) : Tensor::zeros(r, c, true);
  };
  JointAttentionWeights out;
  out.W_ja = w(L, L);
  out.W_jv = w(L, L);
  out.W_ca = w(d_a, d_a);
  out.W_cv = w(d_v, d_v);
  out.W_ha = w(d, d_a);
  out.W_hv = w(d, d_v);
  return out;
}

}  // namespace

JointAttentionParams::JointAttentionParams(std::vector<JointAttentionWeights> sets,
                                           bool weight_sharing, Eigen::Index seq_len,
                                           Eigen::Index audio_dim, Eigen::Index visual_dim)
    : sets_(std::move(sets)),
      weight_sharing_(weight_sharing),
      seq_len_(seq_len),
      audio_dim_(audio_dim),
      visual_dim_(visual_dim) {
  if (sets_.empty()) throw ConfigError("joint attention needs at least one weight set");
  if (weight_sharing_ && sets_.size() != 1)
    throw ConfigError("weight sharing expects exactly one weight set, got " +
                      std::to_string(sets_.size()));
  const Eigen::Index d = audio_dim + visual_dim;
  for (std::size_t k = 0; k < sets_.size(); ++k) {
    const auto& s = sets_[k];
    const std::string tag = "iteration " + std::to_string(k + 1) + " ";
    expect_shape(s.W_ja, seq_len, seq_len, tag + "W_ja");
    expect_shape(s.W_jv, seq_len, seq_len, tag + "W_jv");
    expect_shape(s.W_ca, audio_dim, audio_dim, tag + "W_ca");
    expect_shape(s.W_cv, visual_dim, visual_dim, tag + "W_cv");
    expect_shape(s.W_ha, d, audio_dim, tag + "W_ha");
    expect_shape(s.W_hv, d, visual_dim, tag + "W_hv");
  }
}

JointAttentionParams JointAttentionParams::init(Eigen::Index seq_len, Eigen::Index audio_dim,
                                                Eigen::Index visual_dim, int iterations,
                                                bool weight_sharing, Rng& rng) {
  if (iterations < 1) throw ContractError("joint attention needs t >= 1");
  std::vector<JointAttentionWeights> sets;
  const int n = weight_sharing ? 1 : iterations;
  for (int k = 0; k < n; ++k) sets.push_back(make_weights(seq_len, audio_dim, visual_dim, &rng));
  return {std::move(sets), weight_sharing, seq_len, audio_dim, visual_dim};
}

JointAttentionParams JointAttentionParams::zeros(Eigen::Index seq_len, Eigen::Index audio_dim,
                                                 Eigen::Index visual_dim, int iterations,
                                                 bool weight_sharing) {
  if (iterations < 1) throw ContractError("joint attention needs t >= 1");
  std::vector<JointAttentionWeights> sets;
  const int n = weight_sharing ? 1 : iterations;
  for (int k = 0; k < n; ++k)
    sets.push_back(make_weights(seq_len, audio_dim, visual_dim, nullptr));
  return {std::move(sets), weight_sharing, seq_len, audio_dim, visual_dim};
}

const JointAttentionWeights& JointAttentionParams::iteration(int k) const {
  if (!covers(k))
    throw ConfigError("no joint attention weights for iteration " + std::to_string(k) + " (" +
                      std::to_string(set_count()) + " held)");
  return weight_sharing_ ? sets_.front() : sets_[static_cast<std::size_t>(k - 1)];
}

JointAttentionWeights& JointAttentionParams::iteration(int k) {
  return const_cast<JointAttentionWeights&>(std::as_const(*this).iteration(k));
}

void JointAttentionParams::append_parameters(const std::string& prefix,
                                             std::vector<NamedTensor>& out) const {
  for (std::size_t k = 0; k < sets_.size(); ++k) {
    const std::string base =
        prefix + (weight_sharing_ ? std::string(".shared") : ".iter" + std::to_string(k + 1));
    const auto& s = sets_[k];
    out.push_back({base + ".W_ja", s.W_ja});
    out.push_back({base + ".W_jv", s.W_jv});
    out.push_back({base + ".W_ca", s.W_ca});
    out.push_back({base + ".W_cv", s.W_cv});
    out.push_back({base + ".W_ha", s.W_ha});
    out.push_back({base + ".W_hv", s.W_hv});
  }
}

Tensor joint_representation(const Tensor& x_a, const Tensor& x_v) {
  if (x_a.rows() != x_v.rows())
    throw DimensionError("joint_representation: clip counts differ, audio " + x_a.shape() +
                         " vs visual " + x_v.shape());
  return concat_cols(x_a, x_v);
}

Tensor joint_correlation(const Tensor& x_m, const Tensor& j, const Tensor& w_jm) {
  const Eigen::Index L = x_m.rows();
  if (j.rows() != L || w_jm.rows() != L || w_jm.cols() != L)
    throw DimensionError("joint_correlation: features " + x_m.shape() + ", joint " + j.shape() +
                         ", W_j " + w_jm.shape() + " do not compose");
  if (j.cols() < 1) throw ContractError("joint_correlation: joint dimension d must be > 0");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(j.cols()));
  return tanh(scale(transpose(x_m) * w_jm * j, inv_sqrt_d));
}

Tensor attention_maps(const Tensor& x_m, const Tensor& c_m, const Tensor& w_cm) {
  const Eigen::Index d_m = x_m.cols();
  if (w_cm.rows() != d_m || w_cm.cols() != d_m || c_m.rows() != d_m)
    throw DimensionError("attention_maps: features " + x_m.shape() + ", C " + c_m.shape() +
                         ", W_c " + w_cm.shape() + " do not compose");
  return relu((x_m * w_cm) * c_m);
}

Tensor attended_features(const Tensor& h_m, const Tensor& w_hm, const Tensor& x_m) {
  if (w_hm.rows() != h_m.cols() || w_hm.cols() != x_m.cols() || h_m.rows() != x_m.rows())
    throw DimensionError("attended_features: H " + h_m.shape() + ", W_h " + w_hm.shape() +
                         ", features " + x_m.shape() + " do not compose");
  return h_m * w_hm + x_m;
}

AttentionStep joint_attention_pass(const Tensor& x_a, const Tensor& x_v,
                                   const JointAttentionWeights& w) {
  const Tensor j = joint_representation(x_a, x_v);
  AttentionStep s;
  s.C_a = joint_correlation(x_a, j, w.W_ja);
  s.C_v = joint_correlation(x_v, j, w.W_jv);
  s.H_a = attention_maps(x_a, s.C_a, w.W_ca);
  s.H_v = attention_maps(x_v, s.C_v, w.W_cv);
  s.X_att_a = attended_features(s.H_a, w.W_ha, x_a);
  s.X_att_v = attended_features(s.H_v, w.W_hv, x_v);
  return s;
}

FusionResult recursive_fuse(const Tensor& x_a, const Tensor& x_v,
                            const JointAttentionParams& params, int t) {
  if (t < 1) throw ContractError("recursive_fuse: recursion depth t must be >= 1");
  if (!params.covers(t))
    throw ConfigError("recursive_fuse: parameters hold " + std::to_string(params.set_count()) +
                      " iteration(s), t = " + std::to_string(t));
  if (x_a.rows() != params.seq_len() || x_a.cols() != params.audio_dim() ||
      x_v.rows() != params.seq_len() || x_v.cols() != params.visual_dim())
    throw DimensionError("recursive_fuse: inputs " + x_a.shape() + "/" + x_v.shape() +
                         " do not match attention built for L=" +
                         std::to_string(params.seq_len()) +
                         ", d_a=" + std::to_string(params.audio_dim()) +
                         ", d_v=" + std::to_string(params.visual_dim()));
  FusionResult out{x_a, x_v, {}};
  out.trace.reserve(static_cast<std::size_t>(t));
  for (int k = 1; k <= t; ++k) {
    AttentionStep step = joint_attention_pass(out.audio, out.visual, params.iteration(k));
    out.audio = step.X_att_a;
    out.visual = step.X_att_v;
    out.trace.push_back(std::move(step));
  }
  return out;
}

}  // namespace rja
