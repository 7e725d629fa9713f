#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rja/attention.hpp"
#include "rja/config.hpp"
#include "rja/core/rng.hpp"
#include "rja/recurrent.hpp"

namespace rja {

/// Which inputs a model consumes. `both` is the fusion model; the single
/// modality kinds are the baselines (no attention stage).
enum class Modality { both, audio, visual };

std::string to_string(Modality m);
Modality parse_modality(const std::string& text);

/// Architecture switches and sizes. The defaults are the full model:
/// per-modality BLSTMs, t = 2 recursive joint attention, a joint BLSTM.
struct AblationConfig {
  bool use_u_blstm = true;
  bool use_j_blstm = true;
  int recursion_depth = 2;
  bool weight_sharing = false;
  Modality modality = Modality::both;

  Eigen::Index seq_len = 8;  // clips per sub-sequence (W_ja is L x L)
  Eigen::Index audio_dim = 16;
  Eigen::Index visual_dim = 16;
  Eigen::Index output_dim = 2;

  Eigen::Index u_hidden_audio = 32;
  Eigen::Index u_hidden_visual = 32;
  Eigen::Index j_hidden = 64;
  bool bidirectional = true;
  int head_layers = 1;

  /// Throws ConfigError on an invalid combination.
  void validate() const;

  /// Writes keys under "model." into kv.
  void write(KeyValues& kv) const;
  /// Reads "model." keys from kv, keeping the current value for absent keys.
  void read(const KeyValues& kv);

  /// Stable hex digest of the canonical key=value form.
  std::string hash() const;
};

struct AffineLayer {
  Tensor W;  // in x out
  Tensor b;  // 1 x out
};

/// The end-to-end per-clip regressor.
class FusionModel {
 public:
  static FusionModel init(const AblationConfig& cfg, Rng& rng);
  /// Every parameter zero; useful for structural tests.
  static FusionModel zeros(const AblationConfig& cfg);

  const AblationConfig& config() const { return config_; }

  /// (L x d_a, L x d_v) -> L x m. Single-modality models ignore the unused
  /// input. Throws ConfigError naming the stage on a dimension mismatch.
  Tensor forward(const Tensor& x_a, const Tensor& x_v) const;

  /// Order: u_blstm_a, u_blstm_v, attention (by iteration), j_blstm, head.
  std::vector<NamedTensor> parameters() const;

  /// Deep copy of every parameter into fresh tensors.
  FusionModel clone() const;

  const std::optional<BlstmParams>& u_blstm_audio() const { return u_blstm_a_; }
  const std::optional<BlstmParams>& u_blstm_visual() const { return u_blstm_v_; }
  const std::optional<JointAttentionParams>& attention() const { return attention_; }
  const std::optional<BlstmParams>& j_blstm() const { return j_blstm_; }
  const std::vector<AffineLayer>& head() const { return head_; }

  /// Width of the per-clip features entering the head.
  Eigen::Index head_input_dim() const;

 private:
  FusionModel() = default;
  static FusionModel build(const AblationConfig& cfg, Rng* rng);

  AblationConfig config_;
  std::optional<BlstmParams> u_blstm_a_;
  std::optional<BlstmParams> u_blstm_v_;
  std::optional<JointAttentionParams> attention_;
  std::optional<BlstmParams> j_blstm_;
  std::vector<AffineLayer> head_;
};

}  // namespace rja
