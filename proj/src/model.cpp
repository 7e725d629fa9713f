#include "rja/model.hpp"

#include <cstdio>

namespace rja {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::both: return "both";
    case Modality::audio: return "audio";
    case Modality::visual: return "visual";
  }
  return "both";
}

Modality parse_modality(const std::string& text) {
  if (text == "both") return Modality::both;
  if (text == "audio") return Modality::audio;
  if (text == "visual") return Modality::visual;
  throw ConfigError("unknown modality '" + text + "' (expected both, audio or visual)");
}

void AblationConfig::validate() const {
  if (recursion_depth < 1) throw ConfigError("recursion depth t must be >= 1");
  if (output_dim < 1) throw ConfigError("output_dim must be >= 1");
  if (seq_len < 1) throw ConfigError("seq_len must be >= 1");
  if (head_layers < 1) throw ConfigError("head_layers must be >= 1");
  if (modality != Modality::visual && audio_dim < 1) throw ConfigError("audio_dim must be >= 1");
  if (modality != Modality::audio && visual_dim < 1) throw ConfigError("visual_dim must be >= 1");
  if (use_u_blstm && (u_hidden_audio < 1 || u_hidden_visual < 1))
    throw ConfigError("U-BLSTM hidden sizes must be >= 1");
  if (use_j_blstm && j_hidden < 1) throw ConfigError("J-BLSTM hidden size must be >= 1");
}

void AblationConfig::write(KeyValues& kv) const {
  kv["model.use_u_blstm"] = use_u_blstm ? "1" : "0";
  kv["model.use_j_blstm"] = use_j_blstm ? "1" : "0";
  kv["model.t"] = std::to_string(recursion_depth);
  kv["model.weight_sharing"] = weight_sharing ? "1" : "0";
  kv["model.modality"] = to_string(modality);
  kv["model.seq_len"] = std::to_string(seq_len);
  kv["model.d_a"] = std::to_string(audio_dim);
  kv["model.d_v"] = std::to_string(visual_dim);
  kv["model.m"] = std::to_string(output_dim);
  kv["model.u_hidden_a"] = std::to_string(u_hidden_audio);
  kv["model.u_hidden_v"] = std::to_string(u_hidden_visual);
  kv["model.j_hidden"] = std::to_string(j_hidden);
  kv["model.bidirectional"] = bidirectional ? "1" : "0";
  kv["model.head_layers"] = std::to_string(head_layers);
}

void AblationConfig::read(const KeyValues& kv) {
  use_u_blstm = get_bool(kv, "model.use_u_blstm", use_u_blstm);
  use_j_blstm = get_bool(kv, "model.use_j_blstm", use_j_blstm);
  recursion_depth = static_cast<int>(get_int(kv, "model.t", recursion_depth));
  weight_sharing = get_bool(kv, "model.weight_sharing", weight_sharing);
  modality = parse_modality(get_string(kv, "model.modality", to_string(modality)));
  seq_len = get_int(kv, "model.seq_len", seq_len);
  audio_dim = get_int(kv, "model.d_a", audio_dim);
  visual_dim = get_int(kv, "model.d_v", visual_dim);
  output_dim = get_int(kv, "model.m", output_dim);
  u_hidden_audio = get_int(kv, "model.u_hidden_a", u_hidden_audio);
  u_hidden_visual = get_int(kv, "model.u_hidden_v", u_hidden_visual);
  j_hidden = get_int(kv, "model.j_hidden", j_hidden);
  bidirectional = get_bool(kv, "model.bidirectional", bidirectional);
  head_layers = static_cast<int>(get_int(kv, "model.head_layers", head_layers));
}

std::string AblationConfig::hash() const {
  KeyValues kv;
  write(kv);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(format_key_values(kv))));
  return buf;
}

FusionModel FusionModel::init(const AblationConfig& cfg, Rng& rng) { return build(cfg, &rng); }

FusionModel FusionModel::zeros(const AblationConfig& cfg) { return build(cfg, nullptr); }

FusionModel FusionModel::build(const AblationConfig& cfg, Rng* rng) {
  cfg.validate();
  FusionModel m;
  m.config_ = cfg;
  auto blstm = [&](Eigen::Index in, Eigen::Index hidden) {
    return rng ? BlstmParams::init(in, hidden, *rng, cfg.bidirectional)
               : BlstmParams::zeros(in, hidden, cfg.bidirectional);
  };

  const bool has_audio = cfg.modality != Modality::visual;
  const bool has_visual = cfg.modality != Modality::audio;
  Eigen::Index d_a = has_audio ? cfg.audio_dim : 0;
  Eigen::Index d_v = has_visual ? cfg.visual_dim : 0;
  if (cfg.use_u_blstm) {
    if (has_audio) {
      m.u_blstm_a_ = blstm(cfg.audio_dim, cfg.u_hidden_audio);
      d_a = m.u_blstm_a_->output_dim();
    }
    if (has_visual) {
      m.u_blstm_v_ = blstm(cfg.visual_dim, cfg.u_hidden_visual);
      d_v = m.u_blstm_v_->output_dim();
    }
  }
  if (cfg.modality == Modality::both) {
    m.attention_ = rng ? JointAttentionParams::init(cfg.seq_len, d_a, d_v, cfg.recursion_depth,
                                                    cfg.weight_sharing, *rng)
                       : JointAttentionParams::zeros(cfg.seq_len, d_a, d_v, cfg.recursion_depth,
                                                     cfg.weight_sharing);
  }
  Eigen::Index width = d_a + d_v;
  if (cfg.use_j_blstm) {
    m.j_blstm_ = blstm(width, cfg.j_hidden);
    width = m.j_blstm_->output_dim();
  }
  for (int k = 0; k < cfg.head_layers; ++k) {
    const Eigen::Index out = k + 1 == cfg.head_layers ? cfg.output_dim : width;
    AffineLayer layer;
    layer.W = rng ? Tensor(glorot_uniform(width, out, *rng), true) : Tensor::zeros(width, out, true);
    layer.b = Tensor::zeros(1, out, true);
    m.head_.push_back(std::move(layer));
  }
  return m;
}

Eigen::Index FusionModel::head_input_dim() const { return head_.front().W.rows(); }

Tensor FusionModel::forward(const Tensor& x_a, const Tensor& x_v) const {
  const auto& cfg = config_;
  const bool has_audio = cfg.modality != Modality::visual;
  const bool has_visual = cfg.modality != Modality::audio;
  if (has_audio && x_a.cols() != cfg.audio_dim)
    throw ConfigError("input stage: audio features have d_a=" + std::to_string(x_a.cols()) +
                      ", model expects d_a=" + std::to_string(cfg.audio_dim));
  if (has_visual && x_v.cols() != cfg.visual_dim)
    throw ConfigError("input stage: visual features have d_v=" + std::to_string(x_v.cols()) +
                      ", model expects d_v=" + std::to_string(cfg.visual_dim));
  if (has_audio && has_visual && x_a.rows() != x_v.rows())
    throw ConfigError("input stage: audio has " + std::to_string(x_a.rows()) +
                      " clips, visual has " + std::to_string(x_v.rows()));

  Tensor a = x_a;
  Tensor v = x_v;
  if (u_blstm_a_) a = blstm_forward(a, *u_blstm_a_);
  if (u_blstm_v_) v = blstm_forward(v, *u_blstm_v_);

  Tensor fused;
  if (attention_) {
    if (a.rows() != attention_->seq_len())
      throw ConfigError("attention stage: sub-sequence has L=" + std::to_string(a.rows()) +
                        ", attention built for L=" + std::to_string(attention_->seq_len()));
    FusionResult r = recursive_fuse(a, v, *attention_, cfg.recursion_depth);
    fused = concat_cols(r.audio, r.visual);
  } else {
    fused = has_audio ? a : v;
  }

  if (j_blstm_) fused = blstm_forward(fused, *j_blstm_);

  Tensor y = fused;
  for (std::size_t k = 0; k < head_.size(); ++k) {
    if (k > 0) y = relu(y);
    y = add_rowwise(y * head_[k].W, head_[k].b);
  }
  return y;
}

std::vector<NamedTensor> FusionModel::parameters() const {
  std::vector<NamedTensor> out;
  if (u_blstm_a_) u_blstm_a_->append_parameters("u_blstm_a", out);
  if (u_blstm_v_) u_blstm_v_->append_parameters("u_blstm_v", out);
  if (attention_) attention_->append_parameters("attention", out);
  if (j_blstm_) j_blstm_->append_parameters("j_blstm", out);
  for (std::size_t k = 0; k < head_.size(); ++k) {
    const std::string base = head_.size() == 1 ? "head" : "head.layer" + std::to_string(k + 1);
    out.push_back({base + ".W", head_[k].W});
    out.push_back({base + ".b", head_[k].b});
  }
  return out;
}

FusionModel FusionModel::clone() const {
  FusionModel copy = zeros(config_);
  auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t k = 0; k < src.size(); ++k) dst[k].tensor.mutable_value() = src[k].tensor.value();
  return copy;
}

}  // namespace rja
