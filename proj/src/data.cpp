#include "rja/data.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

namespace rja {

std::string to_string(LabelMode mode) { return mode == LabelMode::emotion ? "emotion" : "fatigue"; }

LabelMode parse_label_mode(const std::string& text) {
  if (text == "emotion") return LabelMode::emotion;
  if (text == "fatigue") return LabelMode::fatigue;
  throw ConfigError("unknown mode '" + text + "' (expected emotion or fatigue)");
}

void FeatureSet::validate() const {
  const Eigen::Index n = labels.rows();
  if (audio.rows() != n || visual.rows() != n)
    throw ConfigError("feature set arrays disagree on clip count: audio " +
                      std::to_string(audio.rows()) + ", visual " + std::to_string(visual.rows()) +
                      ", labels " + std::to_string(n));
  std::size_t total = 0;
  for (auto len : video_lengths) total += len;
  if (total != static_cast<std::size_t>(n))
    throw ConfigError("video lengths sum to " + std::to_string(total) + " but there are " +
                      std::to_string(n) + " clips");
  auto mode = manifest.find("mode");
  if (mode != manifest.end() && n > 0) {
    const bool fatigue = parse_label_mode(mode->second) == LabelMode::fatigue;
    const double lo = fatigue ? 0.0 : -1.0;
    const double hi = fatigue ? 10.0 : 1.0;
    if (labels.minCoeff() < lo || labels.maxCoeff() > hi)
      throw ConfigError("labels fall outside [" + format_double(lo) + ", " + format_double(hi) +
                        "] for mode " + mode->second);
  }
}

void SynthConfig::validate() const {
  if (n_videos < 2) throw ConfigError("synthetic data needs at least 2 videos for a train/val split");
  if (clips_per_video < 1) throw ConfigError("clips_per_video must be >= 1");
  if (audio_dim < 1 || visual_dim < 1) throw ConfigError("feature dimensions must be >= 1");
  if (mode == LabelMode::emotion && output_dim < 1) throw ConfigError("output_dim must be >= 1");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
  if (!(corruption >= 0.0 && corruption <= 0.5)) throw ConfigError("corruption must lie in [0, 0.5]");
}

void SynthConfig::write(KeyValues& kv) const {
  kv["data.seed"] = std::to_string(seed);
  kv["data.n_videos"] = std::to_string(n_videos);
  kv["data.clips_per_video"] = std::to_string(clips_per_video);
  kv["data.d_a"] = std::to_string(audio_dim);
  kv["data.d_v"] = std::to_string(visual_dim);
  kv["data.m"] = std::to_string(output_dim);
  kv["data.noise_std"] = format_double(noise_std);
  kv["data.corruption"] = format_double(corruption);
  kv["data.mode"] = to_string(mode);
}

void SynthConfig::read(const KeyValues& kv) {
  seed = get_u64(kv, "data.seed", seed);
  n_videos = static_cast<std::size_t>(get_int(kv, "data.n_videos", static_cast<long long>(n_videos)));
  clips_per_video = static_cast<std::size_t>(
      get_int(kv, "data.clips_per_video", static_cast<long long>(clips_per_video)));
  audio_dim = get_int(kv, "data.d_a", audio_dim);
  visual_dim = get_int(kv, "data.d_v", visual_dim);
  output_dim = get_int(kv, "data.m", output_dim);
  noise_std = get_double(kv, "data.noise_std", noise_std);
  corruption = get_double(kv, "data.corruption", corruption);
  mode = parse_label_mode(get_string(kv, "data.mode", to_string(mode)));
}

namespace {

constexpr int kHistory = 2;  // previous label values mixed into each clip's features
constexpr int kSinusoids = 3;

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Matrix label_tracks(std::size_t clips, Eigen::Index m, Rng& rng) {
  Matrix y(static_cast<Eigen::Index>(clips), m);
  for (Eigen::Index k = 0; k < m; ++k) {
    double amp[kSinusoids], freq[kSinusoids], phase[kSinusoids];
    for (int s = 0; s < kSinusoids; ++s) {
      amp[s] = rng.uniform(0.5, 1.0);
      freq[s] = 2.0 * std::numbers::pi / rng.uniform(12.0, 60.0);
      phase[s] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    for (std::size_t c = 0; c < clips; ++c) {
      double v = 0.0;
      for (int s = 0; s < kSinusoids; ++s)
        v += amp[s] * std::sin(freq[s] * static_cast<double>(c) + phase[s]);
      y(static_cast<Eigen::Index>(c), k) = v;
    }
    auto col = y.col(k);
    const double lo = col.minCoeff();
    const double hi = col.maxCoeff();
    if (hi > lo) {
      col = ((col.array() - lo) * (2.0 / (hi - lo)) - 1.0).matrix();
      col = col.cwiseMax(-1.0).cwiseMin(1.0);
    } else {
      col.setZero();
    }
  }
  return y;
}

/// Rows [y_t, y_{t-1}, y_{t-2}] per label dimension, clamping at the start.
Matrix latent_with_history(const Matrix& y) {
  const Eigen::Index n = y.rows();
  const Eigen::Index m = y.cols();
  Matrix z(n, m * (kHistory + 1));
  for (Eigen::Index t = 0; t < n; ++t)
    for (Eigen::Index k = 0; k < m; ++k)
      for (int h = 0; h <= kHistory; ++h) z(t, k * (kHistory + 1) + h) = y(std::max<Eigen::Index>(0, t - h), k);
  return z;
}

FeatureSet assemble(const std::vector<std::size_t>& videos, const std::vector<Matrix>& audio,
                    const std::vector<Matrix>& visual, const std::vector<Matrix>& labels,
                    const KeyValues& base_manifest, const std::string& split) {
  FeatureSet fs;
  Eigen::Index rows = 0;
  for (auto v : videos) rows += labels[v].rows();
  fs.audio.resize(rows, audio.front().cols());
  fs.visual.resize(rows, visual.front().cols());
  fs.labels.resize(rows, labels.front().cols());
  Eigen::Index at = 0;
  std::string ids;
  for (auto v : videos) {
    const Eigen::Index n = labels[v].rows();
    fs.audio.middleRows(at, n) = audio[v];
    fs.visual.middleRows(at, n) = visual[v];
    fs.labels.middleRows(at, n) = labels[v];
    fs.video_lengths.push_back(static_cast<std::size_t>(n));
    ids += (ids.empty() ? "" : ",") + std::to_string(v);
    at += n;
  }
  fs.manifest = base_manifest;
  fs.manifest["split"] = split;
  fs.manifest["video_ids"] = ids;
  return fs;
}

}  // namespace

SplitData generate(const SynthConfig& input) {
  SynthConfig cfg = input;
  if (cfg.mode == LabelMode::fatigue) cfg.output_dim = 1;
  cfg.validate();

  const Rng root(cfg.seed);
  const Eigen::Index latent = cfg.output_dim * (kHistory + 1);
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(latent));
  Rng audio_map_rng = root.derive("audio_map");
  Rng visual_map_rng = root.derive("visual_map");
  const Matrix audio_map = normal_matrix(latent, cfg.audio_dim, map_scale, audio_map_rng);
  const Matrix visual_map = normal_matrix(latent, cfg.visual_dim, map_scale, visual_map_rng);

  const std::size_t clips = cfg.clips_per_video;
  const auto window = static_cast<std::size_t>(std::llround(cfg.corruption * static_cast<double>(clips)));

  std::vector<Matrix> audio, visual, labels;
  for (std::size_t v = 0; v < cfg.n_videos; ++v) {
    Rng rng = root.derive("video", v);
    Matrix y = label_tracks(clips, cfg.output_dim, rng);
    const Matrix z = latent_with_history(y);
    const auto n = static_cast<Eigen::Index>(clips);
    Matrix a = z * audio_map + normal_matrix(n, cfg.audio_dim, cfg.noise_std, rng);
    Matrix x = z * visual_map + normal_matrix(n, cfg.visual_dim, cfg.noise_std, rng);
    if (window > 0) {
      const auto start = static_cast<Eigen::Index>(rng.below(clips - window + 1));
      Matrix& target = (v % 2 == 0) ? a : x;
      const double rms = std::sqrt(target.squaredNorm() / static_cast<double>(target.size()));
      target.middleRows(start, static_cast<Eigen::Index>(window)) =
          normal_matrix(static_cast<Eigen::Index>(window), target.cols(), rms, rng);
    }
    if (cfg.mode == LabelMode::fatigue) y = ((y.array() + 1.0) * 5.0).matrix();
    audio.push_back(a.unaryExpr(&to_f32));
    visual.push_back(x.unaryExpr(&to_f32));
    labels.push_back(y.unaryExpr(&to_f32).cwiseMax(cfg.mode == LabelMode::fatigue ? 0.0 : -1.0)
                         .cwiseMin(cfg.mode == LabelMode::fatigue ? 10.0 : 1.0));
  }

  std::vector<std::size_t> order(cfg.n_videos);
  for (std::size_t v = 0; v < order.size(); ++v) order[v] = v;
  Rng split_rng = root.derive("split");
  shuffle(order, split_rng);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(cfg.n_videos))), 1,
      cfg.n_videos - 1);
  std::vector<std::size_t> train_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val_ids(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train_ids.begin(), train_ids.end());
  std::sort(val_ids.begin(), val_ids.end());

  KeyValues manifest;
  cfg.write(manifest);
  manifest["seed"] = std::to_string(cfg.seed);
  manifest["generator_version"] = "1";
  manifest["mode"] = to_string(cfg.mode);

  SplitData out{assemble(train_ids, audio, visual, labels, manifest, "train"),
                assemble(val_ids, audio, visual, labels, manifest, "val")};
  return out;
}

// ---------------------------------------------------------------------------
// AVF1 encoding
// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> parse_lengths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<std::size_t>(std::stoull(item)));
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_features(const FeatureSet& fs) {
  fs.validate();
  binary::Writer out;
  out.raw("AVF1");
  out.u16(kFeatureFormatVersion);
  out.u32(static_cast<std::uint32_t>(fs.audio_dim()));
  out.u32(static_cast<std::uint32_t>(fs.visual_dim()));
  out.u32(static_cast<std::uint32_t>(fs.output_dim()));
  out.u32(static_cast<std::uint32_t>(fs.n_clips()));
  out.matrix(fs.audio);
  out.matrix(fs.visual);
  out.matrix(fs.labels);
  KeyValues meta = fs.manifest;
  std::string lengths;
  for (auto len : fs.video_lengths) lengths += (lengths.empty() ? "" : ",") + std::to_string(len);
  meta["video_lengths"] = lengths;
  out.text(format_key_values(meta));
  return out.take();
}

FeatureSet decode_features(const std::vector<std::uint8_t>& bytes) {
  binary::Reader in(bytes);
  if (in.raw(4, "magic") != "AVF1") throw FormatError("bad magic, expected AVF1", 0);
  const auto version = in.u16("version");
  if (version != kFeatureFormatVersion)
    throw FormatError("unsupported AVF version " + std::to_string(version), 4);
  const Eigen::Index d_a = in.u32("d_a");
  const Eigen::Index d_v = in.u32("d_v");
  const Eigen::Index m = in.u32("m");
  const Eigen::Index n = in.u32("n_clips");

  FeatureSet fs;
  fs.audio = in.matrix(n, d_a, "audio block");
  fs.visual = in.matrix(n, d_v, "visual block");
  fs.labels = in.matrix(n, m, "label block");
  const std::size_t meta_at = in.offset();
  const std::string text = in.text("metadata");
  if (in.remaining() != 0) throw FormatError("trailing bytes after metadata", in.offset());

  try {
    fs.manifest = parse_key_values(text);
    auto it = fs.manifest.find("video_lengths");
    if (it != fs.manifest.end()) {
      fs.video_lengths = it->second.empty() ? std::vector<std::size_t>{} : parse_lengths(it->second);
      fs.manifest.erase(it);
    } else if (n > 0) {
      fs.video_lengths = {static_cast<std::size_t>(n)};
    }
    fs.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("inconsistent metadata: ") + e.what(), meta_at);
  }
  return fs;
}

void write_features(const FeatureSet& fs, const std::filesystem::path& path) {
  const auto bytes = encode_features(fs);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

FeatureSet read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_features(bytes);
}

// ---------------------------------------------------------------------------
// Sub-sequences
// ---------------------------------------------------------------------------

const WarningSink& stderr_warnings() {
  static const WarningSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; };
  return sink;
}

std::vector<SubSequence> window_subsequences(const FeatureSet& fs, Eigen::Index L,
                                             const WarningSink& warn) {
  if (L < 1) throw ContractError("sub-sequence length L must be >= 1");
  std::vector<SubSequence> out;
  Eigen::Index row = 0;
  for (std::size_t v = 0; v < fs.video_lengths.size(); ++v) {
    const auto len = static_cast<Eigen::Index>(fs.video_lengths[v]);
    if (len < L) {
      if (warn)
        warn("video " + std::to_string(v) + " has " + std::to_string(len) +
             " clips, fewer than L=" + std::to_string(L) + "; skipped");
    }
    for (Eigen::Index w = 0; w + L <= len; w += L) {
      SubSequence s;
      s.audio = fs.audio.middleRows(row + w, L);
      s.visual = fs.visual.middleRows(row + w, L);
      s.labels = fs.labels.middleRows(row + w, L);
      s.video = v;
      s.first_row = row + w;
      out.push_back(std::move(s));
    }
    row += len;
  }
  return out;
}

std::vector<SubSequence> sample_subsequences(const FeatureSet& fs, Eigen::Index L, Rng& rng,
                                             const WarningSink& warn) {
  auto windows = window_subsequences(fs, L, warn);
  shuffle(windows, rng);
  return windows;
}

}  // namespace rja
