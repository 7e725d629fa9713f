#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rja/config.hpp"
#include "rja/core/rng.hpp"
#include "rja/core/tensor.hpp"

namespace rja {

enum class LabelMode { emotion, fatigue };

std::string to_string(LabelMode mode);
LabelMode parse_label_mode(const std::string& text);

/// Clip-level features of one split. Rows are clips, grouped by video in
/// the order given by `video_lengths`. Values are exactly representable in
/// 32-bit floats so they survive the file format unchanged.
struct FeatureSet {
  Matrix audio;   // n_clips x d_a
  Matrix visual;  // n_clips x d_v
  Matrix labels;  // n_clips x m
  std::vector<std::size_t> video_lengths;
  KeyValues manifest;  // seed, generator_version, split, mode, ...

  Eigen::Index n_clips() const { return labels.rows(); }
  Eigen::Index audio_dim() const { return audio.cols(); }
  Eigen::Index visual_dim() const { return visual.cols(); }
  Eigen::Index output_dim() const { return labels.cols(); }

  /// Throws ConfigError if array row counts, video lengths, or the label
  /// range for the manifest's mode disagree.
  void validate() const;
};

struct SynthConfig {
  std::uint64_t seed = 42;
  std::size_t n_videos = 40;
  std::size_t clips_per_video = 96;
  Eigen::Index audio_dim = 16;
  Eigen::Index visual_dim = 16;
  Eigen::Index output_dim = 2;  // forced to 1 in fatigue mode
  double noise_std = 0.1;
  double corruption = 0.4;  // fraction of each video with one modality replaced by noise
  LabelMode mode = LabelMode::emotion;

  /// Throws ConfigError on degenerate dimensions or out-of-range fractions.
  void validate() const;
  void write(KeyValues& kv) const;
  void read(const KeyValues& kv);
};

struct SplitData {
  FeatureSet train;
  FeatureSet val;
};

/// Deterministic synthetic dataset with complementary modalities.
///
/// Each video carries m label tracks, each a sum of three random-phase
/// sinusoids min-max normalised to [-1, 1]. Both modalities are fixed random
/// linear maps of the current and two previous label values plus Gaussian
/// noise. In every video one contiguous window (a `corruption` fraction of
/// the clips) has one modality replaced by unstructured noise; the corrupted
/// modality alternates with video parity. Videos are split 80/20.
SplitData generate(const SynthConfig& cfg);

inline constexpr std::uint16_t kFeatureFormatVersion = 1;

/// AVF1 layout (little-endian): "AVF1", u16 version, u32 d_a, d_v, m, n_clips,
/// f32 audio, visual, labels (row-major), u32 metadata length, UTF-8
/// key=value metadata.
std::vector<std::uint8_t> encode_features(const FeatureSet& fs);
FeatureSet decode_features(const std::vector<std::uint8_t>& bytes);

void write_features(const FeatureSet& fs, const std::filesystem::path& path);
FeatureSet read_features(const std::filesystem::path& path);

/// L consecutive clips of one video.
struct SubSequence {
  Matrix audio;   // L x d_a
  Matrix visual;  // L x d_v
  Matrix labels;  // L x m
  std::size_t video = 0;
  Eigen::Index first_row = 0;  // row of the first clip in the FeatureSet
};

using WarningSink = std::function<void(const std::string&)>;

/// Writes to standard error.
const WarningSink& stderr_warnings();

/// Non-overlapping windows of L clips per video in file order; each video's
/// trailing remainder is dropped and videos shorter than L are skipped with
/// a warning.
std::vector<SubSequence> window_subsequences(const FeatureSet& fs, Eigen::Index L,
                                             const WarningSink& warn = stderr_warnings());

/// The same windows in an order shuffled by `rng`.
std::vector<SubSequence> sample_subsequences(const FeatureSet& fs, Eigen::Index L, Rng& rng,
                                             const WarningSink& warn = stderr_warnings());

}  // namespace rja
