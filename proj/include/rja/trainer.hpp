#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rja/config.hpp"
#include "rja/data.hpp"
#include "rja/metrics.hpp"
#include "rja/model.hpp"

namespace rja {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 30;
  int batch_size = 16;  // sub-sequences per optimizer step
  std::uint64_t seed = 42;
  LossKind loss = LossKind::ccc;
  int patience = 5;        // epochs without val improvement before stopping; 0 disables
  double clip_norm = 5.0;  // global gradient norm limit; <= 0 disables
  bool log_wall_time = false;  // off keeps logs byte-reproducible (wall_ms written as 0)

  void validate() const;
  void write(KeyValues& kv) const;
  void read(const KeyValues& kv);
};

/// First and second Adam moments, parallel to a parameter list.
struct AdamMoments {
  std::vector<Matrix> first;
  std::vector<Matrix> second;

  static AdamMoments zeros_like(std::span<const NamedTensor> params);
};

/// One bias-corrected Adam update (step_index counts from 1). All gradients
/// are checked first; a non-finite entry aborts the step with NumericError
/// naming the parameter and nothing is modified.
void adam_step(std::span<const NamedTensor> params, std::span<const Matrix> grads,
               AdamMoments& moments, const TrainConfig& cfg, long step_index);

/// Rescales grads so their joint L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_global_norm(std::vector<Matrix>& grads, double max_norm);

/// Predictions of `model` on every window of `fs`, pooled into one report.
EvalReport evaluate(const FusionModel& model, const FeatureSet& fs);

/// Copy of `model` with every parameter rounded to 32-bit precision, i.e. the
/// model a checkpoint reproduces exactly.
FusionModel rounded_to_f32(const FusionModel& model);

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::vector<double> val_ccc;
  double wall_ms = 0.0;
};

/// "# loss=<kind>" line, then "epoch,train_loss,val_ccc_0..,wall_ms".
std::string train_log_header(LossKind loss, Eigen::Index output_dim);
std::string train_log_row(const EpochLog& row);

/// Progress of a run, enough to resume it exactly.
struct TrainerState {
  int epoch = 0;                 // 0-based epoch in progress
  std::size_t step_in_epoch = 0; // optimizer steps already taken this epoch
  long adam_step = 0;            // optimizer steps taken in total
  double epoch_loss_sum = 0.0;
  std::size_t epoch_loss_count = 0;
  double best_val_ccc = -2.0;    // mean over output dims; -2 means unset
  int best_epoch = 0;
  int bad_epochs = 0;
  std::string rng_state;         // sampler state at the start of `epoch`
  bool stopped = false;
};

struct Checkpoint {
  AblationConfig model_config;
  TrainConfig train_config;
  std::vector<NamedTensor> parameters;  // values exactly representable in 32 bits
  AdamMoments moments;
  TrainerState state;

  /// Model rebuilt from the stored parameters.
  FusionModel model() const;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// RJAC layout (little-endian): "RJAC", u16 version, u32 length + key=value
/// config text, u32 record count, then per record u32 name length, name,
/// u32 rows, u32 cols, f32 row-major data. Records are the parameters in
/// model order followed by "adam.m/<name>" and "adam.v/<name>".
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  std::vector<EpochLog> log;
  Checkpoint best;
  Checkpoint last;
};

class Trainer {
 public:
  Trainer(FusionModel model, const FeatureSet& train, const FeatureSet& val, TrainConfig cfg);

  /// Continues the run that produced `ckpt`.
  static Trainer resume(const Checkpoint& ckpt, const FeatureSet& train, const FeatureSet& val);

  /// Steps in the current epoch.
  std::size_t steps_per_epoch();

  /// One optimizer step on the next batch of the current epoch; returns the
  /// batch loss. Call end_epoch() once steps_per_epoch() steps are done.
  double step();

  /// Evaluates on the validation split, logs, and updates the best checkpoint.
  EpochLog end_epoch();

  /// Runs to the epoch budget or early stop.
  TrainResult run();

  Checkpoint checkpoint() const;
  const FusionModel& model() const { return model_; }
  const TrainerState& state() const { return state_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  void prepare_epoch();

  FusionModel model_;
  const FeatureSet* train_;
  const FeatureSet* val_;
  TrainConfig cfg_;
  std::vector<NamedTensor> params_;
  AdamMoments moments_;
  TrainerState state_;
  std::vector<SubSequence> windows_;
  bool windows_ready_ = false;
  std::optional<Checkpoint> best_;
  std::vector<EpochLog> log_;
  double epoch_started_ms_ = 0.0;
};

/// Ablation grid: the cross product of the listed switches and depths.
struct AblationGrid {
  std::vector<bool> use_u_blstm = {false, true};
  std::vector<bool> use_j_blstm = {false, true};
  std::vector<int> depths = {1, 2, 3, 4};

  /// "u=0,1;j=0,1;t=1,2,3,4" (any subset of keys; "default" for the above).
  static AblationGrid parse(const std::string& text);
  std::size_t size() const { return use_u_blstm.size() * use_j_blstm.size() * depths.size(); }
};

struct AblationRow {
  EvalRowContext context;
  std::optional<EvalReport> report;  // empty when the row failed
  std::string error;
};

/// Trains one model per grid point with the same seed and budget and reports
/// its best validation metrics. A failing row is recorded and the sweep goes on.
std::vector<AblationRow> ablate(const FeatureSet& train, const FeatureSet& val,
                                const AblationConfig& base_model, const TrainConfig& base_train,
                                const AblationGrid& grid);

std::string ablation_csv_header();
std::string ablation_csv_row(const AblationRow& row);

}  // namespace rja
