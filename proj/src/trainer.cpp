#include "rja/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace rja {

namespace {

double now_ms() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in (0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience < 0) throw ConfigError("patience must be >= 0");
}

void TrainConfig::write(KeyValues& kv) const {
  kv["train.lr"] = format_double(lr);
  kv["train.beta1"] = format_double(beta1);
  kv["train.beta2"] = format_double(beta2);
  kv["train.eps"] = format_double(eps);
  kv["train.epochs"] = std::to_string(epochs);
  kv["train.batch_size"] = std::to_string(batch_size);
  kv["train.seed"] = std::to_string(seed);
  kv["train.loss"] = to_string(loss);
  kv["train.patience"] = std::to_string(patience);
  kv["train.clip_norm"] = format_double(clip_norm);
  kv["train.log_wall_time"] = log_wall_time ? "1" : "0";
}

void TrainConfig::read(const KeyValues& kv) {
  lr = get_double(kv, "train.lr", lr);
  beta1 = get_double(kv, "train.beta1", beta1);
  beta2 = get_double(kv, "train.beta2", beta2);
  eps = get_double(kv, "train.eps", eps);
  epochs = static_cast<int>(get_int(kv, "train.epochs", epochs));
  batch_size = static_cast<int>(get_int(kv, "train.batch_size", batch_size));
  seed = get_u64(kv, "train.seed", seed);
  loss = parse_loss_kind(get_string(kv, "train.loss", to_string(loss)));
  patience = static_cast<int>(get_int(kv, "train.patience", patience));
  clip_norm = get_double(kv, "train.clip_norm", clip_norm);
  log_wall_time = get_bool(kv, "train.log_wall_time", log_wall_time);
}

AdamMoments AdamMoments::zeros_like(std::span<const NamedTensor> params) {
  AdamMoments m;
  for (const auto& p : params) {
    m.first.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
    m.second.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
  }
  return m;
}

void adam_step(std::span<const NamedTensor> params, std::span<const Matrix> grads,
               AdamMoments& moments, const TrainConfig& cfg, long step_index) {
  if (step_index < 1) throw ContractError("adam_step: step_index must be >= 1");
  if (grads.size() != params.size() || moments.first.size() != params.size() ||
      moments.second.size() != params.size())
    throw ContractError("adam_step: parameter, gradient and moment lists differ in length");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& g = grads[k];
    if (g.rows() != params[k].tensor.rows() || g.cols() != params[k].tensor.cols())
      throw DimensionError("adam_step: gradient for " + params[k].name + " has shape " +
                           detail::shape_str(g.rows(), g.cols()) + ", parameter is " +
                           params[k].tensor.shape());
    if (!g.allFinite())
      throw NumericError("adam_step: non-finite gradient for " + params[k].name + "; step aborted");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& m = moments.first[k];
    Matrix& v = moments.second[k];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grads[k];
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grads[k].cwiseAbs2();
    Tensor handle = params[k].tensor;
    handle.mutable_value().array() -=
        cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  }
}

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

EvalReport evaluate(const FusionModel& model, const FeatureSet& fs) {
  const auto windows = window_subsequences(fs, model.config().seq_len);
  if (windows.empty()) throw MetricError("evaluate: no complete sub-sequences in the split");
  NoGradGuard no_grad;
  const Eigen::Index L = model.config().seq_len;
  const auto n = static_cast<Eigen::Index>(windows.size()) * L;
  Matrix pred(n, model.config().output_dim);
  Matrix label(n, fs.output_dim());
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto row = static_cast<Eigen::Index>(w) * L;
    pred.middleRows(row, L) =
        model.forward(Tensor(windows[w].audio), Tensor(windows[w].visual)).value();
    label.middleRows(row, L) = windows[w].labels;
  }
  return evaluate_predictions(pred, label);
}

FusionModel rounded_to_f32(const FusionModel& model) {
  FusionModel copy = model.clone();
  for (auto& p : copy.parameters())
    p.tensor.mutable_value() = p.tensor.value().unaryExpr(
        [](double x) { return static_cast<double>(static_cast<float>(x)); });
  return copy;
}

std::string train_log_header(LossKind loss, Eigen::Index output_dim) {
  std::string h = "# loss=" + to_string(loss) + "\nepoch,train_loss";
  for (Eigen::Index k = 0; k < output_dim; ++k) h += ",val_ccc_" + std::to_string(k);
  return h + ",wall_ms";
}

std::string train_log_row(const EpochLog& row) {
  std::string s = std::to_string(row.epoch) + "," + format_double(row.train_loss);
  for (double c : row.val_ccc) s += "," + format_double(c);
  return s + "," + format_double(std::round(row.wall_ms));
}

FusionModel Checkpoint::model() const {
  FusionModel m = FusionModel::zeros(model_config);
  auto dst = m.parameters();
  if (dst.size() != parameters.size())
    throw ConfigError("checkpoint holds " + std::to_string(parameters.size()) +
                      " parameters, model config needs " + std::to_string(dst.size()));
  for (std::size_t k = 0; k < dst.size(); ++k) {
    const auto& src = parameters[k];
    if (src.name != dst[k].name)
      throw ConfigError("checkpoint parameter " + std::to_string(k) + " is '" + src.name +
                        "', model expects '" + dst[k].name + "'");
    if (src.tensor.rows() != dst[k].tensor.rows() || src.tensor.cols() != dst[k].tensor.cols())
      throw ConfigError("checkpoint parameter " + src.name + " has shape " + src.tensor.shape() +
                        ", model expects " + dst[k].tensor.shape());
    dst[k].tensor.mutable_value() = src.tensor.value();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(FusionModel model, const FeatureSet& train, const FeatureSet& val, TrainConfig cfg)
    : model_(std::move(model)), train_(&train), val_(&val), cfg_(cfg) {
  cfg_.validate();
  const auto& mc = model_.config();
  for (const FeatureSet* fs : {train_, val_}) {
    if (mc.modality != Modality::visual && fs->audio_dim() != mc.audio_dim)
      throw ConfigError("data has d_a=" + std::to_string(fs->audio_dim()) +
                        ", model expects d_a=" + std::to_string(mc.audio_dim));
    if (mc.modality != Modality::audio && fs->visual_dim() != mc.visual_dim)
      throw ConfigError("data has d_v=" + std::to_string(fs->visual_dim()) +
                        ", model expects d_v=" + std::to_string(mc.visual_dim));
    if (fs->output_dim() != mc.output_dim)
      throw ConfigError("data has m=" + std::to_string(fs->output_dim()) +
                        ", model expects m=" + std::to_string(mc.output_dim));
  }
  params_ = model_.parameters();
  moments_ = AdamMoments::zeros_like(params_);
}

Trainer Trainer::resume(const Checkpoint& ckpt, const FeatureSet& train, const FeatureSet& val) {
  Trainer t(ckpt.model(), train, val, ckpt.train_config);
  if (ckpt.moments.first.size() != t.params_.size() || ckpt.moments.second.size() != t.params_.size())
    throw ConfigError("checkpoint optimizer moments do not match its parameters");
  t.moments_ = ckpt.moments;
  t.state_ = ckpt.state;
  return t;
}

void Trainer::prepare_epoch() {
  if (windows_ready_) return;
  Rng rng = Rng(cfg_.seed).derive("sampler", static_cast<std::uint64_t>(state_.epoch));
  if (state_.rng_state.empty()) {
    state_.rng_state = rng.state();
  } else {
    rng.set_state(state_.rng_state);
  }
  windows_ = sample_subsequences(*train_, model_.config().seq_len, rng);
  if (windows_.empty()) throw ConfigError("training split has no complete sub-sequences");
  windows_ready_ = true;
  epoch_started_ms_ = now_ms();
}

std::size_t Trainer::steps_per_epoch() {
  prepare_epoch();
  const auto b = static_cast<std::size_t>(cfg_.batch_size);
  return (windows_.size() + b - 1) / b;
}

double Trainer::step() {
  const std::size_t steps = steps_per_epoch();
  if (state_.step_in_epoch >= steps) throw ContractError("Trainer::step: epoch already complete");
  const auto b = static_cast<std::size_t>(cfg_.batch_size);
  const std::size_t begin = state_.step_in_epoch * b;
  const std::size_t end = std::min(windows_.size(), begin + b);

  std::vector<Tensor> preds;
  const Eigen::Index L = model_.config().seq_len;
  Matrix labels(static_cast<Eigen::Index>(end - begin) * L, train_->output_dim());
  for (std::size_t i = begin; i < end; ++i) {
    const auto& w = windows_[i];
    preds.push_back(model_.forward(Tensor(w.audio), Tensor(w.visual)));
    labels.middleRows(static_cast<Eigen::Index>(i - begin) * L, L) = w.labels;
  }
  for (auto& p : params_) p.tensor.zero_grad();
  Tensor loss = regression_loss(cfg_.loss, concat_rows(preds), labels);
  backward(loss);

  std::vector<Matrix> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.push_back(p.tensor.grad());
  clip_global_norm(grads, cfg_.clip_norm);
  adam_step(params_, grads, moments_, cfg_, state_.adam_step + 1);

  ++state_.adam_step;
  ++state_.step_in_epoch;
  state_.epoch_loss_sum += loss.item();
  ++state_.epoch_loss_count;
  return loss.item();
}

EpochLog Trainer::end_epoch() {
  prepare_epoch();
  const EvalReport report = evaluate(rounded_to_f32(model_), *val_);
  EpochLog row;
  row.epoch = state_.epoch + 1;
  row.train_loss = state_.epoch_loss_count
                       ? state_.epoch_loss_sum / static_cast<double>(state_.epoch_loss_count)
                       : 0.0;
  row.val_ccc = report.ccc;
  row.wall_ms = cfg_.log_wall_time ? now_ms() - epoch_started_ms_ : 0.0;
  log_.push_back(row);

  const double mean = report.mean_ccc();
  const bool improved = mean > state_.best_val_ccc;
  if (improved) {
    state_.best_val_ccc = mean;
    state_.best_epoch = row.epoch;
    state_.bad_epochs = 0;
  } else {
    ++state_.bad_epochs;
    if (cfg_.patience > 0 && state_.bad_epochs >= cfg_.patience) state_.stopped = true;
  }
  ++state_.epoch;
  state_.step_in_epoch = 0;
  state_.epoch_loss_sum = 0.0;
  state_.epoch_loss_count = 0;
  state_.rng_state.clear();
  windows_.clear();
  windows_ready_ = false;
  if (improved) best_ = checkpoint();
  return row;
}

TrainResult Trainer::run() {
  while (!state_.stopped && state_.epoch < cfg_.epochs) {
    const std::size_t steps = steps_per_epoch();
    while (state_.step_in_epoch < steps) step();
    end_epoch();
  }
  TrainResult out;
  out.log = log_;
  out.last = checkpoint();
  out.best = best_ ? *best_ : out.last;
  return out;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.model_config = model_.config();
  c.train_config = cfg_;
  const FusionModel snapshot = rounded_to_f32(model_);
  c.parameters = snapshot.parameters();
  auto to_f32 = [](const Matrix& m) {
    return Matrix(m.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); }));
  };
  for (std::size_t k = 0; k < moments_.first.size(); ++k) {
    c.moments.first.push_back(to_f32(moments_.first[k]));
    c.moments.second.push_back(to_f32(moments_.second[k]));
  }
  c.state = state_;
  return c;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

AblationGrid AblationGrid::parse(const std::string& text) {
  AblationGrid g;
  if (text.empty() || text == "default") return g;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ';')) {
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError("grid entry '" + part + "' is not key=values");
    const std::string key = part.substr(0, eq);
    std::vector<long long> values;
    std::stringstream vs(part.substr(eq + 1));
    std::string item;
    while (std::getline(vs, item, ',')) {
      KeyValues kv{{key, item}};
      values.push_back(get_int(kv, key, 0));
    }
    if (values.empty()) throw ConfigError("grid entry '" + key + "' has no values");
    auto as_flags = [&](std::vector<bool>& out) {
      out.clear();
      for (auto v : values) {
        if (v != 0 && v != 1) throw ConfigError("grid switch '" + key + "' takes 0 or 1");
        out.push_back(v == 1);
      }
    };
    if (key == "u") {
      as_flags(g.use_u_blstm);
    } else if (key == "j") {
      as_flags(g.use_j_blstm);
    } else if (key == "t") {
      g.depths.clear();
      for (auto v : values) g.depths.push_back(static_cast<int>(v));
    } else {
      throw ConfigError("unknown grid key '" + key + "' (expected u, j or t)");
    }
  }
  return g;
}

std::vector<AblationRow> ablate(const FeatureSet& train, const FeatureSet& val,
                                const AblationConfig& base_model, const TrainConfig& base_train,
                                const AblationGrid& grid) {
  std::vector<AblationRow> rows;
  for (bool u : grid.use_u_blstm) {
    for (bool j : grid.use_j_blstm) {
      for (int t : grid.depths) {
        AblationConfig cfg = base_model;
        cfg.use_u_blstm = u;
        cfg.use_j_blstm = j;
        cfg.recursion_depth = t;
        AblationRow row;
        row.context = {cfg.hash(), t, u, j, cfg.weight_sharing};
        try {
          Rng rng = Rng(base_train.seed).derive("model");
          Trainer trainer(FusionModel::init(cfg, rng), train, val, base_train);
          const TrainResult result = trainer.run();
          row.report = evaluate(result.best.model(), val);
        } catch (const std::exception& e) {
          row.error = e.what();
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

std::string ablation_csv_header() { return eval_csv_header() + ",status"; }

std::string ablation_csv_row(const AblationRow& row) {
  if (row.report) return eval_csv_row(row.context, *row.report) + ",ok";
  std::string msg = row.error;
  for (char& c : msg)
    if (c == ',' || c == '\n' || c == '\r') c = ' ';
  const auto& c = row.context;
  return c.config_hash + "," + std::to_string(c.recursion_depth) + "," +
         (c.use_u_blstm ? "1" : "0") + "," + (c.use_j_blstm ? "1" : "0") + "," +
         (c.weight_sharing ? "1" : "0") + ",,,,,error: " + msg;
}

}  // namespace rja
