#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "rja/trainer.hpp"

using namespace rja;
using rja::testing::random_matrix;

namespace {

SplitData small_data() {
  SynthConfig cfg;
  cfg.n_videos = 10;
  cfg.clips_per_video = 24;
  cfg.audio_dim = 5;
  cfg.visual_dim = 4;
  return generate(cfg);
}

AblationConfig small_model() {
  AblationConfig cfg;
  cfg.seq_len = 4;
  cfg.audio_dim = 5;
  cfg.visual_dim = 4;
  cfg.u_hidden_audio = 4;
  cfg.u_hidden_visual = 4;
  cfg.j_hidden = 6;
  return cfg;
}

TrainConfig small_train() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.lr = 5e-3;
  return cfg;
}

FusionModel seeded_model(const AblationConfig& cfg, std::uint64_t seed = 7) {
  Rng rng(seed);
  return FusionModel::init(cfg, rng);
}

std::string log_text(const TrainConfig& cfg, Eigen::Index m, const std::vector<EpochLog>& log) {
  std::string out = train_log_header(cfg.loss, m) + "\n";
  for (const auto& row : log) out += train_log_row(row) + "\n";
  return out;
}

}  // namespace

TEST_CASE("adam first step moves by lr against the gradient sign") {
  TrainConfig cfg;
  const std::vector<NamedTensor> params = {{"w", Tensor(Matrix{{0.0, 0.0}}, true)}};
  AdamMoments moments = AdamMoments::zeros_like(params);
  const std::vector<Matrix> grads = {Matrix{{0.5, -2.0}}};
  adam_step(params, grads, moments, cfg, 1);
  CHECK(params[0].tensor.value()(0, 0) == doctest::Approx(-1e-3).epsilon(1e-7));
  CHECK(params[0].tensor.value()(0, 1) == doctest::Approx(1e-3).epsilon(1e-7));
}

// Oracle: the Adam recurrence by hand for theta0 = 0, constant g = 0.5.
TEST_CASE("adam two-step oracle") {
  TrainConfig cfg;
  const std::vector<NamedTensor> params = {{"w", Tensor(Matrix{{0.0}}, true)}};
  AdamMoments moments = AdamMoments::zeros_like(params);
  const std::vector<Matrix> grads = {Matrix{{0.5}}};
  adam_step(params, grads, moments, cfg, 1);
  CHECK(std::abs(params[0].tensor.item() - -0.0009999999800000003) <= 1e-12);
  adam_step(params, grads, moments, cfg, 2);
  CHECK(std::abs(params[0].tensor.item() - -0.0019999999599999933) <= 1e-12);

  double m = 0, v = 0, theta = 0;
  for (int k = 1; k <= 2; ++k) {
    m = 0.9 * m + 0.1 * 0.5;
    v = 0.999 * v + 0.001 * 0.25;
    theta -= 1e-3 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
  }
  CHECK(std::abs(params[0].tensor.item() - theta) <= 1e-12);
}

TEST_CASE("zero gradients are a fixed point") {
  TrainConfig cfg;
  Rng rng(1);
  const Matrix start = random_matrix(3, 4, rng);
  const std::vector<NamedTensor> params = {{"w", Tensor(start, true)}};
  AdamMoments moments = AdamMoments::zeros_like(params);
  const std::vector<Matrix> grads = {Matrix::Zero(3, 4)};
  for (long k = 1; k <= 5; ++k) adam_step(params, grads, moments, cfg, k);
  CHECK(params[0].tensor.value() == start);
}

TEST_CASE("a non-finite gradient aborts the step and names the parameter") {
  TrainConfig cfg;
  const std::vector<NamedTensor> params = {{"first", Tensor(Matrix{{1.0}}, true)},
                                           {"second", Tensor(Matrix{{2.0}}, true)}};
  AdamMoments moments = AdamMoments::zeros_like(params);
  const std::vector<Matrix> grads = {Matrix{{0.3}}, Matrix{{std::nan("")}}};
  try {
    adam_step(params, grads, moments, cfg, 1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("second") != std::string::npos);
  }
  CHECK(params[0].tensor.item() == 1.0);
  CHECK(moments.first[0](0, 0) == 0.0);
  CHECK_THROWS_AS(adam_step(params, grads, moments, cfg, 0), ContractError);
}

TEST_CASE("global norm clipping") {
  std::vector<Matrix> g = {Matrix{{3.0}}, Matrix{{4.0}}};
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0](0, 0) == doctest::Approx(0.6));
  CHECK(g[1](0, 0) == doctest::Approx(0.8));
  std::vector<Matrix> h = {Matrix{{3.0}}, Matrix{{4.0}}};
  clip_global_norm(h, 0.0);
  CHECK(h[0](0, 0) == 3.0);
}

TEST_CASE("train config validation and keys") {
  TrainConfig cfg;
  cfg.beta1 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.loss = LossKind::mse;
  cfg.batch_size = 3;
  KeyValues kv;
  cfg.write(kv);
  TrainConfig back;
  back.read(kv);
  CHECK(back.loss == LossKind::mse);
  CHECK(back.batch_size == 3);
  CHECK(train_log_header(LossKind::mse, 2) == "# loss=mse\nepoch,train_loss,val_ccc_0,val_ccc_1,wall_ms");
}

TEST_CASE("lr = 0 leaves validation ccc unchanged across epochs") {
  const SplitData d = small_data();
  TrainConfig cfg = small_train();
  cfg.lr = 0.0;
  cfg.patience = 0;
  Trainer trainer(seeded_model(small_model()), d.train, d.val, cfg);
  const TrainResult r = trainer.run();
  REQUIRE(r.log.size() == 3);
  CHECK(r.log[1].val_ccc == r.log[0].val_ccc);
  CHECK(r.log[2].val_ccc == r.log[0].val_ccc);
}

TEST_CASE("training improves the loss and reruns are bitwise identical") {
  const SplitData d = small_data();
  const TrainConfig cfg = small_train();
  Trainer a(seeded_model(small_model()), d.train, d.val, cfg);
  Trainer b(seeded_model(small_model()), d.train, d.val, cfg);
  const TrainResult ra = a.run();
  const TrainResult rb = b.run();
  CHECK(log_text(cfg, 2, ra.log) == log_text(cfg, 2, rb.log));
  CHECK(encode_checkpoint(ra.best) == encode_checkpoint(rb.best));
  CHECK(ra.log.back().train_loss < ra.log.front().train_loss);
  CHECK(ra.log.front().wall_ms == 0.0);
}

TEST_CASE("best checkpoint reproduces the logged best validation ccc") {
  const SplitData d = small_data();
  Trainer trainer(seeded_model(small_model()), d.train, d.val, small_train());
  const TrainResult r = trainer.run();
  const Checkpoint loaded = decode_checkpoint(encode_checkpoint(r.best));
  const EvalReport rep = evaluate(loaded.model(), d.val);
  CHECK(rep.mean_ccc() == r.best.state.best_val_ccc);
  const auto& row = r.log[static_cast<std::size_t>(r.best.state.best_epoch - 1)];
  CHECK(rep.ccc == row.val_ccc);
}

TEST_CASE("checkpoint round trip preserves names, values and outputs") {
  const SplitData d = small_data();
  Trainer trainer(seeded_model(small_model()), d.train, d.val, small_train());
  for (int k = 0; k < 3; ++k) trainer.step();
  const Checkpoint ckpt = trainer.checkpoint();
  const auto path = std::filesystem::temp_directory_path() / "rja_test_trainer.rjac";
  save_checkpoint(ckpt, path);
  const Checkpoint back = load_checkpoint(path);
  std::filesystem::remove(path);

  REQUIRE(back.parameters.size() == ckpt.parameters.size());
  for (std::size_t k = 0; k < ckpt.parameters.size(); ++k) {
    CHECK(back.parameters[k].name == ckpt.parameters[k].name);
    CHECK(back.parameters[k].tensor.value() == ckpt.parameters[k].tensor.value());
    CHECK(back.moments.second[k] == ckpt.moments.second[k]);
  }
  CHECK(back.state.adam_step == 3);
  CHECK(back.state.rng_state == ckpt.state.rng_state);
  CHECK(back.model_config.hash() == ckpt.model_config.hash());

  Rng rng(2);
  const Tensor x_a(random_matrix(4, 5, rng));
  const Tensor x_v(random_matrix(4, 4, rng));
  const Matrix before = trainer.model().forward(x_a, x_v).value();
  const Matrix after = back.model().forward(x_a, x_v).value();
  CHECK((before - after).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("RJAC decoding rejects damaged files") {
  const SplitData d = small_data();
  Trainer trainer(seeded_model(small_model()), d.train, d.val, small_train());
  const auto bytes = encode_checkpoint(trainer.checkpoint());
  auto bad = bytes;
  bad[1] = 'X';
  CHECK_THROWS_AS((void)decode_checkpoint(bad), FormatError);
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
  CHECK_THROWS_AS((void)decode_checkpoint(cut), FormatError);
  auto extra = bytes;
  extra.push_back(1);
  CHECK_THROWS_AS((void)decode_checkpoint(extra), FormatError);

  Checkpoint ckpt = decode_checkpoint(bytes);
  ckpt.model_config.j_hidden = 7;
  CHECK_THROWS_AS((void)ckpt.model(), ConfigError);
}

TEST_CASE("resuming reproduces the uninterrupted loss curve") {
  const SplitData d = small_data();
  TrainConfig cfg = small_train();
  cfg.batch_size = 4;
  Trainer full(seeded_model(small_model()), d.train, d.val, cfg);
  for (int k = 0; k < 3; ++k) full.step();
  const Checkpoint mid = decode_checkpoint(encode_checkpoint(full.checkpoint()));
  Trainer resumed = Trainer::resume(mid, d.train, d.val);
  for (int k = 0; k < 5; ++k) {
    const double a = full.step();
    const double b = resumed.step();
    CAPTURE(k);
    CHECK(std::abs(a - b) <= 1e-6);
  }

  // Across an epoch boundary the sampler stream must also resume.
  Trainer whole(seeded_model(small_model()), d.train, d.val, cfg);
  const std::size_t steps = whole.steps_per_epoch();
  for (std::size_t k = 0; k < steps; ++k) whole.step();
  whole.end_epoch();
  Trainer again = Trainer::resume(decode_checkpoint(encode_checkpoint(whole.checkpoint())), d.train, d.val);
  for (int k = 0; k < 5; ++k) CHECK(std::abs(whole.step() - again.step()) <= 1e-6);
}

TEST_CASE("trainer rejects data that does not fit the model") {
  const SplitData d = small_data();
  AblationConfig cfg = small_model();
  cfg.audio_dim = 6;
  CHECK_THROWS_AS(Trainer(seeded_model(cfg), d.train, d.val, small_train()), ConfigError);
}

TEST_CASE("evaluation fails on a split without complete windows") {
  const SplitData d = small_data();
  AblationConfig cfg = small_model();
  cfg.seq_len = 30;
  FusionModel model = seeded_model(cfg);
  CHECK_THROWS_AS((void)evaluate(model, d.val), MetricError);
}

TEST_CASE("ablation grid parsing") {
  CHECK(AblationGrid::parse("default").size() == 16);
  const AblationGrid g = AblationGrid::parse("u=1;t=2,3");
  CHECK(g.use_u_blstm == std::vector<bool>{true});
  CHECK(g.use_j_blstm.size() == 2);
  CHECK(g.depths == std::vector<int>{2, 3});
  CHECK(g.size() == 4);
  CHECK_THROWS_AS((void)AblationGrid::parse("u=2"), ConfigError);
  CHECK_THROWS_AS((void)AblationGrid::parse("k=1"), ConfigError);
  CHECK_THROWS_AS((void)AblationGrid::parse("t"), ConfigError);
}

TEST_CASE("ablate yields one row per grid point and records failures") {
  const SplitData d = small_data();
  TrainConfig cfg = small_train();
  cfg.epochs = 1;
  const auto rows = ablate(d.train, d.val, small_model(), cfg, AblationGrid{});
  REQUIRE(rows.size() == 16);
  for (const auto& r : rows) CHECK(r.report.has_value());
  CHECK(rows[0].context.recursion_depth == 1);
  CHECK_FALSE(rows[0].context.use_u_blstm);
  CHECK_FALSE(rows[0].context.use_j_blstm);

  // The no-BLSTM, t=1 row is an ordinary run of that configuration.
  AblationConfig plain = small_model();
  plain.use_u_blstm = false;
  plain.use_j_blstm = false;
  plain.recursion_depth = 1;
  Rng rng = Rng(cfg.seed).derive("model");
  Trainer trainer(FusionModel::init(plain, rng), d.train, d.val, cfg);
  const EvalReport direct = evaluate(trainer.run().best.model(), d.val);
  CHECK(rows[0].report->ccc == direct.ccc);

  AblationGrid bad;
  bad.use_u_blstm = {false};
  bad.use_j_blstm = {false};
  bad.depths = {0, 1};
  const auto mixed = ablate(d.train, d.val, small_model(), cfg, bad);
  REQUIRE(mixed.size() == 2);
  CHECK_FALSE(mixed[0].report.has_value());
  CHECK(mixed[1].report.has_value());
  const std::string row = ablation_csv_row(mixed[0]);
  CHECK(row.find("error:") != std::string::npos);
  CHECK(ablation_csv_row(mixed[1]).substr(ablation_csv_row(mixed[1]).size() - 3) == ",ok");
}
