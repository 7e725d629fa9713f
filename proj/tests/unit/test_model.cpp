#include <doctest.h>

#include <set>

#include "oracles.hpp"
#include "rja/core/grad_check.hpp"
#include "rja/metrics.hpp"
#include "rja/model.hpp"

using namespace rja;
using rja::testing::random_matrix;

namespace {

AblationConfig small_config() {
  AblationConfig cfg;
  cfg.seq_len = 4;
  cfg.audio_dim = 6;
  cfg.visual_dim = 8;
  cfg.u_hidden_audio = 5;
  cfg.u_hidden_visual = 5;
  cfg.j_hidden = 5;
  return cfg;
}

int count_prefix(const std::vector<NamedTensor>& params, const std::string& prefix) {
  int n = 0;
  for (const auto& p : params) n += p.name.rfind(prefix, 0) == 0 ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("zero parameters predict zero") {
  const FusionModel model = FusionModel::zeros(small_config());
  Rng rng(1);
  const Tensor y = model.forward(Tensor(random_matrix(4, 6, rng)), Tensor(random_matrix(4, 8, rng)));
  CHECK(y.value().isZero(0.0));
}

TEST_CASE("output is L x m") {
  Rng rng(2);
  for (Eigen::Index m : {1, 2}) {
    for (auto [L, d_a, d_v] : {std::tuple{1, 3, 2}, std::tuple{4, 6, 8}, std::tuple{7, 2, 5}}) {
      AblationConfig cfg = small_config();
      cfg.seq_len = L;
      cfg.audio_dim = d_a;
      cfg.visual_dim = d_v;
      cfg.output_dim = m;
      const FusionModel model = FusionModel::init(cfg, rng);
      const Tensor y = model.forward(Tensor(random_matrix(L, d_a, rng)), Tensor(random_matrix(L, d_v, rng)));
      CHECK(y.rows() == L);
      CHECK(y.cols() == m);
    }
  }
}

TEST_CASE("without BLSTMs at t=1 the model is fuse, concat, head") {
  AblationConfig cfg = small_config();
  cfg.use_u_blstm = false;
  cfg.use_j_blstm = false;
  cfg.recursion_depth = 1;
  Rng rng(3);
  const FusionModel model = FusionModel::init(cfg, rng);
  const Tensor x_a(random_matrix(4, 6, rng));
  const Tensor x_v(random_matrix(4, 8, rng));

  const FusionResult r = recursive_fuse(x_a, x_v, *model.attention(), 1);
  Matrix fused(4, 14);
  fused << r.audio.value(), r.visual.value();
  const Matrix expected =
      (fused * model.head()[0].W.value()).rowwise() + model.head()[0].b.value().row(0);
  CHECK((model.forward(x_a, x_v).value() - expected).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("parameter lists") {
  Rng rng(4);
  AblationConfig cfg = small_config();
  const auto params = FusionModel::init(cfg, rng).parameters();
  CHECK(count_prefix(params, "attention.") == 12);
  CHECK(count_prefix(params, "attention.iter2.") == 6);
  CHECK(params.front().name == "u_blstm_a.fwd.W_x");
  CHECK(params.back().name == "head.b");

  bool found = false;
  for (const auto& p : params) found = found || p.name == "attention.iter2.W_ha";
  CHECK(found);

  std::set<std::string> names;
  std::set<const void*> storage;
  for (const auto& p : params) {
    names.insert(p.name);
    storage.insert(p.tensor.value().data());
  }
  CHECK(names.size() == params.size());
  CHECK(storage.size() == params.size());

  cfg.weight_sharing = true;
  for (int t : {1, 2, 4}) {
    cfg.recursion_depth = t;
    CHECK(count_prefix(FusionModel::init(cfg, rng).parameters(), "attention.") == 6);
  }
}

TEST_CASE("head input width follows the pipeline") {
  Rng rng(5);
  AblationConfig cfg = small_config();
  CHECK(FusionModel::init(cfg, rng).head_input_dim() == 10);  // J-BLSTM 2h
  cfg.use_j_blstm = false;
  CHECK(FusionModel::init(cfg, rng).head_input_dim() == 20);  // 2h + 2h
  cfg.use_u_blstm = false;
  CHECK(FusionModel::init(cfg, rng).head_input_dim() == 14);  // d_a + d_v
  cfg.use_u_blstm = true;
  cfg.bidirectional = false;
  CHECK(FusionModel::init(cfg, rng).head_input_dim() == 10);
}

TEST_CASE("smoke: every ablation configuration runs at L=8, d=16") {
  Rng rng(6);
  int built = 0;
  for (bool u : {false, true})
    for (bool j : {false, true})
      for (int t : {1, 2, 3, 4}) {
        AblationConfig cfg;
        cfg.use_u_blstm = u;
        cfg.use_j_blstm = j;
        cfg.recursion_depth = t;
        const FusionModel model = FusionModel::init(cfg, rng);
        const Tensor y =
            model.forward(Tensor(random_matrix(8, 16, rng)), Tensor(random_matrix(8, 16, rng)));
        CHECK(y.rows() == 8);
        CHECK(y.cols() == 2);
        CHECK(y.value().allFinite());
        ++built;
      }
  CHECK(built == 16);
}

TEST_CASE("single-modality baselines have no attention stage") {
  Rng rng(7);
  AblationConfig cfg = small_config();
  cfg.modality = Modality::audio;
  const FusionModel model = FusionModel::init(cfg, rng);
  CHECK_FALSE(model.attention().has_value());
  CHECK_FALSE(model.u_blstm_visual().has_value());
  const Tensor x_a(random_matrix(4, 6, rng));
  const Matrix y1 = model.forward(x_a, Tensor(random_matrix(4, 8, rng))).value();
  const Matrix y2 = model.forward(x_a, Tensor(random_matrix(4, 3, rng))).value();
  CHECK(y1 == y2);
}

TEST_CASE("dimension mismatches name the failing stage") {
  Rng rng(8);
  const FusionModel model = FusionModel::init(small_config(), rng);
  try {
    (void)model.forward(Tensor::zeros(4, 5), Tensor::zeros(4, 8));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("input stage") != std::string::npos);
  }
  try {
    (void)model.forward(Tensor::zeros(5, 6), Tensor::zeros(5, 8));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("attention stage") != std::string::npos);
  }
}

TEST_CASE("config validation and round trip") {
  AblationConfig cfg = small_config();
  cfg.recursion_depth = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.output_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = small_config();
  cfg.weight_sharing = true;
  cfg.modality = Modality::visual;
  KeyValues kv;
  cfg.write(kv);
  AblationConfig back;
  back.read(kv);
  CHECK(back.hash() == cfg.hash());
  CHECK(back.seq_len == 4);
  CHECK(back.modality == Modality::visual);
  CHECK(small_config().hash() != cfg.hash());
  CHECK(cfg.hash().size() == 16);
}

TEST_CASE("determinism: the same seed builds the same model") {
  Rng r1(9), r2(9), data(10);
  const FusionModel a = FusionModel::init(small_config(), r1);
  const FusionModel b = FusionModel::init(small_config(), r2);
  const Tensor x_a(random_matrix(4, 6, data));
  const Tensor x_v(random_matrix(4, 8, data));
  CHECK(a.forward(x_a, x_v).value() == b.forward(x_a, x_v).value());
  CHECK(a.forward(x_a, x_v).value() == a.forward(x_a, x_v).value());
}

TEST_CASE("clone is deep") {
  Rng rng(11);
  const FusionModel a = FusionModel::init(small_config(), rng);
  const FusionModel b = a.clone();
  b.parameters()[0].tensor.mutable_value().setZero();
  CHECK_FALSE(a.parameters()[0].tensor.value().isZero(0.0));
}

TEST_CASE("end-to-end gradient check over every parameter") {
  Rng rng(12);
  const FusionModel model = FusionModel::init(small_config(), rng);
  const Tensor x_a(random_matrix(4, 6, rng));
  const Tensor x_v(random_matrix(4, 8, rng));
  const Matrix labels = random_matrix(4, 2, rng);
  const auto params = model.parameters();
  const GradCheckReport rep =
      grad_check([&] { return ccc_loss(model.forward(x_a, x_v), labels); }, params);
  CHECK_MESSAGE(rep.pass, rep.worst_param, "[", rep.worst_index, "] rel ", rep.max_rel_error);
  CHECK(rep.max_rel_error <= 1e-4);
  std::size_t total = 0;
  for (const auto& p : params) total += static_cast<std::size_t>(p.tensor.size());
  CHECK(rep.entries_checked == total);
}
