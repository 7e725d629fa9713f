#include <doctest.h>

#include "oracles.hpp"
#include "rja/core/grad_check.hpp"
#include "rja/metrics.hpp"
#include "rja/recurrent.hpp"

using namespace rja;
using rja::testing::random_matrix;

namespace {

LstmParams random_lstm(Eigen::Index d_in, Eigen::Index h, Rng& rng) {
  return {Tensor(random_matrix(d_in, 4 * h, rng), true), Tensor(random_matrix(h, 4 * h, rng), true),
          Tensor(random_matrix(1, 4 * h, rng), true)};
}

Matrix reversed_rows(const Matrix& m) { return m.colwise().reverse(); }

// Plain-Eigen cell equations, gate blocks (i, f, g, o).
std::pair<Matrix, Matrix> reference_step(const Matrix& x, const Matrix& h, const Matrix& c,
                                         const LstmParams& p) {
  const Eigen::Index n = p.hidden();
  const Matrix z = x * p.W_x.value() + h * p.W_h.value() + p.b.value();
  auto sig = [](const Matrix& m) { return Matrix((1.0 / (1.0 + (-m.array()).exp())).matrix()); };
  const Matrix i = sig(z.middleCols(0, n));
  const Matrix f = sig(z.middleCols(n, n));
  const Matrix g = z.middleCols(2 * n, n).array().tanh().matrix();
  const Matrix o = sig(z.middleCols(3 * n, n));
  const Matrix c_t = f.cwiseProduct(c) + i.cwiseProduct(g);
  const Matrix h_t = o.cwiseProduct(Matrix(c_t.array().tanh().matrix()));
  return {h_t, c_t};
}

}  // namespace

TEST_CASE("lstm_step with zero parameters") {
  const LstmParams p = LstmParams::zeros(3, 4);
  const LstmState s = lstm_step(Tensor::zeros(1, 3), Tensor::zeros(1, 4), Tensor::zeros(1, 4), p);
  CHECK(s.h.value().isZero(0.0));
  CHECK(s.c.value().isZero(0.0));

  const LstmState s1 =
      lstm_step(Tensor::zeros(1, 3), Tensor::zeros(1, 4), Tensor(Matrix::Ones(1, 4)), p);
  for (int k = 0; k < 4; ++k) {
    CHECK(s1.c.value()(0, k) == 0.5);
    CHECK(s1.h.value()(0, k) == doctest::Approx(0.23105857863000487).epsilon(1e-14));
  }
}

TEST_CASE("lstm_step rejects mismatched shapes") {
  const LstmParams p = LstmParams::zeros(3, 4);
  CHECK_THROWS_AS((void)lstm_step(Tensor::zeros(1, 2), Tensor::zeros(1, 4), Tensor::zeros(1, 4), p),
                  DimensionError);
  CHECK_THROWS_AS((void)lstm_step(Tensor::zeros(1, 3), Tensor::zeros(1, 5), Tensor::zeros(1, 4), p),
                  DimensionError);
  LstmParams bad = p;
  bad.b = Tensor::zeros(1, 15);
  CHECK_THROWS_AS(bad.validate(), DimensionError);
}

TEST_CASE("init sets the forget bias block to one") {
  Rng rng(1);
  const LstmParams p = LstmParams::init(3, 4, rng);
  const Matrix& b = p.b.value();
  CHECK(b.middleCols(0, 4).isZero(0.0));
  CHECK(b.middleCols(4, 4) == Matrix::Ones(1, 4));
  CHECK(b.middleCols(8, 8).isZero(0.0));
  const double limit = std::sqrt(6.0 / (3 + 16));
  CHECK(p.W_x.value().cwiseAbs().maxCoeff() <= limit);
}

TEST_CASE("property: h stays in (-1, 1)") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    LstmParams p = random_lstm(3, 4, rng);
    p.W_x.mutable_value() *= 10.0;
    const Tensor x(random_matrix(1, 3, rng) * 10.0);
    const LstmState s = lstm_step(x, Tensor(random_matrix(1, 4, rng)), Tensor(random_matrix(1, 4, rng) * 5.0), p);
    CHECK(s.h.value().cwiseAbs().maxCoeff() < 1.0);
  }
}

TEST_CASE("blstm_forward with L=1 sees one input in both directions") {
  Rng rng(3);
  const BlstmParams p{random_lstm(2, 3, rng), random_lstm(2, 3, rng)};
  const Tensor x(random_matrix(1, 2, rng));
  const Matrix out = blstm_forward(x, p).value();
  const Tensor z = Tensor::zeros(1, 3);
  CHECK(out.leftCols(3) == lstm_step(x, z, z, p.forward).h.value());
  CHECK(out.rightCols(3) == lstm_step(x, z, z, *p.backward).h.value());
  CHECK_THROWS_AS((void)blstm_forward(Tensor::zeros(0, 2), p), ContractError);
}

TEST_CASE("blstm_forward matches a step-by-step oracle on L=3") {
  Rng rng(4);
  const BlstmParams p{random_lstm(2, 3, rng), random_lstm(2, 3, rng)};
  const Matrix x = random_matrix(3, 2, rng);

  Matrix expected(3, 6);
  Matrix h = Matrix::Zero(1, 3), c = Matrix::Zero(1, 3);
  for (Eigen::Index t = 0; t < 3; ++t) {
    std::tie(h, c) = reference_step(x.row(t), h, c, p.forward);
    expected.block(t, 0, 1, 3) = h;
  }
  h.setZero();
  c.setZero();
  for (Eigen::Index t = 2; t >= 0; --t) {
    std::tie(h, c) = reference_step(x.row(t), h, c, *p.backward);
    expected.block(t, 3, 1, 3) = h;
  }
  const Matrix out = blstm_forward(Tensor(x), p).value();
  CHECK((out - expected).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("property: time reversal swaps directions bitwise") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index L = 1 + static_cast<Eigen::Index>(rng.below(7));
    const LstmParams f = random_lstm(3, 4, rng);
    const LstmParams b = random_lstm(3, 4, rng);
    const Matrix x = random_matrix(L, 3, rng);
    const Matrix out = blstm_forward(Tensor(x), BlstmParams{f, b}).value();
    const Matrix rev = reversed_rows(blstm_forward(Tensor(reversed_rows(x)), BlstmParams{b, f}).value());
    CHECK(rev.leftCols(4) == out.rightCols(4));
    CHECK(rev.rightCols(4) == out.leftCols(4));
  }
}

TEST_CASE("property: blstm output is bounded") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const BlstmParams p = BlstmParams::init(4, 5, rng);
    const Matrix out = blstm_forward(Tensor(random_matrix(6, 4, rng) * 20.0), p).value();
    CHECK(out.cwiseAbs().maxCoeff() < 1.0);
  }
}

TEST_CASE("a unidirectional layer is the forward half") {
  Rng rng(7);
  const BlstmParams both = BlstmParams::init(3, 4, rng);
  const BlstmParams fwd{both.forward, std::nullopt};
  CHECK(fwd.output_dim() == 4);
  const Tensor x(random_matrix(5, 3, rng));
  CHECK(blstm_forward(x, fwd).value() == blstm_forward(x, both).value().leftCols(4));

  std::vector<NamedTensor> names;
  both.append_parameters("j", names);
  REQUIRE(names.size() == 6);
  CHECK(names[0].name == "j.fwd.W_x");
  CHECK(names[5].name == "j.bwd.b");
}

TEST_CASE("gradients through blstm_forward match central differences") {
  Rng rng(8);
  const BlstmParams p{random_lstm(3, 4, rng), random_lstm(3, 4, rng)};
  Tensor x(random_matrix(5, 3, rng), true);
  const Tensor proj(random_matrix(8, 2, rng));
  const Matrix labels = random_matrix(5, 2, rng);
  std::vector<NamedTensor> checked = {{"x", x}};
  p.append_parameters("blstm", checked);
  const GradCheckReport rep =
      grad_check([&] { return ccc_loss(blstm_forward(x, p) * proj, labels); }, checked);
  CHECK_MESSAGE(rep.pass, rep.worst_param, "[", rep.worst_index, "] rel ", rep.max_rel_error);
  CHECK(rep.max_rel_error <= 1e-4);
}
