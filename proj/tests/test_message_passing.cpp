#include <gtest/gtest.h>

#include <chrono>

#include "check_util.hpp"
#include "saft/message_passing.hpp"
#include "saft/oracles.hpp"
#include "saft/synthetic.hpp"

using namespace saft;
using testutil::random_tensor;

namespace {

Tensor silu_dense(Tensor x) {
  for (double& v : x.data()) v = v * sigmoid(v);
  return x;
}

Tensor affine(const Tensor& x, const Linear& l) {
  Tensor y = matmul(x, l.w->value);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += l.b->value(0, j);
  return y;
}

Tensor hadamard_dense(Tensor a, const Tensor& b) {
  for (std::size_t k = 0; k < a.size(); ++k) a[k] *= b[k];
  return a;
}

// silu(x) = 1
double silu_inverse_of_one() {
  double x = 1.0;
  for (int i = 0; i < 50; ++i) {
    const double s = sigmoid(x);
    x -= (x * s - 1.0) / (s * (1.0 + x * (1.0 - s)));
  }
  return x;
}

struct Fixture {
  IncidenceOperators ops;
  Tensor xt_u, xt_i, x_u, x_i;
};

Fixture make_fixture(std::uint64_t seed, std::size_t d = 3) {
  Fixture f;
  f.ops = synth::random_incidence(seed);
  const auto m = f.ops.num_edges();
  f.xt_u = random_tensor(m, d, seed + 1);
  f.xt_i = random_tensor(m, d, seed + 2);
  f.x_u = random_tensor(m, d, seed + 3);
  f.x_i = random_tensor(m, d, seed + 4);
  return f;
}

}  // namespace

TEST(InitEmbeddings, InjectsOriginalFeatures) {
  const auto f = make_fixture(1);
  Tape t;
  const MpState s = init_embeddings(t.constant(f.xt_u), t.constant(f.xt_i), t.constant(f.x_u), t.constant(f.x_i), 2.0);
  EXPECT_LT(max_abs_diff(s.user0.value(), f.xt_u + 2.0 * f.x_u), 1e-15);
  EXPECT_LT(max_abs_diff(s.item0.value(), f.xt_i + 2.0 * f.x_i), 1e-15);
  const MpState z = init_embeddings(t.constant(f.xt_u), t.constant(f.xt_i), t.constant(f.x_u), t.constant(f.x_i), 0.0);
  EXPECT_EQ(z.user0.value().data(), f.xt_u.data());
}

TEST(InitEmbeddings, ShapeMismatch) {
  Tape t;
  EXPECT_THROW(init_embeddings(t.constant(Tensor::zeros(2, 3)), t.constant(Tensor::zeros(2, 3)),
                               t.constant(Tensor::zeros(3, 3)), t.constant(Tensor::zeros(2, 3)), 1.0),
               DimensionError);
}

TEST(LgaStep, DegreeOneUsersQuarterAfterTwoSteps) {
  const auto ops = synth::star_graph(4);  // every item has degree 1
  Tape t;
  const Tensor u0 = random_tensor(4, 2, 3);
  MpState s = init_embeddings(t.constant(u0), t.constant(u0), t.constant(Tensor::zeros(4, 2)),
                              t.constant(Tensor::zeros(4, 2)), 0.0);
  s = lga_step(lga_step(s, ops, 0.0), ops, 0.0);
  EXPECT_LT(max_abs_diff(s.item.value(), u0 * 0.25), 1e-15);
  MpState r = init_embeddings(t.constant(u0), t.constant(u0), t.constant(Tensor::zeros(4, 2)),
                              t.constant(Tensor::zeros(4, 2)), 0.0);
  r = lga_step(r, ops, 1.0);
  EXPECT_LT(max_abs_diff(r.item.value(), u0 * 1.5), 1e-15);
}

TEST(LgaStep, MatchesDenseRecurrence) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto f = make_fixture(seed);
    const Tensor pu = oracle::side_transition(f.ops, Side::User), pi = oracle::side_transition(f.ops, Side::Item);
    const double delta = 0.7, lambda = 1.3;
    Tape t;
    MpState s = init_embeddings(t.constant(f.xt_u), t.constant(f.xt_i), t.constant(f.x_u), t.constant(f.x_i), lambda);
    const Tensor u0 = f.xt_u + lambda * f.x_u, i0 = f.xt_i + lambda * f.x_i;
    Tensor u = u0, i = i0;
    for (int r = 0; r < 3; ++r) {
      s = lga_step(s, f.ops, delta);
      u = matmul(pu, u) + delta * u0;
      i = matmul(pi, i) + delta * i0;
    }
    EXPECT_LT(max_abs_diff(s.user.value(), u), 1e-10);
    EXPECT_LT(max_abs_diff(s.item.value(), i), 1e-10);
  }
}

TEST(LgaStep, ClosedFormOfTheRecurrence) {
  const auto f = make_fixture(4);
  const Tensor pu = oracle::side_transition(f.ops, Side::User);
  const double delta = 0.9;
  const std::size_t R = 4;
  Tape t;
  MpState s = init_embeddings(t.constant(f.xt_u), t.constant(f.xt_i), t.constant(f.x_u), t.constant(f.x_i), 0.0);
  for (std::size_t r = 0; r < R; ++r) s = lga_step(s, f.ops, delta);
  // P^R U0 + delta * sum_{r<R} P^r U0
  Tensor power = f.xt_u, acc = Tensor::zeros(f.xt_u.rows(), f.xt_u.cols());
  for (std::size_t r = 0; r < R; ++r) {
    acc += power;
    power = matmul(pu, power);
  }
  EXPECT_LT(max_abs_diff(s.user.value(), power + delta * acc), 1e-10);
}

TEST(GauStep, MatchesDenseReference) {
  const auto f = make_fixture(7);
  ParamStore store;
  std::mt19937_64 rng(1);
  const auto p = make_mp_layer(store, "mp", 3, MpVariant::Gau, rng);
  const Tensor pu = oracle::side_transition(f.ops, Side::User);
  const double delta = 1.5, lambda = 0.5;
  Tape t;
  Binding bind(t);
  MpState s = init_embeddings(t.constant(f.xt_u), t.constant(f.xt_i), t.constant(f.x_u), t.constant(f.x_i), lambda);
  const GauGates g = gau_gates(bind, p, s);
  for (int r = 0; r < 3; ++r) s = gau_step(bind, s, g, p, f.ops, delta);

  const Tensor u0 = f.xt_u + lambda * f.x_u;
  const Tensor gamma = silu_dense(affine(u0, p.user.gate));
  const Tensor resid = silu_dense(affine(u0, p.user.resid));
  Tensor u = u0;
  for (int r = 0; r < 3; ++r) u = affine(hadamard_dense(gamma, matmul(pu, u) + delta * resid), p.user.mix);
  EXPECT_LT(max_abs_diff(s.user.value(), u), 1e-10);
}

TEST(GauStep, NeutralGatesReduceToLga) {
  const auto f = make_fixture(8);
  ParamStore store;
  std::mt19937_64 rng(2);
  const auto p = make_mp_layer(store, "mp", 3, MpVariant::Gau, rng);
  const double one = silu_inverse_of_one();
  for (const MpSideParams* side : {&p.user, &p.item}) {
    side->gate.w->value = Tensor::zeros(3, 3);
    side->gate.b->value = Tensor::filled(1, 3, one);
    side->mix.w->value = Tensor::identity(3);
    side->mix.b->value = Tensor::zeros(1, 3);
  }
  Tape t;
  Binding bind(t);
  MpState a = init_embeddings(t.constant(f.xt_u), t.constant(f.xt_i), t.constant(f.x_u), t.constant(f.x_i), 1.0);
  MpState b = a;
  const GauGates g = gau_gates(bind, p, a);
  for (int r = 0; r < 3; ++r) {
    a = gau_step(bind, a, g, p, f.ops, 0.0);
    b = lga_step(b, f.ops, 0.0);
  }
  EXPECT_LT(max_abs_diff(a.user.value(), b.user.value()), 1e-12);
  EXPECT_LT(max_abs_diff(a.item.value(), b.item.value()), 1e-12);
}

TEST(GauStep, ZeroResidualVanishes) {
  const auto f = make_fixture(9);
  ParamStore store;
  std::mt19937_64 rng(3);
  const auto p = make_mp_layer(store, "mp", 3, MpVariant::Gau, rng);
  Tape t;
  Binding bind(t);
  MpState s = init_embeddings(t.constant(f.xt_u), t.constant(f.xt_i), t.constant(f.x_u), t.constant(f.x_i), 1.0);
  GauGates g = gau_gates(bind, p, s);
  g.delta_user = t.constant(Tensor::zeros(f.xt_u.rows(), 3));
  g.delta_item = g.delta_user;
  const MpState a = gau_step(bind, s, g, p, f.ops, 5.0);
  const MpState b = gau_step(bind, s, g, p, f.ops, 0.0);
  EXPECT_LT(max_abs_diff(a.user.value(), b.user.value()), 1e-15);
}

TEST(Finalize, ConstantRowsGiveBias) {
  ParamStore store;
  std::mt19937_64 rng(4);
  const auto p = make_mp_layer(store, "mp", 4, MpVariant::Lga, rng);
  p.user.out.w->value = Tensor::identity(4);
  p.user.norm.bias->value = Tensor::from_rows({{1, 2, 3, 4}});
  Tape t;
  Binding bind(t);
  MpState s;
  s.user = t.constant(Tensor::filled(3, 4, 2.0));
  s.item = s.user;
  const auto [xu, xi] = finalize(bind, s, p);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(xu.value()(i, j), static_cast<double>(j + 1), 1e-12);
}

TEST(Finalize, RowsAreStandardizedBeforeAffine) {
  const auto f = make_fixture(10, 5);
  ParamStore store;
  std::mt19937_64 rng(5);
  const auto p = make_mp_layer(store, "mp", 5, MpVariant::Lga, rng);
  Tape t;
  Binding bind(t);
  MpState s;
  s.user = t.constant(f.xt_u);
  s.item = t.constant(f.xt_i);
  const Tensor y = finalize(bind, s, p).first.value();
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double mean = 0.0, var = 0.0;
    for (double v : y.row(i)) mean += v / 5.0;
    for (double v : y.row(i)) var += (v - mean) * (v - mean) / 5.0;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-3);  // eps in the denominator
  }
}

TEST(MessagePassing, GradientThroughTwoLgaSteps) {
  const auto f = make_fixture(11);
  ParamStore store;
  std::mt19937_64 rng(6);
  const auto p = make_mp_layer(store, "mp", 3, MpVariant::Lga, rng);
  const Tensor w = random_tensor(f.ops.num_edges(), 3, 12);
  MpConfig cfg;
  cfg.R = 2;
  const double err = testutil::gradcheck({f.xt_u, f.x_u}, [&](Tape& t, const std::vector<Var>& v) {
    Binding bind(t);
    auto [xu, xi] = message_passing(bind, p, cfg, f.ops, v[0], t.constant(f.xt_i), v[1], t.constant(f.x_i));
    return sum(hadamard(xu, t.constant(w)));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(MessagePassing, ConfigValidation) {
  MpConfig c;
  c.R = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c.R = 1;
  c.delta = -1;
  EXPECT_THROW(c.validate(), ContractError);
  EXPECT_EQ(parse_variant("gau"), MpVariant::Gau);
  EXPECT_THROW(parse_variant("gat"), ContractError);
}
