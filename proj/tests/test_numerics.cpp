#include "csiwm/autodiff.hpp"
#include "csiwm/expm.hpp"
#include "csiwm/grad_check.hpp"
#include "csiwm/sym_eig.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace csiwm;
using csiwm::testing::max_rel_error;
using csiwm::testing::random_matrix;
using csiwm::testing::random_matrix_with_norm1;
using csiwm::testing::taylor_expm;

TEST(Expm, ZeroIsIdentity) {
  EXPECT_EQ(expm(Eigen::MatrixXd::Zero(3, 3)), Eigen::MatrixXd::Identity(3, 3));
}

TEST(Expm, Diagonal) {
  const Eigen::MatrixXd e = expm(Eigen::Vector2d(1.0, -1.0).asDiagonal().toDenseMatrix());
  EXPECT_NEAR(e(0, 0), std::exp(1.0), 1e-15);
  EXPECT_NEAR(e(1, 1), std::exp(-1.0), 1e-16);
  EXPECT_EQ(e(0, 1), 0.0);
  EXPECT_EQ(e(1, 0), 0.0);
}

TEST(Expm, QuarterTurnMatchesTaylor) {
  Eigen::Matrix2d g;
  g << 0, -std::numbers::pi / 2, std::numbers::pi / 2, 0;
  Eigen::Matrix2d want;
  want << 0, -1, 1, 0;
  const Eigen::MatrixXd oracle = taylor_expm(g);
  EXPECT_LT((oracle - want).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((expm(g) - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Expm, RejectsBadInput) {
  EXPECT_THROW(expm(Eigen::MatrixXd::Zero(2, 3)), std::invalid_argument);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 2);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(expm(bad), std::domain_error);
  EXPECT_THROW(expm_frechet(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(3, 3)), std::invalid_argument);
}

TEST(Expm, LargeNormUsesSquaring) {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd a = random_matrix_with_norm1(rng, 5, 6.0);
  EXPECT_GE(expm_squarings(a), 4);
  // exp(A) = exp(A/2)^2 as an independent route at this norm.
  const Eigen::MatrixXd half = taylor_expm(a / 2.0, 60);
  EXPECT_LT(max_rel_error(expm(a), half * half), 1e-11);
}

TEST(ExpmProperties, GroupIdentities) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd a = random_matrix_with_norm1(rng, 6, 2.0 * (trial + 1) / 100.0);
    const Eigen::MatrixXd ea = expm(a);
    EXPECT_LT((expm(Eigen::MatrixXd(-a)) * ea - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-8);
    const double det = ea.determinant();
    EXPECT_LT(std::abs(det - std::exp(a.trace())) / std::exp(a.trace()), 1e-8);

    // Commuting pair: two polynomials in the same matrix.
    const Eigen::MatrixXd b = 0.3 * a + 0.1 * a * a / std::max(1.0, a.norm());
    const Eigen::MatrixXd c = -0.5 * a;
    EXPECT_LT((expm(b) * expm(c) - expm(Eigen::MatrixXd(b + c))).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(ExpmFrechet, AtZeroIsIdentityMap) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd e = random_matrix(rng, 4, 4);
  EXPECT_LT((expm_frechet(Eigen::MatrixXd::Zero(4, 4), e) - e).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ExpmFrechet, CommutingDiagonal) {
  const Eigen::MatrixXd a = Eigen::Vector3d(0.3, -0.2, 0.7).asDiagonal().toDenseMatrix();
  const Eigen::MatrixXd e = Eigen::Vector3d(1.5, 2.0, -0.4).asDiagonal().toDenseMatrix();
  EXPECT_LT((expm_frechet(a, e) - e * expm(a)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ExpmFrechet, MatchesCentralDifference) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd a = random_matrix_with_norm1(rng, 4, 1.0);
    const Eigen::MatrixXd e = random_matrix(rng, 4, 4);
    const double h = 1e-6;
    const Eigen::MatrixXd fd = (taylor_expm(a + h * e) - taylor_expm(a - h * e)) / (2 * h);
    EXPECT_LT(max_rel_error(expm_frechet(a, e), fd), 1e-5);
  }
}

TEST(SymEig, Identity) {
  const auto r = sym_eig(Eigen::MatrixXd::Identity(3, 3));
  EXPECT_EQ(r.values, Eigen::Vector3d::Ones());
}

TEST(SymEig, DiagonalAxisAligned) {
  const auto r = sym_eig(Eigen::Vector2d(1.0, 3.0).asDiagonal().toDenseMatrix());
  EXPECT_DOUBLE_EQ(r.values[0], 3.0);
  EXPECT_DOUBLE_EQ(r.values[1], 1.0);
  EXPECT_DOUBLE_EQ(std::abs(r.vectors(1, 0)), 1.0);
  EXPECT_DOUBLE_EQ(std::abs(r.vectors(0, 1)), 1.0);
}

TEST(SymEig, TwoByTwoCharacteristicPolynomial) {
  Eigen::Matrix2d s;
  s << 2, 1, 1, 2;
  // lambda^2 - tr*lambda + det = 0.
  const double tr = 4.0, det = 3.0;
  const double disc = std::sqrt(tr * tr - 4 * det);
  const auto r = sym_eig(s);
  EXPECT_NEAR(r.values[0], (tr + disc) / 2, 1e-14);
  EXPECT_NEAR(r.values[1], (tr - disc) / 2, 1e-14);
}

TEST(SymEig, RandomReconstruction) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::MatrixXd m = random_matrix(rng, 7, 7);
    const Eigen::MatrixXd s = m + m.transpose();
    const auto r = sym_eig(s);
    const Eigen::MatrixXd recon = r.vectors * r.values.asDiagonal() * r.vectors.transpose();
    EXPECT_LT((recon - s).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((r.vectors.transpose() * r.vectors - Eigen::MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((s * r.vectors - r.vectors * r.values.asDiagonal()).cwiseAbs().maxCoeff(), 1e-9);
    for (int i = 0; i + 1 < 7; ++i) EXPECT_GE(r.values[i], r.values[i + 1]);
  }
}

TEST(SymEig, RejectsAsymmetric) {
  Eigen::Matrix2d s;
  s << 1, 2, 0, 1;
  EXPECT_THROW(sym_eig(s), std::invalid_argument);
}

TEST(Backward, QuadraticAndL1) {
  auto x = ad::parameter(Tensor({2}, {1.0, 2.0}));
  ad::backward(ad::sum(ad::square(x)));
  EXPECT_EQ(x.grad().data(), Eigen::Vector2d(2.0, 4.0));

  auto y = ad::parameter(Tensor({2}, {3.0, -2.0}));
  ad::backward(ad::sum(ad::abs(y)));
  EXPECT_EQ(y.grad().data(), Eigen::Vector2d(1.0, -1.0));
}

TEST(Backward, RejectsNonScalarRoot) {
  auto x = ad::parameter(Tensor({2}, {1.0, 2.0}));
  EXPECT_THROW(ad::backward(ad::square(x)), std::invalid_argument);
}

TEST(Backward, CycleIsDetected) {
  auto x = ad::parameter(Tensor({1}, {1.0}));
  auto y = ad::square(x);
  auto z = ad::sum(y);
  y.node()->parents.push_back(z.node());  // force a loop
  EXPECT_THROW(ad::backward(z), std::logic_error);
  y.node()->parents.pop_back();
}

TEST(Backward, ExpmMatchesFiniteDifferences) {
  std::mt19937_64 rng(29);
  const Eigen::MatrixXd a = random_matrix(rng, 3, 3, -0.5, 0.5);
  const Eigen::MatrixXd v = random_matrix(rng, 3, 1);
  Tensor at = Tensor::from_matrix(RowMatrixXd(a));
  const Tensor vt = Tensor::from_matrix(RowMatrixXd(v));
  auto loss = [&](const std::vector<ad::Var>& p) { return ad::sum(ad::matmul(ad::expm(p[0]), ad::constant(vt))); };
  const auto report = grad_check(loss, {{"A", at}}, 1e-6, 1e-6);
  EXPECT_TRUE(report.pass) << report.max_rel_error;
  EXPECT_EQ(report.probes, 9);
}

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Smooth scalar read-out so every op's full Jacobian is exercised.
ad::Var readout(const ad::Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(y, ad::constant(random_tensor(rng, y.shape()))));
}

void expect_gradients(const LossBuilder& loss, const std::vector<NamedTensor>& params, double tol = 1e-4) {
  const auto report = grad_check(loss, params, 1e-6, tol);
  for (const auto& e : report.params) EXPECT_LE(e.max_rel_error, tol) << e.name;
  EXPECT_TRUE(report.pass);
}

}  // namespace

TEST(BackwardProperties, EveryOpMatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  const Tensor a = random_tensor(rng, {3, 4});
  const Tensor b = random_tensor(rng, {3, 4});
  const Tensor pos = random_tensor(rng, {3, 4}, 0.2, 2.0);
  const Tensor w = random_tensor(rng, {4, 5});
  const Tensor vec4 = random_tensor(rng, {4});

  expect_gradients([](const auto& p) { return readout(ad::add(p[0], p[1]), 1); }, {{"a", a}, {"b", b}});
  expect_gradients([](const auto& p) { return readout(ad::sub(p[0], p[1]), 2); }, {{"a", a}, {"b", b}});
  expect_gradients([](const auto& p) { return readout(ad::mul(p[0], p[1]), 3); }, {{"a", a}, {"b", b}});
  expect_gradients([](const auto& p) { return readout(ad::scale(ad::add_scalar(p[0], 0.3), -1.7), 4); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::abs(p[0]), 5); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::square(p[0]), 6); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::sqrt(p[0]), 7); }, {{"pos", pos}});
  expect_gradients([](const auto& p) { return readout(ad::relu(p[0]), 8); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::gelu(p[0]), 9); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::sigmoid(p[0]), 10); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::tanh(p[0]), 11); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::add_rowwise(p[0], p[1]), 12); }, {{"a", a}, {"v", vec4}});
  expect_gradients([](const auto& p) { return readout(ad::mul_rowwise(p[0], p[1]), 13); }, {{"a", a}, {"v", vec4}});
  expect_gradients([](const auto& p) { return readout(ad::matmul(p[0], p[1]), 14); }, {{"a", a}, {"w", w}});
  expect_gradients([](const auto& p) { return readout(ad::transpose(p[0]), 15); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::reshape(p[0], {2, 6}), 16); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::slice(p[0], 1, 3), 17); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::concat({p[0], p[1]}, 1), 18); }, {{"a", a}, {"b", b}});
  expect_gradients([](const auto& p) { return readout(ad::concat({p[0], p[1]}, 0), 19); }, {{"a", a}, {"b", b}});
  expect_gradients([](const auto& p) { return ad::mean(ad::square(p[0])); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::sum_axis(p[0], 0), 20); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::broadcast_axis(p[0], 1, 3), 21); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::batch_norm(p[0], 1e-5), 22); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::standardize_rows(p[0], 1e-5), 23); }, {{"a", a}});
  expect_gradients([](const auto& p) { return readout(ad::l2_normalize_rows(p[0], 1e-12), 29); }, {{"a", a}});

  const Tensor c = random_tensor(rng, {2, 3, 4});
  const Tensor d = random_tensor(rng, {2, 4, 3});
  expect_gradients([](const auto& p) { return readout(ad::batched_matmul(p[0], p[1]), 24); }, {{"c", c}, {"d", d}});
  expect_gradients([](const auto& p) { return readout(ad::batched_transpose(p[0]), 25); }, {{"c", c}});
  expect_gradients([](const auto& p) { return readout(ad::expm(p[0]), 26); },
                   {{"g", random_tensor(rng, {2, 3, 3}, -0.6, 0.6)}});

  const Tensor img = random_tensor(rng, {2, 3, 5, 2});
  const Tensor kernel = random_tensor(rng, {3 * 3 * 2, 3});
  expect_gradients([](const auto& p) { return readout(ad::conv2d(p[0], p[1], 3, 3), 27); },
                   {{"x", img}, {"k", kernel}});
  expect_gradients([](const auto& p) { return readout(ad::avg_pool2(p[0]), 28); }, {{"x", img}});
}

TEST(GradCheck, QuadraticPassesTightly) {
  const Tensor x({3}, {0.5, -1.0, 2.0});
  const auto report = grad_check([](const auto& p) { return ad::sum(ad::square(p[0])); }, {{"x", x}}, 1e-5, 1e-7);
  EXPECT_TRUE(report.pass) << report.max_rel_error;
  EXPECT_EQ(report.tolerance, 1e-7);
}

TEST(GradCheck, CorruptedRuleFails) {
  const Tensor x({4}, {0.5, -1.0, 2.0, 0.1});
  ad::set_corrupt_gelu_gradient(true);
  const auto report = grad_check([](const auto& p) { return ad::sum(ad::gelu(p[0])); }, {{"x", x}}, 1e-5, 1e-4);
  ad::set_corrupt_gelu_gradient(false);
  EXPECT_FALSE(report.pass);
  EXPECT_GT(report.max_rel_error, 1e-2);
}

TEST(GradCheck, NonDeterministicBuilderIsRejected) {
  int calls = 0;
  const Tensor x({1}, {1.0});
  auto loss = [&](const std::vector<ad::Var>& p) { return ad::add_scalar(ad::sum(p[0]), double(calls++)); };
  EXPECT_THROW(grad_check(loss, {{"x", x}}, 1e-5, 1e-4), std::runtime_error);
}
