#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "oracles.hpp"
#include "substadj/recover.hpp"
#include "substadj/simulate.hpp"
#include "substadj/spectral.hpp"

using namespace substadj;

namespace {

Eigen::MatrixXd random_orthonormal(int d, int k, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd A(d, k);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < k; ++j) A(i, j) = nd(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  return qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
}

std::vector<double> flatten(const WhitenedTensor& T) {
  const int K = T.K();
  std::vector<double> out(static_cast<std::size_t>(K * K * K));
  for (int a = 0; a < K; ++a)
    for (int b = 0; b < K; ++b)
      for (int c = 0; c < K; ++c) out[static_cast<std::size_t>((a * K + b) * K + c)] = T(a, b, c);
  return out;
}

CompletionOptions tight() { return {1e-13, 20000}; }

}  // namespace

TEST(Completion, RankOneAllOnes) {
  const int p = 6;
  Eigen::MatrixXd off = Eigen::MatrixXd::Ones(p, p);
  off.diagonal().setZero();
  const auto c = complete_second_moment(off, 1);
  EXPECT_TRUE(c.converged);
  EXPECT_LT((c.completed - Eigen::MatrixXd::Ones(p, p)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Completion, PopulationSpanRecovered) {
  const auto spec = draw_mixture_spec(2, 12, 1.0, {21, 0});
  PopulationMoments pm(spec, 12);
  const auto c = complete_second_moment(pm.m2_offdiag(), 2, tight());
  // Projection of each mean onto the recovered top-2 eigenspace is the mean itself.
  const Eigen::MatrixXd& U = c.top_vectors;
  for (int z = 0; z < 2; ++z) {
    const Eigen::VectorXd mu = spec.means.col(z);
    EXPECT_LT((U * (U.transpose() * mu) - mu).norm(), 1e-6);
  }
  EXPECT_LT((c.completed - pm.second_moment_lowrank()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Completion, ZeroColumnGivesZeroDiagonal) {
  const auto spec = draw_mixture_spec(2, 6, 2.0, {22, 0});
  auto d = simulate_covariates(spec, 300, 6, {22, 1});
  d.X.col(3).setZero();
  const auto c = offdiag_second_moment(d.X, 2);
  EXPECT_NEAR(c.completed(3, 3), 0.0, 1e-12);
  const Eigen::MatrixXd nd = d.X.transpose() * d.X / 300.0;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      if (i != j) EXPECT_NEAR(c.completed(i, j), nd(i, j), 1e-12);
}

TEST(Completion, Preconditions) {
  EXPECT_THROW(offdiag_second_moment(Eigen::MatrixXd::Ones(1, 5), 2), Error);
  EXPECT_THROW(offdiag_second_moment(Eigen::MatrixXd::Ones(10, 3), 3), Error);
}

TEST(Whitening, IdentityInput) {
  const auto w = compute_whitening(Eigen::MatrixXd::Identity(4, 4), 4);
  EXPECT_LT((w.W.transpose() * w.W - Eigen::MatrixXd::Identity(4, 4)).norm(), 1e-12);
}

TEST(Whitening, RankOneContract) {
  const Eigen::MatrixXd M = Eigen::MatrixXd::Ones(4, 4);
  const auto w = compute_whitening(M, 1);
  EXPECT_NEAR((w.W.transpose() * M * w.W)(0, 0), 1.0, 1e-12);
}

TEST(Whitening, PopulationContract) {
  const auto spec = draw_mixture_spec(2, 12, 1.0, {21, 0});
  PopulationMoments pm(spec, 12);
  const auto c = complete_second_moment(pm.m2_offdiag(), 2, tight());
  const auto w = compute_whitening(c);
  EXPECT_LT((w.W.transpose() * c.completed * w.W - Eigen::MatrixXd::Identity(2, 2)).norm(), 1e-8);
}

TEST(Whitening, RankDeficient) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Ones(4, 4);
  try {
    compute_whitening(M, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RankDeficient);
  }
}

TEST(Whitening, ContractOnSampledData) {
  for (std::uint64_t r = 0; r < 5; ++r) {
    const auto spec = draw_mixture_spec(4, 40, 1.5, {23, r});
    const auto d = simulate_covariates(spec, 400, 40, {23, 100 + r});
    const auto c = offdiag_second_moment(d.X, 4);
    const auto w = compute_whitening(c);
    const Eigen::MatrixXd low = c.top_vectors * c.top_values.asDiagonal() * c.top_vectors.transpose();
    EXPECT_LE((w.W.transpose() * low * w.W - Eigen::MatrixXd::Identity(4, 4)).norm(), 1e-8);
    EXPECT_TRUE(w.W.allFinite());
  }
}

TEST(WhitenedThirdMoment, SingleOnesSample) {
  WhiteningMap w;
  w.W = Eigen::MatrixXd::Identity(3, 3);
  const auto T = whitened_third_moment(Eigen::RowVector3d(1, 1, 1), w);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c) {
        const bool distinct = a != b && a != c && b != c;
        EXPECT_NEAR(T(a, b, c), distinct ? 1.0 : 0.0, 1e-15);
      }
}

TEST(WhitenedThirdMoment, ZeroInputAndSymmetry) {
  WhiteningMap w;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  w.W = Eigen::MatrixXd::NullaryExpr(5, 3, [&] { return nd(rng); });
  EXPECT_EQ(whitened_third_moment(Eigen::MatrixXd::Zero(7, 5), w).frobenius_norm(), 0.0);
  const Eigen::MatrixXd X = Eigen::MatrixXd::NullaryExpr(9, 5, [&] { return nd(rng); });
  EXPECT_TRUE(whitened_third_moment(X, w).is_exactly_symmetric());
}

TEST(WhitenedThirdMoment, MatchesBruteForceTripleSum) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 30; ++t) {
    const int p = 3 + t % 6, K = 1 + t % std::min(p, 4), n = 1 + t % 11;
    WhiteningMap w;
    w.W = Eigen::MatrixXd::NullaryExpr(p, K, [&] { return nd(rng); });
    const Eigen::MatrixXd X = Eigen::MatrixXd::NullaryExpr(n, p, [&] { return 2.0 * nd(rng); });
    EXPECT_LE(oracle::max_abs_diff(flatten(whitened_third_moment(X, w)), oracle::brute_force_whitened_m3(X, w.W)),
              1e-10);
  }
}

TEST(WhitenedThirdMoment, DimensionMismatch) {
  WhiteningMap w;
  w.W = Eigen::MatrixXd::Identity(3, 2);
  EXPECT_THROW(whitened_third_moment(Eigen::MatrixXd::Ones(4, 5), w), Error);
}

TEST(PowerMethod, CanonicalRankOne) {
  const auto T = WhitenedTensor::from_components(Eigen::VectorXd::Ones(1), Eigen::Vector3d(1, 0, 0));
  const auto dec = tensor_power_decompose(T, 1);
  ASSERT_EQ(dec.pairs.size(), 1u);
  EXPECT_NEAR(dec.pairs[0].lambda, 1.0, 1e-10);
  EXPECT_GT(dec.pairs[0].lambda * std::pow(dec.pairs[0].v(0), 3), 0.0);
  EXPECT_NEAR(std::abs(dec.pairs[0].v(0)), 1.0, 1e-10);
}

TEST(PowerMethod, TwoOrthogonalFactors) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd V = random_orthonormal(3, 2, rng);
  const auto dec = tensor_power_decompose(WhitenedTensor::from_components(Eigen::Vector2d(2, 3), V), 2);
  // Larger eigenvalue comes out first.
  EXPECT_NEAR(dec.pairs[0].lambda, 3.0, 1e-8);
  EXPECT_NEAR(dec.pairs[1].lambda, 2.0, 1e-8);
  EXPECT_LT((dec.pairs[0].v - V.col(1)).norm(), 1e-8);
  EXPECT_LT((dec.pairs[1].v - V.col(0)).norm(), 1e-8);
  EXPECT_LT(dec.residual, 1e-8);
}

TEST(PowerMethod, ZeroTensorThrows) {
  try {
    tensor_power_decompose(WhitenedTensor(3), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveEigenvalue);
  }
}

TEST(PowerMethod, RandomOdecoTensors) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(1.0, 5.0);
  for (int t = 0; t < 25; ++t) {
    const int K = 1 + t % 8;
    const Eigen::MatrixXd V = random_orthonormal(K, K, rng);
    Eigen::VectorXd lam(K);
    for (int z = 0; z < K; ++z) lam(z) = u(rng);
    const auto dec = tensor_power_decompose(WhitenedTensor::from_components(lam, V), K);
    std::vector<bool> used(K, false);
    for (const auto& pr : dec.pairs) {
      int hit = -1;
      for (int z = 0; z < K; ++z)
        if (!used[z] && std::abs(pr.lambda - lam(z)) <= 1e-6 && (pr.v - V.col(z)).norm() <= 1e-6) hit = z;
      ASSERT_GE(hit, 0);
      used[hit] = true;
    }
  }
}

TEST(PowerMethod, SeedReproducible) {
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd V = random_orthonormal(5, 5, rng);
  const auto T = WhitenedTensor::from_components(Eigen::VectorXd::LinSpaced(5, 1, 2), V);
  const auto a = tensor_power_decompose(T, 5), b = tensor_power_decompose(T, 5);
  for (int z = 0; z < 5; ++z) {
    EXPECT_EQ(a.pairs[z].lambda, b.pairs[z].lambda);
    EXPECT_EQ(a.pairs[z].v, b.pairs[z].v);
  }
}

TEST(RecoverComponents, WeightsFromLambdas) {
  PowerDecomposition dec;
  dec.pairs = {{std::sqrt(2.0), Eigen::Vector2d(1, 0)}, {std::sqrt(2.0), Eigen::Vector2d(0, 1)}};
  WhiteningMap w;
  w.W = Eigen::MatrixXd::Identity(2, 2);
  w.eigenvalues = Eigen::Vector2d::Ones();
  const auto est = recover_components(dec, w);
  EXPECT_NEAR(est.weights(0), 0.5, 1e-15);
  EXPECT_NEAR(est.weights(1), 0.5, 1e-15);
}

TEST(RecoverComponents, SingleComponentExactMoments) {
  // One class: M2 = mu mu^T, W = mu/|mu|^2, whitened tensor = (W^T mu)^3 = 1.
  const Eigen::Vector4d mu(0.5, -1.0, 2.0, 0.25);
  const auto w = compute_whitening(mu * mu.transpose(), 1);
  MixtureSpec s;
  s.K = 1;
  s.weights = Eigen::VectorXd::Ones(1);
  s.means = mu;
  s.variances = Eigen::MatrixXd::Ones(4, 1);
  PopulationMoments pm(s, 4);
  const auto est = recover_components(tensor_power_decompose(pm.whitened_m3(w.W), 1), w);
  EXPECT_LT((est.raw_means.col(0) - mu).norm(), 1e-8);
  EXPECT_NEAR(est.weights(0), 1.0, 1e-12);
}

TEST(RecoverComponents, PopulationK3EndToEnd) {
  const auto spec = draw_mixture_spec(3, 15, 1.0, {24, 0});
  PopulationMoments pm(spec, 15);
  const auto c = complete_second_moment(pm.m2_offdiag(), 3, tight());
  const auto w = compute_whitening(c);
  const auto est = recover_components(tensor_power_decompose(pm.whitened_m3(w.W), 3), w);
  const auto aligned = apply_alignment(est, align_labels(spec.means, est.raw_means));
  EXPECT_LT((aligned.raw_means - spec.means).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((aligned.weights - spec.weights).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(EstimateMeans, SingleClassIsColumnMean) {
  const auto spec = draw_mixture_spec(1, 7, 1.0, {25, 0});
  const auto d = simulate_covariates(spec, 50, 7, {25, 1});
  const auto est = estimate_means(d.X, 1);
  EXPECT_LT((est.raw_means.col(0) - d.X.colwise().mean().transpose()).norm(), 1e-12);
}

TEST(EstimateMeans, TooFewSamples) {
  try {
    estimate_means(Eigen::MatrixXd::Ones(2, 10), 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RankDeficient);
  }
}

TEST(EstimateMeans, WeightsAreProbabilities) {
  const auto spec = draw_mixture_spec(4, 60, 1.5, {26, 0});
  const auto d = simulate_covariates(spec, 800, 60, {26, 1});
  const auto est = estimate_means(d.X, 4);
  EXPECT_EQ(est.K(), 4);
  EXPECT_TRUE((est.weights.array() > 0.0).all());
  EXPECT_NEAR(est.weights.sum(), 1.0, 1e-10);
}

TEST(EstimateMeans, ColumnPermutationEquivariance) {
  const auto spec = draw_mixture_spec(3, 30, 2.0, {27, 0});
  const auto d = simulate_covariates(spec, 1500, 30, {27, 1});
  std::vector<int> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(8);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd Xp(d.X.rows(), 30);
  for (int i = 0; i < 30; ++i) Xp.col(i) = d.X.col(perm[i]);
  const auto a = estimate_means(d.X, 3), b = estimate_means(Xp, 3);
  Eigen::MatrixXd a_perm(30, 3);
  for (int i = 0; i < 30; ++i) a_perm.row(i) = a.raw_means.row(perm[i]);
  const auto bb = apply_alignment(b, align_labels(a_perm, b.raw_means));
  EXPECT_LT((bb.raw_means - a_perm).cwiseAbs().maxCoeff(), 1e-6);
}
