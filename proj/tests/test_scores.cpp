#include "deconf/scores.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace deconf;
using namespace deconf::scores;

namespace {

std::vector<double> w_grid() {
    std::vector<double> g;
    for (int k = -10; k <= 10; ++k) g.push_back(k / 10.0);
    return g;
}

ScoreFamily random_family(double c, int p, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    Eigen::VectorXd a = standard_normal_vector(rng, p).normalized();
    Eigen::VectorXd v = standard_normal_vector(rng, p);
    v -= a.dot(v) * a;
    v.normalize();
    const Eigen::VectorXd b = c * a + std::sqrt(1 - c * c) * v;
    return normalize_and_align(3.0 * a, 0.5 * b);
}

}  // namespace

TEST(NormalizeAndAlign, OrthogonalInputsKeepSign) {
    const ScoreFamily f = normalize_and_align(Eigen::Vector2d(2, 0), Eigen::Vector2d(0, -3));
    EXPECT_EQ(f.alpha, Eigen::Vector2d(1, 0));
    EXPECT_EQ(f.beta, Eigen::Vector2d(0, -1));
    EXPECT_EQ(f.c, 0.0);
    EXPECT_EQ(f.degenerate, Degeneracy::ok);
}

TEST(NormalizeAndAlign, OppositeInputsFlipAndCollapse) {
    const ScoreFamily f = normalize_and_align(Eigen::Vector2d(1, 0), Eigen::Vector2d(-1, 0));
    EXPECT_EQ(f.beta, Eigen::Vector2d(1, 0));
    EXPECT_EQ(f.c, 1.0);
    EXPECT_EQ(f.degenerate, Degeneracy::near_collinear);
}

TEST(NormalizeAndAlign, TinyCoefficientsFlagged) {
    const ScoreFamily f = normalize_and_align(Eigen::Vector3d(1, 2, 0), Eigen::Vector3d(1e-12, 0, -1e-13));
    EXPECT_EQ(f.degenerate, Degeneracy::near_zero_coefficients);
    const ScoreFamily z = normalize_and_align(Eigen::Vector3d(1, 2, 0), Eigen::Vector3d::Zero());
    EXPECT_EQ(z.degenerate, Degeneracy::near_zero_coefficients);
    EXPECT_THROW(normalize_and_align(Eigen::Vector3d(1, 2, 0), Eigen::Vector2d(1, 0)), InvalidInput);
    EXPECT_THROW(gamma_from_w(z, Eigen::Vector3d(0, 0, 1), 0.0), DegenerateFamily);
}

TEST(Orthocomplement, OneDimensionalNullSpace) {
    const ScoreFamily f = normalize_and_align(Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0));
    const Eigen::VectorXd n = sample_orthocomplement(f, 5);
    EXPECT_NEAR(std::abs(n[2]), 1.0, 1e-15);
    EXPECT_EQ(n[0], 0.0);
    EXPECT_EQ(n[1], 0.0);
}

TEST(Orthocomplement, OrthogonalUnitAndDeterministic) {
    for (double c : {0.0, 0.6, 0.99}) {
        const ScoreFamily f = random_family(c, 50, 3);
        const Eigen::VectorXd n = sample_orthocomplement(f, 77);
        EXPECT_NEAR(n.norm(), 1.0, 1e-12);
        EXPECT_LT(std::abs(n.dot(f.alpha)), 1e-10);
        EXPECT_LT(std::abs(n.dot(f.beta)), 1e-10);
        EXPECT_EQ(n, sample_orthocomplement(f, 77));
        EXPECT_NE(n, sample_orthocomplement(f, 78));
    }
}

TEST(Orthocomplement, EmptyForTwoDimensions) {
    const ScoreFamily f = normalize_and_align(Eigen::Vector2d(1, 0), Eigen::Vector2d(0.6, 0.8));
    const Eigen::VectorXd n = sample_orthocomplement(f, 1);
    EXPECT_EQ(n, Eigen::Vector2d::Zero());
    EXPECT_NO_THROW(gamma_from_w(f, n, 1.0));
    EXPECT_NO_THROW(gamma_from_w(f, n, -1.0));
    EXPECT_THROW(gamma_from_w(f, n, 0.3), NullSpaceEmpty);
}

TEST(Orthocomplement, CoordinatesCenteredOverDraws) {
    const ScoreFamily f = random_family(0.5, 1000, 4);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(1000);
    const int draws = 10000;
    for (int k = 0; k < draws; ++k) sum += sample_orthocomplement(f, 1000 + k);
    // Each coordinate has variance about 1/p per draw.
    const double se = std::sqrt(1.0 / 1000.0 / draws);
    EXPECT_LT((sum / draws).lpNorm<Eigen::Infinity>(), 5.0 * se);
}

TEST(GammaFromW, EndpointsAndEquiangularMidpoint) {
    const ScoreFamily f = random_family(0.75, 20, 9);
    const Eigen::VectorXd n = sample_orthocomplement(f, 1);
    EXPECT_LT((gamma_from_w(f, n, 1.0).gamma - f.beta).lpNorm<Eigen::Infinity>(), 1e-12);
    EXPECT_LT((gamma_from_w(f, n, -1.0).gamma - f.alpha).lpNorm<Eigen::Infinity>(), 1e-12);
    const Eigen::VectorXd g0 = gamma_from_w(f, n, 0.0).gamma;
    EXPECT_NEAR(f.alpha.dot(g0), std::sqrt(0.75), 1e-12);
    EXPECT_NEAR(f.beta.dot(g0), std::sqrt(0.75), 1e-12);
}

TEST(GammaFromW, UnitNormAndOnHyperbola) {
    for (double c : {0.0, 0.25, 0.5, 0.75, 0.95, 0.99})
        for (std::uint64_t seed : {1u, 2u}) {
            const ScoreFamily f = random_family(c, 30, seed);
            const Eigen::VectorXd n = sample_orthocomplement(f, seed + 10);
            for (double w : w_grid()) {
                const DeconfoundingScore s = gamma_from_w(f, n, w);
                EXPECT_NEAR(s.gamma.norm(), 1.0, 1e-12);
                EXPECT_LT(std::abs(hyperbola_residual(s.gamma, f.alpha, f.beta)), 1e-12) << c << " " << w;
                EXPECT_NEAR(f.beta.dot(s.gamma), beta_projection(f.c, w), 1e-12);
                EXPECT_NEAR(f.alpha.dot(s.gamma), alpha_projection(f.c, w), 1e-12);
                EXPECT_NEAR(s.w1 * s.w1 + s.w2 * s.w2 + s.ortho.squaredNorm(), 1.0, 1e-12);
            }
        }
}

TEST(GammaFromW, LipschitzOnGrid) {
    for (double c : {0.0, 0.5, 0.9, 0.99}) {
        const ScoreFamily f = random_family(c, 10, 5);
        const Eigen::VectorXd n = sample_orthocomplement(f, 6);
        double worst = 0.0;
        for (int k = -10; k < 10; ++k) {
            const double w = k / 10.0, w2 = (k + 1) / 10.0;
            worst = std::max(worst, (gamma_from_w(f, n, w2).gamma - gamma_from_w(f, n, w).gamma).norm() / 0.1);
        }
        EXPECT_LT(worst, 10.0) << c;
    }
}

TEST(GammaFromW, RejectsOutOfRange) {
    const ScoreFamily f = random_family(0.5, 5, 1);
    const Eigen::VectorXd n = sample_orthocomplement(f, 2);
    EXPECT_THROW(gamma_from_w(f, n, 1.01), InvalidInput);
    EXPECT_THROW(gamma_from_w(f, n, NAN), InvalidInput);
    EXPECT_THROW(gamma_from_w(f, Eigen::VectorXd::Zero(4), 0.0), InvalidInput);
}

TEST(ScoreDirection, CollinearFamilyMapsToAlpha) {
    const ScoreFamily f = normalize_and_align(Eigen::Vector3d(1, 1, 0), Eigen::Vector3d(-2, -2, 0));
    ASSERT_EQ(f.degenerate, Degeneracy::near_collinear);
    for (double w : {-1.0, 0.0, 0.7}) EXPECT_EQ(score_direction(f, Eigen::Vector3d(0, 0, 1), w), f.alpha);
    EXPECT_THROW(gamma_from_w(f, Eigen::Vector3d(0, 0, 1), 0.0), DegenerateFamily);
}

TEST(HyperbolaResidual, KnownValues) {
    const ScoreFamily f = random_family(0.75, 6, 2);
    EXPECT_NEAR(hyperbola_residual(f.alpha, f.alpha, f.beta), 0.0, 1e-15);
    const Eigen::VectorXd u1 = (f.alpha + f.beta).normalized();
    EXPECT_NEAR(f.alpha.dot(u1) * f.beta.dot(u1), 0.875, 1e-12);
    EXPECT_NEAR(hyperbola_residual(u1, f.alpha, f.beta), 0.125, 1e-12);
}

TEST(ProjectScore, DotProducts) {
    Eigen::MatrixXd x(2, 2);
    x << 1, 2, 3, 4;
    const glm::DesignMatrix d(x);
    EXPECT_EQ(project_score(Eigen::Vector2d(1, 0), d), Eigen::Vector2d(1, 3));
    EXPECT_EQ(project_score(Eigen::Vector2d::Zero(), d), Eigen::Vector2d::Zero());
    EXPECT_NEAR(project_score(Eigen::Vector2d(0.6, 0.8), d)[0], 2.2, 1e-15);
    EXPECT_THROW(project_score(Eigen::Vector3d(1, 0, 0), d), InvalidInput);
}
