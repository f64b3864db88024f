#include "deconf/dgp.hpp"
#include "deconf/estimators.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace deconf;
using namespace deconf::estimators;

namespace {

Dataset make(std::initializer_list<double> t, std::initializer_list<double> y, int p = 1) {
    Dataset d;
    const auto n = static_cast<Eigen::Index>(t.size());
    d.treatment = Eigen::Map<const Eigen::VectorXd>(t.begin(), n);
    d.outcome = Eigen::Map<const Eigen::VectorXd>(y.begin(), n);
    Eigen::MatrixXd x(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) x(i, j) = std::sin(1.0 + i * 0.7 + j * 1.3);
    d.design = glm::DesignMatrix(x);
    return d;
}

Dataset random_dataset(std::uint64_t seed, Eigen::Index n = 40, Eigen::Index p = 3) {
    Rng rng = make_rng(seed);
    Dataset d;
    d.design = glm::DesignMatrix(standard_normal_matrix(rng, n, p));
    d.treatment.resize(n);
    d.outcome.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d.treatment[i] = i % 3 == 0 ? 1.0 : 0.0;
        d.outcome[i] = d.design.values()(i, 0) + standard_normal(rng);
    }
    return d;
}

Eigen::VectorXd random_propensity(std::uint64_t seed, Eigen::Index n) {
    Rng rng = make_rng(seed);
    Eigen::VectorXd e(n);
    for (Eigen::Index i = 0; i < n; ++i) e[i] = 0.05 + 0.9 * uniform01(rng);
    return e;
}

}  // namespace

TEST(HandChecks, Regression) {
    const Dataset d = make({1, 1, 0}, {2, 4, 1});
    EXPECT_EQ(att_regression(d, Eigen::Vector3d(1, 2, 1)), 1.5);
    EXPECT_EQ(att_regression(d, Eigen::Vector3d(2, 4, 7)), 0.0);
    EXPECT_EQ(att_regression(d, Eigen::Vector3d::Zero()), 3.0);
}

TEST(HandChecks, IpwHajek) {
    const Dataset d = make({1, 0, 0}, {3, 1, 2});
    EXPECT_EQ(att_ipw_hajek(d, Eigen::Vector3d(0.5, 0.5, 0.25)), 1.75);
    EXPECT_EQ(att_ipw_hajek(d, Eigen::Vector3d::Constant(0.5)), 3.0 - 1.5);
}

TEST(HandChecks, AipwHajek) {
    const Dataset d = make({1, 0}, {2, 1});
    EXPECT_EQ(att_aipw_hajek(d, Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(1, 1)), 1.0);
}

TEST(HandChecks, UnnormalizedVariant) {
    // Control sum 1 * 1 + (1/3) * 2 over one treated unit.
    const Dataset d = make({1, 0, 0}, {3, 1, 2});
    EstimatorOptions opt;
    opt.hajek = false;
    EXPECT_NEAR(att_ipw(d, Eigen::Vector3d(0.5, 0.5, 0.25), opt).first, 3.0 - 5.0 / 3.0, 1e-15);
}

TEST(Aipw, ZeroOutcomeModelIsIpwBitForBit) {
    for (std::uint64_t s = 0; s < 100; ++s) {
        const Dataset d = random_dataset(s);
        const Eigen::VectorXd e = random_propensity(s + 1000, d.n());
        EXPECT_EQ(att_aipw_hajek(d, e, Eigen::VectorXd::Zero(d.n())), att_ipw_hajek(d, e));
    }
}

TEST(Aipw, PerfectControlModelReducesToRegression) {
    const Dataset d = random_dataset(3);
    Eigen::VectorXd m0 = Eigen::VectorXd::Zero(d.n());
    for (Eigen::Index i = 0; i < d.n(); ++i)
        if (d.treatment[i] == 0.0) m0[i] = d.outcome[i];
    EXPECT_NEAR(att_aipw_hajek(d, random_propensity(4, d.n()), m0), att_regression(d, m0), 1e-14);
}

TEST(Trimming, ClampsOnlyNearOne) {
    auto [e, count] = trim_propensity(Eigen::Vector2d(0.2, 1.0));
    EXPECT_EQ(e[0], 0.2);
    EXPECT_EQ(e[1], 1.0 - 2.220446e-16);
    EXPECT_EQ(count, 1);
    auto [f, none] = trim_propensity(Eigen::Vector3d(0.1, 0.5, 0.3));
    EXPECT_EQ(f, Eigen::Vector3d(0.1, 0.5, 0.3));
    EXPECT_EQ(none, 0);
    Eigen::VectorXd near(1);
    near << 1.0 - 1e-20;
    EXPECT_EQ(trim_propensity(near).second, 1);
    EXPECT_THROW(trim_propensity(Eigen::Vector2d(0.2, 1.2)), InvalidInput);
    EXPECT_THROW(trim_propensity(near, TrimConfig{0.5}), InvalidInput);
}

TEST(Trimming, InactiveBelowThreshold) {
    const TrimConfig cfg{1e-3};
    for (std::uint64_t s = 0; s < 20; ++s) {
        Eigen::VectorXd e = random_propensity(s, 50);
        e[0] = 1.0 - cfg.epsilon;
        EXPECT_EQ(trim_propensity(e, cfg).second, 0);
        EXPECT_EQ(trim_propensity(e, cfg).first, e);
    }
}

TEST(Trimming, SaturatedControlStaysFinite) {
    const Dataset d = make({1, 0, 0}, {3, 1, 2});
    const auto [tau, trimmed] = att_ipw(d, Eigen::Vector3d(0.5, 1.0, 0.3));
    EXPECT_TRUE(std::isfinite(tau));
    EXPECT_EQ(trimmed, 1);
    EXPECT_NEAR(tau, 3.0 - 1.0, 1e-12);
}

TEST(Errors, DegenerateArmsAndWeights) {
    const Dataset d = make({1, 1, 1}, {1, 2, 3});
    EXPECT_THROW(att_regression(make({0, 0, 0}, {1, 2, 3}), Eigen::Vector3d::Zero()), DegenerateTreatmentArm);
    EXPECT_EQ(att_regression(d, Eigen::Vector3d::Zero()), 2.0);
    EXPECT_THROW(att_ipw_hajek(d, Eigen::Vector3d::Constant(0.5)), DegenerateTreatmentArm);
    const Dataset z = make({1, 0, 0}, {1, 2, 3});
    EXPECT_THROW(att_ipw_hajek(z, Eigen::Vector3d(0.5, 0.0, 0.0)), DegenerateWeights);
    EXPECT_THROW(att_regression(z, Eigen::Vector2d::Zero()), InvalidInput);
}

TEST(Equivariance, TranslationAndScale) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        Dataset d = random_dataset(s);
        const Eigen::VectorXd e = random_propensity(s + 50, d.n());
        const Eigen::VectorXd m0 = d.design.values().col(1);
        auto all = [&](const Dataset& x, const Eigen::VectorXd& m) {
            return std::array<double, 3>{att_regression(x, m), att_ipw_hajek(x, e), att_aipw_hajek(x, e, m)};
        };
        const auto base = all(d, m0);
        Dataset shifted = d;
        shifted.outcome.array() += 1e3;
        const auto sh = all(shifted, (m0.array() + 1e3).matrix());
        Dataset scaled = d;
        scaled.outcome *= -2.5;
        const auto sc = all(scaled, -2.5 * m0);
        for (int k = 0; k < 3; ++k) {
            EXPECT_LT(std::abs(sh[k] - base[k]), 1e-9);
            EXPECT_LT(std::abs(sc[k] - (-2.5) * base[k]), 1e-9 * std::max(1.0, std::abs(base[k])));
        }
        // IPW is translation invariant in Y alone, without moving m0.
        EXPECT_LT(std::abs(att_ipw_hajek(shifted, e) - base[1]), 1e-9);
    }
}

TEST(Aipw, DoubleRobustOnFiniteSupport) {
    // Six covariate cells with known propensity and control mean; constant
    // effect tau. AIPW with one nuisance misspecified stays centered on tau.
    const std::array<double, 6> e{0.2, 0.35, 0.5, 0.6, 0.7, 0.8};
    const std::array<double, 6> m{-1.0, 0.5, 2.0, 1.0, 3.0, 4.0};
    const double tau = 1.25;
    const int n = 3000, reps = 10000;
    double s1 = 0, q1 = 0, s2 = 0, q2 = 0;
    Rng rng = make_rng(2024);
    for (int r = 0; r < reps; ++r) {
        Dataset d;
        Eigen::VectorXd true_e(n), true_m(n), wrong_e(n), wrong_m(n);
        d.treatment.resize(n);
        d.outcome.resize(n);
        Eigen::MatrixXd x(n, 1);
        for (int i = 0; i < n; ++i) {
            const int cell = std::min(5, static_cast<int>(uniform01(rng) * 6));
            x(i, 0) = cell;
            true_e[i] = e[cell];
            true_m[i] = m[cell];
            wrong_e[i] = 0.5;
            wrong_m[i] = 0.3 * cell;
            d.treatment[i] = uniform01(rng) < e[cell] ? 1.0 : 0.0;
            d.outcome[i] = m[cell] + tau * d.treatment[i] + standard_normal(rng);
        }
        if (d.treatment.sum() == 0 || d.treatment.sum() == n) continue;
        d.design = glm::DesignMatrix(x);
        const double a = att_aipw_hajek(d, true_e, wrong_m), b = att_aipw_hajek(d, wrong_e, true_m);
        s1 += a;
        q1 += a * a;
        s2 += b;
        q2 += b * b;
    }
    const double m1 = s1 / reps, m2 = s2 / reps;
    const double se1 = std::sqrt((q1 / reps - m1 * m1) / reps), se2 = std::sqrt((q2 / reps - m2 * m2) / reps);
    EXPECT_LT(std::abs(m1 - tau), 4 * se1);
    EXPECT_LT(std::abs(m2 - tau), 4 * se2);
    EXPECT_LT(std::abs(m1 - m2), 4 * std::hypot(se1, se2));
}

TEST(ScoreEstimates, RegressionOnExactLinearScore) {
    Dataset d = random_dataset(11, 60, 4);
    const Eigen::Vector4d gamma = Eigen::Vector4d(1, -2, 0.5, 0).normalized();
    const Eigen::VectorXd s = d.design.values() * gamma;
    d.outcome = (0.4 + 1.7 * s.array() + 0.9 * d.treatment.array()).matrix();
    const EstimatorResult r =
        estimate_att_with_score(d, ScoreInput{gamma, scores::Degeneracy::ok, "w=0.0"}, Method::regr, GlmConfig{});
    EXPECT_NEAR(r.tau_hat, 0.9, 1e-8);
    EXPECT_EQ(r.fallback, Fallback::none);
    EXPECT_EQ(r.score_label, "w=0.0");
}

TEST(ScoreEstimates, MatchesManualRefit) {
    const Dataset d = random_dataset(12, 80, 3);
    const Eigen::Vector3d gamma(0.6, 0.8, 0.0);
    const Eigen::VectorXd s = d.design.values() * gamma;
    const ScoreFits fits = fit_score_models(d, s, true, true);
    const std::map<Method, double> none;
    const auto results = estimate_with_score(d, gamma, scores::Degeneracy::ok, "g", all_methods, none);
    EXPECT_EQ(results[0].tau_hat, att_regression(d, fits.m0_hat));
    EXPECT_EQ(results[1].tau_hat, att_ipw_hajek(d, fits.e_hat));
    EXPECT_EQ(results[2].tau_hat, att_aipw_hajek(d, fits.e_hat, fits.m0_hat));
}

TEST(ScoreEstimates, Fallbacks) {
    Dataset d = random_dataset(13, 50, 3);
    const std::map<Method, double> raw{{Method::regr, 0.11}, {Method::ipw, 0.22}, {Method::aipw, 0.33}};

    auto zc = estimate_with_score(d, Eigen::Vector3d::Zero(), scores::Degeneracy::near_zero_coefficients, "w=1.0",
                                  all_methods, raw);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(zc[k].fallback, Fallback::zero_coefficients);
        EXPECT_EQ(zc[k].tau_hat, raw.at(all_methods[k]));
    }

    // Constant third column: the score on e3 has zero variance.
    Eigen::MatrixXd x = d.design.values();
    x.col(2).setConstant(2.0);
    d.design = glm::DesignMatrix(x);
    auto zv = estimate_with_score(d, Eigen::Vector3d(0, 0, 1), scores::Degeneracy::ok, "w=0.5", all_methods, raw);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(zv[k].fallback, Fallback::zero_variance);
        EXPECT_EQ(zv[k].tau_hat, raw.at(all_methods[k]));
    }

    // Constant among controls only: IPW still uses the score.
    for (Eigen::Index i = 0; i < d.n(); ++i) x(i, 2) = d.treatment[i] == 1.0 ? 1.0 + 0.1 * i : 2.0;
    d.design = glm::DesignMatrix(x);
    auto ctl = estimate_with_score(d, Eigen::Vector3d(0, 0, 1), scores::Degeneracy::ok, "w=0.5", all_methods, raw);
    EXPECT_EQ(ctl[0].fallback, Fallback::zero_variance);
    EXPECT_EQ(ctl[1].fallback, Fallback::none);
    EXPECT_EQ(ctl[2].fallback, Fallback::zero_variance);
    EXPECT_NE(ctl[1].tau_hat, raw.at(Method::ipw));

    EXPECT_THROW(estimate_with_score(d, Eigen::Vector3d::Zero(), scores::Degeneracy::near_zero_coefficients, "x",
                                     all_methods, std::map<Method, double>{}),
                 InvalidInput);
}

TEST(ScoreEstimates, SingleMethodFallbackComputesRawEstimate) {
    dgp::DgpConfig cfg;
    cfg.n = 120;
    cfg.p = 15;
    cfg.support_size = 5;
    cfg.seed = 3;
    const Dataset d = dgp::simulate_dataset(cfg, dgp::generate_coefficients(cfg, 1));
    GlmConfig g;
    g.cv.seed = 4;
    const EstimatorResult raw = estimate_att_with_score(d, std::nullopt, Method::aipw, g);
    const EstimatorResult fb = estimate_att_with_score(
        d, ScoreInput{Eigen::VectorXd::Zero(cfg.p), scores::Degeneracy::near_zero_coefficients, "w=0.0"}, Method::aipw, g);
    EXPECT_EQ(raw.fallback, Fallback::none);
    EXPECT_EQ(raw.score_label, "X");
    EXPECT_EQ(fb.fallback, Fallback::zero_coefficients);
    EXPECT_EQ(fb.tau_hat, raw.tau_hat);
}

TEST(Parsing, MethodNames) {
    for (Method m : all_methods) EXPECT_EQ(parse_method(to_string(m)), m);
    EXPECT_THROW(parse_method("tmle"), InvalidInput);
}
