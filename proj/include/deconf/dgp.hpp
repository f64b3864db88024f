#pragma once

// Linear-Gaussian simulation design:
//   X ~ N(0, I_p),  T ~ Bernoulli(logit^-1(beta0 + s_T X'beta)),
//   Y = alpha0 + s_Y X'alpha + tau T + N(0, 1).

#include "deconf/dataset.hpp"
#include "deconf/error.hpp"
#include "deconf/glm.hpp"
#include "deconf/quadrature.hpp"
#include "deconf/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace deconf::dgp {

struct DgpConfig {
    int n = 500;
    int p = 1000;
    double s_T = 1.0;  // overlap knob: larger is worse overlap
    double s_Y = 1.0;  // signal-to-noise knob
    double tau = 0.0;
    double alpha0 = 0.0;
    double beta0 = 0.0;
    int support_size = 20;  // coefficient support is the first support_size coordinates
    double K = 0.75;        // alpha . beta
    std::uint64_t seed = 0;

    void validate() const {
        if (n < 2) throw InvalidInput("n must be >= 2");
        if (p < 1) throw InvalidInput("p must be >= 1");
        if (support_size < 2 || support_size > p) throw InvalidInput("support_size must lie in [2, p]");
        if (!(std::abs(K) < 1.0)) throw InvalidInput("K must lie in (-1, 1)");
        if (!(s_T >= 0.0) || !(s_Y >= 0.0)) throw InvalidInput("s_T and s_Y must be non-negative");
        for (double v : {s_T, s_Y, tau, alpha0, beta0})
            if (!std::isfinite(v)) throw InvalidInput("DGP parameters must be finite");
    }

    std::vector<int> support() const {
        std::vector<int> s(static_cast<std::size_t>(support_size));
        std::iota(s.begin(), s.end(), 0);
        return s;
    }
};

struct CoefficientPair {
    Eigen::VectorXd alpha;
    Eigen::VectorXd beta;
};

/// Unit alpha with Gaussian entries on `support` (0-based indices) and unit
/// beta = K alpha + sqrt(1 - K^2) v, where v is a second Gaussian draw on the
/// same support made orthogonal to alpha.
inline CoefficientPair generate_coefficients(int p, std::span<const int> support, double K, std::uint64_t seed) {
    if (support.size() < 2) throw InvalidInput("coefficient support needs at least two indices");
    if (!(std::abs(K) < 1.0)) throw InvalidInput("K must lie in (-1, 1)");
    for (int j : support)
        if (j < 0 || j >= p) throw InvalidInput("support index out of range");
    Rng rng = make_rng(seed);
    CoefficientPair out{Eigen::VectorXd::Zero(p), Eigen::VectorXd::Zero(p)};
    for (int j : support) out.alpha[j] = standard_normal(rng);
    out.alpha.normalize();
    Eigen::VectorXd v = Eigen::VectorXd::Zero(p);
    for (int j : support) v[j] = standard_normal(rng);
    for (int pass = 0; pass < 2; ++pass) v -= out.alpha.dot(v) * out.alpha;
    v.normalize();
    out.beta = K * out.alpha + std::sqrt(1.0 - K * K) * v;
    return out;
}

inline CoefficientPair generate_coefficients(const DgpConfig& cfg, std::uint64_t seed) {
    const std::vector<int> s = cfg.support();
    return generate_coefficients(cfg.p, s, cfg.K, seed);
}

/// e(X) = logit^-1(beta0 + s_T X'beta) for every row.
inline Eigen::VectorXd true_propensity(const DgpConfig& cfg, const CoefficientPair& coef, const glm::DesignMatrix& x) {
    Eigen::VectorXd e = x.values() * coef.beta;
    for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = glm::inverse_logit(cfg.beta0 + cfg.s_T * e[i]);
    return e;
}

/// Draws a dataset; redraws from the same stream while an arm is empty, at
/// most 100 times.
inline Dataset simulate_dataset(const DgpConfig& cfg, const CoefficientPair& coef) {
    cfg.validate();
    if (coef.alpha.size() != cfg.p || coef.beta.size() != cfg.p) throw InvalidInput("coefficients do not match p");
    Rng rng = make_rng(cfg.seed);
    for (int attempt = 0; attempt < 100; ++attempt) {
        Eigen::MatrixXd x = standard_normal_matrix(rng, cfg.n, cfg.p);
        const Eigen::VectorXd prognostic = x * coef.alpha;
        const Eigen::VectorXd balancing = x * coef.beta;
        Dataset d;
        d.treatment.resize(cfg.n);
        d.outcome.resize(cfg.n);
        Eigen::VectorXd m0(cfg.n);
        Eigen::Index treated = 0;
        for (int i = 0; i < cfg.n; ++i) {
            const double e = glm::inverse_logit(cfg.beta0 + cfg.s_T * balancing[i]);
            d.treatment[i] = uniform01(rng) < e ? 1.0 : 0.0;
            treated += d.treatment[i] == 1.0;
        }
        for (int i = 0; i < cfg.n; ++i) {
            m0[i] = cfg.alpha0 + cfg.s_Y * prognostic[i];
            d.outcome[i] = m0[i] + cfg.tau * d.treatment[i] + standard_normal(rng);
        }
        if (treated == 0 || treated == cfg.n) continue;
        d.design = glm::DesignMatrix(std::move(x));
        d.oracle_m1 = (m0.array() + cfg.tau).matrix();
        d.oracle_m0 = std::move(m0);
        return d;
    }
    throw DegenerateDesign("100 consecutive draws left a treatment arm empty");
}

inline double true_att(const DgpConfig& cfg) { return cfg.tau; }

/// Treated average of m1 - m0.
inline double sample_att_semisynthetic(const Eigen::VectorXd& m1, const Eigen::VectorXd& m0, const Eigen::VectorXd& treatment) {
    if (m1.size() != m0.size() || m1.size() != treatment.size()) throw InvalidInput("length mismatch");
    double sum = 0.0, count = 0.0;
    for (Eigen::Index i = 0; i < treatment.size(); ++i)
        if (treatment[i] == 1.0) {
            sum += m1[i] - m0[i];
            count += 1.0;
        }
    if (count == 0.0) throw DegenerateTreatmentArm("no treated units");
    return sum / count;
}

/// E[Y(0) | gamma'X = s] under the design, for unit gamma.
inline double score_outcome_mean(const DgpConfig& cfg, double alpha_dot_gamma, double s) {
    return cfg.alpha0 + cfg.s_Y * alpha_dot_gamma * s;
}

/// P(T = 1 | gamma'X = s): beta'X given the score is N(b s, 1 - b^2) with
/// b = beta . gamma, integrated against the logistic link.
inline double score_propensity(const DgpConfig& cfg, double beta_dot_gamma, double s, const GaussHermite& rule) {
    const double b = std::clamp(beta_dot_gamma, -1.0, 1.0);
    const double sd = std::sqrt(std::max(0.0, 1.0 - b * b));
    if (sd == 0.0) return glm::inverse_logit(cfg.beta0 + cfg.s_T * b * s);
    return rule.expect(b * s, sd, [&](double z) { return glm::inverse_logit(cfg.beta0 + cfg.s_T * z); });
}

/// Treated fraction pi1 = E[logit^-1(beta0 + s_T Z)].
inline double treated_fraction(const DgpConfig& cfg) {
    return gaussian_expectation_adaptive([&](double z) { return glm::inverse_logit(cfg.beta0 + cfg.s_T * z); },
                                         {-cfg.beta0 / std::max(cfg.s_T, 1e-300)});
}

}  // namespace deconf::dgp
