#pragma once

// Linear deconfounding scores built from a prognostic direction (outcome
// coefficients) and a balancing direction (propensity coefficients).
//
// With unit alpha, beta and c = alpha.beta, every unit gamma with
// (alpha.gamma)(beta.gamma) = c is a valid score. The family is traced by one
// coordinate w in [-1, 1]: w = -1 gives alpha, w = 1 gives beta, w = 0 the
// direction equiangular to both. Writing u1, u2 for the normalized sum and
// difference of alpha and beta,
//
//   gamma(w) = w1 u1 + w2 u2 + r n,   w2 = -sqrt((1 - c) / 2) w,
//   w1 = sqrt((2c + (1 - c) w2^2) / (1 + c)),   r = sqrt((1 - c)(1 - w^2) / (1 + c)),
//
// where n is a unit vector orthogonal to alpha and beta.

#include "deconf/error.hpp"
#include "deconf/glm.hpp"
#include "deconf/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>

namespace deconf::scores {

enum class Degeneracy { ok, near_zero_coefficients, near_collinear };

inline const char* to_string(Degeneracy d) {
    switch (d) {
        case Degeneracy::ok: return "ok";
        case Degeneracy::near_zero_coefficients: return "near_zero_coefficients";
        case Degeneracy::near_collinear: return "near_collinear";
    }
    return "?";
}

inline constexpr double default_zero_threshold = 1e-10;
inline constexpr double collinear_threshold = 1e-10;

struct ScoreFamily {
    Eigen::VectorXd alpha;  // unit prognostic direction
    Eigen::VectorXd beta;   // unit balancing direction, sign-aligned with alpha
    double c = 0.0;         // alpha . beta
    Degeneracy degenerate = Degeneracy::ok;

    Eigen::Index p() const noexcept { return alpha.size(); }
};

struct DeconfoundingScore {
    Eigen::VectorXd gamma;
    double w = 0.0;
    double w1 = 0.0;
    double w2 = 0.0;
    Eigen::VectorXd ortho;  // component orthogonal to alpha and beta, norm^2 = 1 - w1^2 - w2^2
};

/// Normalizes both directions and flips beta so that alpha.beta >= 0.
/// Degenerate inputs are flagged rather than rejected.
inline ScoreFamily normalize_and_align(const Eigen::VectorXd& alpha_raw, const Eigen::VectorXd& beta_raw,
                                       double zero_threshold = default_zero_threshold) {
    if (alpha_raw.size() != beta_raw.size() || alpha_raw.size() == 0)
        throw InvalidInput("coefficient vectors must have equal, nonzero length");
    if (!alpha_raw.allFinite() || !beta_raw.allFinite()) throw InvalidInput("coefficient vectors must be finite");
    ScoreFamily f;
    const double na = alpha_raw.norm(), nb = beta_raw.norm();
    f.alpha = na > 0.0 ? Eigen::VectorXd(alpha_raw / na) : alpha_raw;
    f.beta = nb > 0.0 ? Eigen::VectorXd(beta_raw / nb) : beta_raw;
    if (f.alpha.dot(f.beta) < 0.0) f.beta = -f.beta;
    f.c = f.alpha.dot(f.beta);
    if (alpha_raw.lpNorm<Eigen::Infinity>() < zero_threshold || beta_raw.lpNorm<Eigen::Infinity>() < zero_threshold)
        f.degenerate = Degeneracy::near_zero_coefficients;
    else if (f.c > 1.0 - collinear_threshold)
        f.degenerate = Degeneracy::near_collinear;
    return f;
}

/// Uniform unit vector in the orthogonal complement of span(alpha, beta).
/// Returns the zero vector when that complement is trivial (p <= 2).
inline Eigen::VectorXd sample_orthocomplement(const ScoreFamily& family, std::uint64_t seed) {
    if (family.degenerate == Degeneracy::near_zero_coefficients)
        throw DegenerateFamily("orthogonal component needs nonzero coefficient directions");
    const Eigen::Index p = family.p();
    if (p <= 2) return Eigen::VectorXd::Zero(p);
    Rng rng = make_rng(seed);
    Eigen::VectorXd g = standard_normal_vector(rng, p);

    const Eigen::VectorXd e1 = family.alpha;
    Eigen::VectorXd e2 = family.beta - family.c * family.alpha;
    const double n2 = e2.norm();
    const bool two_dim = family.degenerate == Degeneracy::ok && n2 > 0.0;
    if (two_dim) e2 /= n2;
    // Classical Gram-Schmidt applied twice keeps the residual orthogonal to
    // roughly machine precision.
    for (int pass = 0; pass < 2; ++pass) {
        g -= g.dot(e1) * e1;
        if (two_dim) g -= g.dot(e2) * e2;
    }
    const double norm = g.norm();
    if (!(norm > 0.0)) throw NullSpaceEmpty("orthogonal component draw collapsed");
    return g / norm;
}

/// Coordinate of beta along gamma(w), i.e. b(w) = beta . gamma(w).
inline double beta_projection(double c, double w) {
    const double w2 = -std::sqrt((1.0 - c) / 2.0) * w;
    const double w1 = std::sqrt((2.0 * c + (1.0 - c) * w2 * w2) / (1.0 + c));
    return w1 * std::sqrt((1.0 + c) / 2.0) + (1.0 - c) * w / 2.0;
}

/// Coordinate of alpha along gamma(w).
inline double alpha_projection(double c, double w) {
    const double w2 = -std::sqrt((1.0 - c) / 2.0) * w;
    const double w1 = std::sqrt((2.0 * c + (1.0 - c) * w2 * w2) / (1.0 + c));
    return w1 * std::sqrt((1.0 + c) / 2.0) - (1.0 - c) * w / 2.0;
}

/// Member of the family at coordinate w. `ortho` must be a unit vector
/// orthogonal to alpha and beta (see sample_orthocomplement).
inline DeconfoundingScore gamma_from_w(const ScoreFamily& family, const Eigen::VectorXd& ortho, double w) {
    if (!(std::abs(w) <= 1.0)) throw InvalidInput("w must lie in [-1, 1]");
    if (family.degenerate != Degeneracy::ok)
        throw DegenerateFamily(std::string("score family is ") + to_string(family.degenerate));
    if (ortho.size() != family.p()) throw InvalidInput("orthogonal component has the wrong dimension");
    const double c = family.c;
    DeconfoundingScore s;
    s.w = w;
    s.w2 = -std::sqrt((1.0 - c) / 2.0) * w;
    s.w1 = std::sqrt((2.0 * c + (1.0 - c) * s.w2 * s.w2) / (1.0 + c));
    // 1 - w1^2 - w2^2 in closed form: exact zero at the endpoints.
    const double radius = std::sqrt((1.0 - c) * (1.0 - w) * (1.0 + w) / (1.0 + c));
    if (radius > 0.0 && ortho.norm() < 0.5)
        throw NullSpaceEmpty("w strictly inside (-1, 1) needs an orthogonal component, which does not exist for p <= 2");

    const double su = std::sqrt(2.0 + 2.0 * c), sd = std::sqrt(2.0 - 2.0 * c);
    const double a = s.w1 / su, b = s.w2 / sd;
    s.ortho = radius * ortho;
    s.gamma = (a + b) * family.alpha + (a - b) * family.beta + s.ortho;
    return s;
}

/// gamma_from_w with the collapse rule for near-collinear directions: every
/// w then maps to alpha.
inline Eigen::VectorXd score_direction(const ScoreFamily& family, const Eigen::VectorXd& ortho, double w) {
    if (family.degenerate == Degeneracy::near_collinear) return family.alpha;
    return gamma_from_w(family, ortho, w).gamma;
}

inline double hyperbola_residual(const Eigen::VectorXd& gamma, const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta) {
    if (gamma.size() != alpha.size() || gamma.size() != beta.size()) throw InvalidInput("dimension mismatch");
    return alpha.dot(gamma) * beta.dot(gamma) - alpha.dot(beta);
}

inline Eigen::VectorXd project_score(const Eigen::VectorXd& gamma, const glm::DesignMatrix& design) {
    if (gamma.size() != design.p())
        throw InvalidInput("score direction has " + std::to_string(gamma.size()) + " entries, design has " +
                           std::to_string(design.p()) + " columns");
    return design.values() * gamma;
}

}  // namespace deconf::scores
