#pragma once

// Overlap divergence O(Z) = E_control[(dP_treated / dP_control)(Z)^2] for
// linear scores under a standard Gaussian covariate law, plus Monte Carlo
// oracles for the confounding bias, the variance decomposition of the
// divergence and the efficiency bound.
//
// Treatment enters through a link h of the balancing index beta'X, read in one
// of two ways:
//   density_ratio: the treated/control density ratio is h / E[h];
//   propensity:    P(T = 1 | X) = h(beta'X), with 0 < h < 1.
// For a score with b = beta . gamma the divergence is g(|b|) where
//   g(u) = E_Z[ f( E_Z'[h(u Z + sqrt(1 - u^2) Z')] ) ]
// with f(t) = (t / E[h])^2 for a density ratio and
// f(t) = (1 - pi1) / pi1^2 * t^2 / (1 - t) for a propensity.

#include "deconf/dgp.hpp"
#include "deconf/error.hpp"
#include "deconf/glm.hpp"
#include "deconf/parallel.hpp"
#include "deconf/quadrature.hpp"
#include "deconf/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace deconf::overlap {

enum class LinkKind { logistic, indicator, relu, exp_tilt, identity };
enum class Assumption { density_ratio, propensity };

inline const char* to_string(LinkKind k) {
    switch (k) {
        case LinkKind::logistic: return "logistic";
        case LinkKind::indicator: return "indicator";
        case LinkKind::relu: return "relu";
        case LinkKind::exp_tilt: return "exp_tilt";
        case LinkKind::identity: return "identity";
    }
    return "?";
}

inline LinkKind parse_link_kind(const std::string& s) {
    for (LinkKind k : {LinkKind::logistic, LinkKind::indicator, LinkKind::relu, LinkKind::exp_tilt, LinkKind::identity})
        if (s == to_string(k)) return k;
    throw InvalidLink("unknown link '" + s + "'");
}

/// Scalar link. `slope` and `offset` apply to logistic (logit^-1(offset +
/// slope z)) and identity (offset + slope z); `z0` is the indicator threshold
/// (1 when z <= z0); `s` is the exponential tilt (exp(s z)).
struct LinkSpec {
    LinkKind kind = LinkKind::logistic;
    Assumption assumption = Assumption::density_ratio;
    double z0 = 0.0;
    double s = 1.0;
    double slope = 1.0;
    double offset = 0.0;

    static LinkSpec logistic(double slope = 1.0, double offset = 0.0, Assumption a = Assumption::density_ratio) {
        LinkSpec l;
        l.kind = LinkKind::logistic;
        l.slope = slope;
        l.offset = offset;
        l.assumption = a;
        return l;
    }
    static LinkSpec indicator(double z0) {
        LinkSpec l;
        l.kind = LinkKind::indicator;
        l.z0 = z0;
        return l;
    }
    static LinkSpec relu() {
        LinkSpec l;
        l.kind = LinkKind::relu;
        return l;
    }
    static LinkSpec exp_tilt(double s) {
        LinkSpec l;
        l.kind = LinkKind::exp_tilt;
        l.s = s;
        return l;
    }
    static LinkSpec identity(double slope = 1.0, double offset = 0.0) {
        LinkSpec l;
        l.kind = LinkKind::identity;
        l.slope = slope;
        l.offset = offset;
        return l;
    }

    double operator()(double z) const {
        switch (kind) {
            case LinkKind::logistic: return glm::inverse_logit(offset + slope * z);
            case LinkKind::indicator: return z <= z0 ? 1.0 : 0.0;
            case LinkKind::relu: return z > 0.0 ? z : 0.0;
            case LinkKind::exp_tilt: return std::exp(s * z);
            case LinkKind::identity: return offset + slope * z;
        }
        return 0.0;
    }
};

/// Rejects links that cannot describe treatment under their assumption.
inline void validate_treatment_link(const LinkSpec& h) {
    for (double v : {h.z0, h.s, h.slope, h.offset})
        if (!std::isfinite(v)) throw InvalidLink("link parameters must be finite");
    if (h.assumption == Assumption::propensity) {
        if (h.kind != LinkKind::logistic)
            throw InvalidLink(std::string("a propensity link must map into (0, 1); ") + to_string(h.kind) + " does not");
        return;
    }
    if (h.kind == LinkKind::identity) throw InvalidLink("identity link can be negative and is not a density ratio");
    if (h.kind == LinkKind::indicator && !(normal_cdf(h.z0) > 0.0)) throw InvalidLink("indicator threshold has zero mass");
}

inline void validate_outcome_link(const LinkSpec& m) {
    for (double v : {m.z0, m.s, m.slope, m.offset})
        if (!std::isfinite(v)) throw InvalidLink("link parameters must be finite");
}

/// E[h(mean + sd Z)], in closed form except for the logistic link.
inline double conditional_mean(const LinkSpec& h, double mean, double sd, const GaussHermite& rule) {
    if (sd <= 0.0) return h(mean);
    switch (h.kind) {
        case LinkKind::logistic: return rule.expect(mean, sd, [&](double z) { return h(z); });
        case LinkKind::indicator: return normal_cdf((h.z0 - mean) / sd);
        case LinkKind::relu: return mean * normal_cdf(mean / sd) + sd * normal_pdf(mean / sd);
        case LinkKind::exp_tilt: return std::exp(h.s * mean + 0.5 * h.s * h.s * sd * sd);
        case LinkKind::identity: return h.offset + h.slope * mean;
    }
    return 0.0;
}

/// E[h(Z)] for Z ~ N(0, 1).
inline double link_mean(const LinkSpec& h) {
    switch (h.kind) {
        case LinkKind::logistic:
            if (h.offset == 0.0) return 0.5;
            return gaussian_expectation_adaptive([&](double z) { return h(z); },
                                                 {h.slope != 0.0 ? -h.offset / h.slope : 0.0});
        case LinkKind::indicator: return normal_cdf(h.z0);
        case LinkKind::relu: return 1.0 / std::sqrt(2.0 * std::numbers::pi);
        case LinkKind::exp_tilt: return std::exp(0.5 * h.s * h.s);
        case LinkKind::identity: return h.offset;
    }
    return 0.0;
}

struct QuadratureConfig {
    int outer_nodes = 128;
    int inner_nodes = 128;

    void validate() const {
        if (outer_nodes < 8 || inner_nodes < 8) throw InvalidInput("quadrature needs at least 8 nodes per level");
    }
};

struct QuadratureResult {
    double value = 0.0;
    int clamped_nodes = 0;  // propensity links: inner means pushed back below 1 - 1e-12
};

/// g(|b|) by nested quadrature. Smooth links use Gauss-Hermite at both levels;
/// indicator and relu use their exact inner mean and an adaptive outer rule
/// split at the kink.
inline QuadratureResult divergence_by_quadrature(double b, const LinkSpec& h, double pi1, const QuadratureConfig& quad = {}) {
    validate_treatment_link(h);
    quad.validate();
    if (!(std::abs(b) <= 1.0 + 1e-12)) throw InvalidInput("b must lie in [-1, 1]");
    const double u = std::min(std::abs(b), 1.0);
    const double sd = std::sqrt((1.0 - u) * (1.0 + u));
    const GaussHermite& inner_rule = gauss_hermite(quad.inner_nodes);
    const GaussHermite& outer_rule = gauss_hermite(quad.outer_nodes);
    QuadratureResult out;

    if (h.assumption == Assumption::propensity) {
        if (!(pi1 > 0.0 && pi1 < 1.0)) throw InvalidInput("pi1 must lie in (0, 1)");
        const double scale = (1.0 - pi1) / (pi1 * pi1);
        constexpr double cap = 1.0 - 1e-12;
        const double mean = link_mean(h);
        out.value = outer_rule.expect([&](double z) {
            double t = u == 0.0 ? mean : conditional_mean(h, u * z, sd, inner_rule);
            if (t > cap) {
                t = cap;
                ++out.clamped_nodes;
            }
            return scale * t * t / (1.0 - t);
        });
        return out;
    }

    const double norm = link_mean(h);
    auto ratio_sq = [&](double z) {
        const double t = u == 0.0 ? 1.0 : conditional_mean(h, u * z, sd, inner_rule) / norm;
        return t * t;
    };
    switch (h.kind) {
        case LinkKind::indicator: {
            std::vector<double> breaks;
            if (u > 0.0) breaks.push_back(h.z0 / u);
            out.value = gaussian_expectation_adaptive(ratio_sq, breaks);
            break;
        }
        case LinkKind::relu: out.value = gaussian_expectation_adaptive(ratio_sq, {0.0}); break;
        default: out.value = outer_rule.expect(ratio_sq); break;
    }
    return out;
}

inline double overlap_divergence_quadrature(double b, const LinkSpec& h, double pi1, const QuadratureConfig& quad = {}) {
    return divergence_by_quadrature(b, h, pi1, quad).value;
}

/// Owen's T(h, a) = (1 / 2 pi) int_0^a exp(-h^2 (1 + x^2) / 2) / (1 + x^2) dx,
/// by adaptive Gauss-Kronrod.
inline double owens_t(double h, double a) {
    if (a == 0.0) return 0.0;
    if (a < 0.0) return -owens_t(h, -a);
    const double h2 = h * h;
    auto f = [h2](double x) {
        const double q = 1.0 + x * x;
        return std::exp(-0.5 * h2 * q) / q;
    };
    return integrate(f, 0.0, a, 1e-12) / (2.0 * std::numbers::pi);
}

/// Indicator link 1{z <= z0} as a density ratio.
inline double overlap_divergence_indicator(double z0, double b) {
    const double phi = normal_cdf(z0);
    if (!(phi > 0.0)) throw InvalidLink("indicator threshold has zero mass");
    const double a = std::sqrt(std::max(0.0, 2.0 / (1.0 + b * b) - 1.0));
    return (phi - 2.0 * owens_t(z0, a)) / (phi * phi);
}

/// ReLU link as a density ratio.
inline double overlap_divergence_relu(double b) {
    const double w = b * b;
    return std::sqrt((1.0 - w) * (1.0 + w)) + 0.5 * std::numbers::pi * w + w * std::asin(w);
}

inline double overlap_divergence_exp_tilt(double s, double b) { return std::exp(s * s * b * b); }

/// Closed form when one is known for the link (density-ratio links only).
inline std::optional<double> overlap_divergence_closed_form(double b, const LinkSpec& h) {
    if (h.assumption != Assumption::density_ratio) return std::nullopt;
    switch (h.kind) {
        case LinkKind::indicator: return overlap_divergence_indicator(h.z0, b);
        case LinkKind::relu: return overlap_divergence_relu(b);
        case LinkKind::exp_tilt: return overlap_divergence_exp_tilt(h.s, b);
        default: return std::nullopt;
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo

struct McConfig {
    std::size_t samples = 1'000'000;
    std::uint64_t seed = 0;
    std::size_t batches = 0;  // 0: round(sqrt(samples))
    unsigned threads = 1;

    void validate() const {
        if (samples < 1000) throw InvalidInput("Monte Carlo needs at least 1000 samples");
        if (batches == 1 || batches > samples) throw InvalidInput("batch count must lie in [2, samples]");
    }
};

struct McEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
    std::size_t samples = 0;

    double se() const noexcept { return stderr_; }
    /// |estimate - target| <= k standard errors.
    bool within(double target, double k) const { return std::abs(estimate - target) <= k * stderr_; }
};

/// Batch-means estimate of E[term]. `draw(rng)` returns one sample; batch k
/// uses its own stream derived from (seed, k), so the result does not depend
/// on the number of threads.
template <class Draw>
McEstimate batch_means(const McConfig& mc, Draw&& draw) {
    mc.validate();
    const std::size_t batches =
        mc.batches ? mc.batches : std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(std::sqrt(double(mc.samples)))));
    std::vector<double> sums(batches, 0.0);
    std::vector<std::size_t> sizes(batches);
    for (std::size_t k = 0; k < batches; ++k) sizes[k] = mc.samples / batches + (k < mc.samples % batches ? 1 : 0);
    parallel_for(batches, mc.threads, [&](std::size_t k) {
        Rng rng = make_rng(derive_seed(mc.seed, k));
        double s = 0.0;
        for (std::size_t i = 0; i < sizes[k]; ++i) s += draw(rng);
        sums[k] = s;
    });
    double total = 0.0;
    for (double s : sums) total += s;
    const double mean = total / static_cast<double>(mc.samples);
    // Batches differ in size by at most one; weight their means by size.
    double ss = 0.0;
    for (std::size_t k = 0; k < batches; ++k) {
        const double d = sums[k] / static_cast<double>(sizes[k]) - mean;
        ss += static_cast<double>(sizes[k]) * d * d;
    }
    const double avg_size = static_cast<double>(mc.samples) / static_cast<double>(batches);
    const double var_batch_mean = ss / avg_size / static_cast<double>(batches - 1);
    McEstimate out;
    out.estimate = mean;
    out.stderr_ = std::sqrt(var_batch_mean / static_cast<double>(batches));
    out.samples = mc.samples;
    return out;
}

namespace detail {
inline void require_unit(const Eigen::VectorXd& v, const char* name) {
    if (!v.allFinite() || std::abs(v.norm() - 1.0) > 1e-8) throw InvalidInput(std::string(name) + " must be a unit vector");
}
}  // namespace detail

/// Expected conditional covariance of m(alpha'X) and the density ratio of
/// beta'X given gamma'X, for X ~ N(0, I_p). Each draw contributes
/// (m(A) - E[m(A) | G]) (r(B) - E[r(B) | G]) with both conditional means exact
/// or by Gauss-Hermite (`inner_nodes`).
inline McEstimate confounding_bias_oracle(const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta,
                                          const Eigen::VectorXd& gamma, const LinkSpec& m_link, const LinkSpec& h_link,
                                          const McConfig& mc, int inner_nodes = 64) {
    const Eigen::Index p = alpha.size();
    if (p < 2 || beta.size() != p || gamma.size() != p) throw InvalidInput("direction vectors need equal length >= 2");
    detail::require_unit(alpha, "alpha");
    detail::require_unit(beta, "beta");
    detail::require_unit(gamma, "gamma");
    validate_outcome_link(m_link);
    validate_treatment_link(h_link);
    if (h_link.assumption != Assumption::density_ratio)
        throw InvalidLink("the bias oracle needs a density-ratio link for treatment");
    const double a = std::clamp(alpha.dot(gamma), -1.0, 1.0), b = std::clamp(beta.dot(gamma), -1.0, 1.0);
    const double sa = std::sqrt((1.0 - a) * (1.0 + a)), sb = std::sqrt((1.0 - b) * (1.0 + b));
    const double norm = link_mean(h_link);
    const GaussHermite& rule = gauss_hermite(inner_nodes);
    return batch_means(mc, [&](Rng& rng) {
        double A = 0.0, B = 0.0, G = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            const double x = standard_normal(rng);
            A += alpha[j] * x;
            B += beta[j] * x;
            G += gamma[j] * x;
        }
        const double dm = m_link(A) - conditional_mean(m_link, a * G, sa, rule);
        const double dr = (h_link(B) - conditional_mean(h_link, b * G, sb, rule)) / norm;
        return dm * dr;
    });
}

struct ReductionCheck {
    double lhs = 0.0;     // O(X) - O(gamma'X), by quadrature
    double rhs = 0.0;     // E[Var(ratio | gamma'X)], Monte Carlo
    double stderr_ = 0.0;
};

/// Divergence lost by reducing X to gamma'X against the expected conditional
/// variance of the density ratio, which must agree.
inline ReductionCheck divergence_reduction_check(const Eigen::VectorXd& beta, const Eigen::VectorXd& gamma, const LinkSpec& h_link,
                                 const QuadratureConfig& quad, const McConfig& mc) {
    if (beta.size() != gamma.size()) throw InvalidInput("dimension mismatch");
    detail::require_unit(beta, "beta");
    detail::require_unit(gamma, "gamma");
    validate_treatment_link(h_link);
    if (h_link.assumption != Assumption::density_ratio) throw InvalidLink("variance identity needs a density-ratio link");
    const double b = std::clamp(beta.dot(gamma), -1.0, 1.0);
    const double sb = std::sqrt((1.0 - b) * (1.0 + b));
    ReductionCheck out;
    out.lhs = overlap_divergence_quadrature(1.0, h_link, 0.5, quad) - overlap_divergence_quadrature(b, h_link, 0.5, quad);
    const double norm = link_mean(h_link);
    const GaussHermite& rule = gauss_hermite(64);
    const McEstimate est = batch_means(mc, [&](Rng& rng) {
        const double G = standard_normal(rng);
        const double B = b * G + sb * standard_normal(rng);
        const double d = (h_link(B) - conditional_mean(h_link, b * G, sb, rule)) / norm;
        return d * d;
    });
    out.rhs = est.estimate;
    out.stderr_ = est.stderr_;
    return out;
}

/// Efficiency bound of the ATT adjusted for gamma'X (or for X itself when
/// gamma is absent) under the linear-Gaussian design with a constant effect:
///   E[ e V / pi1^2 + e^2 V / (pi1^2 (1 - e)) ],
/// e the propensity given the representation and V = 1 + s_Y^2 (1 - (alpha.gamma)^2)
/// the outcome variance given it. That V is exact only when the score is
/// deconfounding or treatment/outcome ignore X; other gammas are rejected.
/// The representation is sampled from N(0, scale^2), scale = max(1, s_T |b|),
/// and reweighted to N(0, 1) to tame the e^2 / (1 - e) tail.
inline McEstimate efficiency_bound_gaussian(const dgp::DgpConfig& cfg, const dgp::CoefficientPair& coef,
                                            const std::optional<Eigen::VectorXd>& gamma, const McConfig& mc,
                                            int inner_nodes = 64) {
    detail::require_unit(coef.alpha, "alpha");
    detail::require_unit(coef.beta, "beta");
    double a = 1.0, b = 1.0;
    if (gamma) {
        if (gamma->size() != coef.alpha.size()) throw InvalidInput("gamma has the wrong dimension");
        detail::require_unit(*gamma, "gamma");
        a = coef.alpha.dot(*gamma);
        b = coef.beta.dot(*gamma);
        const double c = coef.alpha.dot(coef.beta);
        if (cfg.s_T != 0.0 && cfg.s_Y != 0.0 && std::abs(a * b - c) > 1e-10)
            throw InvalidInput("outcome variance given this score is not available in closed form (score is not deconfounding)");
    }
    const double var_y = gamma ? 1.0 + cfg.s_Y * cfg.s_Y * (1.0 - a * a) : 1.0;
    const double pi1 = dgp::treated_fraction(cfg);
    const double sb = std::sqrt(std::max(0.0, (1.0 - b) * (1.0 + b)));
    const double scale = std::max(1.0, cfg.s_T * std::abs(b));
    const GaussHermite& rule = gauss_hermite(inner_nodes);
    const double coef_t = cfg.s_T, off = cfg.beta0;
    return batch_means(mc, [&](Rng& rng) {
        const double g = scale * standard_normal(rng);
        const double weight = scale * std::exp(-0.5 * g * g * (1.0 - 1.0 / (scale * scale)));
        double e, one_minus_e;
        if (sb == 0.0) {
            e = glm::inverse_logit(off + coef_t * b * g);
            one_minus_e = glm::inverse_logit(-(off + coef_t * b * g));
        } else {
            e = rule.expect(b * g, sb, [&](double z) { return glm::inverse_logit(off + coef_t * z); });
            one_minus_e = rule.expect(b * g, sb, [&](double z) { return glm::inverse_logit(-(off + coef_t * z)); });
        }
        return weight * (e * var_y + e * e * var_y / one_minus_e) / (pi1 * pi1);
    });
}

/// Histogram estimate of the divergence between two samples of a scalar score:
/// control quantiles define `bins` equal-mass bins (treated values beyond the
/// control range fall in the end bins). Returns +infinity when no treated
/// value lies within the control range.
inline double overlap_divergence_empirical(std::vector<double> control, const std::vector<double>& treated, int bins = 50) {
    if (control.empty() || treated.empty()) throw InvalidInput("both samples must be nonempty");
    if (bins < 1) throw InvalidInput("bins must be >= 1");
    std::sort(control.begin(), control.end());
    const double lo = control.front(), hi = control.back();
    bool any_inside = false;
    for (double t : treated)
        if (t >= lo && t <= hi) {
            any_inside = true;
            break;
        }
    if (!any_inside) return std::numeric_limits<double>::infinity();

    const std::size_t n0 = control.size();
    const auto k = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(bins), n0));
    // Interior edges at control quantiles j / k.
    std::vector<double> edges;
    for (std::size_t j = 1; j < k; ++j) edges.push_back(control[j * n0 / k]);
    auto bin_of = [&](double v) { return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin()); };
    std::vector<double> c_count(k, 0.0), t_count(k, 0.0);
    for (double v : control) c_count[bin_of(v)] += 1.0;
    for (double v : treated) t_count[bin_of(v)] += 1.0;
    const double n1 = static_cast<double>(treated.size()), nc = static_cast<double>(n0);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        if (c_count[j] == 0.0) {
            if (t_count[j] > 0.0) return std::numeric_limits<double>::infinity();
            continue;
        }
        const double ratio = (t_count[j] / n1) / (c_count[j] / nc);
        total += (c_count[j] / nc) * ratio * ratio;
    }
    return total;
}

}  // namespace deconf::overlap
