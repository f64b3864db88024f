#pragma once

// ATT estimators: outcome regression, inverse propensity weighting and the
// augmented (doubly robust) combination, on raw covariates or on a scalar
// score. Weighted control averages use odds weights e / (1 - e); Hajek
// normalization (divide by the summed weights) is the default.

#include "deconf/dataset.hpp"
#include "deconf/error.hpp"
#include "deconf/glm.hpp"
#include "deconf/scores.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace deconf::estimators {

enum class Method { regr, ipw, aipw };
enum class Fallback { none, zero_coefficients, zero_variance };

inline constexpr std::array<Method, 3> all_methods{Method::regr, Method::ipw, Method::aipw};

inline const char* to_string(Method m) {
    switch (m) {
        case Method::regr: return "regr";
        case Method::ipw: return "ipw";
        case Method::aipw: return "aipw";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "regr") return Method::regr;
    if (s == "ipw") return Method::ipw;
    if (s == "aipw") return Method::aipw;
    throw InvalidInput("unknown estimator '" + s + "'");
}

inline const char* to_string(Fallback f) {
    switch (f) {
        case Fallback::none: return "none";
        case Fallback::zero_coefficients: return "zero_coefficients";
        case Fallback::zero_variance: return "zero_variance";
    }
    return "?";
}

inline bool needs_outcome_model(Method m) { return m != Method::ipw; }
inline bool needs_propensity_model(Method m) { return m != Method::regr; }

struct TrimConfig {
    double epsilon = 2.220446e-16;

    void validate() const {
        if (!(epsilon > 0.0 && epsilon < 0.5)) throw InvalidInput("trim epsilon must lie in (0, 0.5)");
    }
};

struct EstimatorOptions {
    TrimConfig trim;
    bool hajek = true;  // false: divide both arms by the treated count instead
};

struct EstimatorResult {
    double tau_hat = 0.0;
    Method method = Method::regr;
    std::string score_label = "X";
    Fallback fallback = Fallback::none;
    int trim_count = 0;
};

/// Replaces e by 1 - epsilon wherever 1 - e < epsilon.
inline std::pair<Eigen::VectorXd, int> trim_propensity(const Eigen::VectorXd& e_hat, const TrimConfig& cfg = {}) {
    cfg.validate();
    Eigen::VectorXd out = e_hat;
    int count = 0;
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        if (!(out[i] >= 0.0 && out[i] <= 1.0)) throw InvalidInput("propensity estimates must lie in [0, 1]");
        if (1.0 - out[i] < cfg.epsilon) {
            out[i] = 1.0 - cfg.epsilon;
            ++count;
        }
    }
    return {std::move(out), count};
}

namespace detail {

inline void check_arms(const Eigen::VectorXd& t) {
    bool treated = false, control = false;
    for (Eigen::Index i = 0; i < t.size(); ++i) (t[i] == 1.0 ? treated : control) = true;
    if (!treated || !control) throw DegenerateTreatmentArm("estimator needs treated and control units");
}

inline void check_length(const Dataset& d, const Eigen::VectorXd& v, const char* what) {
    if (v.size() != d.outcome.size()) throw InvalidInput(std::string(what) + " length does not match the dataset");
    if (!v.allFinite()) throw InvalidInput(std::string(what) + " has non-finite entries");
}

// Treated mean of `resid` minus the odds-weighted control mean of `resid`.
// Shared by IPW (resid = Y) and AIPW (resid = Y - m0), so the two agree bit
// for bit when m0 is zero.
inline std::pair<double, int> weighted_contrast(const Eigen::VectorXd& t, const Eigen::VectorXd& resid,
                                                const Eigen::VectorXd& e_hat, const EstimatorOptions& opt) {
    check_arms(t);
    const auto [e, trimmed] = trim_propensity(e_hat, opt.trim);
    double treated_sum = 0.0, treated_n = 0.0, control_sum = 0.0, weight_sum = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        if (t[i] == 1.0) {
            treated_sum += resid[i];
            treated_n += 1.0;
        } else {
            const double w = e[i] / (1.0 - e[i]);
            control_sum += w * resid[i];
            weight_sum += w;
        }
    }
    const double control_norm = opt.hajek ? weight_sum : treated_n;
    if (!(weight_sum > 0.0)) throw DegenerateWeights("all control weights are zero");
    return {treated_sum / treated_n - control_sum / control_norm, trimmed};
}

}  // namespace detail

/// Treated average of Y - m0_hat.
inline double att_regression(const Dataset& d, const Eigen::VectorXd& m0_hat) {
    detail::check_length(d, m0_hat, "m0_hat");
    double sum = 0.0, count = 0.0;
    for (Eigen::Index i = 0; i < d.treatment.size(); ++i)
        if (d.treatment[i] == 1.0) {
            sum += d.outcome[i] - m0_hat[i];
            count += 1.0;
        }
    if (count == 0.0) throw DegenerateTreatmentArm("no treated units");
    return sum / count;
}

inline std::pair<double, int> att_ipw(const Dataset& d, const Eigen::VectorXd& e_hat, const EstimatorOptions& opt = {}) {
    detail::check_length(d, e_hat, "e_hat");
    return detail::weighted_contrast(d.treatment, d.outcome, e_hat, opt);
}

inline std::pair<double, int> att_aipw(const Dataset& d, const Eigen::VectorXd& e_hat, const Eigen::VectorXd& m0_hat,
                                       const EstimatorOptions& opt = {}) {
    detail::check_length(d, e_hat, "e_hat");
    detail::check_length(d, m0_hat, "m0_hat");
    const Eigen::VectorXd resid = d.outcome - m0_hat;
    return detail::weighted_contrast(d.treatment, resid, e_hat, opt);
}

inline double att_ipw_hajek(const Dataset& d, const Eigen::VectorXd& e_hat, const TrimConfig& cfg = {}) {
    return att_ipw(d, e_hat, EstimatorOptions{cfg, true}).first;
}

inline double att_aipw_hajek(const Dataset& d, const Eigen::VectorXd& e_hat, const Eigen::VectorXd& m0_hat,
                             const TrimConfig& cfg = {}) {
    return att_aipw(d, e_hat, m0_hat, EstimatorOptions{cfg, true}).first;
}

/// Applies one estimator given nuisance predictions for every unit.
inline EstimatorResult apply_method(const Dataset& d, Method method, const Eigen::VectorXd* m0_hat,
                                    const Eigen::VectorXd* e_hat, const EstimatorOptions& opt) {
    EstimatorResult r;
    r.method = method;
    switch (method) {
        case Method::regr: r.tau_hat = att_regression(d, *m0_hat); break;
        case Method::ipw: std::tie(r.tau_hat, r.trim_count) = att_ipw(d, *e_hat, opt); break;
        case Method::aipw: std::tie(r.tau_hat, r.trim_count) = att_aipw(d, *e_hat, *m0_hat, opt); break;
    }
    return r;
}

struct GlmConfig {
    glm::Penalty outcome_penalty = glm::Penalty::lasso;
    glm::Penalty propensity_penalty = glm::Penalty::lasso;
    glm::CrossValidation cv;
    glm::SolverOptions solver;
};

/// Penalized nuisance models on the full covariates: the outcome model is fit
/// on controls only, the propensity model on every unit.
struct CovariateFits {
    glm::FittedGLM outcome;
    glm::FittedGLM propensity;
    Eigen::VectorXd m0_hat;
    Eigen::VectorXd e_hat;
};

inline glm::FittedGLM fit_outcome_model(const Dataset& d, glm::Penalty penalty, const glm::CrossValidation& cv,
                                        const glm::SolverOptions& solver = {}) {
    const std::vector<Eigen::Index> controls = d.rows_with_treatment(0.0);
    if (controls.size() < 2) throw DegenerateTreatmentArm("outcome model needs at least two control units");
    Eigen::VectorXd y(static_cast<Eigen::Index>(controls.size()));
    for (std::size_t i = 0; i < controls.size(); ++i) y[static_cast<Eigen::Index>(i)] = d.outcome[controls[i]];
    return glm::fit_glm(d.design.rows(controls), y, glm::Family::linear, penalty, cv, solver);
}

inline glm::FittedGLM fit_propensity_model(const Dataset& d, glm::Penalty penalty, const glm::CrossValidation& cv,
                                           const glm::SolverOptions& solver = {}) {
    return glm::fit_glm(d.design, d.treatment, glm::Family::logistic, penalty, cv, solver);
}

inline CovariateFits fit_covariate_models(const Dataset& d, const GlmConfig& cfg) {
    d.validate();
    CovariateFits f;
    f.outcome = fit_outcome_model(d, cfg.outcome_penalty, cfg.cv, cfg.solver);
    f.propensity = fit_propensity_model(d, cfg.propensity_penalty, cfg.cv, cfg.solver);
    f.m0_hat = glm::predict(f.outcome, d.design);
    f.e_hat = glm::predict(f.propensity, d.design);
    return f;
}

/// Estimates on the raw covariates for each requested method.
inline std::vector<EstimatorResult> estimate_on_covariates(const Dataset& d, const Eigen::VectorXd& m0_hat,
                                                           const Eigen::VectorXd& e_hat, std::span<const Method> methods,
                                                           const EstimatorOptions& opt = {}) {
    std::vector<EstimatorResult> out;
    for (Method m : methods) out.push_back(apply_method(d, m, &m0_hat, &e_hat, opt));
    return out;
}

/// True when the empirical variance is zero up to rounding.
inline bool zero_variance(const Eigen::VectorXd& v) {
    if (v.size() < 2) return true;
    const double mean = v.mean();
    const double var = (v.array() - mean).square().sum() / static_cast<double>(v.size());
    return var <= 1e-24 * std::max(1.0, mean * mean);
}

/// Refits of the outcome (OLS on controls) and propensity (logistic, all
/// units) on a scalar score, with their predictions for every unit.
struct ScoreFits {
    std::optional<glm::ScoreModel> outcome;
    std::optional<glm::ScoreModel> propensity;
    Eigen::VectorXd m0_hat;
    Eigen::VectorXd e_hat;
};

inline ScoreFits fit_score_models(const Dataset& d, const Eigen::VectorXd& score, bool outcome, bool propensity) {
    ScoreFits f;
    if (outcome) {
        std::vector<double> s0, y0;
        for (Eigen::Index i = 0; i < score.size(); ++i)
            if (d.treatment[i] == 0.0) {
                s0.push_back(score[i]);
                y0.push_back(d.outcome[i]);
            }
        f.outcome = glm::fit_score_linear(s0, y0);
        f.m0_hat = (f.outcome->intercept + f.outcome->slope * score.array()).matrix();
    }
    if (propensity) {
        const std::span<const double> s(score.data(), static_cast<std::size_t>(score.size()));
        const std::span<const double> t(d.treatment.data(), static_cast<std::size_t>(d.treatment.size()));
        f.propensity = glm::fit_score_logistic(s, t);
        f.e_hat.resize(score.size());
        for (Eigen::Index i = 0; i < score.size(); ++i)
            f.e_hat[i] = glm::inverse_logit(f.propensity->intercept + f.propensity->slope * score[i]);
    }
    return f;
}

/// Which fallback, if any, a score-based estimate needs: degenerate family,
/// a constant score, or (for methods with an outcome model) a score that is
/// constant among controls.
struct ScoreScreen {
    std::optional<Fallback> all_methods;       // applies to every method
    std::optional<Fallback> outcome_methods;   // applies to regr and aipw only
    Eigen::VectorXd score;

    std::optional<Fallback> for_method(Method m) const {
        if (all_methods) return all_methods;
        if (needs_outcome_model(m)) return outcome_methods;
        return std::nullopt;
    }
};

inline ScoreScreen screen_score(const Dataset& d, const Eigen::VectorXd& gamma, scores::Degeneracy family_state) {
    ScoreScreen s;
    if (family_state == scores::Degeneracy::near_zero_coefficients) {
        s.all_methods = Fallback::zero_coefficients;
        return s;
    }
    s.score = scores::project_score(gamma, d.design);
    if (zero_variance(s.score)) {
        s.all_methods = Fallback::zero_variance;
        return s;
    }
    const std::vector<Eigen::Index> controls = d.rows_with_treatment(0.0);
    Eigen::VectorXd sc(static_cast<Eigen::Index>(controls.size()));
    for (std::size_t i = 0; i < controls.size(); ++i) sc[static_cast<Eigen::Index>(i)] = s.score[controls[i]];
    if (zero_variance(sc)) s.outcome_methods = Fallback::zero_variance;
    return s;
}

/// Score-based estimates for several methods. Methods flagged by screen_score
/// return the matching raw-covariate estimate from `raw_estimates`.
inline std::vector<EstimatorResult> estimate_with_score(const Dataset& d, const Eigen::VectorXd& gamma,
                                                        scores::Degeneracy family_state, const std::string& label,
                                                        std::span<const Method> methods,
                                                        const std::map<Method, double>& raw_estimates,
                                                        const EstimatorOptions& opt = {}) {
    const ScoreScreen screen = screen_score(d, gamma, family_state);
    bool want_outcome = false, want_propensity = false;
    for (Method m : methods) {
        if (screen.for_method(m)) continue;
        want_outcome |= needs_outcome_model(m);
        want_propensity |= needs_propensity_model(m);
    }
    const ScoreFits fits = want_outcome || want_propensity
                               ? fit_score_models(d, screen.score, want_outcome, want_propensity)
                               : ScoreFits{};
    std::vector<EstimatorResult> out;
    for (Method m : methods) {
        EstimatorResult r;
        if (const auto why = screen.for_method(m)) {
            const auto it = raw_estimates.find(m);
            if (it == raw_estimates.end())
                throw InvalidInput(std::string("fallback needs the raw-covariate ") + to_string(m) + " estimate");
            r.method = m;
            r.tau_hat = it->second;
            r.fallback = *why;
        } else {
            r = apply_method(d, m, &fits.m0_hat, &fits.e_hat, opt);
        }
        r.score_label = label;
        out.push_back(r);
    }
    return out;
}

struct ScoreInput {
    Eigen::VectorXd gamma;
    scores::Degeneracy family_state = scores::Degeneracy::ok;
    std::string label;
};

/// Single-method entry point. Without a score the penalized covariate models
/// are fit per `glm_config`. With a score the raw-covariate estimate is only
/// needed for a fallback; it is taken from `fallback_estimates` when present
/// and computed otherwise.
inline EstimatorResult estimate_att_with_score(const Dataset& d, const std::optional<ScoreInput>& score, Method method,
                                               const GlmConfig& glm_config, const EstimatorOptions& opt = {},
                                               const std::map<Method, double>* fallback_estimates = nullptr) {
    d.validate();
    auto raw = [&] {
        const CovariateFits f = fit_covariate_models(d, glm_config);
        return apply_method(d, method, &f.m0_hat, &f.e_hat, opt);
    };
    if (!score) return raw();
    std::map<Method, double> known = fallback_estimates ? *fallback_estimates : std::map<Method, double>{};
    if (!known.count(method) && screen_score(d, score->gamma, score->family_state).for_method(method))
        known[method] = raw().tau_hat;
    const std::array<Method, 1> one{method};
    return estimate_with_score(d, score->gamma, score->family_state, score->label, one, known, opt).front();
}

}  // namespace deconf::estimators
