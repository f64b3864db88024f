#pragma once

// Self-checks of the score family and the overlap analytics: construction
// identities, route cross-checks and Monte Carlo oracles. Failures are
// reported as data.

#include "deconf/dgp.hpp"
#include "deconf/overlap.hpp"
#include "deconf/scores.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace deconf::harness {

struct CheckResult {
    std::string name;
    bool passed = false;
    nlohmann::json observed;
};

struct VerificationReport {
    std::uint64_t seed = 0;
    std::vector<CheckResult> checks;

    bool passed() const {
        for (const CheckResult& c : checks)
            if (!c.passed) return false;
        return true;
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"seed", seed}, {"passed", passed()}, {"checks", nlohmann::json::array()}};
        for (const CheckResult& c : checks) j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"observed", c.observed}});
        return j;
    }
};

namespace detail {

inline std::vector<double> unit_grid(double lo) {
    std::vector<double> g;
    for (int k = static_cast<int>(std::lround(lo * 10)); k <= 10; ++k) g.push_back(k / 10.0);
    return g;
}

inline scores::ScoreFamily random_family(double c, int p, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    Eigen::VectorXd a = standard_normal_vector(rng, p).normalized();
    Eigen::VectorXd v = standard_normal_vector(rng, p);
    for (int pass = 0; pass < 2; ++pass) v -= a.dot(v) * a;
    v.normalize();
    return scores::normalize_and_align(a, c * a + std::sqrt(1.0 - c * c) * v);
}

}  // namespace detail

/// Runs every check; `samples` sets the Monte Carlo size of the oracle checks.
inline VerificationReport run_verification_suite(std::uint64_t seed, std::size_t samples = 1'000'000, unsigned threads = 1) {
    using namespace overlap;
    VerificationReport rep;
    rep.seed = seed;
    auto add = [&](std::string name, bool ok, nlohmann::json obs) { rep.checks.push_back({std::move(name), ok, std::move(obs)}); };
    const std::vector<double> w_grid = detail::unit_grid(-1.0), b_grid = detail::unit_grid(0.0);
    McConfig mc;
    mc.samples = samples;
    mc.threads = threads;

    {
        double worst_res = 0.0, worst_norm = 0.0, worst_end = 0.0, worst_equi = 0.0, worst_ortho = 0.0;
        for (double c : {0.25, 0.5, 0.75}) {
            const scores::ScoreFamily f = detail::random_family(c, 12, derive_seed(seed, 100));
            const Eigen::VectorXd n = scores::sample_orthocomplement(f, derive_seed(seed, 101));
            worst_ortho = std::max({worst_ortho, std::abs(n.dot(f.alpha)), std::abs(n.dot(f.beta)), std::abs(n.norm() - 1.0)});
            for (double w : w_grid) {
                const Eigen::VectorXd g = scores::gamma_from_w(f, n, w).gamma;
                worst_res = std::max(worst_res, std::abs(scores::hyperbola_residual(g, f.alpha, f.beta)));
                worst_norm = std::max(worst_norm, std::abs(g.norm() - 1.0));
            }
            worst_end = std::max({worst_end, (scores::gamma_from_w(f, n, 1.0).gamma - f.beta).lpNorm<Eigen::Infinity>(),
                                  (scores::gamma_from_w(f, n, -1.0).gamma - f.alpha).lpNorm<Eigen::Infinity>()});
            const Eigen::VectorXd g0 = scores::gamma_from_w(f, n, 0.0).gamma;
            worst_equi = std::max(worst_equi, std::abs(f.alpha.dot(g0) - f.beta.dot(g0)));
        }
        add("hyperbola_residual <= 1e-12 for 21 grid w values, 3 c values", worst_res <= 1e-12, {{"max_abs_residual", worst_res}});
        add("score norm equals 1 within 1e-12", worst_norm <= 1e-12, {{"max_norm_error", worst_norm}});
        add("endpoints gamma(1) = beta, gamma(-1) = alpha within 1e-12", worst_end <= 1e-12, {{"max_coordinate_error", worst_end}});
        add("equiangular at w = 0 within 1e-12", worst_equi <= 1e-12, {{"max_gap", worst_equi}});
        add("orthogonal component is a unit vector orthogonal to alpha, beta", worst_ortho <= 1e-10, {{"max_error", worst_ortho}});
    }

    {
        const int p = 5;
        const scores::ScoreFamily f = detail::random_family(0.75, p, derive_seed(seed, 200));
        const Eigen::VectorXd n = scores::sample_orthocomplement(f, derive_seed(seed, 201));
        // At w = +-1 the integrand vanishes up to rounding (|est| ~ 1e-17).
        constexpr double bias_floor = 1e-12;
        double worst_z = 0.0;
        bool ok = true;
        for (std::size_t k = 0; k < w_grid.size(); ++k) {
            mc.seed = derive_seed(seed, 300 + k);
            const McEstimate r = confounding_bias_oracle(f.alpha, f.beta, scores::gamma_from_w(f, n, w_grid[k]).gamma,
                                                         LinkSpec::identity(), LinkSpec::logistic(), mc);
            ok &= std::abs(r.estimate) <= 4.0 * r.se() + bias_floor;
            if (std::abs(r.estimate) > bias_floor) worst_z = std::max(worst_z, std::abs(r.estimate) / r.se());
        }
        add("confounding bias along the family within 4 SE of 0", ok, {{"max_abs_z", worst_z}});
        mc.seed = derive_seed(seed, 400);
        const McEstimate mid = confounding_bias_oracle(f.alpha, f.beta, (f.alpha + f.beta).normalized(), LinkSpec::identity(),
                                                      LinkSpec::logistic(), mc);
        add("confounding bias at the normalized alpha + beta exceeds 6 SE", std::abs(mid.estimate) > 6.0 * mid.se(),
            {{"estimate", mid.estimate}, {"stderr", mid.se()}});
    }

    {
        double relu_gap = 0.0, ind_gap = 0.0, exp_gap = 0.0;
        for (double b : b_grid) {
            relu_gap = std::max(relu_gap, std::abs(overlap_divergence_quadrature(b, LinkSpec::relu(), 0.5) - overlap_divergence_relu(b)));
            ind_gap = std::max(ind_gap, std::abs(overlap_divergence_quadrature(b, LinkSpec::indicator(0.0), 0.5) -
                                                 overlap_divergence_indicator(0.0, b)));
            const double e = overlap_divergence_exp_tilt(1.0, b);
            exp_gap = std::max(exp_gap, std::abs(overlap_divergence_quadrature(b, LinkSpec::exp_tilt(1.0), 0.5) - e) / e);
        }
        add("relu quadrature vs closed form <= 1e-6", relu_gap <= 1e-6, {{"max_abs_gap", relu_gap}});
        add("indicator quadrature vs closed form <= 1e-6", ind_gap <= 1e-6, {{"max_abs_gap", ind_gap}});
        add("exp_tilt quadrature vs closed form <= 1e-8 relative", exp_gap <= 1e-8, {{"max_rel_gap", exp_gap}});
        const double t1 = owens_t(0.0, 1.0), t3 = owens_t(0.0, 1.0 / std::sqrt(3.0));
        add("Owen's T arctan identities", std::abs(t1 - 0.125) < 1e-12 && std::abs(t3 - 1.0 / 12.0) < 1e-12,
            {{"T(0,1)", t1}, {"T(0,1/sqrt3)", t3}});
    }

    {
        const LinkSpec prop_link = LinkSpec::logistic(1.0, 0.0, Assumption::propensity);
        const std::vector<std::pair<std::string, LinkSpec>> links{
            {"logistic_propensity", prop_link}, {"exp_tilt", LinkSpec::exp_tilt(1.0)}, {"indicator", LinkSpec::indicator(0.0)}, {"relu", LinkSpec::relu()}};
        for (const auto& [name, h] : links) {
            double min_step = INFINITY, worst_sym = 0.0;
            double prev = overlap_divergence_quadrature(0.0, h, link_mean(h));
            for (std::size_t k = 1; k < b_grid.size(); ++k) {
                const double v = overlap_divergence_quadrature(b_grid[k], h, link_mean(h));
                min_step = std::min(min_step, v - prev);
                worst_sym = std::max(worst_sym, std::abs(v - overlap_divergence_quadrature(-b_grid[k], h, link_mean(h))));
                prev = v;
            }
            add("divergence strictly increasing in |b| (" + name + ")", min_step > 1e-9, {{"min_step", min_step}});
            add("divergence symmetric in b (" + name + ")", worst_sym == 0.0, {{"max_gap", worst_sym}});
        }
        bool ok = true;
        nlohmann::json argmin;
        for (double c : {0.25, 0.5, 0.75}) {
            double best = INFINITY, best_w = 0.0;
            for (double w : w_grid) {
                const double v = overlap_divergence_quadrature(scores::beta_projection(c, w), prop_link, link_mean(prop_link));
                if (v < best) best = v, best_w = w;
            }
            ok &= best_w == -1.0;
            argmin.push_back({{"c", c}, {"argmin_w", best_w}});
        }
        add("divergence along the family minimized at w = -1", ok, argmin);
    }

    {
        const Eigen::Vector3d beta(1.0, 0.0, 0.0);
        bool ok = true, nonneg = true;
        nlohmann::json obs = nlohmann::json::array();
        for (double b : {0.0, 0.5, 1.0}) {
            const Eigen::Vector3d g(b, std::sqrt(1.0 - b * b), 0.0);
            mc.seed = derive_seed(seed, 500 + static_cast<std::uint64_t>(b * 10));
            const ReductionCheck r = divergence_reduction_check(beta, g, LinkSpec::exp_tilt(1.0), {}, mc);
            ok &= std::abs(r.lhs - r.rhs) <= 4.0 * r.stderr_;
            nonneg &= r.lhs >= -1e-9;
            obs.push_back({{"b", b}, {"lhs", r.lhs}, {"rhs", r.rhs}, {"stderr", r.stderr_}});
        }
        add("divergence reduction equals expected conditional ratio variance (exp_tilt)", ok, obs);
        add("divergence reduction is nonnegative", nonneg, obs);

        const scores::ScoreFamily f = detail::random_family(0.5, 4, derive_seed(seed, 600));
        const Eigen::VectorXd g = (f.alpha + f.beta).normalized();
        mc.seed = derive_seed(seed, 601);
        const McEstimate bias = confounding_bias_oracle(f.alpha, f.beta, g, LinkSpec::identity(), LinkSpec::exp_tilt(1.0), mc);
        const ReductionCheck reduction = divergence_reduction_check(f.beta, g, LinkSpec::exp_tilt(1.0), {}, mc);
        const double a = f.alpha.dot(g);
        const double bound = std::sqrt(1.0 - a * a) * std::sqrt(std::max(0.0, reduction.lhs));
        add("confounding bias within the Cauchy-Schwarz bound", std::abs(bias.estimate) <= bound + 4.0 * bias.se(),
            {{"abs_bias", std::abs(bias.estimate)}, {"bound", bound}, {"stderr", bias.se()}});
    }

    {
        dgp::DgpConfig cfg;
        cfg.p = 30;
        cfg.s_T = 0.0;
        const dgp::CoefficientPair coef = dgp::generate_coefficients(cfg, derive_seed(seed, 700));
        mc.seed = derive_seed(seed, 701);
        const McEstimate v = efficiency_bound_gaussian(cfg, coef, std::nullopt, mc);
        add("efficiency bound of the randomized design is 4", std::abs(v.estimate - 4.0) <= 4.0 * v.se() + 1e-12,
            {{"estimate", v.estimate}, {"stderr", v.se()}});
    }
    return rep;
}

}  // namespace deconf::harness
