#pragma once

// Gaussian expectations and adaptive integration.

#include "deconf/error.hpp"

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

namespace deconf {

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Gauss-Hermite rule for E[f(Z)], Z ~ N(0, 1): nodes are scaled by sqrt(2)
/// and weights sum to one.
struct GaussHermite {
    std::vector<double> nodes;
    std::vector<double> weights;

    template <class F>
    double expect(F&& f) const {
        double total = 0.0;
        for (std::size_t k = 0; k < nodes.size(); ++k) total += weights[k] * f(nodes[k]);
        return total;
    }

    // E[f(mean + sd * Z)]
    template <class F>
    double expect(double mean, double sd, F&& f) const {
        double total = 0.0;
        for (std::size_t k = 0; k < nodes.size(); ++k) total += weights[k] * f(mean + sd * nodes[k]);
        return total;
    }
};

namespace detail {

// Golub-Welsch starting values polished by Newton steps on the orthonormal
// Hermite recurrence, which keeps the small outer weights accurate.
inline GaussHermite build_gauss_hermite(int n) {
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(k / 2.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi, Eigen::EigenvaluesOnly);

    GaussHermite rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    const double p0 = std::pow(std::numbers::pi, -0.25);
    for (int i = 0; i < n; ++i) {
        double x = eig.eigenvalues()[i];
        double derivative = 1.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p_prev = 0.0, p = p0;
            for (int j = 1; j <= n; ++j) {
                const double next = x * std::sqrt(2.0 / j) * p - std::sqrt((j - 1.0) / j) * p_prev;
                p_prev = p;
                p = next;
            }
            derivative = std::sqrt(2.0 * n) * p_prev;
            const double step = p / derivative;
            x -= step;
            if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(x))) break;
        }
        rule.nodes[static_cast<std::size_t>(i)] = std::numbers::sqrt2 * x;
        rule.weights[static_cast<std::size_t>(i)] = 2.0 / (derivative * derivative) / std::sqrt(std::numbers::pi);
    }
    double sum = 0.0;
    for (double w : rule.weights) sum += w;
    for (double& w : rule.weights) w /= sum;
    return rule;
}

}  // namespace detail

/// Cached rule with `n` nodes; safe to call from several threads.
inline const GaussHermite& gauss_hermite(int n) {
    if (n < 1) throw InvalidInput("Gauss-Hermite rule needs at least one node");
    static std::mutex mutex;
    static std::map<int, std::unique_ptr<GaussHermite>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<GaussHermite>(detail::build_gauss_hermite(n));
    return *slot;
}

/// Adaptive Gauss-Kronrod (61 points) on [a, b]; a or b may be infinite.
template <class F>
double integrate(F&& f, double a, double b, double tolerance = 1e-13, double* error = nullptr) {
    double err = 0.0;
    const double value =
        boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 20, tolerance, &err);
    if (error) *error = err;
    return value;
}

/// E[f(Z)] for Z ~ N(0, 1), integrated adaptively piece by piece between the
/// sorted `breaks` (kinks or steep regions of f) and truncated at |z| = 14.
template <class F>
double gaussian_expectation_adaptive(F&& f, std::vector<double> breaks, double tolerance = 1e-12) {
    constexpr double edge = 14.0;
    std::vector<double> points{-edge};
    std::sort(breaks.begin(), breaks.end());
    for (double b : breaks)
        if (b > points.back() && b < edge) points.push_back(b);
    points.push_back(edge);
    auto weighted = [&](double z) { return f(z) * normal_pdf(z); };
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < points.size(); ++k) total += integrate(weighted, points[k], points[k + 1], tolerance);
    return total;
}

}  // namespace deconf
