#pragma once

#include "deconf/error.hpp"
#include "deconf/harness/simulation.hpp"
#include "deconf/overlap.hpp"
#include "deconf/scores.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

namespace deconf::harness {

struct CurvePoint {
    double w = 0.0;
    double b = 0.0;  // beta . gamma(w)
    double divergence = 0.0;
    std::string method;  // quadrature | closed_form
};

struct OverlapCurve {
    std::vector<CurvePoint> points;
};

/// Divergence of gamma(w)'X along the score family for alpha . beta = c,
/// built in three dimensions (alpha = e1, beta in span(e1, e2), orthogonal
/// part along e3). A closed-form point follows each quadrature point when the
/// link has one.
inline OverlapCurve run_overlap_curve(const overlap::LinkSpec& link, double c, const std::vector<double>& w_grid, double pi1,
                                      const overlap::QuadratureConfig& quad = {}) {
    if (!(std::abs(c) <= 1.0)) throw InvalidInput("c must lie in [-1, 1]");
    overlap::validate_treatment_link(link);
    const Eigen::Vector3d alpha(1.0, 0.0, 0.0), beta(c, std::sqrt((1.0 - c) * (1.0 + c)), 0.0), ortho(0.0, 0.0, 1.0);
    const scores::ScoreFamily family = scores::normalize_and_align(alpha, beta);
    OverlapCurve curve;
    for (double w : w_grid) {
        const Eigen::VectorXd gamma = scores::score_direction(family, ortho, w);
        const double b = std::clamp(family.beta.dot(gamma), -1.0, 1.0);
        curve.points.push_back({w, b, overlap::overlap_divergence_quadrature(b, link, pi1, quad), "quadrature"});
        if (const auto exact = overlap::overlap_divergence_closed_form(b, link)) curve.points.push_back({w, b, *exact, "closed_form"});
    }
    return curve;
}

inline void write_overlap_curve_csv(const OverlapCurve& curve, std::ostream& out) {
    out << "w,b,divergence,method\n";
    for (const CurvePoint& p : curve.points)
        out << full_precision(p.w) << ',' << full_precision(p.b) << ',' << full_precision(p.divergence) << ',' << p.method << '\n';
}

inline void write_overlap_curve_csv(const OverlapCurve& curve, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    write_overlap_curve_csv(curve, out);
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace deconf::harness
