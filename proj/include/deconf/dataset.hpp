#pragma once

#include "deconf/error.hpp"
#include "deconf/glm.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace deconf {

/// Observational sample: covariates, binary treatment, outcome and, for
/// simulated or semi-synthetic data, the true control/treated outcome surfaces.
struct Dataset {
    glm::DesignMatrix design;
    Eigen::VectorXd treatment;
    Eigen::VectorXd outcome;
    std::optional<Eigen::VectorXd> oracle_m0;
    std::optional<Eigen::VectorXd> oracle_m1;

    Eigen::Index n() const noexcept { return design.n(); }
    Eigen::Index p() const noexcept { return design.p(); }

    Eigen::Index treated_count() const { return static_cast<Eigen::Index>(treatment.sum()); }

    std::vector<Eigen::Index> rows_with_treatment(double arm) const {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < treatment.size(); ++i)
            if (treatment[i] == arm) rows.push_back(i);
        return rows;
    }

    void validate() const {
        const Eigen::Index n = design.n();
        if (treatment.size() != n || outcome.size() != n) throw InvalidInput("treatment/outcome length does not match design");
        if (!outcome.allFinite()) throw InvalidInput("outcome has non-finite entries");
        Eigen::Index treated = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (treatment[i] == 1.0)
                ++treated;
            else if (treatment[i] != 0.0)
                throw InvalidInput("treatment must be 0 or 1");
        }
        if (treated == 0 || treated == n) throw DegenerateTreatmentArm("dataset needs treated and control units");
        for (const auto* oracle : {&oracle_m0, &oracle_m1})
            if (*oracle && ((*oracle)->size() != n || !(*oracle)->allFinite()))
                throw InvalidInput("oracle outcome column has the wrong length or non-finite entries");
    }
};

}  // namespace deconf
