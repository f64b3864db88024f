#pragma once

// Penalized linear / logistic regression.
//
// Problems are solved on internally standardized features (mean 0, variance 1
// with the 1/n convention) and reported on the original scale. The intercept
// is never penalized.
//
//   linear:   (1/2n) |y - b0 - X b|^2            + pen(b)
//   logistic: -(1/n) sum [y eta - log(1 + e^eta)] + pen(b)
//
//   lasso: pen(b) = lambda |b|_1       ridge: pen(b) = (lambda / 2) |b|^2
//
// Lasso uses cyclic coordinate descent with sequential strong-rule screening
// and a KKT pass over all features. Logistic fits wrap the same coordinate
// solver in iteratively reweighted least squares. Linear ridge is solved
// exactly through a symmetric eigendecomposition of the (primal or dual) Gram
// matrix, which also makes a whole lambda path cost one decomposition.

#include "deconf/error.hpp"
#include "deconf/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace deconf::glm {

enum class Family { linear, logistic };
enum class Penalty { lasso, ridge, none };
enum class CvRule { min_deviance, one_standard_error };

inline const char* to_string(Family f) { return f == Family::linear ? "linear" : "logistic"; }

inline const char* to_string(Penalty p) {
    switch (p) {
        case Penalty::lasso: return "lasso";
        case Penalty::ridge: return "ridge";
        case Penalty::none: return "none";
    }
    return "?";
}

inline Penalty parse_penalty(const std::string& s) {
    if (s == "lasso") return Penalty::lasso;
    if (s == "ridge") return Penalty::ridge;
    if (s == "none") return Penalty::none;
    throw InvalidInput("unknown penalty '" + s + "'");
}

/// Covariate matrix, n rows by p columns, all entries finite.
class DesignMatrix {
public:
    DesignMatrix() = default;

    explicit DesignMatrix(Eigen::MatrixXd values) : values_(std::move(values)) {
        if (values_.rows() < 1 || values_.cols() < 1)
            throw InvalidInput("design matrix must have at least one row and one column");
        if (!values_.allFinite()) throw InvalidInput("design matrix has non-finite entries");
    }

    const Eigen::MatrixXd& values() const noexcept { return values_; }
    Eigen::Index n() const noexcept { return values_.rows(); }
    Eigen::Index p() const noexcept { return values_.cols(); }

    DesignMatrix rows(std::span<const Eigen::Index> index) const {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(index.size()), values_.cols());
        for (std::size_t i = 0; i < index.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = values_.row(index[i]);
        return DesignMatrix(std::move(out));
    }

private:
    Eigen::MatrixXd values_;
};

struct FixedLambda {
    double value = 0.0;
};

struct CrossValidation {
    int folds = 10;
    int grid_size = 100;
    /// Smallest grid value as a fraction of lambda_max. Unset: 0.01 when
    /// n < p, 1e-4 otherwise.
    std::optional<double> grid_min_ratio;
    std::uint64_t seed = 0;
    CvRule rule = CvRule::min_deviance;
};

using LambdaSpec = std::variant<FixedLambda, CrossValidation>;

struct SolverOptions {
    double tolerance = 1e-7;       // max coefficient change (standardized scale)
    int max_sweeps = 100000;       // coordinate-descent sweeps per inner solve
    int max_irls = 100;            // outer logistic iterations
    double weight_floor = 1e-5;    // IRLS working weights
    double probability_clamp = 1e-10;
    /// Stop a lambda path once the deviance ratio exceeds 0.999 or improves by
    /// less than 1e-5 (relative) after the fifth value; later grid points reuse
    /// the last solution.
    bool early_stop_path = true;
    bool record_trace = false;
};

struct FittedGLM {
    Family family = Family::linear;
    Penalty penalty = Penalty::none;
    double lambda = 0.0;
    double intercept = 0.0;
    Eigen::VectorXd coefficients;
    bool converged = true;
    int iterations = 0;

    // Same solution on the internal standardized scale.
    double standardized_intercept = 0.0;
    Eigen::VectorXd standardized_coefficients;
    /// Penalized objective after each coordinate sweep (record_trace only).
    std::vector<double> objective_trace;
};

/// Column centering and scaling with the 1/n variance convention. Columns with
/// zero variance get scale 0 and are excluded from fitting.
struct Standardization {
    Eigen::VectorXd center;
    Eigen::VectorXd scale;

    static Standardization of(const Eigen::MatrixXd& x) {
        Standardization s;
        const double n = static_cast<double>(x.rows());
        s.center = x.colwise().mean().transpose();
        s.scale.resize(x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double var = (x.col(j).array() - s.center[j]).square().sum() / n;
            s.scale[j] = var > 1e-24 * std::max(1.0, s.center[j] * s.center[j]) ? std::sqrt(var) : 0.0;
        }
        return s;
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
        Eigen::MatrixXd out(x.rows(), x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (scale[j] > 0.0)
                out.col(j) = (x.col(j).array() - center[j]) / scale[j];
            else
                out.col(j).setZero();
        }
        return out;
    }
};

/// Numerically stable inverse logit.
inline double inverse_logit(double eta) {
    if (eta >= 0.0) {
        const double e = std::exp(-eta);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

/// log(1 + exp(eta)) without overflow.
inline double log1p_exp(double eta) {
    return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

/// Evaluates the model. Logistic predictions are kept strictly inside (0, 1).
inline Eigen::VectorXd predict(const FittedGLM& model, const DesignMatrix& design) {
    if (design.p() != model.coefficients.size())
        throw InvalidInput("predict: design has " + std::to_string(design.p()) + " columns, model expects " +
                           std::to_string(model.coefficients.size()));
    Eigen::VectorXd eta = (design.values() * model.coefficients).array() + model.intercept;
    if (model.family == Family::linear) return eta;
    constexpr double lo = std::numeric_limits<double>::min();
    const double hi = std::nextafter(1.0, 0.0);
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = std::clamp(inverse_logit(eta[i]), lo, hi);
    return eta;
}

/// Mean deviance of predictions against held-out responses: squared error for
/// the linear family, binomial deviance for the logistic family.
inline double mean_deviance(Family family, const Eigen::VectorXd& y, const Eigen::VectorXd& prediction) {
    if (family == Family::linear) return (y - prediction).squaredNorm() / static_cast<double>(y.size());
    double total = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double p = std::clamp(prediction[i], 1e-10, 1.0 - 1e-10);
        total += -2.0 * (y[i] * std::log(p) + (1.0 - y[i]) * std::log1p(-p));
    }
    return total / static_cast<double>(y.size());
}

namespace detail {

inline void validate_response(const Eigen::VectorXd& y, Family family, Eigen::Index n) {
    if (y.size() != n) throw InvalidInput("response length does not match design rows");
    if (!y.allFinite()) throw InvalidInput("response has non-finite entries");
    if (family == Family::logistic) {
        bool zero = false, one = false;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            if (y[i] == 0.0)
                zero = true;
            else if (y[i] == 1.0)
                one = true;
            else
                throw InvalidInput("logistic response must be 0 or 1");
        }
        if (!zero || !one) throw DegenerateResponse("logistic response has a single class");
    }
}

inline double soft_threshold(double z, double t) {
    // Rounding at lambda_max must not leave 1e-17 coefficients behind.
    if (std::abs(z) <= t * (1.0 + 8.0 * std::numeric_limits<double>::epsilon())) return 0.0;
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

// Working problem for coordinate descent on standardized columns:
//   (1/2n) sum_i w_i r_i^2 + pen(b),   r = z - b0 - X b.
// For the linear family w == 1 and every usable column has v_j == 1.
struct CdProblem {
    const Eigen::MatrixXd& x;
    const std::vector<char>& usable;
    Penalty penalty;
    bool weighted;
    Eigen::VectorXd w;   // used when weighted
    double n;
};

struct CdState {
    double b0 = 0.0;
    Eigen::VectorXd b;
    Eigen::VectorXd r;
};

inline double cd_objective(const CdProblem& pb, const CdState& s, double lambda) {
    const double loss = pb.weighted ? (pb.w.array() * s.r.array().square()).sum() / (2.0 * pb.n)
                                    : s.r.squaredNorm() / (2.0 * pb.n);
    const double pen = pb.penalty == Penalty::lasso ? lambda * s.b.lpNorm<1>()
                       : pb.penalty == Penalty::ridge ? 0.5 * lambda * s.b.squaredNorm()
                                                      : 0.0;
    return loss + pen;
}

class CoordinateDescent {
public:
    CoordinateDescent(const CdProblem& pb, const SolverOptions& opt)
        : pb_(pb), opt_(opt), v_(pb.x.cols()), v_known_(static_cast<std::size_t>(pb.x.cols()), 0) {
        wsum_ = pb_.weighted ? pb_.w.sum() : pb_.n;
    }

    // Gradient of the smooth part (negated): (1/n) x_j' (w * r).
    double score(Eigen::Index j, const CdState& s) const {
        if (pb_.weighted) return (pb_.x.col(j).array() * pb_.w.array() * s.r.array()).sum() / pb_.n;
        return pb_.x.col(j).dot(s.r) / pb_.n;
    }

    double curvature(Eigen::Index j) {
        if (!pb_.weighted) return 1.0;
        if (!v_known_[static_cast<std::size_t>(j)]) {
            v_[j] = (pb_.w.array() * pb_.x.col(j).array().square()).sum() / pb_.n;
            v_known_[static_cast<std::size_t>(j)] = 1;
        }
        return v_[j];
    }

    // Returns the number of sweeps performed; `converged` reports whether the
    // tolerance was met before max_sweeps.
    int solve(double lambda, double lambda_prev, CdState& s, bool& converged, std::vector<double>* trace) {
        const Eigen::Index p = pb_.x.cols();
        std::vector<char> in_set(static_cast<std::size_t>(p), 0);
        std::vector<Eigen::Index> set;
        const bool screen = pb_.penalty == Penalty::lasso;
        const double strong = 2.0 * lambda - lambda_prev;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (!pb_.usable[static_cast<std::size_t>(j)]) continue;
            if (!screen || s.b[j] != 0.0 || std::abs(score(j, s)) >= strong) {
                in_set[static_cast<std::size_t>(j)] = 1;
                set.push_back(j);
            }
        }

        int sweeps = 0;
        converged = false;
        for (;;) {
            // Full sweeps over the working set alternate with sweeps over its
            // nonzero members until neither moves.
            for (;;) {
                const double change = sweep(set, lambda, s);
                ++sweeps;
                if (trace) trace->push_back(cd_objective(pb_, s, lambda));
                if (change < opt_.tolerance) break;
                if (sweeps >= opt_.max_sweeps) return sweeps;
                std::vector<Eigen::Index> active;
                for (Eigen::Index j : set)
                    if (s.b[j] != 0.0) active.push_back(j);
                if (active.size() < set.size()) {
                    for (;;) {
                        const double c = sweep(active, lambda, s);
                        ++sweeps;
                        if (trace) trace->push_back(cd_objective(pb_, s, lambda));
                        if (c < opt_.tolerance || sweeps >= opt_.max_sweeps) break;
                    }
                }
                if (sweeps >= opt_.max_sweeps) return sweeps;
            }
            if (!screen) {
                converged = true;
                return sweeps;
            }
            bool violated = false;
            for (Eigen::Index j = 0; j < p; ++j) {
                if (in_set[static_cast<std::size_t>(j)] || !pb_.usable[static_cast<std::size_t>(j)]) continue;
                if (std::abs(score(j, s)) > lambda) {
                    in_set[static_cast<std::size_t>(j)] = 1;
                    set.push_back(j);
                    violated = true;
                }
            }
            if (!violated) {
                converged = true;
                return sweeps;
            }
        }
    }

private:
    double sweep(const std::vector<Eigen::Index>& set, double lambda, CdState& s) {
        double max_change = 0.0;
        for (Eigen::Index j : set) {
            const double vj = curvature(j);
            if (vj <= 0.0) continue;
            const double old = s.b[j];
            const double g = score(j, s) + vj * old;
            double updated;
            switch (pb_.penalty) {
                case Penalty::lasso: updated = soft_threshold(g, lambda) / vj; break;
                case Penalty::ridge: updated = g / (vj + lambda); break;
                default: updated = g / vj; break;
            }
            const double delta = updated - old;
            if (delta != 0.0) {
                s.b[j] = updated;
                s.r.noalias() -= delta * pb_.x.col(j);
                max_change = std::max(max_change, std::abs(delta));
            }
        }
        const double shift = (pb_.weighted ? pb_.w.dot(s.r) : s.r.sum()) / wsum_;
        if (shift != 0.0) {
            s.b0 += shift;
            s.r.array() -= shift;
            max_change = std::max(max_change, std::abs(shift));
        }
        return max_change;
    }

    const CdProblem& pb_;
    const SolverOptions& opt_;
    Eigen::VectorXd v_;
    std::vector<char> v_known_;
    double wsum_ = 0.0;
};

inline std::vector<char> usable_columns(const Standardization& st) {
    std::vector<char> u(static_cast<std::size_t>(st.scale.size()));
    for (Eigen::Index j = 0; j < st.scale.size(); ++j) u[static_cast<std::size_t>(j)] = st.scale[j] > 0.0;
    return u;
}

// Solution on the standardized scale plus bookkeeping.
struct RawSolution {
    double b0 = 0.0;
    Eigen::VectorXd b;
    bool converged = true;
    int iterations = 0;
    double deviance = 0.0;
    std::vector<double> trace;
};

inline double logistic_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) total += log1p_exp(eta[i]) - y[i] * eta[i];
    return 2.0 * total;
}

inline double penalty_value(Penalty penalty, double lambda, const Eigen::VectorXd& b) {
    if (penalty == Penalty::lasso) return lambda * b.lpNorm<1>();
    if (penalty == Penalty::ridge) return 0.5 * lambda * b.squaredNorm();
    return 0.0;
}

// Linear family, lasso / unpenalized-by-CD. Warm-started from `s`.
inline RawSolution solve_linear_cd(const Eigen::MatrixXd& xs, const std::vector<char>& usable, const Eigen::VectorXd& y,
                                   Penalty penalty, double lambda, double lambda_prev, CdState& s,
                                   const SolverOptions& opt) {
    CdProblem pb{xs, usable, penalty, false, Eigen::VectorXd(), static_cast<double>(xs.rows())};
    CoordinateDescent cd(pb, opt);
    RawSolution out;
    bool converged = false;
    out.iterations = cd.solve(lambda, lambda_prev, s, converged, opt.record_trace ? &out.trace : nullptr);
    out.converged = converged;
    out.b0 = s.b0;
    out.b = s.b;
    out.deviance = s.r.squaredNorm();
    (void)y;
    return out;
}

// Logistic family via IRLS around the coordinate solver. Warm-started from
// (b0, b) in `s`; the residual in `s` is rebuilt each outer iteration.
inline RawSolution solve_logistic_cd(const Eigen::MatrixXd& xs, const std::vector<char>& usable,
                                     const Eigen::VectorXd& y, Penalty penalty, double lambda, double lambda_prev,
                                     CdState& s, const SolverOptions& opt) {
    const Eigen::Index n = xs.rows();
    const double nd = static_cast<double>(n);
    RawSolution out;
    Eigen::VectorXd eta = (xs * s.b).array() + s.b0;
    auto objective = [&](const Eigen::VectorXd& e, const Eigen::VectorXd& b) {
        return logistic_deviance(y, e) / (2.0 * nd) + penalty_value(penalty, lambda, b);
    };
    double current = objective(eta, s.b);
    out.converged = false;
    for (int it = 1; it <= opt.max_irls; ++it) {
        out.iterations = it;
        CdProblem pb{xs, usable, penalty, true, Eigen::VectorXd(n), nd};
        s.r.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double p = std::clamp(inverse_logit(eta[i]), opt.probability_clamp, 1.0 - opt.probability_clamp);
            const double w = std::max(p * (1.0 - p), opt.weight_floor);
            pb.w[i] = w;
            s.r[i] = (y[i] - p) / w;
        }
        const double old_b0 = s.b0;
        const Eigen::VectorXd old_b = s.b;
        CoordinateDescent cd(pb, opt);
        bool inner_ok = false;
        cd.solve(lambda, it == 1 ? lambda_prev : lambda, s, inner_ok, opt.record_trace ? &out.trace : nullptr);

        Eigen::VectorXd new_eta = (xs * s.b).array() + s.b0;
        double candidate = objective(new_eta, s.b);
        // Step halving if the Newton step overshoots.
        for (int h = 0; h < 30 && candidate > current * (1.0 + 1e-12) + 1e-15; ++h) {
            s.b0 = 0.5 * (s.b0 + old_b0);
            s.b = 0.5 * (s.b + old_b);
            new_eta = (xs * s.b).array() + s.b0;
            candidate = objective(new_eta, s.b);
        }
        const double change = std::max((s.b - old_b).cwiseAbs().maxCoeff(), std::abs(s.b0 - old_b0));
        eta = std::move(new_eta);
        current = candidate;
        if (change < opt.tolerance) {
            out.converged = inner_ok;
            break;
        }
    }
    out.b0 = s.b0;
    out.b = s.b;
    out.deviance = logistic_deviance(y, eta);
    return out;
}

// Exact ridge (or minimum-norm least squares when lambda == 0) for the linear
// family on standardized, centered data. Holds one eigendecomposition so that
// any number of lambdas can be solved cheaply.
class RidgeSolver {
public:
    RidgeSolver(const Eigen::MatrixXd& xs, const Eigen::VectorXd& y) : xs_(xs), ybar_(y.mean()) {
        const double n = static_cast<double>(xs.rows());
        const Eigen::VectorXd yc = y.array() - ybar_;
        dual_ = xs.cols() > xs.rows();
        Eigen::MatrixXd gram = dual_ ? Eigen::MatrixXd(xs * xs.transpose() / n) : Eigen::MatrixXd(xs.transpose() * xs / n);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
        values_ = eig.eigenvalues();
        vectors_ = eig.eigenvectors();
        proj_ = dual_ ? Eigen::VectorXd(vectors_.transpose() * yc / n) : Eigen::VectorXd(vectors_.transpose() * (xs.transpose() * yc / n));
        floor_ = 1e-12 * std::max(1.0, values_.cwiseAbs().maxCoeff());
    }

    RawSolution solve(double lambda) const {
        Eigen::VectorXd scaled(values_.size());
        for (Eigen::Index k = 0; k < values_.size(); ++k) {
            const double d = values_[k] + lambda;
            scaled[k] = (lambda > 0.0 || values_[k] > floor_) && d > 0.0 ? proj_[k] / d : 0.0;
        }
        RawSolution out;
        out.b = dual_ ? Eigen::VectorXd(xs_.transpose() * (vectors_ * scaled)) : Eigen::VectorXd(vectors_ * scaled);
        out.b0 = ybar_;
        out.iterations = 1;
        return out;
    }

private:
    const Eigen::MatrixXd& xs_;
    double ybar_;
    bool dual_ = false;
    Eigen::VectorXd values_;
    Eigen::MatrixXd vectors_;
    Eigen::VectorXd proj_;
    double floor_ = 0.0;
};

inline FittedGLM to_original_scale(const RawSolution& raw, const Standardization& st, Family family, Penalty penalty,
                                   double lambda) {
    FittedGLM m;
    m.family = family;
    m.penalty = penalty;
    m.lambda = penalty == Penalty::none ? 0.0 : lambda;
    m.standardized_intercept = raw.b0;
    m.standardized_coefficients = raw.b;
    m.coefficients = Eigen::VectorXd::Zero(raw.b.size());
    double b0 = raw.b0;
    for (Eigen::Index j = 0; j < raw.b.size(); ++j) {
        if (st.scale[j] > 0.0) {
            m.coefficients[j] = raw.b[j] / st.scale[j];
            b0 -= st.center[j] * m.coefficients[j];
        }
    }
    m.intercept = b0;
    m.converged = raw.converged;
    m.iterations = raw.iterations;
    m.objective_trace = raw.trace;
    return m;
}

// Fits a sequence of lambdas (decreasing for warm starts) on one data set.
// With early stopping the returned vector can be shorter than `lambdas`.
inline std::vector<FittedGLM> fit_path(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                                       Penalty penalty, std::span<const double> lambdas, const SolverOptions& opt) {
    const Standardization st = Standardization::of(x);
    const Eigen::MatrixXd xs = st.apply(x);
    const std::vector<char> usable = usable_columns(st);
    const double n = static_cast<double>(x.rows());
    const double ybar = y.mean();

    double null_dev;
    if (family == Family::linear) {
        null_dev = (y.array() - ybar).square().sum();
    } else {
        null_dev = -2.0 * n * (ybar * std::log(ybar) + (1.0 - ybar) * std::log1p(-ybar));
    }

    std::vector<FittedGLM> out;
    out.reserve(lambdas.size());
    CdState s;
    s.b = Eigen::VectorXd::Zero(x.cols());
    if (family == Family::linear) {
        s.b0 = ybar;
        s.r = y.array() - ybar;
    } else {
        s.b0 = std::log(ybar / (1.0 - ybar));
    }

    std::optional<RidgeSolver> ridge;
    if (family == Family::linear && penalty != Penalty::lasso) ridge.emplace(xs, y);

    double prev_ratio = 0.0;
    double lambda_prev = lambdas.empty() ? 0.0 : lambdas.front();
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
        const double lambda = penalty == Penalty::none ? 0.0 : lambdas[k];
        RawSolution raw;
        if (ridge) {
            raw = ridge->solve(lambda);
            raw.deviance = ((xs * raw.b).array() + raw.b0 - y.array()).square().sum();
        } else if (family == Family::linear) {
            raw = solve_linear_cd(xs, usable, y, penalty, lambda, lambda_prev, s, opt);
        } else {
            raw = solve_logistic_cd(xs, usable, y, penalty, lambda, lambda_prev, s, opt);
        }
        lambda_prev = lambda;
        out.push_back(to_original_scale(raw, st, family, penalty, lambda));

        if (opt.early_stop_path && null_dev > 0.0) {
            const double ratio = 1.0 - raw.deviance / null_dev;
            if (k + 1 >= 5 && (ratio > 0.999 || ratio - prev_ratio < 1e-5 * ratio)) break;
            prev_ratio = ratio;
        }
    }
    return out;
}

inline double lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    const Standardization st = Standardization::of(x);
    const Eigen::MatrixXd xs = st.apply(x);
    const Eigen::VectorXd yc = y.array() - y.mean();
    return (xs.transpose() * yc).cwiseAbs().maxCoeff() / static_cast<double>(x.rows());
}

}  // namespace detail

/// Geometric grid from lambda_max down to ratio * lambda_max.
inline std::vector<double> lambda_grid(double lambda_max, int grid_size, double ratio) {
    std::vector<double> grid(static_cast<std::size_t>(grid_size));
    const double log_hi = std::log(lambda_max);
    const double step = std::log(ratio) / static_cast<double>(grid_size - 1);
    for (int k = 0; k < grid_size; ++k) grid[static_cast<std::size_t>(k)] = std::exp(log_hi + step * k);
    grid.front() = lambda_max;
    return grid;
}

/// Validation-fold label for every row. Rows are shuffled and dealt round
/// robin, so fold sizes differ by at most one. For the logistic family the
/// assignment is re-dealt within each class whenever a training fold would
/// miss a class.
inline std::vector<int> assign_folds(const Eigen::VectorXd& y, Family family, int folds, std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(y.size());
    if (folds < 2 || static_cast<std::size_t>(folds) > n)
        throw InvalidInput("cross-validation needs 2 <= folds <= n");
    Rng rng = make_rng(seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    std::vector<int> fold(n);
    for (std::size_t k = 0; k < n; ++k) fold[order[k]] = static_cast<int>(k % static_cast<std::size_t>(folds));
    if (family != Family::logistic) return fold;

    auto training_has_both = [&](const std::vector<int>& f) {
        std::vector<int> ones(static_cast<std::size_t>(folds), 0), zeros(static_cast<std::size_t>(folds), 0);
        int total_ones = 0, total_zeros = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (y[static_cast<Eigen::Index>(i)] == 1.0) {
                ++ones[static_cast<std::size_t>(f[i])];
                ++total_ones;
            } else {
                ++zeros[static_cast<std::size_t>(f[i])];
                ++total_zeros;
            }
        }
        for (int k = 0; k < folds; ++k)
            if (total_ones - ones[static_cast<std::size_t>(k)] == 0 || total_zeros - zeros[static_cast<std::size_t>(k)] == 0)
                return false;
        return true;
    };
    if (training_has_both(fold)) return fold;

    std::size_t dealt = 0;
    for (double cls : {0.0, 1.0}) {
        for (std::size_t i : order)
            if (y[static_cast<Eigen::Index>(i)] == cls)
                fold[i] = static_cast<int>(dealt++ % static_cast<std::size_t>(folds));
    }
    if (!training_has_both(fold))
        throw DegenerateResponse("cannot stratify folds so every training fold holds both classes");
    return fold;
}

struct CvResult {
    std::vector<double> lambdas;    // grid actually evaluated (full-data path length)
    std::vector<double> cv_error;   // mean held-out deviance per lambda
    std::vector<double> cv_se;      // standard error across folds
    std::size_t best = 0;
    double lambda = 0.0;
    std::vector<FittedGLM> path;    // full-data fits, one per evaluated lambda
};

/// k-fold cross-validation over a geometric lambda grid anchored at the
/// smallest lambda that zeroes every lasso coefficient.
inline CvResult cross_validate(const DesignMatrix& design, const Eigen::VectorXd& response, Family family,
                               Penalty penalty, const CrossValidation& cv, const SolverOptions& opt = {}) {
    const Eigen::MatrixXd& x = design.values();
    if (design.n() < 2) throw InvalidInput("fitting needs at least two rows");
    detail::validate_response(response, family, design.n());
    if (cv.grid_size < 2) throw InvalidInput("grid_size must be >= 2");
    const double ratio = cv.grid_min_ratio.value_or(design.n() < design.p() ? 0.01 : 1e-4);
    if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidInput("grid_min_ratio must lie in (0, 1)");

    CvResult result;
    const double lmax = detail::lambda_max(x, response);
    if (penalty == Penalty::none || !(lmax > 0.0)) {
        result.lambdas = {0.0};
        const std::vector<double> zero{0.0};
        result.path = detail::fit_path(x, response, family, penalty, zero, opt);
        result.cv_error = {0.0};
        result.cv_se = {0.0};
        return result;
    }
    const std::vector<double> grid = lambda_grid(lmax, cv.grid_size, ratio);
    result.path = detail::fit_path(x, response, family, penalty, grid, opt);
    const std::size_t length = result.path.size();
    result.lambdas.assign(grid.begin(), grid.begin() + static_cast<std::ptrdiff_t>(length));

    const std::vector<int> fold = assign_folds(response, family, cv.folds, cv.seed);
    const std::span<const double> used(result.lambdas);
    Eigen::MatrixXd fold_error(cv.folds, static_cast<Eigen::Index>(length));
    std::vector<double> total(length, 0.0);
    for (int k = 0; k < cv.folds; ++k) {
        std::vector<Eigen::Index> train, test;
        for (Eigen::Index i = 0; i < design.n(); ++i) (fold[static_cast<std::size_t>(i)] == k ? test : train).push_back(i);
        const DesignMatrix xtr = design.rows(train), xte = design.rows(test);
        Eigen::VectorXd ytr(static_cast<Eigen::Index>(train.size())), yte(static_cast<Eigen::Index>(test.size()));
        for (std::size_t i = 0; i < train.size(); ++i) ytr[static_cast<Eigen::Index>(i)] = response[train[i]];
        for (std::size_t i = 0; i < test.size(); ++i) yte[static_cast<Eigen::Index>(i)] = response[test[i]];
        const std::vector<FittedGLM> fits = detail::fit_path(xtr.values(), ytr, family, penalty, used, opt);
        for (std::size_t l = 0; l < length; ++l) {
            const FittedGLM& m = fits[std::min(l, fits.size() - 1)];
            const double dev = mean_deviance(family, yte, predict(m, xte));
            fold_error(k, static_cast<Eigen::Index>(l)) = dev;
            total[l] += dev * static_cast<double>(test.size());
        }
    }
    result.cv_error.resize(length);
    result.cv_se.resize(length);
    for (std::size_t l = 0; l < length; ++l) {
        result.cv_error[l] = total[l] / static_cast<double>(design.n());
        const Eigen::VectorXd col = fold_error.col(static_cast<Eigen::Index>(l));
        const double mean = col.mean();
        const double var = (col.array() - mean).square().sum() / static_cast<double>(cv.folds - 1);
        result.cv_se[l] = std::sqrt(var / static_cast<double>(cv.folds));
    }
    std::size_t best = 0;
    for (std::size_t l = 1; l < length; ++l)
        if (result.cv_error[l] < result.cv_error[best]) best = l;
    if (cv.rule == CvRule::one_standard_error) {
        const double limit = result.cv_error[best] + result.cv_se[best];
        for (std::size_t l = 0; l <= best; ++l)
            if (result.cv_error[l] <= limit) {
                best = l;
                break;
            }
    }
    result.best = best;
    result.lambda = result.lambdas[best];
    return result;
}

inline double cv_lambda(const DesignMatrix& design, const Eigen::VectorXd& response, Family family, Penalty penalty,
                        int folds, int grid_size, std::optional<double> grid_min_ratio, std::uint64_t seed,
                        CvRule rule = CvRule::min_deviance, const SolverOptions& opt = {}) {
    return cross_validate(design, response, family, penalty, CrossValidation{folds, grid_size, grid_min_ratio, seed, rule}, opt)
        .lambda;
}

/// Fits the penalized GLM. With a cross-validation spec the returned model is
/// the full-data fit at the selected lambda.
inline FittedGLM fit_glm(const DesignMatrix& design, const Eigen::VectorXd& response, Family family, Penalty penalty,
                         const LambdaSpec& lambda_spec, const SolverOptions& opt = {}) {
    if (design.n() < 2) throw InvalidInput("fitting needs at least two rows");
    detail::validate_response(response, family, design.n());
    if (const auto* cv = std::get_if<CrossValidation>(&lambda_spec); cv && penalty != Penalty::none) {
        CvResult r = cross_validate(design, response, family, penalty, *cv, opt);
        return std::move(r.path[r.best]);
    }
    double lambda = 0.0;
    if (const auto* fixed = std::get_if<FixedLambda>(&lambda_spec)) lambda = fixed->value;
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInput("lambda must be finite and non-negative");
    if (penalty == Penalty::none) lambda = 0.0;
    SolverOptions single = opt;
    single.early_stop_path = false;
    const std::vector<double> one{lambda};
    return std::move(detail::fit_path(design.values(), response, family, penalty, one, single).front());
}

/// Intercept-plus-slope model on a scalar score.
struct ScoreModel {
    double intercept = 0.0;
    double slope = 0.0;
    bool converged = true;
    bool slope_capped = false;
    int iterations = 0;
};

/// Ordinary least squares of `response` on `score` with an intercept.
inline ScoreModel fit_score_linear(std::span<const double> score, std::span<const double> response) {
    if (score.size() != response.size() || score.size() < 2) throw InvalidInput("score refit needs >= 2 paired values");
    const auto n = static_cast<double>(score.size());
    const double sm = std::accumulate(score.begin(), score.end(), 0.0) / n;
    const double ym = std::accumulate(response.begin(), response.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < score.size(); ++i) {
        sxx += (score[i] - sm) * (score[i] - sm);
        sxy += (score[i] - sm) * (response[i] - ym);
    }
    if (!(sxx > 0.0)) throw DegenerateDesign("score has zero variance");
    ScoreModel m;
    m.slope = sxy / sxx;
    m.intercept = ym - m.slope * sm;
    m.iterations = 1;
    return m;
}

/// Unpenalized logistic regression on a scalar score by damped Newton-Raphson.
/// On separable data the slope is capped at +/- slope_cap and the intercept is
/// re-optimized with the slope held fixed.
inline ScoreModel fit_score_logistic(std::span<const double> score, std::span<const double> response,
                                     double tolerance = 1e-10, int max_iterations = 100, double slope_cap = 30.0) {
    if (score.size() != response.size() || score.size() < 2) throw InvalidInput("score refit needs >= 2 paired values");
    const std::size_t n = score.size();
    double ybar = 0.0;
    for (double y : response) {
        if (y != 0.0 && y != 1.0) throw InvalidInput("logistic response must be 0 or 1");
        ybar += y;
    }
    ybar /= static_cast<double>(n);
    if (ybar == 0.0 || ybar == 1.0) throw DegenerateResponse("logistic response has a single class");

    auto nll = [&](double a, double b) {
        double t = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double eta = a + b * score[i];
            t += log1p_exp(eta) - response[i] * eta;
        }
        return t;
    };

    ScoreModel m;
    m.intercept = std::log(ybar / (1.0 - ybar));
    m.converged = false;
    double current = nll(m.intercept, m.slope);
    for (int it = 1; it <= max_iterations; ++it) {
        m.iterations = it;
        double g0 = 0.0, g1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double p = inverse_logit(m.intercept + m.slope * score[i]);
            const double r = response[i] - p;
            const double w = p * (1.0 - p);
            g0 += r;
            g1 += r * score[i];
            h00 += w;
            h01 += w * score[i];
            h11 += w * score[i] * score[i];
        }
        double da, db;
        if (m.slope_capped) {
            da = h00 > 0.0 ? g0 / h00 : 0.0;
            db = 0.0;
        } else {
            const double det = h00 * h11 - h01 * h01;
            if (det > 1e-300 * std::max(1.0, h00 * h11)) {
                da = (h11 * g0 - h01 * g1) / det;
                db = (h00 * g1 - h01 * g0) / det;
            } else {
                // Curvature has vanished along the slope: move along the gradient.
                da = h00 > 0.0 ? g0 / h00 : g0;
                db = g1;
            }
        }
        double step = 1.0;
        double a = m.intercept + da, b = m.slope + db;
        double candidate = nll(a, b);
        while (candidate > current + 1e-12 * std::max(1.0, std::abs(current)) && step > 1e-10) {
            step *= 0.5;
            a = m.intercept + step * da;
            b = m.slope + step * db;
            candidate = nll(a, b);
        }
        if (std::abs(b) > slope_cap) {
            b = std::copysign(slope_cap, b);
            m.slope_capped = true;
            candidate = nll(a, b);
        }
        const double change = std::max(std::abs(a - m.intercept), std::abs(b - m.slope));
        m.intercept = a;
        m.slope = b;
        current = candidate;
        if (change < tolerance) {
            m.converged = true;
            break;
        }
    }
    return m;
}

}  // namespace deconf::glm
