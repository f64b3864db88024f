#pragma once

// Replicated ATT experiments over (setting, model spec, estimator, score)
// cells, aggregated into RMSE / |bias| / SD of the estimation error.
//
// Seeds: coefficients come from derive_seed(master, ~0); replication r uses
// rep = derive_seed(master, r) and within it data = derive_seed(rep, 1),
// outcome CV = derive_seed(rep, 2), propensity CV = derive_seed(rep, 3),
// orthogonal draw = derive_seed(rep, 4). The data seed does not depend on the
// setting, so settings share covariate and noise draws.

#include "deconf/dataset.hpp"
#include "deconf/dgp.hpp"
#include "deconf/error.hpp"
#include "deconf/estimators.hpp"
#include "deconf/glm.hpp"
#include "deconf/harness/config.hpp"
#include "deconf/harness/csv_io.hpp"
#include "deconf/parallel.hpp"
#include "deconf/random.hpp"
#include "deconf/scores.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace deconf::harness {

/// Shortest "%.Nf" (N >= 1) that parses back to w, prefixed "w=".
inline std::string score_label(double w) {
    if (w == 0.0) w = 0.0;  // drop the sign of -0
    char buf[64];
    for (int digits = 1; digits <= 17; ++digits) {
        std::snprintf(buf, sizeof buf, "%.*f", digits, w);
        if (std::strtod(buf, nullptr) == w) break;
    }
    return std::string("w=") + buf;
}

/// Shortest "%.Ng" that parses back to v.
inline std::string short_number(double v) {
    char buf[64];
    for (int digits = 1; digits <= 17; ++digits) {
        std::snprintf(buf, sizeof buf, "%.*g", digits, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline std::string setting_id(const Setting& s) { return "sT" + short_number(s.s_T) + "_sY" + short_number(s.s_Y); }

inline std::string full_precision(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct ReportCell {
    std::string setting;
    std::string outcome_penalty;
    std::string propensity_penalty;
    std::string estimator;
    std::string score_label;
    double rmse = 0.0;
    double abs_bias = 0.0;
    double sd = 0.0;
    int n_runs = 0;
    int fallback_count = 0;
    long long trim_total = 0;

    auto key() const { return std::tie(setting, outcome_penalty, propensity_penalty, estimator, score_label); }
};

struct ExperimentReport {
    std::vector<ReportCell> cells;

    void sort() {
        std::sort(cells.begin(), cells.end(), [](const ReportCell& a, const ReportCell& b) { return a.key() < b.key(); });
    }

    const ReportCell* find(const std::string& setting, const std::string& outcome, const std::string& propensity,
                           const std::string& estimator, const std::string& label) const {
        for (const ReportCell& c : cells)
            if (c.setting == setting && c.outcome_penalty == outcome && c.propensity_penalty == propensity &&
                c.estimator == estimator && c.score_label == label)
                return &c;
        return nullptr;
    }
};

/// RMSE, |mean| and sample SD (ddof 1; 0 for a single run) of the errors.
inline void summarize_errors(const std::vector<double>& errors, ReportCell& cell) {
    const double n = static_cast<double>(errors.size());
    double mean = 0.0, sq = 0.0;
    for (double e : errors) {
        mean += e;
        sq += e * e;
    }
    mean /= n;
    double ss = 0.0;
    for (double e : errors) ss += (e - mean) * (e - mean);
    cell.rmse = std::sqrt(sq / n);
    cell.abs_bias = std::abs(mean);
    cell.sd = errors.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    cell.n_runs = static_cast<int>(errors.size());
}

namespace detail {

struct Sample {
    double error = 0.0;
    bool fallback = false;
    int trimmed = 0;
};

// Cell layout: ((setting * models + model) * methods + method) * labels + label,
// label 0 being the raw covariates and label k the k-th grid w.
struct Layout {
    std::size_t settings, models, methods, labels;
    std::size_t size() const { return settings * models * methods * labels; }
    std::size_t index(std::size_t s, std::size_t m, std::size_t e, std::size_t l) const {
        return ((s * models + m) * methods + e) * labels + l;
    }
};

struct ReplicationContext {
    const ExperimentConfig& cfg;
    const std::vector<Setting>& settings;
    const Layout& layout;
    const dgp::CoefficientPair* coef;  // simulated designs
    const Dataset* fixed;              // dataset file
};

inline glm::CrossValidation cv_options(const ExperimentConfig& cfg, std::uint64_t seed) {
    glm::CrossValidation cv;
    cv.folds = cfg.cv_folds;
    cv.grid_size = cfg.cv_grid_size;
    cv.seed = seed;
    cv.rule = cfg.cv_rule;
    return cv;
}

inline void record(std::vector<Sample>& out, std::size_t idx, const estimators::EstimatorResult& r, double truth) {
    out[idx] = Sample{r.tau_hat - truth, r.fallback != estimators::Fallback::none, r.trim_count};
}

// True nuisance functions: on X, and on gamma'X through the Gaussian conditionals.
inline void oracle_cells(const ReplicationContext& ctx, const dgp::DgpConfig& cfg, const Dataset& d, std::size_t s,
                         std::uint64_t ortho_seed, double truth, std::vector<Sample>& out) {
    const estimators::EstimatorOptions opt{ctx.cfg.trim, ctx.cfg.hajek};
    const Eigen::VectorXd e_true = dgp::true_propensity(cfg, *ctx.coef, d.design);
    const scores::ScoreFamily family = scores::normalize_and_align(ctx.coef->alpha, ctx.coef->beta);
    const Eigen::VectorXd ortho = scores::sample_orthocomplement(family, ortho_seed);
    const GaussHermite& rule = gauss_hermite(64);
    for (std::size_t m = 0; m < ctx.layout.models; ++m) {
        for (std::size_t k = 0; k < ctx.cfg.estimators.size(); ++k)
            record(out, ctx.layout.index(s, m, k, 0),
                   estimators::apply_method(d, ctx.cfg.estimators[k], &*d.oracle_m0, &e_true, opt), truth);
        for (std::size_t l = 0; l < ctx.cfg.w_grid.size(); ++l) {
            const Eigen::VectorXd gamma = scores::score_direction(family, ortho, ctx.cfg.w_grid[l]);
            const Eigen::VectorXd score = scores::project_score(gamma, d.design);
            const double a = ctx.coef->alpha.dot(gamma), b = ctx.coef->beta.dot(gamma);
            Eigen::VectorXd m0(score.size()), e(score.size());
            for (Eigen::Index i = 0; i < score.size(); ++i) {
                m0[i] = dgp::score_outcome_mean(cfg, a, score[i]);
                e[i] = dgp::score_propensity(cfg, b, score[i], rule);
            }
            for (std::size_t k = 0; k < ctx.cfg.estimators.size(); ++k) {
                estimators::EstimatorResult r = estimators::apply_method(d, ctx.cfg.estimators[k], &m0, &e, opt);
                record(out, ctx.layout.index(s, m, k, l + 1), r, truth);
            }
        }
    }
}

inline void fitted_cells(const ReplicationContext& ctx, const Dataset& d, std::size_t s, std::uint64_t rep_seed,
                         std::uint64_t ortho_seed, double truth, std::vector<Sample>& out) {
    const estimators::EstimatorOptions opt{ctx.cfg.trim, ctx.cfg.hajek};
    std::map<glm::Penalty, estimators::CovariateFits> outcome_fits, propensity_fits;
    auto outcome = [&](glm::Penalty p) -> const estimators::CovariateFits& {
        auto it = outcome_fits.find(p);
        if (it == outcome_fits.end()) {
            estimators::CovariateFits f;
            f.outcome = estimators::fit_outcome_model(d, p, cv_options(ctx.cfg, derive_seed(rep_seed, 2)));
            f.m0_hat = glm::predict(f.outcome, d.design);
            it = outcome_fits.emplace(p, std::move(f)).first;
        }
        return it->second;
    };
    auto propensity = [&](glm::Penalty p) -> const estimators::CovariateFits& {
        auto it = propensity_fits.find(p);
        if (it == propensity_fits.end()) {
            estimators::CovariateFits f;
            f.propensity = estimators::fit_propensity_model(d, p, cv_options(ctx.cfg, derive_seed(rep_seed, 3)));
            f.e_hat = glm::predict(f.propensity, d.design);
            it = propensity_fits.emplace(p, std::move(f)).first;
        }
        return it->second;
    };

    for (std::size_t m = 0; m < ctx.layout.models; ++m) {
        const ModelSpec& spec = ctx.cfg.model_grid[m];
        const estimators::CovariateFits& of = outcome(spec.outcome);
        const estimators::CovariateFits& pf = propensity(spec.propensity);
        std::map<estimators::Method, double> raw;
        for (std::size_t k = 0; k < ctx.cfg.estimators.size(); ++k) {
            const estimators::EstimatorResult r = estimators::apply_method(d, ctx.cfg.estimators[k], &of.m0_hat, &pf.e_hat, opt);
            raw[r.method] = r.tau_hat;
            record(out, ctx.layout.index(s, m, k, 0), r, truth);
        }
        if (ctx.cfg.w_grid.empty()) continue;
        const scores::ScoreFamily family = scores::normalize_and_align(of.outcome.coefficients, pf.propensity.coefficients);
        Eigen::VectorXd ortho = Eigen::VectorXd::Zero(d.p());
        if (family.degenerate == scores::Degeneracy::ok) ortho = scores::sample_orthocomplement(family, ortho_seed);
        for (std::size_t l = 0; l < ctx.cfg.w_grid.size(); ++l) {
            const double w = ctx.cfg.w_grid[l];
            const Eigen::VectorXd gamma = family.degenerate == scores::Degeneracy::near_zero_coefficients
                                              ? Eigen::VectorXd::Zero(d.p())
                                              : scores::score_direction(family, ortho, w);
            const auto results =
                estimators::estimate_with_score(d, gamma, family.degenerate, score_label(w), ctx.cfg.estimators, raw, opt);
            for (std::size_t k = 0; k < results.size(); ++k) record(out, ctx.layout.index(s, m, k, l + 1), results[k], truth);
        }
    }
}

inline std::vector<Sample> run_replication(const ReplicationContext& ctx, std::size_t r) {
    std::vector<Sample> out(ctx.layout.size());
    const std::uint64_t rep_seed = derive_seed(ctx.cfg.master_seed, r);
    const std::uint64_t ortho_seed =
        ctx.cfg.ortho_per_replication ? derive_seed(rep_seed, 4) : derive_seed(ctx.cfg.master_seed, ~std::uint64_t{1});
    if (ctx.fixed) {
        const Dataset& d = *ctx.fixed;
        const double truth = dgp::sample_att_semisynthetic(*d.oracle_m1, *d.oracle_m0, d.treatment);
        fitted_cells(ctx, d, 0, rep_seed, ortho_seed, truth, out);
        return out;
    }
    for (std::size_t s = 0; s < ctx.settings.size(); ++s) {
        dgp::DgpConfig cfg = ctx.cfg.dgp;
        cfg.s_T = ctx.settings[s].s_T;
        cfg.s_Y = ctx.settings[s].s_Y;
        cfg.seed = derive_seed(rep_seed, 1);
        const Dataset d = dgp::simulate_dataset(cfg, *ctx.coef);
        const double truth = dgp::true_att(cfg);
        if (ctx.cfg.oracle_nuisance)
            oracle_cells(ctx, cfg, d, s, ortho_seed, truth, out);
        else
            fitted_cells(ctx, d, s, rep_seed, ortho_seed, truth, out);
    }
    return out;
}

}  // namespace detail

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Runs every replication (in parallel over cfg.threads workers) and returns
/// the sorted report. Output is identical for any worker count.
inline ExperimentReport run_simulation_grid(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
    cfg.validate();
    std::optional<Dataset> fixed;
    std::optional<dgp::CoefficientPair> coef;
    std::vector<Setting> settings;
    std::vector<std::string> setting_ids;
    if (cfg.dataset_path) {
        fixed = load_dataset_csv(*cfg.dataset_path);
        if (!fixed->oracle_m0) throw ConfigError("dataset " + *cfg.dataset_path + " needs mu0 and mu1 columns for a known ATT");
        settings.push_back({});
        setting_ids.push_back("dataset");
    } else {
        coef = dgp::generate_coefficients(cfg.dgp, derive_seed(cfg.master_seed, ~std::uint64_t{0}));
        settings = cfg.effective_settings();
        for (const Setting& s : settings) setting_ids.push_back(setting_id(s));
    }
    const detail::Layout layout{settings.size(), cfg.model_grid.size(), cfg.estimators.size(), cfg.w_grid.size() + 1};
    const detail::ReplicationContext ctx{cfg, settings, layout, coef ? &*coef : nullptr, fixed ? &*fixed : nullptr};

    const auto reps = static_cast<std::size_t>(cfg.replications);
    std::vector<std::vector<detail::Sample>> samples(reps);
    std::mutex progress_mutex;
    std::size_t done = 0;
    parallel_for(reps, cfg.effective_threads(), [&](std::size_t r) {
        samples[r] = detail::run_replication(ctx, r);
        if (progress) {
            std::lock_guard lock(progress_mutex);
            progress(++done, reps);
        }
    });

    ExperimentReport report;
    std::vector<double> errors(reps);
    for (std::size_t s = 0; s < layout.settings; ++s)
        for (std::size_t m = 0; m < layout.models; ++m)
            for (std::size_t k = 0; k < layout.methods; ++k)
                for (std::size_t l = 0; l < layout.labels; ++l) {
                    const std::size_t idx = layout.index(s, m, k, l);
                    ReportCell cell;
                    cell.setting = setting_ids[s];
                    cell.outcome_penalty = glm::to_string(cfg.model_grid[m].outcome);
                    cell.propensity_penalty = glm::to_string(cfg.model_grid[m].propensity);
                    cell.estimator = estimators::to_string(cfg.estimators[k]);
                    cell.score_label = l == 0 ? "X" : score_label(cfg.w_grid[l - 1]);
                    for (std::size_t r = 0; r < reps; ++r) {
                        const detail::Sample& x = samples[r][idx];
                        errors[r] = x.error;
                        cell.fallback_count += x.fallback;
                        cell.trim_total += x.trimmed;
                    }
                    summarize_errors(errors, cell);
                    report.cells.push_back(std::move(cell));
                }
    report.sort();
    return report;
}

// ---------------------------------------------------------------------------
// Emission

inline constexpr const char* report_csv_header =
    "setting,outcome_penalty,propensity_penalty,estimator,score_label,rmse,abs_bias,sd,n_runs,fallback_count,trim_total";

inline void write_report_csv(const ExperimentReport& report, std::ostream& out) {
    ExperimentReport sorted = report;
    sorted.sort();
    out << report_csv_header << '\n';
    for (const ReportCell& c : sorted.cells)
        out << c.setting << ',' << c.outcome_penalty << ',' << c.propensity_penalty << ',' << c.estimator << ','
            << c.score_label << ',' << full_precision(c.rmse) << ',' << full_precision(c.abs_bias) << ','
            << full_precision(c.sd) << ',' << c.n_runs << ',' << c.fallback_count << ',' << c.trim_total << '\n';
}

inline nlohmann::json report_to_json(const ExperimentReport& report) {
    ExperimentReport sorted = report;
    sorted.sort();
    nlohmann::json cells = nlohmann::json::array();
    for (const ReportCell& c : sorted.cells)
        cells.push_back({{"setting", c.setting},
                         {"outcome_penalty", c.outcome_penalty},
                         {"propensity_penalty", c.propensity_penalty},
                         {"estimator", c.estimator},
                         {"score_label", c.score_label},
                         {"rmse", c.rmse},
                         {"abs_bias", c.abs_bias},
                         {"sd", c.sd},
                         {"n_runs", c.n_runs},
                         {"fallback_count", c.fallback_count},
                         {"trim_total", c.trim_total}});
    return {{"cells", cells}};
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
    ExperimentReport r;
    try {
        for (const auto& c : j.at("cells")) {
            ReportCell cell;
            cell.setting = c.at("setting").get<std::string>();
            cell.outcome_penalty = c.at("outcome_penalty").get<std::string>();
            cell.propensity_penalty = c.at("propensity_penalty").get<std::string>();
            cell.estimator = c.at("estimator").get<std::string>();
            cell.score_label = c.at("score_label").get<std::string>();
            cell.rmse = c.at("rmse").get<double>();
            cell.abs_bias = c.at("abs_bias").get<double>();
            cell.sd = c.at("sd").get<double>();
            cell.n_runs = c.at("n_runs").get<int>();
            cell.fallback_count = c.at("fallback_count").get<int>();
            cell.trim_total = c.at("trim_total").get<long long>();
            r.cells.push_back(std::move(cell));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("report JSON: ") + e.what());
    }
    return r;
}

inline void write_report_json(const ExperimentReport& report, std::ostream& out) { out << report_to_json(report).dump(2) << '\n'; }

inline void emit_report(const ExperimentReport& report, ReportFormat format, std::ostream& out) {
    if (format == ReportFormat::csv)
        write_report_csv(report, out);
    else
        write_report_json(report, out);
}

inline void emit_report(const ExperimentReport& report, ReportFormat format, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    emit_report(report, format, out);
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::string report_string(const ExperimentReport& report, ReportFormat format) {
    std::ostringstream s;
    emit_report(report, format, s);
    return s.str();
}

}  // namespace deconf::harness
