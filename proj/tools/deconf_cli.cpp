// deconf: command-line front end for the simulation grid, overlap curves,
// single-dataset estimation and the self-check suite.
//
// Exit codes: 0 success, 1 bad configuration or arguments, 2 bad data or a
// numerical failure, 3 verification failed.

#include "deconf/harness/config.hpp"
#include "deconf/harness/csv_io.hpp"
#include "deconf/harness/overlap_curve.hpp"
#include "deconf/harness/simulation.hpp"
#include "deconf/harness/verify.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace deconf;
using namespace deconf::harness;

constexpr int exit_config = 1;
constexpr int exit_data = 2;
constexpr int exit_verify = 3;

int exit_code_for(const Error& e) {
    const std::string& k = e.kind();
    if (k == "ConfigError" || k == "InvalidInput" || k == "InvalidLink") return exit_config;
    return exit_data;
}

// Writes through `write` to the file at `path`, or stdout for "" / "-".
template <class Fn>
void with_output(const std::string& path, Fn&& write) {
    if (path.empty() || path == "-") {
        write(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write(out);
    out.flush();
    if (!out) throw IoError("write failed for " + path);
}

ReportFormat parse_format(const std::string& s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    throw ConfigError("format must be csv or json, got '" + s + "'");
}

struct SimulateArgs {
    std::string config;
    std::optional<int> replications;
    std::optional<unsigned> threads;
    std::optional<std::uint64_t> master_seed;
    std::string output;
    std::string format;
    bool oracle = false;
    bool quiet = false;
};

int run_simulate(const SimulateArgs& a) {
    ExperimentConfig cfg = load_config(a.config);
    if (a.replications) cfg.replications = *a.replications;
    if (a.threads) cfg.threads = *a.threads;
    if (a.master_seed) cfg.master_seed = *a.master_seed;
    if (a.oracle) cfg.oracle_nuisance = true;
    if (!a.output.empty()) cfg.output_path = a.output;
    if (!a.format.empty()) cfg.output_format = parse_format(a.format);
    cfg.validate();
    ProgressFn progress;
    if (!a.quiet)
        progress = [](std::size_t done, std::size_t total) {
            std::cerr << "\rreplication " << done << "/" << total << std::flush;
            if (done == total) std::cerr << '\n';
        };
    const ExperimentReport report = run_simulation_grid(cfg, progress);
    with_output(cfg.output_path, [&](std::ostream& out) { emit_report(report, cfg.output_format, out); });
    return 0;
}

struct CurveArgs {
    std::string link = "logistic";
    std::string assumption = "density_ratio";
    double z0 = 0.0, s = 1.0, slope = 1.0, offset = 0.0;
    double c = 0.75;
    std::optional<double> pi1;
    int outer = 128, inner = 128;
    std::vector<double> w_grid = default_w_grid();
    std::string output;
};

int run_curve(const CurveArgs& a) {
    overlap::LinkSpec link;
    link.kind = overlap::parse_link_kind(a.link);
    if (a.assumption == "density_ratio")
        link.assumption = overlap::Assumption::density_ratio;
    else if (a.assumption == "propensity")
        link.assumption = overlap::Assumption::propensity;
    else
        throw ConfigError("assumption must be density_ratio or propensity");
    link.z0 = a.z0;
    link.s = a.s;
    link.slope = a.slope;
    link.offset = a.offset;
    overlap::validate_treatment_link(link);
    const overlap::QuadratureConfig quad{a.outer, a.inner};
    quad.validate();
    const double pi1 = a.pi1 ? *a.pi1 : overlap::link_mean(link);
    const OverlapCurve curve = run_overlap_curve(link, a.c, a.w_grid, pi1, quad);
    with_output(a.output, [&](std::ostream& out) { write_overlap_curve_csv(curve, out); });
    return 0;
}

struct EstimateArgs {
    std::string data;
    std::string outcome_penalty = "lasso";
    std::string propensity_penalty = "lasso";
    std::vector<double> w_grid = default_w_grid();
    std::vector<std::string> methods{"regr", "ipw", "aipw"};
    std::uint64_t seed = 0;
    int folds = 10;
    bool no_hajek = false;
    std::string output;
};

int run_estimate(const EstimateArgs& a) {
    const Dataset d = load_dataset_csv(a.data);
    std::vector<estimators::Method> methods;
    for (const std::string& m : a.methods) methods.push_back(estimators::parse_method(m));
    for (double w : a.w_grid)
        if (!(std::abs(w) <= 1.0)) throw ConfigError("w values must lie in [-1, 1]");
    glm::CrossValidation cv;
    cv.folds = a.folds;
    const estimators::EstimatorOptions opt{{}, !a.no_hajek};

    cv.seed = derive_seed(a.seed, 2);
    const glm::FittedGLM outcome = estimators::fit_outcome_model(d, glm::parse_penalty(a.outcome_penalty), cv);
    cv.seed = derive_seed(a.seed, 3);
    const glm::FittedGLM propensity = estimators::fit_propensity_model(d, glm::parse_penalty(a.propensity_penalty), cv);
    const Eigen::VectorXd m0_hat = glm::predict(outcome, d.design), e_hat = glm::predict(propensity, d.design);

    std::vector<estimators::EstimatorResult> results = estimators::estimate_on_covariates(d, m0_hat, e_hat, methods, opt);
    std::map<estimators::Method, double> raw;
    for (const auto& r : results) raw[r.method] = r.tau_hat;
    const scores::ScoreFamily family = scores::normalize_and_align(outcome.coefficients, propensity.coefficients);
    Eigen::VectorXd ortho = Eigen::VectorXd::Zero(d.p());
    if (family.degenerate == scores::Degeneracy::ok) ortho = scores::sample_orthocomplement(family, derive_seed(a.seed, 4));
    for (double w : a.w_grid) {
        const Eigen::VectorXd gamma = family.degenerate == scores::Degeneracy::near_zero_coefficients
                                          ? Eigen::VectorXd::Zero(d.p())
                                          : scores::score_direction(family, ortho, w);
        for (auto& r : estimators::estimate_with_score(d, gamma, family.degenerate, score_label(w), methods, raw, opt))
            results.push_back(std::move(r));
    }
    with_output(a.output, [&](std::ostream& out) {
        out << "method,score_label,tau_hat,fallback,trim_count\n";
        for (const auto& r : results)
            out << estimators::to_string(r.method) << ',' << r.score_label << ',' << full_precision(r.tau_hat) << ','
                << estimators::to_string(r.fallback) << ',' << r.trim_count << '\n';
    });
    return 0;
}

int run_verify(std::uint64_t seed, std::size_t samples, unsigned threads, const std::string& output) {
    const VerificationReport rep = run_verification_suite(seed, samples, threads);
    for (const CheckResult& c : rep.checks) std::cerr << (c.passed ? "[PASS] " : "[FAIL] ") << c.name << '\n';
    with_output(output, [&](std::ostream& out) { out << rep.to_json().dump(2) << '\n'; });
    return rep.passed() ? 0 : exit_verify;
}

int run_emit(const std::string& input, const std::string& format, const std::string& output) {
    std::ifstream in(input);
    if (!in) throw IoError("cannot open " + input);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(input + ": " + e.what());
    }
    const ExperimentReport report = report_from_json(j);
    const ReportFormat fmt = parse_format(format);
    with_output(output, [&](std::ostream& out) { emit_report(report, fmt, out); });
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deconfounding-score ATT experiments and overlap analytics"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Run the replicated estimation grid from a JSON config");
    simulate->add_option("--config", sim.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    simulate->add_option("--replications", sim.replications, "Override replications")->check(CLI::PositiveNumber);
    simulate->add_option("--threads", sim.threads, "Worker threads (default: DECONF_THREADS or 1)");
    simulate->add_option("--master-seed", sim.master_seed, "Override master seed");
    simulate->add_option("--output", sim.output, "Report path, '-' for stdout");
    simulate->add_option("--format", sim.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    simulate->add_flag("--oracle", sim.oracle, "Use the true nuisance functions");
    simulate->add_flag("--quiet", sim.quiet, "No progress on stderr");

    CurveArgs curve;
    auto* overlap_curve = app.add_subcommand("overlap-curve", "Overlap divergence along the score family");
    overlap_curve->add_option("--link", curve.link, "logistic | indicator | relu | exp_tilt")
        ->check(CLI::IsMember({"logistic", "indicator", "relu", "exp_tilt", "identity"}));
    overlap_curve->add_option("--assumption", curve.assumption, "density_ratio | propensity");
    overlap_curve->add_option("--z0", curve.z0, "Indicator threshold");
    overlap_curve->add_option("--s", curve.s, "Exponential tilt");
    overlap_curve->add_option("--slope", curve.slope, "Logistic slope");
    overlap_curve->add_option("--offset", curve.offset, "Logistic offset");
    overlap_curve->add_option("--c", curve.c, "alpha . beta")->check(CLI::Range(-1.0, 1.0));
    overlap_curve->add_option("--pi1", curve.pi1, "Treated fraction (default: mean of the link)");
    overlap_curve->add_option("--w", curve.w_grid, "Grid of w values")->delimiter(',');
    overlap_curve->add_option("--outer-nodes", curve.outer, "Outer Gauss-Hermite nodes");
    overlap_curve->add_option("--inner-nodes", curve.inner, "Inner Gauss-Hermite nodes");
    overlap_curve->add_option("--output", curve.output, "CSV path, '-' for stdout");

    EstimateArgs est;
    auto* estimate = app.add_subcommand("estimate", "ATT estimates on a dataset CSV");
    estimate->add_option("--data", est.data, "CSV with t, y, x1..xp")->required()->check(CLI::ExistingFile);
    estimate->add_option("--outcome-penalty", est.outcome_penalty)->check(CLI::IsMember({"lasso", "ridge"}));
    estimate->add_option("--propensity-penalty", est.propensity_penalty)->check(CLI::IsMember({"lasso", "ridge"}));
    estimate->add_option("--w", est.w_grid, "Grid of w values")->delimiter(',');
    estimate->add_option("--methods", est.methods, "regr, ipw, aipw")->delimiter(',');
    estimate->add_option("--seed", est.seed, "Seed for CV folds and the orthogonal draw");
    estimate->add_option("--folds", est.folds, "CV folds")->check(CLI::Range(2, 1000));
    estimate->add_flag("--no-hajek", est.no_hajek, "Unnormalized control weights");
    estimate->add_option("--output", est.output, "CSV path, '-' for stdout");

    std::uint64_t verify_seed = 0;
    std::size_t verify_samples = 1'000'000;
    unsigned verify_threads = 1;
    std::string verify_output;
    auto* verify = app.add_subcommand("verify", "Run the self-check suite");
    verify->add_option("--seed", verify_seed);
    verify->add_option("--samples", verify_samples, "Monte Carlo draws per oracle")->check(CLI::Range(1000, 100'000'000));
    verify->add_option("--threads", verify_threads)->check(CLI::Range(1, 256));
    verify->add_option("--output", verify_output, "JSON path, '-' for stdout");

    std::string emit_input, emit_format = "csv", emit_output;
    auto* emit = app.add_subcommand("emit", "Re-emit a JSON report");
    emit->add_option("--input", emit_input, "Report JSON")->required()->check(CLI::ExistingFile);
    emit->add_option("--format", emit_format)->check(CLI::IsMember({"csv", "json"}));
    emit->add_option("--output", emit_output, "Path, '-' for stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    try {
        if (*simulate) return run_simulate(sim);
        if (*overlap_curve) return run_curve(curve);
        if (*estimate) return run_estimate(est);
        if (*verify) return run_verify(verify_seed, verify_samples, verify_threads, verify_output);
        if (*emit) return run_emit(emit_input, emit_format, emit_output);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_data;
    }
    return 0;
}
