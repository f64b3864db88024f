#include "deconf/harness/config.hpp"
#include "deconf/harness/csv_io.hpp"
#include "deconf/harness/overlap_curve.hpp"
#include "deconf/harness/simulation.hpp"
#include "deconf/harness/verify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

using namespace deconf;
using namespace deconf::harness;

namespace {

Dataset parse(const std::string& text) {
    std::istringstream in(text);
    return parse_dataset_csv(in, "test.csv");
}

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.dgp.n = 150;
    c.dgp.p = 30;
    c.dgp.support_size = 5;
    c.settings = {{1.0, 2.0}, {4.0, 5.0}};
    c.w_grid = {-1.0, 0.0, 1.0};
    c.replications = 4;
    c.master_seed = 9;
    c.cv_folds = 3;
    c.cv_grid_size = 10;
    c.threads = 1;
    return c;
}

}  // namespace

TEST(CsvLoader, ReadsColumnsInAnyOrder) {
    const Dataset d = parse("x2,y,t,x1\n1,0.5,0,2\n3,1.5,1,4\n-1,2,0,0\n");
    ASSERT_EQ(d.n(), 3);
    ASSERT_EQ(d.p(), 2);
    EXPECT_EQ(d.design.values()(0, 0), 2.0);
    EXPECT_EQ(d.design.values()(0, 1), 1.0);
    EXPECT_EQ(d.treatment[1], 1.0);
    EXPECT_EQ(d.outcome[2], 2.0);
    EXPECT_FALSE(d.oracle_m0.has_value());
}

TEST(CsvLoader, ReadsGroundTruthColumnsAndSkipsBlankLines) {
    const Dataset d = parse("t,y,x1,mu0,mu1\r\n1,1,0.5,0,2\r\n\r\n0,0,0.25,0.1,1.1\r\n");
    ASSERT_EQ(d.n(), 2);
    ASSERT_TRUE(d.oracle_m1.has_value());
    EXPECT_EQ((*d.oracle_m1)[0], 2.0);
    EXPECT_EQ((*d.oracle_m0)[1], 0.1);
}

TEST(CsvLoader, SchemaErrors) {
    EXPECT_THROW(parse(""), SchemaError);
    EXPECT_THROW(parse("t,y\n1,0\n"), SchemaError);                 // no covariates
    EXPECT_THROW(parse("t,x1\n1,0\n"), SchemaError);                // no outcome
    EXPECT_THROW(parse("t,y,x1,x3\n1,0,1,1\n0,0,1,1\n"), SchemaError);  // gap in x
    EXPECT_THROW(parse("t,y,x1,x1\n1,0,1,1\n"), SchemaError);       // duplicate
    EXPECT_THROW(parse("t,y,x1,z\n1,0,1,1\n"), SchemaError);        // unknown
    EXPECT_THROW(parse("t,y,x1,mu0\n1,0,1,1\n"), SchemaError);      // mu0 without mu1
    EXPECT_THROW(parse("t,y,x1\n"), SchemaError);                   // no rows
    EXPECT_THROW(parse("t,y,x1\n2,0,1\n0,1,1\n"), SchemaError);     // bad treatment
}

TEST(CsvLoader, ParseErrorsNameRowAndColumn) {
    try {
        parse("t,y,x1\n1,0,1\n0,abc,1\n");
        FAIL();
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
        EXPECT_NE(msg.find("'y'"), std::string::npos) << msg;
    }
    EXPECT_THROW(parse("t,y,x1\n1,0\n"), ParseError);
    EXPECT_THROW(parse("t,y,x1\n1,0,nan\n0,0,1\n"), ParseError);
    EXPECT_THROW(parse("t,y,x1\n1,0,inf\n0,0,1\n"), ParseError);
}

TEST(CsvLoader, SingleArmIsDegenerate) {
    EXPECT_THROW(parse("t,y,x1\n1,0,1\n1,1,2\n"), DegenerateTreatmentArm);
}

TEST(CsvLoader, MissingFileIsIoError) {
    EXPECT_THROW(load_dataset_csv("/nonexistent/dir/data.csv"), IoError);
}

TEST(Config, DefaultsAndOverrides) {
    const ExperimentConfig c = config_from_json(nlohmann::json::parse(R"({
        "dgp": {"n": 300, "p": 50},
        "settings": [{"s_T": 4, "s_Y": 5}],
        "model_grid": [["ridge", "lasso"]],
        "w_grid": [-1, 1],
        "estimators": ["ipw"],
        "cv": {"rule": "1se", "folds": 5},
        "output": {"format": "json"}
    })"));
    EXPECT_EQ(c.dgp.n, 300);
    EXPECT_EQ(c.dgp.p, 50);
    ASSERT_EQ(c.settings.size(), 1u);
    EXPECT_EQ(c.settings[0].s_T, 4.0);
    EXPECT_EQ(c.model_grid[0].outcome, glm::Penalty::ridge);
    EXPECT_EQ(c.estimators.size(), 1u);
    EXPECT_EQ(c.cv_rule, glm::CvRule::one_standard_error);
    EXPECT_EQ(c.cv_folds, 5);
    EXPECT_EQ(c.output_format, ReportFormat::json);
    EXPECT_EQ(c.replications, 100);
    EXPECT_EQ(default_w_grid().size(), 21u);
}

TEST(Config, RejectsBadInput) {
    auto bad = [](const char* text) { return config_from_json(nlohmann::json::parse(text)); };
    EXPECT_THROW(bad(R"({"replication": 3})"), ConfigError);
    EXPECT_THROW(bad(R"({"dgp": {"N": 3}})"), ConfigError);
    EXPECT_THROW(bad(R"({"replications": "many"})"), ConfigError);
    EXPECT_THROW(bad(R"({"replications": 0})"), ConfigError);
    EXPECT_THROW(bad(R"({"w_grid": [1.5]})"), ConfigError);
    EXPECT_THROW(bad(R"({"w_grid": [0, 0]})"), ConfigError);
    EXPECT_THROW(bad(R"({"model_grid": [["lasso"]]})"), ConfigError);
    EXPECT_THROW(bad(R"({"model_grid": [["lasso", "none"]]})"), ConfigError);
    EXPECT_THROW(bad(R"({"estimators": ["ols"]})"), ConfigError);
    EXPECT_THROW(bad(R"({"cv": {"rule": "max"}})"), ConfigError);
    EXPECT_THROW(bad(R"({"output": {"format": "xml"}})"), ConfigError);
    EXPECT_THROW(bad(R"({"dgp": {"K": 1.5}})"), ConfigError);
    EXPECT_THROW(bad(R"({"dataset_path": "a.csv", "oracle": true})"), ConfigError);
}

TEST(Config, JsonRoundTrip) {
    ExperimentConfig c = tiny_config();
    c.cv_rule = glm::CvRule::one_standard_error;
    const ExperimentConfig back = config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, MissingFile) { EXPECT_THROW(load_config("/nonexistent/cfg.json"), IoError); }

TEST(Labels, ScoreLabelFormatting) {
    EXPECT_EQ(score_label(-1.0), "w=-1.0");
    EXPECT_EQ(score_label(1.0), "w=1.0");
    EXPECT_EQ(score_label(0.0), "w=0.0");
    EXPECT_EQ(score_label(-0.0), "w=0.0");
    EXPECT_EQ(score_label(0.25), "w=0.25");
    EXPECT_EQ(score_label(-0.1), "w=-0.1");
    EXPECT_EQ(score_label(default_w_grid()[3]), "w=-0.7");
    EXPECT_EQ(setting_id({4.0, 5.0}), "sT4_sY5");
    EXPECT_EQ(setting_id({0.5, 2.0}), "sT0.5_sY2");
}

TEST(Summary, RmseDecomposes) {
    ReportCell cell;
    summarize_errors({1.0, 2.0, 3.0, 6.0}, cell);
    EXPECT_DOUBLE_EQ(cell.rmse, std::sqrt(50.0 / 4.0));
    EXPECT_DOUBLE_EQ(cell.abs_bias, 3.0);
    EXPECT_DOUBLE_EQ(cell.sd, std::sqrt(14.0 / 3.0));
    EXPECT_EQ(cell.n_runs, 4);
    // RMSE^2 = bias^2 + (n-1)/n SD^2
    EXPECT_NEAR(cell.rmse * cell.rmse, cell.abs_bias * cell.abs_bias + 0.75 * cell.sd * cell.sd, 1e-12);
    summarize_errors({-2.0}, cell);
    EXPECT_EQ(cell.sd, 0.0);
    EXPECT_EQ(cell.abs_bias, 2.0);
}

TEST(SimulationGrid, CellCountAndLabels) {
    const ExperimentConfig c = tiny_config();
    const ExperimentReport r = run_simulation_grid(c);
    // settings x models x estimators x (X + grid)
    EXPECT_EQ(r.cells.size(), 2u * 1u * 3u * 4u);
    for (const ReportCell& cell : r.cells) {
        EXPECT_EQ(cell.n_runs, 4);
        EXPECT_TRUE(std::isfinite(cell.rmse));
        EXPECT_GE(cell.rmse + 1e-15, cell.abs_bias);
    }
    EXPECT_NE(r.find("sT4_sY5", "lasso", "lasso", "ipw", "w=-1.0"), nullptr);
    EXPECT_NE(r.find("sT1_sY2", "lasso", "lasso", "aipw", "X"), nullptr);
    EXPECT_EQ(r.find("sT1_sY2", "lasso", "lasso", "aipw", "w=0.5"), nullptr);
}

TEST(SimulationGrid, ThreadCountDoesNotChangeOutput) {
    ExperimentConfig c = tiny_config();
    c.model_grid = {{glm::Penalty::lasso, glm::Penalty::lasso}, {glm::Penalty::ridge, glm::Penalty::lasso}};
    c.threads = 1;
    const std::string one = report_string(run_simulation_grid(c), ReportFormat::csv);
    c.threads = 3;
    const std::string three = report_string(run_simulation_grid(c), ReportFormat::csv);
    EXPECT_EQ(one, three);
}

TEST(SimulationGrid, SeedChangesOutput) {
    ExperimentConfig c = tiny_config();
    const std::string a = report_string(run_simulation_grid(c), ReportFormat::csv);
    c.master_seed += 1;
    EXPECT_NE(a, report_string(run_simulation_grid(c), ReportFormat::csv));
}

TEST(SimulationGrid, OracleNuisanceIsNearlyUnbiased) {
    ExperimentConfig c;
    c.dgp.n = 400;
    c.dgp.p = 10;
    c.dgp.support_size = 4;
    c.settings = {{1.0, 2.0}};
    c.w_grid = {-1.0, 0.0, 1.0};
    c.replications = 200;
    c.master_seed = 4;
    c.oracle_nuisance = true;
    c.threads = 1;
    const ExperimentReport r = run_simulation_grid(c);
    for (const ReportCell& cell : r.cells) {
        // Standard error of the mean error is sd / sqrt(reps).
        EXPECT_LE(cell.abs_bias, 4.0 * cell.sd / std::sqrt(200.0) + 1e-12) << cell.estimator << ' ' << cell.score_label;
        EXPECT_EQ(cell.fallback_count, 0);
    }
}

TEST(SimulationGrid, FallbacksAreCounted) {
    // Pure-noise responses drive both lasso fits to zero coefficients, so every
    // score cell falls back to the covariate estimate.
    ExperimentConfig c = tiny_config();
    c.settings = {{0.0, 0.0}};
    c.replications = 3;
    c.cv_rule = glm::CvRule::one_standard_error;
    const ExperimentReport r = run_simulation_grid(c);
    int fallbacks = 0;
    for (const ReportCell& cell : r.cells) {
        if (cell.score_label == "X") {
            EXPECT_EQ(cell.fallback_count, 0);
            continue;
        }
        fallbacks += cell.fallback_count;
        const ReportCell* raw = r.find(cell.setting, cell.outcome_penalty, cell.propensity_penalty, cell.estimator, "X");
        ASSERT_NE(raw, nullptr);
        if (cell.fallback_count == cell.n_runs) {
            EXPECT_EQ(cell.rmse, raw->rmse);
        }
    }
    EXPECT_GT(fallbacks, 0);
}

TEST(SimulationGrid, DatasetMode) {
    const auto dir = std::filesystem::temp_directory_path() / "deconf_harness_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "data.csv";
    {
        dgp::DgpConfig g;
        g.n = 120;
        g.p = 8;
        g.support_size = 3;
        g.s_T = 1.0;
        g.s_Y = 1.0;
        g.seed = 5;
        const Dataset d = dgp::simulate_dataset(g, dgp::generate_coefficients(g, 6));
        std::ofstream out(path);
        out << "t,y";
        for (int j = 1; j <= 8; ++j) out << ",x" << j;
        out << ",mu0,mu1\n";
        for (Eigen::Index i = 0; i < d.n(); ++i) {
            out << d.treatment[i] << ',' << full_precision(d.outcome[i]);
            for (int j = 0; j < 8; ++j) out << ',' << full_precision(d.design.values()(i, j));
            out << ',' << full_precision((*d.oracle_m0)[i]) << ',' << full_precision((*d.oracle_m1)[i]) << '\n';
        }
    }
    ExperimentConfig c;
    c.dataset_path = path.string();
    c.w_grid = {-1.0, 1.0};
    c.replications = 2;
    c.cv_folds = 3;
    c.cv_grid_size = 10;
    const ExperimentReport r = run_simulation_grid(c);
    EXPECT_EQ(r.cells.size(), 3u * 3u);
    for (const ReportCell& cell : r.cells) EXPECT_EQ(cell.setting, "dataset");

    std::ofstream(dir / "plain.csv") << "t,y,x1\n1,1,0\n0,0,1\n1,2,2\n0,1,3\n";
    c.dataset_path = (dir / "plain.csv").string();
    EXPECT_THROW(run_simulation_grid(c), ConfigError);
}

TEST(Emission, EmptyReportIsHeaderOnly) {
    EXPECT_EQ(report_string({}, ReportFormat::csv), std::string(report_csv_header) + "\n");
    EXPECT_EQ(report_from_json(nlohmann::json::parse(report_string({}, ReportFormat::json))).cells.size(), 0u);
}

TEST(Emission, CsvIsSortedAndJsonRoundTrips) {
    ExperimentReport r;
    ReportCell b;
    b.setting = "sT1_sY2";
    b.estimator = "regr";
    b.score_label = "X";
    b.rmse = 0.1;
    ReportCell a = b;
    a.estimator = "aipw";
    a.rmse = 1.0 / 3.0;
    a.trim_total = 7;
    r.cells = {b, a};
    const std::string csv = report_string(r, ReportFormat::csv);
    EXPECT_LT(csv.find(",aipw,"), csv.find(",regr,"));
    EXPECT_NE(csv.find("0.33333333333333331"), std::string::npos);
    const ExperimentReport back = report_from_json(report_to_json(r));
    EXPECT_EQ(report_string(back, ReportFormat::csv), csv);
    EXPECT_THROW(report_from_json(nlohmann::json::parse(R"({"cells": [{"setting": 1}]})")), SchemaError);
    EXPECT_THROW(report_from_json(nlohmann::json::parse("{}")), SchemaError);
}

TEST(Emission, UnwritablePath) {
    EXPECT_THROW(emit_report({}, ReportFormat::csv, std::filesystem::path("/nonexistent/dir/out.csv")), IoError);
}

TEST(OverlapCurve, ReluEndpointsAndClosedForm) {
    const OverlapCurve curve = run_overlap_curve(overlap::LinkSpec::relu(), 0.75, default_w_grid(), 0.5);
    ASSERT_EQ(curve.points.size(), 42u);
    const CurvePoint& last = curve.points[curve.points.size() - 2];
    EXPECT_EQ(last.w, 1.0);
    EXPECT_NEAR(last.b, 1.0, 1e-15);
    EXPECT_NEAR(last.divergence, std::numbers::pi, 1e-6);
    EXPECT_NEAR(curve.points.front().b, 0.75, 1e-12);
    for (std::size_t k = 0; k + 1 < curve.points.size(); k += 2) {
        EXPECT_EQ(curve.points[k].method, "quadrature");
        EXPECT_EQ(curve.points[k + 1].method, "closed_form");
        EXPECT_NEAR(curve.points[k].divergence, curve.points[k + 1].divergence, 1e-6);
    }
}

TEST(OverlapCurve, PropensityLinkMinimizedAtPrognosticEnd) {
    const auto link = overlap::LinkSpec::logistic(1.0, 0.0, overlap::Assumption::propensity);
    const OverlapCurve curve = run_overlap_curve(link, 0.5, default_w_grid(), 0.5);
    ASSERT_EQ(curve.points.size(), 21u);
    for (std::size_t k = 1; k < curve.points.size(); ++k)
        EXPECT_GT(curve.points[k].divergence, curve.points[k - 1].divergence);
    std::ostringstream out;
    write_overlap_curve_csv(curve, out);
    EXPECT_EQ(out.str().substr(0, 22), "w,b,divergence,method\n");
}

TEST(OverlapCurve, RejectsBadInputs) {
    EXPECT_THROW(run_overlap_curve(overlap::LinkSpec::relu(), 1.5, {0.0}, 0.5), InvalidInput);
    EXPECT_THROW(run_overlap_curve(overlap::LinkSpec::identity(), 0.5, {0.0}, 0.5), InvalidLink);
}

TEST(Verification, SuitePassesAndReportsEveryCheck) {
    const VerificationReport rep = run_verification_suite(0, 100000);
    EXPECT_GE(rep.checks.size(), 20u);
    for (const CheckResult& c : rep.checks) EXPECT_TRUE(c.passed) << c.name << ' ' << c.observed.dump();
    const nlohmann::json j = rep.to_json();
    EXPECT_EQ(j["passed"], rep.passed());
    EXPECT_EQ(j["checks"].size(), rep.checks.size());
}
