#pragma once

// Experiment configuration, read from JSON. Every field is optional and
// unknown keys are rejected. Example:
//
//   {
//     "dgp": {"n": 500, "p": 1000, "tau": 0, "K": 0.75, "support_size": 20},
//     "settings": [{"s_T": 1, "s_Y": 2}, {"s_T": 4, "s_Y": 5}],
//     "model_grid": [["lasso", "lasso"], ["ridge", "lasso"]],
//     "w_grid": [-1, -0.5, 0, 0.5, 1],
//     "estimators": ["regr", "ipw", "aipw"],
//     "replications": 100,
//     "master_seed": 1,
//     "threads": 8,
//     "output": {"path": "report.csv", "format": "csv"}
//   }

#include "deconf/dgp.hpp"
#include "deconf/error.hpp"
#include "deconf/estimators.hpp"
#include "deconf/glm.hpp"
#include "deconf/parallel.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace deconf::harness {

struct Setting {
    double s_T = 1.0;
    double s_Y = 1.0;
};

struct ModelSpec {
    glm::Penalty outcome = glm::Penalty::lasso;
    glm::Penalty propensity = glm::Penalty::lasso;
};

enum class ReportFormat { csv, json };

inline std::vector<double> default_w_grid() {
    std::vector<double> g;
    for (int k = -10; k <= 10; ++k) g.push_back(k / 10.0);
    return g;
}

struct ExperimentConfig {
    dgp::DgpConfig dgp;                        // s_T, s_Y are taken from each setting
    std::vector<Setting> settings;             // empty: the single setting in `dgp`
    std::optional<std::string> dataset_path;   // fixed CSV dataset instead of simulation
    std::vector<ModelSpec> model_grid{ModelSpec{}};
    std::vector<double> w_grid = default_w_grid();
    std::vector<estimators::Method> estimators{estimators::all_methods.begin(), estimators::all_methods.end()};
    int replications = 100;
    std::uint64_t master_seed = 0;
    estimators::TrimConfig trim;
    bool hajek = true;
    unsigned threads = 0;                      // 0: DECONF_THREADS or 1
    bool oracle_nuisance = false;              // true nuisance functions instead of fitted models
    bool ortho_per_replication = true;         // false: one orthogonal draw per study
    int cv_folds = 10;
    int cv_grid_size = 100;
    glm::CvRule cv_rule = glm::CvRule::min_deviance;
    std::string output_path;
    ReportFormat output_format = ReportFormat::csv;

    std::vector<Setting> effective_settings() const {
        if (!settings.empty()) return settings;
        return {Setting{dgp.s_T, dgp.s_Y}};
    }

    unsigned effective_threads() const { return threads ? threads : default_thread_count(); }

    void validate() const {
        if (replications < 1) throw ConfigError("replications must be >= 1");
        if (model_grid.empty()) throw ConfigError("model_grid must be nonempty");
        if (estimators.empty()) throw ConfigError("estimators must be nonempty");
        for (double w : w_grid)
            if (!(std::abs(w) <= 1.0)) throw ConfigError("w_grid values must lie in [-1, 1]");
        std::set<double> unique(w_grid.begin(), w_grid.end());
        if (unique.size() != w_grid.size()) throw ConfigError("w_grid has duplicate values");
        for (const ModelSpec& m : model_grid)
            if (m.outcome == glm::Penalty::none || m.propensity == glm::Penalty::none)
                throw ConfigError("model_grid penalties must be lasso or ridge");
        if (cv_folds < 2) throw ConfigError("cv.folds must be >= 2");
        if (cv_grid_size < 2) throw ConfigError("cv.grid_size must be >= 2");
        try {
            trim.validate();
        } catch (const InvalidInput& e) {
            throw ConfigError(e.what());
        }
        if (dataset_path) {
            if (oracle_nuisance) throw ConfigError("oracle mode needs the simulated design, not a dataset file");
            if (!settings.empty()) throw ConfigError("settings apply to simulated data only");
            return;
        }
        for (const Setting& s : effective_settings()) {
            dgp::DgpConfig d = dgp;
            d.s_T = s.s_T;
            d.s_Y = s.s_Y;
            try {
                d.validate();
            } catch (const InvalidInput& e) {
                throw ConfigError(std::string("dgp: ") + e.what());
            }
        }
    }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok |= key == a;
        if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

inline glm::CvRule parse_cv_rule(const std::string& s) {
    if (s == "min") return glm::CvRule::min_deviance;
    if (s == "1se") return glm::CvRule::one_standard_error;
    throw ConfigError("cv.rule must be 'min' or '1se', got '" + s + "'");
}

inline const char* cv_rule_name(glm::CvRule r) { return r == glm::CvRule::min_deviance ? "min" : "1se"; }

inline glm::Penalty penalty_of(const std::string& s) {
    try {
        return glm::parse_penalty(s);
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::read;
    detail::check_keys(j,
                       {"dgp", "settings", "dataset_path", "model_grid", "w_grid", "estimators", "replications", "master_seed",
                        "trim_epsilon", "hajek", "threads", "oracle", "ortho_per_replication", "cv", "output"},
                       "config");
    ExperimentConfig c;
    if (j.contains("dgp")) {
        const auto& d = j["dgp"];
        detail::check_keys(d, {"n", "p", "s_T", "s_Y", "tau", "alpha0", "beta0", "support_size", "K"}, "dgp");
        read(d, "n", c.dgp.n, "dgp");
        read(d, "p", c.dgp.p, "dgp");
        read(d, "s_T", c.dgp.s_T, "dgp");
        read(d, "s_Y", c.dgp.s_Y, "dgp");
        read(d, "tau", c.dgp.tau, "dgp");
        read(d, "alpha0", c.dgp.alpha0, "dgp");
        read(d, "beta0", c.dgp.beta0, "dgp");
        read(d, "support_size", c.dgp.support_size, "dgp");
        read(d, "K", c.dgp.K, "dgp");
    }
    if (j.contains("settings")) {
        if (!j["settings"].is_array()) throw ConfigError("settings must be an array");
        for (const auto& s : j["settings"]) {
            detail::check_keys(s, {"s_T", "s_Y"}, "settings[]");
            Setting st;
            read(s, "s_T", st.s_T, "settings[]");
            read(s, "s_Y", st.s_Y, "settings[]");
            c.settings.push_back(st);
        }
    }
    if (j.contains("dataset_path") && !j["dataset_path"].is_null()) {
        std::string path;
        read(j, "dataset_path", path, "config");
        c.dataset_path = path;
    }
    if (j.contains("model_grid")) {
        c.model_grid.clear();
        std::vector<std::vector<std::string>> grid;
        read(j, "model_grid", grid, "config");
        for (const auto& pair : grid) {
            if (pair.size() != 2) throw ConfigError("model_grid entries are [outcome_penalty, propensity_penalty]");
            c.model_grid.push_back({detail::penalty_of(pair[0]), detail::penalty_of(pair[1])});
        }
    }
    read(j, "w_grid", c.w_grid, "config");
    if (j.contains("estimators")) {
        std::vector<std::string> names;
        read(j, "estimators", names, "config");
        c.estimators.clear();
        for (const auto& n : names) {
            try {
                c.estimators.push_back(estimators::parse_method(n));
            } catch (const InvalidInput& e) {
                throw ConfigError(e.what());
            }
        }
    }
    read(j, "replications", c.replications, "config");
    read(j, "master_seed", c.master_seed, "config");
    read(j, "trim_epsilon", c.trim.epsilon, "config");
    read(j, "hajek", c.hajek, "config");
    read(j, "threads", c.threads, "config");
    read(j, "oracle", c.oracle_nuisance, "config");
    read(j, "ortho_per_replication", c.ortho_per_replication, "config");
    if (j.contains("cv")) {
        const auto& cv = j["cv"];
        detail::check_keys(cv, {"folds", "grid_size", "rule"}, "cv");
        read(cv, "folds", c.cv_folds, "cv");
        read(cv, "grid_size", c.cv_grid_size, "cv");
        std::string rule = detail::cv_rule_name(c.cv_rule);
        read(cv, "rule", rule, "cv");
        c.cv_rule = detail::parse_cv_rule(rule);
    }
    if (j.contains("output")) {
        const auto& o = j["output"];
        detail::check_keys(o, {"path", "format"}, "output");
        read(o, "path", c.output_path, "output");
        std::string fmt = "csv";
        read(o, "format", fmt, "output");
        if (fmt == "csv")
            c.output_format = ReportFormat::csv;
        else if (fmt == "json")
            c.output_format = ReportFormat::json;
        else
            throw ConfigError("output.format must be 'csv' or 'json'");
    }
    c.validate();
    return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["dgp"] = {{"n", c.dgp.n},         {"p", c.dgp.p},           {"s_T", c.dgp.s_T},
                {"s_Y", c.dgp.s_Y},     {"tau", c.dgp.tau},       {"alpha0", c.dgp.alpha0},
                {"beta0", c.dgp.beta0}, {"support_size", c.dgp.support_size}, {"K", c.dgp.K}};
    j["settings"] = nlohmann::json::array();
    for (const Setting& s : c.settings) j["settings"].push_back({{"s_T", s.s_T}, {"s_Y", s.s_Y}});
    j["dataset_path"] = c.dataset_path ? nlohmann::json(*c.dataset_path) : nlohmann::json(nullptr);
    j["model_grid"] = nlohmann::json::array();
    for (const ModelSpec& m : c.model_grid) j["model_grid"].push_back({glm::to_string(m.outcome), glm::to_string(m.propensity)});
    j["w_grid"] = c.w_grid;
    j["estimators"] = nlohmann::json::array();
    for (auto m : c.estimators) j["estimators"].push_back(estimators::to_string(m));
    j["replications"] = c.replications;
    j["master_seed"] = c.master_seed;
    j["trim_epsilon"] = c.trim.epsilon;
    j["hajek"] = c.hajek;
    j["threads"] = c.threads;
    j["oracle"] = c.oracle_nuisance;
    j["ortho_per_replication"] = c.ortho_per_replication;
    j["cv"] = {{"folds", c.cv_folds}, {"grid_size", c.cv_grid_size}, {"rule", detail::cv_rule_name(c.cv_rule)}};
    j["output"] = {{"path", c.output_path}, {"format", c.output_format == ReportFormat::csv ? "csv" : "json"}};
    return j;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

}  // namespace deconf::harness
