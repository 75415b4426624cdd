#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emopriv/attack.hpp"
#include "emopriv/data.hpp"
#include "emopriv/model.hpp"
#include "emopriv/trainer.hpp"

namespace emopriv::experiment {

struct ExperimentConfig {
    std::string scenario = "q1-leakage";
    data::GenConfig gen;
    train::TrainConfig tcfg;
    attack::ProbeConfig probe_cfg;
    std::vector<attack::ProbeSpec> probe_grid = attack::default_probe_grid();

    std::vector<model::Task> tasks = {model::Task::activation};

    // Base architecture for every setup the scenario instantiates.
    int conv_layers = 3;
    int conv_width = 2;
    int conv_kernels = 32;
    int gru_layers = 2;
    int gru_width = 32;
    int dense_layers = 1;
    int dense_width = 32;

    double priv_lambda = 0.5;
    std::vector<double> lambda_sweep = {0.3, 0.5, 0.75, 1.0};
    double select_fraction = 0.5;  // membership-identification knobs
    double move_fraction = 0.5;
    bool znorm_acoustic = false;

    uint64_t master_seed = 1;
    std::string out_dir = "out";

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::string& path);
};

inline constexpr int kFoldRotations = 5;

struct ReportRow {
    std::string key;  // setup id, unique within the report
    std::string modality, task, mode, placement, adversaries;
    double lambda = 0.0;

    // Mean over the five fold rotations; NaN marks an inapplicable metric.
    double U = 0.0, U_M = 0.0, U_F = 0.0, L = 0.0, P = 0.0, MI = 0.0;
    std::vector<double> fold_U, fold_U_M, fold_U_F, fold_L, fold_P, fold_MI;
    bool P_flagged = false;

    std::string baseline_key;                // empty when not compared
    std::map<std::string, double> raw_p;     // metric name -> paired-t p
    std::map<std::string, double> adjusted_p;
    std::map<std::string, bool> significant;
};

struct MetricsReport {
    std::string scenario;
    uint64_t master_seed = 0;
    std::string config_hash;
    std::vector<ReportRow> rows;

    nlohmann::json to_json() const;
};

MetricsReport run_scenario(const ExperimentConfig& cfg);

// Markdown rendering of the report; significant cells wrapped in bold
// markers, L column omitted when every row is Priv, paired per-task column
// groups when rows cover both tasks.
std::string emit_table(const MetricsReport& report);

// Runs the scenario and writes report.json, report.md, and folds.csv under
// cfg.out_dir. Stage failures are rethrown with the stage name and config
// hash attached.
void run_experiment(const ExperimentConfig& cfg);

// Structural check mirroring docs/report.schema.json.
void validate_report_json(const nlohmann::json& report);

uint64_t fnv1a(const std::string& s);

}  // namespace emopriv::experiment
