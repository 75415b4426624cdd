#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "emopriv/attack.hpp"
#include "emopriv/data.hpp"
#include "emopriv/experiment.hpp"
#include "emopriv/model.hpp"
#include "emopriv/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emopriv;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    int64_t seed = -1;  // -1: keep the config's seed
};

experiment::ExperimentConfig load_config(const CommonOpts& opts) {
    experiment::ExperimentConfig cfg;
    if (!opts.config_path.empty())
        cfg = experiment::ExperimentConfig::from_file(opts.config_path);
    if (opts.seed >= 0) {
        cfg.master_seed = static_cast<uint64_t>(opts.seed);
        cfg.gen.seed = static_cast<uint64_t>(opts.seed);
    }
    cfg.out_dir = opts.out_dir;
    return cfg;
}

json raw_config(const CommonOpts& opts) {
    if (opts.config_path.empty()) return json::object();
    std::ifstream in(opts.config_path);
    if (!in) throw std::runtime_error("cannot open config " + opts.config_path);
    return json::parse(in);
}

// Single-model spec for the train/attack/mi subcommands; scenario runs build
// their own specs internally.
model::ModelSpec spec_from_config(const json& raw,
                                  const experiment::ExperimentConfig& cfg,
                                  int n_speakers) {
    model::ModelSpec spec;
    spec.modality = model::modality_from_string(
        raw.value("modality", std::string("multimodal")));
    spec.task = cfg.tasks.at(0);
    spec.mode = model::mode_from_string(raw.value("mode", std::string("gen")));
    spec.conv_layers = cfg.conv_layers;
    spec.conv_width = cfg.conv_width;
    spec.conv_kernels = cfg.conv_kernels;
    spec.gru_layers = cfg.gru_layers;
    spec.gru_width = cfg.gru_width;
    spec.dense_layers = cfg.dense_layers;
    spec.dense_width = cfg.dense_width;
    const std::string adv = raw.value("adversary", std::string("gender"));
    const double lambda = spec.mode == model::Mode::gen ? 0.0 : cfg.priv_lambda;
    if (adv == "gender") {
        spec.adversaries = {{model::AdvTarget::gender, lambda}};
    } else if (adv == "speaker") {
        spec.adversaries = {{model::AdvTarget::speaker, lambda}};
    } else if (adv == "gender+speaker") {
        spec.adversaries = {{model::AdvTarget::gender, lambda},
                            {model::AdvTarget::speaker, lambda}};
    } else if (adv == "none") {
        spec.adversaries = {};
    } else {
        throw std::runtime_error("unknown adversary " + adv);
    }
    if (raw.value("placement", std::string("post-concat")) == "per-stream")
        spec.placement = model::GrlPlacement::per_stream;
    for (const auto& a : spec.adversaries)
        if (a.target == model::AdvTarget::speaker) spec.n_speakers = n_speakers;
    spec.validate();
    return spec;
}

data::Corpus corpus_for(const experiment::ExperimentConfig& cfg,
                        const std::string& data_dir) {
    data::Corpus corpus = data_dir.empty() ? data::generate_corpus(cfg.gen)
                                           : data::load_corpus(data_dir);
    if (cfg.znorm_acoustic) corpus = data::znorm_by_speaker(corpus);
    return corpus;
}

int cmd_gen_data(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    const data::Corpus corpus = data::generate_corpus(cfg.gen);
    fs::create_directories(cfg.out_dir);
    data::save_corpus(corpus, cfg.out_dir);
    std::cout << "wrote " << corpus.size() << " utterances to " << cfg.out_dir
              << "\n";
    return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& data_dir) {
    const auto cfg = load_config(opts);
    const json raw = raw_config(opts);
    const data::Corpus corpus = corpus_for(cfg, data_dir);
    const data::SplitPlan plan = data::make_folds(corpus, 5, cfg.master_seed);
    train::Dataset ds = train::Dataset::from_plan(corpus, plan);
    model::ModelSpec spec =
        spec_from_config(raw, cfg, static_cast<int>(ds.speaker_index.size()));

    std::vector<train::TrainResult> runs;
    for (uint64_t seed : cfg.tcfg.seeds)
        runs.push_back(train::train(spec, ds, cfg.tcfg, seed));
    const size_t best = train::select_model(runs, spec, cfg.tcfg);

    fs::create_directories(cfg.out_dir);
    model::save_checkpoint(spec, runs[best].params,
                           (fs::path(cfg.out_dir) / "checkpoint").string());
    std::ofstream hist(fs::path(cfg.out_dir) / "history.jsonl");
    hist << runs[best].history.to_json_lines();
    std::cout << "selected seed index " << best << ", best epoch "
              << runs[best].history.best_epoch << " ("
              << runs[best].history.stop_reason << ")\n";
    return 0;
}

int cmd_attack(const CommonOpts& opts, const std::string& data_dir,
               const std::string& ckpt_dir) {
    const auto cfg = load_config(opts);
    const data::Corpus corpus = corpus_for(cfg, data_dir);
    const data::SplitPlan plan = data::make_folds(corpus, 5, cfg.master_seed);
    auto [spec, params] = model::load_checkpoint(ckpt_dir);
    const auto res =
        attack::privacy_metric(spec, params, corpus, plan, cfg.probe_grid,
                               cfg.probe_cfg, cfg.master_seed);
    json out = {{"attack", res.attack}, {"uar", res.uar},
                {"P", res.metric},      {"flagged", res.flagged},
                {"n_eval", res.n_eval}, {"probe_layers", res.probe.layers},
                {"probe_width", res.probe.width}};
    fs::create_directories(cfg.out_dir);
    std::ofstream(fs::path(cfg.out_dir) / "attack.json") << out.dump(2) << "\n";
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_mi(const CommonOpts& opts, const std::string& data_dir) {
    auto cfg = load_config(opts);
    const json raw = raw_config(opts);
    const data::Corpus corpus = corpus_for(cfg, data_dir);
    data::SplitPlan plan = data::make_folds(corpus, 5, cfg.master_seed);
    plan.role_of_fold[4] = data::FoldRole::mi_s4;
    plan.role_of_fold[5] = data::FoldRole::mi_s5;
    const data::MISplit mi = data::make_mi_splits(
        corpus, plan, cfg.select_fraction, cfg.move_fraction, cfg.master_seed);

    std::map<int, size_t> idx_of_utt;
    for (size_t i = 0; i < corpus.size(); ++i)
        idx_of_utt[corpus[i].utterance_id] = i;
    train::Dataset ds;
    ds.corpus = &corpus;
    ds.train_idx = plan.sample_indices(corpus, data::FoldRole::train);
    for (const auto& [spk, moved] : mi.moved_utterances)
        for (int u : moved) ds.train_idx.push_back(idx_of_utt.at(u));
    std::sort(ds.train_idx.begin(), ds.train_idx.end());
    for (int spk : plan.speakers_in(data::FoldRole::mi_s4))
        if (!mi.membership_label.at(spk))
            for (size_t i = 0; i < corpus.size(); ++i)
                if (corpus[i].speaker_id == spk) ds.val_idx.push_back(i);
    std::set<int> train_speakers;
    for (size_t i : ds.train_idx) train_speakers.insert(corpus[i].speaker_id);
    int next = 0;
    for (int spk : train_speakers) ds.speaker_index[spk] = next++;

    model::ModelSpec spec =
        spec_from_config(raw, cfg, static_cast<int>(ds.speaker_index.size()));

    std::vector<train::TrainResult> runs;
    for (uint64_t seed : cfg.tcfg.seeds)
        runs.push_back(train::train(spec, ds, cfg.tcfg, seed));
    const size_t best = train::select_model(runs, spec, cfg.tcfg);

    std::set<int> training_utts;
    for (size_t i : ds.train_idx) training_utts.insert(corpus[i].utterance_id);
    const auto res = attack::membership_attack(
        spec, runs[best].params, corpus, plan, mi, training_utts, cfg.probe_grid,
        cfg.probe_cfg, cfg.master_seed);
    json out = {{"attack", res.attack}, {"uar", res.uar},
                {"MI", res.metric},     {"n_eval", res.n_eval},
                {"probe_layers", res.probe.layers},
                {"probe_width", res.probe.width}};
    fs::create_directories(cfg.out_dir);
    std::ofstream(fs::path(cfg.out_dir) / "mi.json") << out.dump(2) << "\n";
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_experiment(const CommonOpts& opts) {
    const auto cfg = load_config(opts);
    experiment::run_experiment(cfg);
    std::cout << "wrote report to " << cfg.out_dir << "\n";
    return 0;
}

int cmd_report(const std::string& report_path) {
    std::ifstream in(report_path);
    if (!in) throw std::runtime_error("cannot open " + report_path);
    const json report = json::parse(in);
    experiment::validate_report_json(report);
    experiment::MetricsReport mr;
    mr.scenario = report.at("scenario").get<std::string>();
    mr.master_seed = report.at("master_seed").get<uint64_t>();
    mr.config_hash = report.at("config_hash").get<std::string>();
    for (const auto& rj : report.at("rows")) {
        experiment::ReportRow r;
        r.key = rj.at("key").get<std::string>();
        r.modality = rj.at("modality").get<std::string>();
        r.task = rj.at("task").get<std::string>();
        r.mode = rj.at("mode").get<std::string>();
        r.placement = rj.at("placement").get<std::string>();
        r.adversaries = rj.at("adversaries").get<std::string>();
        r.lambda = rj.at("lambda").get<double>();
        const auto num = [&](const char* k) {
            return rj.at(k).is_number()
                       ? rj.at(k).get<double>()
                       : std::numeric_limits<double>::quiet_NaN();
        };
        r.U = num("U"); r.U_M = num("U_M"); r.U_F = num("U_F");
        r.L = num("L"); r.P = num("P"); r.MI = num("MI");
        const auto arr = [&](const char* k) {
            std::vector<double> v;
            for (const auto& x : rj.at(k))
                v.push_back(x.is_number()
                                ? x.get<double>()
                                : std::numeric_limits<double>::quiet_NaN());
            return v;
        };
        r.fold_U = arr("fold_U"); r.fold_U_M = arr("fold_U_M");
        r.fold_U_F = arr("fold_U_F"); r.fold_L = arr("fold_L");
        r.fold_P = arr("fold_P"); r.fold_MI = arr("fold_MI");
        r.P_flagged = rj.value("P_flagged", false);
        if (rj.contains("significant"))
            for (const auto& [k, v] : rj.at("significant").items())
                r.significant[k] = v.get<bool>();
        mr.rows.push_back(std::move(r));
    }
    std::cout << experiment::emit_table(mr);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal emotion representations with adversarial "
                 "gender/speaker protection"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string data_dir, ckpt_dir, report_path;
    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "JSON config file");
        sub->add_option("--seed", opts.seed, "override master seed");
        sub->add_option("--out", opts.out_dir, "output directory");
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
    add_common(gen);
    auto* tr = app.add_subcommand("train", "train one model on folds 1-3");
    add_common(tr);
    tr->add_option("--data", data_dir, "load corpus from directory");
    auto* at = app.add_subcommand("attack", "gender probe attack on a checkpoint");
    add_common(at);
    at->add_option("--data", data_dir, "load corpus from directory");
    at->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
    auto* mi = app.add_subcommand("mi", "membership identification protocol");
    add_common(mi);
    mi->add_option("--data", data_dir, "load corpus from directory");
    auto* ex = app.add_subcommand("experiment", "run a full scenario");
    add_common(ex);
    auto* rp = app.add_subcommand("report", "render report.json as markdown");
    rp->add_option("--config", report_path, "path to report.json")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(opts);
        if (tr->parsed()) return cmd_train(opts, data_dir);
        if (at->parsed()) return cmd_attack(opts, data_dir, ckpt_dir);
        if (mi->parsed()) return cmd_mi(opts, data_dir);
        if (ex->parsed()) return cmd_experiment(opts);
        if (rp->parsed()) return cmd_report(report_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
