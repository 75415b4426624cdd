#include "emopriv/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "emopriv/stats.hpp"

namespace emopriv::experiment {

namespace fs = std::filesystem;
using nlohmann::json;
using model::AdvTarget;
using model::GrlPlacement;
using model::Mode;
using model::Modality;
using model::ModelSpec;
using model::Task;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

// Hash of every config field that influences results; out_dir is excluded so
// the same experiment written elsewhere yields a byte-identical report.
std::string config_hash_of(const ExperimentConfig& cfg) {
    nlohmann::json j = cfg.to_json();
    j.erase("out_dir");
    std::ostringstream h;
    h << std::hex << fnv1a(j.dump());
    return h.str();
}

}  // namespace

void ExperimentConfig::validate() const {
    static const std::set<std::string> kScenarios = {
        "q1-leakage", "q2-privacy", "q3-utility", "q4-lambda-sweep",
        "q5-per-gender", "q6-placement", "q7-membership", "q7-multi"};
    if (!kScenarios.count(scenario))
        throw std::invalid_argument("ExperimentConfig: unknown scenario " + scenario);
    gen.validate();
    tcfg.validate();
    static const std::set<double> kLambdaGrid = {0.3, 0.5, 0.75, 1.0};
    if (!kLambdaGrid.count(priv_lambda))
        throw std::invalid_argument("ExperimentConfig: priv_lambda outside grid");
    for (double l : lambda_sweep)
        if (!kLambdaGrid.count(l))
            throw std::invalid_argument("ExperimentConfig: lambda_sweep outside grid");
    if (tasks.empty() || tasks.size() > 2)
        throw std::invalid_argument("ExperimentConfig: tasks must hold 1 or 2 entries");
    if (gen.n_speakers < 5)
        throw std::invalid_argument("ExperimentConfig: need >= 5 speakers for folds");
}

json ExperimentConfig::to_json() const {
    json j;
    j["scenario"] = scenario;
    j["gen"] = {{"n_speakers", gen.n_speakers},
                {"utterances_per_speaker", gen.utterances_per_speaker},
                {"gender_signal_acoustic", gen.gender_signal_acoustic},
                {"gender_signal_lexical", gen.gender_signal_lexical},
                {"emotion_signal", gen.emotion_signal},
                {"speaker_variance", gen.speaker_variance},
                {"rating_scale", gen.rating_scale == data::RatingScale::pt5 ? "5pt"
                                 : gen.rating_scale == data::RatingScale::pt7 ? "7pt"
                                                                              : "9pt"},
                {"seq_len_range", {gen.seq_len_min, gen.seq_len_max}},
                {"seed", gen.seed}};
    j["train"] = {{"max_epochs", tcfg.max_epochs},
                  {"patience", tcfg.patience},
                  {"batch_size", tcfg.batch_size},
                  {"learning_rate", tcfg.learning_rate},
                  {"rmsprop_decay", tcfg.rmsprop_decay},
                  {"rmsprop_epsilon", tcfg.rmsprop_epsilon},
                  {"chance_band", tcfg.chance_band},
                  {"seeds", tcfg.seeds}};
    j["probe"] = {{"max_epochs", probe_cfg.max_epochs},
                  {"patience", probe_cfg.patience},
                  {"batch_size", probe_cfg.batch_size},
                  {"learning_rate", probe_cfg.learning_rate}};
    json grid = json::array();
    for (const auto& p : probe_grid) grid.push_back({{"layers", p.layers}, {"width", p.width}});
    j["probe_grid"] = grid;
    json ts = json::array();
    for (Task t : tasks) ts.push_back(model::to_string(t));
    j["tasks"] = ts;
    j["arch"] = {{"conv_layers", conv_layers}, {"conv_width", conv_width},
                 {"conv_kernels", conv_kernels}, {"gru_layers", gru_layers},
                 {"gru_width", gru_width}, {"dense_layers", dense_layers},
                 {"dense_width", dense_width}};
    j["priv_lambda"] = priv_lambda;
    j["lambda_sweep"] = lambda_sweep;
    j["select_fraction"] = select_fraction;
    j["move_fraction"] = move_fraction;
    j["znorm_acoustic"] = znorm_acoustic;
    j["master_seed"] = master_seed;
    j["out_dir"] = out_dir;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    c.scenario = j.value("scenario", c.scenario);
    if (j.contains("gen")) {
        const auto& g = j.at("gen");
        c.gen.n_speakers = g.value("n_speakers", c.gen.n_speakers);
        c.gen.utterances_per_speaker =
            g.value("utterances_per_speaker", c.gen.utterances_per_speaker);
        c.gen.gender_signal_acoustic =
            g.value("gender_signal_acoustic", c.gen.gender_signal_acoustic);
        c.gen.gender_signal_lexical =
            g.value("gender_signal_lexical", c.gen.gender_signal_lexical);
        c.gen.emotion_signal = g.value("emotion_signal", c.gen.emotion_signal);
        c.gen.speaker_variance = g.value("speaker_variance", c.gen.speaker_variance);
        if (g.contains("rating_scale")) {
            const std::string s = g.at("rating_scale").get<std::string>();
            if (s == "5pt") c.gen.rating_scale = data::RatingScale::pt5;
            else if (s == "7pt") c.gen.rating_scale = data::RatingScale::pt7;
            else if (s == "9pt") c.gen.rating_scale = data::RatingScale::pt9;
            else throw std::invalid_argument("ExperimentConfig: bad rating_scale " + s);
        }
        if (g.contains("seq_len_range")) {
            c.gen.seq_len_min = g.at("seq_len_range").at(0).get<int>();
            c.gen.seq_len_max = g.at("seq_len_range").at(1).get<int>();
        }
        c.gen.seed = g.value("seed", c.gen.seed);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        c.tcfg.max_epochs = t.value("max_epochs", c.tcfg.max_epochs);
        c.tcfg.patience = t.value("patience", c.tcfg.patience);
        c.tcfg.batch_size = t.value("batch_size", c.tcfg.batch_size);
        c.tcfg.learning_rate = t.value("learning_rate", c.tcfg.learning_rate);
        c.tcfg.rmsprop_decay = t.value("rmsprop_decay", c.tcfg.rmsprop_decay);
        c.tcfg.rmsprop_epsilon = t.value("rmsprop_epsilon", c.tcfg.rmsprop_epsilon);
        c.tcfg.chance_band = t.value("chance_band", c.tcfg.chance_band);
        if (t.contains("seeds"))
            c.tcfg.seeds = t.at("seeds").get<std::vector<uint64_t>>();
    }
    if (j.contains("probe")) {
        const auto& p = j.at("probe");
        c.probe_cfg.max_epochs = p.value("max_epochs", c.probe_cfg.max_epochs);
        c.probe_cfg.patience = p.value("patience", c.probe_cfg.patience);
        c.probe_cfg.batch_size = p.value("batch_size", c.probe_cfg.batch_size);
        c.probe_cfg.learning_rate = p.value("learning_rate", c.probe_cfg.learning_rate);
    }
    if (j.contains("probe_grid")) {
        c.probe_grid.clear();
        for (const auto& p : j.at("probe_grid"))
            c.probe_grid.push_back({p.at("layers").get<int>(), p.at("width").get<int>()});
    }
    if (j.contains("tasks")) {
        c.tasks.clear();
        for (const auto& t : j.at("tasks"))
            c.tasks.push_back(model::task_from_string(t.get<std::string>()));
    }
    if (j.contains("arch")) {
        const auto& a = j.at("arch");
        c.conv_layers = a.value("conv_layers", c.conv_layers);
        c.conv_width = a.value("conv_width", c.conv_width);
        c.conv_kernels = a.value("conv_kernels", c.conv_kernels);
        c.gru_layers = a.value("gru_layers", c.gru_layers);
        c.gru_width = a.value("gru_width", c.gru_width);
        c.dense_layers = a.value("dense_layers", c.dense_layers);
        c.dense_width = a.value("dense_width", c.dense_width);
    }
    c.priv_lambda = j.value("priv_lambda", c.priv_lambda);
    if (j.contains("lambda_sweep"))
        c.lambda_sweep = j.at("lambda_sweep").get<std::vector<double>>();
    c.select_fraction = j.value("select_fraction", c.select_fraction);
    c.move_fraction = j.value("move_fraction", c.move_fraction);
    c.znorm_acoustic = j.value("znorm_acoustic", c.znorm_acoustic);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("ExperimentConfig: cannot open " + path);
    return from_json(json::parse(in));
}

namespace {

struct SetupDef {
    std::string key;
    ModelSpec spec;  // n_speakers resolved per rotation for speaker heads
    bool mi_protocol = false;
    int baseline = -1;  // index into the setup list
    std::vector<std::string> compare_metrics;
};

ModelSpec base_spec(const ExperimentConfig& cfg, Modality m, Task t, Mode mode) {
    ModelSpec s;
    s.modality = m;
    s.task = t;
    s.mode = mode;
    s.conv_layers = cfg.conv_layers;
    s.conv_width = cfg.conv_width;
    s.conv_kernels = cfg.conv_kernels;
    s.gru_layers = cfg.gru_layers;
    s.gru_width = cfg.gru_width;
    s.dense_layers = cfg.dense_layers;
    s.dense_width = cfg.dense_width;
    return s;
}

std::string lambda_tag(double l) {
    std::ostringstream o;
    o << l;
    return o.str();
}

std::vector<SetupDef> build_setups(const ExperimentConfig& cfg) {
    std::vector<SetupDef> setups;
    const std::vector<Modality> all_mods = {Modality::acoustic, Modality::lexical,
                                            Modality::multimodal};
    for (Task t : cfg.tasks) {
        const std::string tp = model::to_string(t) + "/";
        const auto add = [&](const std::string& key, ModelSpec spec,
                             bool mi = false, int baseline = -1,
                             std::vector<std::string> cmp = {}) {
            setups.push_back({tp + key, std::move(spec), mi, baseline, std::move(cmp)});
            return static_cast<int>(setups.size()) - 1;
        };
        const auto gen_of = [&](Modality m) {
            ModelSpec s = base_spec(cfg, m, t, Mode::gen);
            s.adversaries = {{AdvTarget::gender, 0.0}};
            return s;
        };
        const auto priv_of = [&](Modality m, double lambda) {
            ModelSpec s = base_spec(cfg, m, t, Mode::priv);
            s.adversaries = {{AdvTarget::gender, lambda}};
            return s;
        };

        if (cfg.scenario == "q1-leakage") {
            for (Modality m : all_mods)
                add("gen/" + model::to_string(m), gen_of(m));
        } else if (cfg.scenario == "q2-privacy" || cfg.scenario == "q3-utility" ||
                   cfg.scenario == "q5-per-gender") {
            std::vector<std::string> cmp;
            if (cfg.scenario == "q2-privacy") cmp = {"P"};
            else if (cfg.scenario == "q3-utility") cmp = {"U"};
            else cmp = {"U_M", "U_F"};
            for (Modality m : all_mods) {
                const int b = add("gen/" + model::to_string(m), gen_of(m));
                add("priv/" + model::to_string(m) + "/lambda=" +
                        lambda_tag(cfg.priv_lambda),
                    priv_of(m, cfg.priv_lambda), false, b, cmp);
            }
        } else if (cfg.scenario == "q4-lambda-sweep") {
            const int b = add("gen/acoustic", gen_of(Modality::acoustic));
            for (double l : cfg.lambda_sweep)
                add("priv/acoustic/lambda=" + lambda_tag(l),
                    priv_of(Modality::acoustic, l), false, b, {"U", "P"});
        } else if (cfg.scenario == "q6-placement") {
            const int b = add("priv/multimodal/post-concat",
                              priv_of(Modality::multimodal, cfg.priv_lambda));
            ModelSpec per = priv_of(Modality::multimodal, cfg.priv_lambda);
            per.placement = GrlPlacement::per_stream;
            add("priv/multimodal/per-stream", per, false, b, {"U", "P"});
        } else if (cfg.scenario == "q7-membership") {
            const int b = add("gen/acoustic", gen_of(Modality::acoustic), true);
            ModelSpec spk = base_spec(cfg, Modality::acoustic, t, Mode::priv);
            spk.adversaries = {{AdvTarget::speaker, cfg.priv_lambda}};
            add("priv/acoustic/speaker", spk, true, b, {"MI"});
        } else if (cfg.scenario == "q7-multi") {
            const int b = add("gen/acoustic", gen_of(Modality::acoustic), true);
            ModelSpec multi = base_spec(cfg, Modality::acoustic, t, Mode::priv);
            multi.adversaries = {{AdvTarget::gender, cfg.priv_lambda},
                                 {AdvTarget::speaker, cfg.priv_lambda}};
            add("priv/acoustic/gender+speaker", multi, true, b, {"U", "P", "MI"});
        }
    }
    return setups;
}

struct RotationMetrics {
    double U = kNaN, U_M = kNaN, U_F = kNaN, L = kNaN, P = kNaN, MI = kNaN;
    bool P_flagged = false;
};

data::SplitPlan rotate_roles(const data::SplitPlan& base, int rotation, bool mi) {
    data::SplitPlan plan = base;
    for (int j = 0; j < 5; ++j) {
        const int fold = ((rotation + j) % 5) + 1;
        if (j <= 2) plan.role_of_fold[fold] = data::FoldRole::train;
        else if (j == 3)
            plan.role_of_fold[fold] = mi ? data::FoldRole::mi_s4
                                         : data::FoldRole::validation;
        else
            plan.role_of_fold[fold] = mi ? data::FoldRole::mi_s5
                                         : data::FoldRole::attacker;
    }
    return plan;
}

uint64_t unit_seed(const ExperimentConfig& cfg, const std::string& key,
                   int rotation, const std::string& what, size_t i) {
    return cfg.master_seed ^
           fnv1a(key + "|" + std::to_string(rotation) + "|" + what + "|" +
                 std::to_string(i));
}

double mean_of_finite(const std::vector<double>& v) {
    double s = 0.0;
    size_t n = 0;
    for (double x : v)
        if (!std::isnan(x)) {
            s += x;
            ++n;
        }
    return n ? s / static_cast<double>(n) : kNaN;
}

void emotion_eval(const train::EnsembleResult& ens, const data::Corpus& corpus,
                  const std::vector<size_t>& test_idx, RotationMetrics& m) {
    std::vector<int> labels, groups;
    for (size_t i : test_idx) {
        labels.push_back(static_cast<int>(corpus[i].emotion));
        groups.push_back(static_cast<int>(corpus[i].gender));
    }
    m.U = stats::uar_present(ens.predictions, labels, 3);
    const auto [um, uf] =
        stats::per_group_uar_present(ens.predictions, labels, groups, 3);
    m.U_M = um;
    m.U_F = uf;
}

bool has_gender_head(const ModelSpec& spec) {
    for (const auto& a : spec.adversaries)
        if (a.target == AdvTarget::gender) return true;
    return false;
}

RotationMetrics evaluate_standard(const ExperimentConfig& cfg,
                                  const data::Corpus& corpus,
                                  const data::SplitPlan& plan,
                                  const SetupDef& setup, int rotation) {
    train::Dataset ds = train::Dataset::from_plan(corpus, plan);
    ModelSpec spec = setup.spec;

    train::TrainConfig tcfg = cfg.tcfg;
    tcfg.seeds.clear();
    for (size_t i = 0; i < cfg.tcfg.seeds.size(); ++i)
        tcfg.seeds.push_back(unit_seed(cfg, setup.key, rotation, "train", i));

    const auto test_idx = plan.sample_indices(corpus, data::FoldRole::attacker);
    train::EnsembleResult ens = train::seed_ensemble(spec, ds, tcfg, test_idx);

    RotationMetrics m;
    emotion_eval(ens, corpus, test_idx, m);

    std::vector<double> l_vals, p_vals;
    bool flagged = false;
    for (size_t i = 0; i < ens.runs.size(); ++i) {
        if (has_gender_head(spec))
            l_vals.push_back(
                attack::leakage(spec, ens.runs[i].params, corpus, ds.val_idx));
        const auto pr = attack::privacy_metric(
            spec, ens.runs[i].params, corpus, plan, cfg.probe_grid, cfg.probe_cfg,
            unit_seed(cfg, setup.key, rotation, "probe", i));
        p_vals.push_back(pr.metric);
        flagged = flagged || pr.flagged;
    }
    if (has_gender_head(spec)) m.L = mean_of_finite(l_vals);
    m.P = mean_of_finite(p_vals);
    m.P_flagged = flagged;
    return m;
}

RotationMetrics evaluate_mi(const ExperimentConfig& cfg, const data::Corpus& corpus,
                            const data::SplitPlan& plan, const SetupDef& setup,
                            int rotation) {
    const data::MISplit mi = data::make_mi_splits(
        corpus, plan, cfg.select_fraction, cfg.move_fraction,
        unit_seed(cfg, setup.key, rotation, "mi_split", 0));

    std::map<int, size_t> idx_of_utt;
    for (size_t i = 0; i < corpus.size(); ++i)
        idx_of_utt[corpus[i].utterance_id] = i;

    train::Dataset ds;
    ds.corpus = &corpus;
    ds.train_idx = plan.sample_indices(corpus, data::FoldRole::train);
    const auto d1_idx = ds.train_idx;  // pure training-fold speakers
    for (const auto& [spk, moved] : mi.moved_utterances)
        for (int u : moved) ds.train_idx.push_back(idx_of_utt.at(u));
    std::sort(ds.train_idx.begin(), ds.train_idx.end());
    std::vector<size_t> d2_idx;  // non-selected s4 speakers, outside training
    for (int spk : plan.speakers_in(data::FoldRole::mi_s4))
        if (!mi.membership_label.at(spk))
            for (size_t i = 0; i < corpus.size(); ++i)
                if (corpus[i].speaker_id == spk) {
                    ds.val_idx.push_back(i);
                    d2_idx.push_back(i);
                }
    std::set<int> train_speakers;
    for (size_t i : ds.train_idx) train_speakers.insert(corpus[i].speaker_id);
    int next = 0;
    for (int spk : train_speakers) ds.speaker_index[spk] = next++;

    ModelSpec spec = setup.spec;
    for (auto& a : spec.adversaries)
        if (a.target == AdvTarget::speaker)
            spec.n_speakers = static_cast<int>(ds.speaker_index.size());

    train::TrainConfig tcfg = cfg.tcfg;
    tcfg.seeds.clear();
    for (size_t i = 0; i < cfg.tcfg.seeds.size(); ++i)
        tcfg.seeds.push_back(unit_seed(cfg, setup.key, rotation, "train", i));

    train::EnsembleResult ens = train::seed_ensemble(spec, ds, tcfg, ds.val_idx);

    RotationMetrics m;
    emotion_eval(ens, corpus, ds.val_idx, m);

    std::set<int> training_utts;
    for (size_t i : ds.train_idx) training_utts.insert(corpus[i].utterance_id);

    std::vector<double> mi_vals, p_vals, l_vals;
    bool flagged = false;
    for (size_t i = 0; i < ens.runs.size(); ++i) {
        const auto mr = attack::membership_attack(
            spec, ens.runs[i].params, corpus, plan, mi, training_utts,
            cfg.probe_grid, cfg.probe_cfg,
            unit_seed(cfg, setup.key, rotation, "mi_probe", i));
        mi_vals.push_back(mr.metric);
        const auto pr = attack::privacy_metric_on(
            spec, ens.runs[i].params, corpus, d1_idx, d2_idx, cfg.probe_grid,
            cfg.probe_cfg, unit_seed(cfg, setup.key, rotation, "probe", i));
        p_vals.push_back(pr.metric);
        flagged = flagged || pr.flagged;
        if (has_gender_head(spec))
            l_vals.push_back(
                attack::leakage(spec, ens.runs[i].params, corpus, ds.val_idx));
    }
    m.MI = mean_of_finite(mi_vals);
    m.P = mean_of_finite(p_vals);
    m.P_flagged = flagged;
    if (has_gender_head(spec)) m.L = mean_of_finite(l_vals);
    return m;
}

size_t worker_count() {
    if (const char* env = std::getenv("EMOPRIV_WORKERS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<size_t>(n);
    }
    return 1;
}

}  // namespace

MetricsReport run_scenario(const ExperimentConfig& cfg) {
    cfg.validate();
    data::Corpus corpus = data::generate_corpus(cfg.gen);
    if (cfg.znorm_acoustic) corpus = data::znorm_by_speaker(corpus);
    const data::SplitPlan base_plan = data::make_folds(corpus, 5, cfg.master_seed);

    const std::vector<SetupDef> setups = build_setups(cfg);
    std::vector<std::vector<RotationMetrics>> results(
        setups.size(), std::vector<RotationMetrics>(kFoldRotations));

    struct Unit {
        size_t setup;
        int rotation;
    };
    std::vector<Unit> units;
    for (size_t s = 0; s < setups.size(); ++s)
        for (int r = 0; r < kFoldRotations; ++r) units.push_back({s, r});

    const size_t workers = worker_count();
    for (size_t start = 0; start < units.size(); start += workers) {
        const size_t end = std::min(units.size(), start + workers);
        std::vector<std::future<RotationMetrics>> futs;
        for (size_t u = start; u < end; ++u) {
            const Unit unit = units[u];
            futs.push_back(std::async(
                workers > 1 ? std::launch::async : std::launch::deferred, [&, unit] {
                    const SetupDef& setup = setups[unit.setup];
                    const data::SplitPlan plan =
                        rotate_roles(base_plan, unit.rotation, setup.mi_protocol);
                    return setup.mi_protocol
                               ? evaluate_mi(cfg, corpus, plan, setup, unit.rotation)
                               : evaluate_standard(cfg, corpus, plan, setup,
                                                   unit.rotation);
                }));
        }
        for (size_t u = start; u < end; ++u)
            results[units[u].setup][units[u].rotation] = futs[u - start].get();
    }

    MetricsReport report;
    report.scenario = cfg.scenario;
    report.master_seed = cfg.master_seed;
    report.config_hash = config_hash_of(cfg);
    for (size_t s = 0; s < setups.size(); ++s) {
        ReportRow row;
        row.key = setups[s].key;
        row.modality = model::to_string(setups[s].spec.modality);
        row.task = model::to_string(setups[s].spec.task);
        row.mode = model::to_string(setups[s].spec.mode);
        row.placement = setups[s].spec.placement == GrlPlacement::per_stream
                            ? "per-stream"
                            : "post-concat";
        {
            std::ostringstream a;
            for (size_t i = 0; i < setups[s].spec.adversaries.size(); ++i) {
                if (i) a << "+";
                a << (setups[s].spec.adversaries[i].target == AdvTarget::gender
                          ? "gender"
                          : "speaker");
            }
            row.adversaries = a.str();
        }
        row.lambda = setups[s].spec.adversaries.empty()
                         ? 0.0
                         : setups[s].spec.adversaries[0].lambda;
        for (const auto& rm : results[s]) {
            row.fold_U.push_back(rm.U);
            row.fold_U_M.push_back(rm.U_M);
            row.fold_U_F.push_back(rm.U_F);
            row.fold_L.push_back(rm.L);
            row.fold_P.push_back(rm.P);
            row.fold_MI.push_back(rm.MI);
            row.P_flagged = row.P_flagged || rm.P_flagged;
        }
        row.U = mean_of_finite(row.fold_U);
        row.U_M = mean_of_finite(row.fold_U_M);
        row.U_F = mean_of_finite(row.fold_U_F);
        row.L = mean_of_finite(row.fold_L);
        row.P = mean_of_finite(row.fold_P);
        row.MI = mean_of_finite(row.fold_MI);
        if (setups[s].baseline >= 0)
            row.baseline_key = setups[setups[s].baseline].key;
        report.rows.push_back(std::move(row));
    }

    // One BH family per scenario run.
    struct Comparison {
        size_t row;
        std::string metric;
        double raw_p;
    };
    std::vector<Comparison> comparisons;
    auto fold_metric = [](const ReportRow& r, const std::string& m)
        -> const std::vector<double>& {
        if (m == "U") return r.fold_U;
        if (m == "U_M") return r.fold_U_M;
        if (m == "U_F") return r.fold_U_F;
        if (m == "L") return r.fold_L;
        if (m == "P") return r.fold_P;
        return r.fold_MI;
    };
    for (size_t s = 0; s < setups.size(); ++s) {
        if (setups[s].baseline < 0) continue;
        const ReportRow& base = report.rows[setups[s].baseline];
        for (const std::string& metric : setups[s].compare_metrics) {
            const auto& fa = fold_metric(report.rows[s], metric);
            const auto& fb = fold_metric(base, metric);
            // Rotations where either side is NaN carry no pairing information.
            std::vector<double> a, b;
            for (size_t r = 0; r < fa.size(); ++r)
                if (!std::isnan(fa[r]) && !std::isnan(fb[r])) {
                    a.push_back(fa[r]);
                    b.push_back(fb[r]);
                }
            if (a.size() < 2) {
                report.rows[s].raw_p[metric] = kNaN;
                report.rows[s].adjusted_p[metric] = kNaN;
                report.rows[s].significant[metric] = false;
                continue;
            }
            const auto t = stats::paired_t_test(a, b);
            comparisons.push_back({s, metric, t.p});
            report.rows[s].raw_p[metric] = t.p;
        }
    }
    std::vector<double> pvals;
    for (const auto& c : comparisons) pvals.push_back(c.raw_p);
    const auto sig = stats::bh_adjust(pvals, 0.05);
    for (size_t i = 0; i < comparisons.size(); ++i) {
        report.rows[comparisons[i].row].adjusted_p[comparisons[i].metric] =
            sig.adjusted_p[i];
        report.rows[comparisons[i].row].significant[comparisons[i].metric] =
            sig.reject[i];
    }
    return report;
}

json MetricsReport::to_json() const {
    json j;
    j["scenario"] = scenario;
    j["master_seed"] = master_seed;
    j["config_hash"] = config_hash;
    json rows_json = json::array();
    for (const auto& r : rows) {
        json rj;
        rj["key"] = r.key;
        rj["modality"] = r.modality;
        rj["task"] = r.task;
        rj["mode"] = r.mode;
        rj["placement"] = r.placement;
        rj["adversaries"] = r.adversaries;
        rj["lambda"] = r.lambda;
        rj["U"] = r.U;
        rj["U_M"] = r.U_M;
        rj["U_F"] = r.U_F;
        rj["L"] = r.L;
        rj["P"] = r.P;
        rj["MI"] = r.MI;
        rj["P_flagged"] = r.P_flagged;
        rj["fold_U"] = r.fold_U;
        rj["fold_U_M"] = r.fold_U_M;
        rj["fold_U_F"] = r.fold_U_F;
        rj["fold_L"] = r.fold_L;
        rj["fold_P"] = r.fold_P;
        rj["fold_MI"] = r.fold_MI;
        rj["baseline"] = r.baseline_key;
        rj["raw_p"] = r.raw_p;
        rj["adjusted_p"] = r.adjusted_p;
        rj["significant"] = r.significant;
        rows_json.push_back(rj);
    }
    j["rows"] = rows_json;
    return j;
}

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

std::string cell(const ReportRow& r, const std::string& metric, double v) {
    auto it = r.significant.find(metric);
    if (it != r.significant.end() && it->second) return "**" + fmt(v) + "**";
    return fmt(v);
}

bool all_nan(const std::vector<ReportRow>& rows,
             double ReportRow::*member) {
    for (const auto& r : rows)
        if (!std::isnan(r.*member)) return false;
    return true;
}

}  // namespace

std::string emit_table(const MetricsReport& report) {
    std::ostringstream out;
    out << "# " << report.scenario << "\n\n";

    std::set<std::string> tasks;
    for (const auto& r : report.rows) tasks.insert(r.task);

    if (tasks.size() == 2) {
        // Paired per-task column groups.
        std::map<std::string, std::map<std::string, const ReportRow*>> grouped;
        for (const auto& r : report.rows) {
            std::string k = r.key;
            const std::string tp = r.task + "/";
            if (k.rfind(tp, 0) == 0) k = k.substr(tp.size());
            grouped[k][r.task] = &r;
        }
        out << "| Setup | Act U | Act P | Act MI | Val U | Val P | Val MI |\n";
        out << "|---|---|---|---|---|---|---|\n";
        for (const auto& [k, by_task] : grouped) {
            out << "| " << k << " |";
            for (const std::string t : {"activation", "valence"}) {
                auto it = by_task.find(t);
                if (it == by_task.end()) {
                    out << " - | - | - |";
                } else {
                    const ReportRow& r = *it->second;
                    out << " " << cell(r, "U", r.U) << " | " << cell(r, "P", r.P)
                        << " | " << cell(r, "MI", r.MI) << " |";
                }
            }
            out << "\n";
        }
        return out.str();
    }

    bool all_priv = true;
    for (const auto& r : report.rows) all_priv = all_priv && r.mode == "priv";
    const bool show_L = !all_priv && !all_nan(report.rows, &ReportRow::L);
    const bool show_MI = !all_nan(report.rows, &ReportRow::MI);
    if (all_priv && !all_nan(report.rows, &ReportRow::L))
        out << "_L column omitted for Priv rows._\n\n";

    out << "| Setup | U(M) | U(F) | U |";
    if (show_L) out << " L |";
    out << " P |";
    if (show_MI) out << " MI |";
    out << "\n|---|---|---|---|";
    if (show_L) out << "---|";
    out << "---|";
    if (show_MI) out << "---|";
    out << "\n";
    for (const auto& r : report.rows) {
        out << "| " << r.key << " | " << cell(r, "U_M", r.U_M) << " | "
            << cell(r, "U_F", r.U_F) << " | " << cell(r, "U", r.U) << " |";
        if (show_L) out << " " << cell(r, "L", r.L) << " |";
        out << " " << cell(r, "P", r.P) << (r.P_flagged ? " (!)" : "") << " |";
        if (show_MI) out << " " << cell(r, "MI", r.MI) << " |";
        out << "\n";
    }
    return out.str();
}

void validate_report_json(const json& report) {
    const auto require = [](bool ok, const std::string& what) {
        if (!ok) throw std::runtime_error("report schema violation: " + what);
    };
    require(report.contains("scenario") && report["scenario"].is_string(), "scenario");
    require(report.contains("master_seed") && report["master_seed"].is_number(),
            "master_seed");
    require(report.contains("config_hash") && report["config_hash"].is_string(),
            "config_hash");
    require(report.contains("rows") && report["rows"].is_array() &&
                !report["rows"].empty(),
            "non-empty rows array");
    for (const auto& r : report["rows"]) {
        for (const char* k : {"key", "modality", "task", "mode", "placement",
                              "adversaries"})
            require(r.contains(k) && r[k].is_string(), std::string("row.") + k);
        for (const char* k : {"lambda", "U", "U_M", "U_F", "L", "P", "MI"})
            require(r.contains(k), std::string("row.") + k);
        for (const char* k : {"fold_U", "fold_U_M", "fold_U_F", "fold_L",
                              "fold_P", "fold_MI"}) {
            require(r.contains(k) && r[k].is_array() && r[k].size() == 5,
                    std::string("row.") + k + " length 5");
        }
    }
}

void run_experiment(const ExperimentConfig& cfg) {
    const std::string hash = config_hash_of(cfg);
    auto stage = [&](const std::string& name, auto&& fn) {
        try {
            return fn();
        } catch (const std::exception& e) {
            throw std::runtime_error("stage '" + name + "' failed (config " +
                                     hash + "): " + e.what());
        }
    };

    MetricsReport report = stage("scenario", [&] { return run_scenario(cfg); });

    stage("report", [&] {
        fs::create_directories(cfg.out_dir);
        {
            std::ofstream out(fs::path(cfg.out_dir) / "report.json");
            out << report.to_json().dump(2) << "\n";
        }
        {
            std::ofstream out(fs::path(cfg.out_dir) / "report.md");
            out << emit_table(report);
        }
        {
            std::ofstream out(fs::path(cfg.out_dir) / "folds.csv");
            out << "key,task,rotation,U,U_M,U_F,L,P,MI\n";
            for (const auto& r : report.rows)
                for (int rot = 0; rot < kFoldRotations; ++rot)
                    out << r.key << "," << r.task << "," << rot << ","
                        << fmt(r.fold_U[rot]) << "," << fmt(r.fold_U_M[rot]) << ","
                        << fmt(r.fold_U_F[rot]) << "," << fmt(r.fold_L[rot]) << ","
                        << fmt(r.fold_P[rot]) << "," << fmt(r.fold_MI[rot]) << "\n";
        }
        return 0;
    });
}

}  // namespace emopriv::experiment
