#include "emopriv/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "emopriv/rng.hpp"
#include "emopriv/stats.hpp"

namespace emopriv::train {

using namespace emopriv::ad;
using model::AdvTarget;
using model::Mode;
using model::ModelParams;
using model::ModelSpec;

void TrainConfig::validate() const {
    if (max_epochs < 1 || patience < 1 || patience >= max_epochs)
        throw std::invalid_argument("TrainConfig: need 1 <= patience < max_epochs");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size >= 1");
    if (chance_band <= 0.0 || chance_band > 0.1)
        throw std::invalid_argument("TrainConfig: chance_band must lie in (0, 0.1]");
    if (seeds.empty()) throw std::invalid_argument("TrainConfig: need >= 1 seed");
}

void rmsprop_step(const std::vector<ValuePtr>& params, OptimizerState& state,
                  double lr, double decay, double eps) {
    if (state.cache.empty())
        for (const auto& p : params) state.cache.emplace_back(p->val.shape, 0.0);
    if (state.cache.size() != params.size())
        throw std::invalid_argument("rmsprop_step: state/params mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& cache = state.cache[i];
        Value& p = *params[i];
        for (size_t j = 0; j < p.val.size(); ++j) {
            const double g = p.grad.data[j];
            if (!std::isfinite(g))
                throw std::runtime_error("rmsprop_step: non-finite gradient");
            cache.data[j] = decay * cache.data[j] + (1.0 - decay) * g * g;
            p.val.data[j] -= lr * g / (std::sqrt(cache.data[j]) + eps);
        }
    }
}

std::string TrainHistory::to_json_lines() const {
    std::ostringstream out;
    for (size_t e = 0; e < epochs.size(); ++e) {
        out << "{\"epoch\":" << e << ",\"train_loss\":" << epochs[e].train_loss
            << ",\"val_emotion_loss\":" << epochs[e].val_emotion_loss
            << ",\"val_emotion_uar\":" << epochs[e].val_emotion_uar
            << ",\"val_adversary_uar\":[";
        for (size_t i = 0; i < epochs[e].val_adversary_uar.size(); ++i) {
            if (i) out << ",";
            const double v = epochs[e].val_adversary_uar[i];
            if (std::isnan(v)) out << "null";
            else out << v;
        }
        out << "],\"best\":" << (static_cast<int>(e) == best_epoch ? "true" : "false")
            << "}\n";
    }
    return out.str();
}

Dataset Dataset::from_plan(const data::Corpus& corpus,
                           const data::SplitPlan& plan) {
    Dataset d;
    d.corpus = &corpus;
    d.train_idx = plan.sample_indices(corpus, data::FoldRole::train);
    d.val_idx = plan.sample_indices(corpus, data::FoldRole::validation);
    std::set<int> train_speakers;
    for (size_t i : d.train_idx) train_speakers.insert(corpus[i].speaker_id);
    int next = 0;
    for (int spk : train_speakers) d.speaker_index[spk] = next++;
    return d;
}

std::vector<double> inverse_frequency_weights(const std::vector<long>& counts) {
    long n = 0;
    for (long c : counts) n += c;
    const double k = static_cast<double>(counts.size());
    std::vector<double> w(counts.size());
    for (size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] == 0)
            throw std::invalid_argument(
                "inverse_frequency_weights: empty class in training partition");
        w[i] = static_cast<double>(n) / (k * static_cast<double>(counts[i]));
    }
    return w;
}

LossWeights compute_loss_weights(const ModelSpec& spec, const Dataset& data) {
    std::vector<long> emo(3, 0), gen(2, 0);
    std::vector<long> spk(data.speaker_index.size(), 0);
    for (size_t i : data.train_idx) {
        const auto& s = (*data.corpus)[i];
        emo[static_cast<int>(s.emotion)]++;
        gen[static_cast<int>(s.gender)]++;
        spk[data.speaker_index.at(s.speaker_id)]++;
    }
    LossWeights w;
    w.emotion = inverse_frequency_weights(emo);
    bool need_gender = false, need_speaker = false;
    for (const auto& adv : spec.adversaries) {
        need_gender = need_gender || adv.target == AdvTarget::gender;
        need_speaker = need_speaker || adv.target == AdvTarget::speaker;
    }
    if (need_gender) w.gender = inverse_frequency_weights(gen);
    if (need_speaker) w.speaker = inverse_frequency_weights(spk);
    return w;
}

ValuePtr joint_loss(const std::vector<const data::UtteranceSample*>& batch,
                    const ModelSpec& spec, const ModelParams& params,
                    const LossWeights& w,
                    const std::map<int, int>& speaker_index) {
    if (batch.empty()) throw std::invalid_argument("joint_loss: empty batch");
    std::vector<ValuePtr> losses;
    for (const auto* sample : batch) {
        model::Forward fwd = model::forward(spec, params, *sample);
        ValuePtr loss = weighted_cross_entropy(
            fwd.emotion_logits, static_cast<size_t>(sample->emotion), w.emotion);
        for (size_t i = 0; i < spec.adversaries.size(); ++i) {
            const auto& adv = spec.adversaries[i];
            if (adv.target == AdvTarget::gender) {
                loss = add(loss, weighted_cross_entropy(
                                     fwd.adversary_logits[i],
                                     static_cast<size_t>(sample->gender), w.gender));
            } else {
                auto it = speaker_index.find(sample->speaker_id);
                if (it == speaker_index.end())
                    throw std::invalid_argument(
                        "joint_loss: sample speaker missing from training index");
                loss = add(loss, weighted_cross_entropy(fwd.adversary_logits[i],
                                                        it->second, w.speaker));
            }
        }
        losses.push_back(loss);
    }
    return mean_of(losses);
}

namespace {

struct ValMetrics {
    double emotion_loss = 0.0;
    double emotion_uar = 0.0;
    std::vector<double> adversary_uar;
};

ValMetrics validate_epoch(const ModelSpec& spec, const ModelParams& params,
                          const Dataset& data, const LossWeights& w) {
    ValMetrics m;
    std::vector<int> emo_pred, emo_true, gender_true;
    std::vector<std::vector<int>> adv_pred(spec.adversaries.size());
    double loss_sum = 0.0;
    for (size_t i : data.val_idx) {
        const auto& s = (*data.corpus)[i];
        model::Forward fwd = model::forward(spec, params, s);
        ValuePtr ce = weighted_cross_entropy(
            fwd.emotion_logits, static_cast<size_t>(s.emotion), w.emotion);
        loss_sum += ce->val.data[0];
        const auto probs = softmax(fwd.emotion_logits->val);
        emo_pred.push_back(static_cast<int>(
            std::max_element(probs.begin(), probs.end()) - probs.begin()));
        emo_true.push_back(static_cast<int>(s.emotion));
        gender_true.push_back(static_cast<int>(s.gender));
        for (size_t a = 0; a < spec.adversaries.size(); ++a) {
            const auto ap = softmax(fwd.adversary_logits[a]->val);
            adv_pred[a].push_back(static_cast<int>(
                std::max_element(ap.begin(), ap.end()) - ap.begin()));
        }
    }
    m.emotion_loss = loss_sum / static_cast<double>(data.val_idx.size());
    m.emotion_uar = stats::uar_present(emo_pred, emo_true, 3);
    for (size_t a = 0; a < spec.adversaries.size(); ++a) {
        if (spec.adversaries[a].target == AdvTarget::gender)
            m.adversary_uar.push_back(
                stats::uar_present(adv_pred[a], gender_true, 2));
        else
            // Validation speakers are outside the head's class set.
            m.adversary_uar.push_back(std::numeric_limits<double>::quiet_NaN());
    }
    return m;
}

}  // namespace

TrainResult train(const ModelSpec& spec, const Dataset& data,
                  const TrainConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (data.train_idx.empty() || data.val_idx.empty())
        throw std::invalid_argument("train: empty train or validation partition");
    {
        std::set<int> ts, vs;
        for (size_t i : data.train_idx) ts.insert((*data.corpus)[i].speaker_id);
        for (size_t i : data.val_idx) vs.insert((*data.corpus)[i].speaker_id);
        for (int s : vs)
            if (ts.count(s))
                throw std::invalid_argument(
                    "train: train/val partitions share speaker " + std::to_string(s));
    }

    TrainResult result;
    result.params = model::build_model(spec, seed);
    const LossWeights w = compute_loss_weights(spec, data);
    const auto params = result.params.all_params();
    OptimizerState opt;
    Rng shuffle_rng = Rng::derive(seed, "train_shuffle");

    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_snapshot;
    int epochs_since_best = 0;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::vector<size_t> order = data.train_idx;
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        size_t n_batches = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const size_t end = std::min(order.size(),
                                        start + static_cast<size_t>(cfg.batch_size));
            std::vector<const data::UtteranceSample*> batch;
            for (size_t i = start; i < end; ++i)
                batch.push_back(&(*data.corpus)[order[i]]);
            for (const auto& p : params) p->zero_grad();
            ValuePtr loss = joint_loss(batch, spec, result.params, w,
                                       data.speaker_index);
            backward(loss);
            rmsprop_step(params, opt, cfg.learning_rate, cfg.rmsprop_decay,
                         cfg.rmsprop_epsilon);
            loss_sum += loss->val.data[0];
            ++n_batches;
        }

        const ValMetrics vm = validate_epoch(spec, result.params, data, w);
        EpochRecord rec;
        rec.train_loss = loss_sum / static_cast<double>(n_batches);
        rec.val_emotion_loss = vm.emotion_loss;
        rec.val_emotion_uar = vm.emotion_uar;
        rec.val_adversary_uar = vm.adversary_uar;
        result.history.epochs.push_back(rec);

        if (vm.emotion_loss < best_loss) {
            best_loss = vm.emotion_loss;
            result.history.best_epoch = epoch;
            best_snapshot = result.params.snapshot();
            epochs_since_best = 0;
        } else if (++epochs_since_best >= cfg.patience) {
            result.history.stop_reason = "patience";
            break;
        }
    }
    if (result.history.stop_reason.empty())
        result.history.stop_reason = "max_epochs";
    result.params.restore(best_snapshot);
    return result;
}

size_t select_model(const std::vector<TrainResult>& candidates,
                    const ModelSpec& spec, const TrainConfig& cfg) {
    if (candidates.empty())
        throw std::invalid_argument("select_model: no candidates");

    auto gender_uar = [&](const TrainResult& c) {
        const auto& rec = c.history.epochs.at(c.history.best_epoch);
        for (size_t a = 0; a < spec.adversaries.size(); ++a)
            if (spec.adversaries[a].target == AdvTarget::gender)
                return rec.val_adversary_uar.at(a);
        return std::numeric_limits<double>::quiet_NaN();
    };

    size_t best = candidates.size();
    double best_loss = std::numeric_limits<double>::infinity();
    double nearest_dist = std::numeric_limits<double>::infinity();
    size_t nearest = 0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        const auto& rec = candidates[i].history.epochs.at(
            candidates[i].history.best_epoch);
        if (spec.mode == Mode::priv) {
            const double u = gender_uar(candidates[i]);
            if (!std::isnan(u)) {
                const double dist = std::fabs(u - 0.5);
                if (dist < nearest_dist) {
                    nearest_dist = dist;
                    nearest = i;
                }
                if (dist > cfg.chance_band) continue;
            }
        }
        if (rec.val_emotion_loss < best_loss) {
            best_loss = rec.val_emotion_loss;
            best = i;
        }
    }
    if (best == candidates.size())
        throw std::runtime_error(
            "select_model: no candidate within the chance band; nearest has "
            "adversary UAR distance " + std::to_string(nearest_dist) +
            " (candidate " + std::to_string(nearest) + ")");
    return best;
}

EnsembleResult seed_ensemble(const ModelSpec& spec, const Dataset& data,
                             const TrainConfig& cfg,
                             const std::vector<size_t>& test_idx) {
    cfg.validate();
    EnsembleResult res;
    for (uint64_t seed : cfg.seeds) {
        try {
            res.runs.push_back(train(spec, data, cfg, seed));
        } catch (const std::exception& e) {
            throw std::runtime_error("seed_ensemble: seed " +
                                     std::to_string(seed) + " failed: " + e.what());
        }
    }
    res.mean_probs.assign(test_idx.size(), std::vector<double>(3, 0.0));
    for (const auto& run : res.runs) {
        for (size_t i = 0; i < test_idx.size(); ++i) {
            const auto probs = model::predict(spec, run.params,
                                              (*data.corpus)[test_idx[i]], {});
            for (size_t c = 0; c < probs.size(); ++c)
                res.mean_probs[i][c] += probs[c] / res.runs.size();
        }
    }
    for (const auto& p : res.mean_probs)
        res.predictions.push_back(static_cast<int>(
            std::max_element(p.begin(), p.end()) - p.begin()));
    return res;
}

std::vector<ModelSpec> enumerate_grid(model::Modality modality, model::Task task,
                                      Mode mode, AdvTarget target,
                                      int n_speakers) {
    std::vector<ModelSpec> grid;
    const std::vector<double> lambdas =
        mode == Mode::priv ? std::vector<double>{0.3, 0.5, 0.75, 1.0}
                           : std::vector<double>{0.0};
    for (int cl : {3, 4})
        for (int cw : {2, 3})
            for (int ck : {32, 64, 128})
                for (int gl : {2, 3})
                    for (int gw : {32})
                        for (int dl : {1, 2})
                            for (int dw : {32, 64})
                                for (double lam : lambdas) {
                                    ModelSpec s;
                                    s.modality = modality;
                                    s.task = task;
                                    s.mode = mode;
                                    s.adversaries = {{target, lam}};
                                    s.conv_layers = cl;
                                    s.conv_width = cw;
                                    s.conv_kernels = ck;
                                    s.gru_layers = gl;
                                    s.gru_width = gw;
                                    s.dense_layers = dl;
                                    s.dense_width = dw;
                                    s.n_speakers = n_speakers;
                                    grid.push_back(s);
                                }
    return grid;
}

size_t parameter_count(const ModelParams& params) {
    size_t n = 0;
    for (const auto& p : params.all_params()) n += p->val.size();
    return n;
}

ModelSpec grid_search(const std::vector<ModelSpec>& grid, const Dataset& data,
                      const TrainConfig& cfg, uint64_t seed) {
    if (grid.empty()) throw std::invalid_argument("grid_search: empty grid");
    double best_rank = -std::numeric_limits<double>::infinity();
    size_t best_count = std::numeric_limits<size_t>::max();
    size_t best_i = 0;
    for (size_t i = 0; i < grid.size(); ++i) {
        TrainResult run = train(grid[i], data, cfg, seed);
        const auto& rec = run.history.epochs.at(run.history.best_epoch);
        double rank = rec.val_emotion_uar;
        if (grid[i].mode == Mode::priv) {
            for (size_t a = 0; a < grid[i].adversaries.size(); ++a) {
                const double u = rec.val_adversary_uar[a];
                if (!std::isnan(u)) rank -= std::fabs(u - 0.5);
            }
        }
        const size_t count = parameter_count(run.params);
        if (rank > best_rank || (rank == best_rank && count < best_count)) {
            best_rank = rank;
            best_count = count;
            best_i = i;
        }
    }
    return grid[best_i];
}

}  // namespace emopriv::train
