#include "emopriv/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "emopriv/rng.hpp"
#include "emopriv/stats.hpp"
#include "emopriv/trainer.hpp"

namespace emopriv::attack {

using namespace emopriv::ad;
using model::AdvTarget;

int AttackerProbe::predict_one(const std::vector<double>& rep) const {
    ValuePtr logits = model::run_head(head, leaf(rep));
    const auto& z = logits->val.data;
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

std::vector<int> AttackerProbe::predict(
    const std::vector<std::vector<double>>& reps) const {
    std::vector<int> out;
    out.reserve(reps.size());
    for (const auto& r : reps) out.push_back(predict_one(r));
    return out;
}

namespace {

// UAR that tolerates absent predicted classes but requires every true class.
double probe_uar(const std::vector<int>& preds, const std::vector<int>& labels,
                 size_t k) {
    return stats::uar(preds, labels, k);
}

AttackerProbe train_one(const std::vector<std::vector<double>>& train_reps,
                        const std::vector<int>& train_labels,
                        const std::vector<std::vector<double>>& val_reps,
                        const std::vector<int>& val_labels, size_t n_classes,
                        ProbeSpec pspec, const ProbeConfig& cfg, uint64_t seed) {
    AttackerProbe probe;
    probe.spec = pspec;
    probe.in_dim = train_reps[0].size();
    probe.n_classes = n_classes;
    Rng rng = Rng::derive(seed, "probe_init");
    probe.head = model::init_head(probe.in_dim, pspec.layers, pspec.width,
                                  n_classes, rng);
    const std::vector<double> weights(n_classes, 1.0);
    const auto params = probe.head.params();
    train::OptimizerState opt;
    Rng shuffle_rng = Rng::derive(seed, "probe_shuffle");

    double best_uar = -1.0;
    std::vector<Tensor> best_snapshot;
    int since_best = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::vector<size_t> order(train_reps.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(),
                                        start + static_cast<size_t>(cfg.batch_size));
            std::vector<ValuePtr> losses;
            for (const auto& p : params) p->zero_grad();
            for (size_t i = start; i < end; ++i) {
                ValuePtr logits =
                    model::run_head(probe.head, leaf(train_reps[order[i]]));
                losses.push_back(weighted_cross_entropy(
                    logits, static_cast<size_t>(train_labels[order[i]]), weights));
            }
            ValuePtr loss = mean_of(losses);
            backward(loss);
            train::rmsprop_step(params, opt, cfg.learning_rate, cfg.rmsprop_decay,
                                cfg.rmsprop_epsilon);
        }
        const double v = probe_uar(probe.predict(val_reps), val_labels, n_classes);
        if (v > best_uar) {
            best_uar = v;
            best_snapshot.clear();
            for (const auto& p : params) best_snapshot.push_back(p->val);
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    for (size_t i = 0; i < params.size(); ++i) params[i]->val = best_snapshot[i];
    probe.val_uar = best_uar;
    return probe;
}

}  // namespace

AttackerProbe train_probe(const std::vector<std::vector<double>>& reps,
                          const std::vector<int>& labels, size_t n_classes,
                          const std::vector<ProbeSpec>& grid,
                          const ProbeConfig& cfg, uint64_t seed) {
    if (reps.size() != labels.size() || reps.empty())
        throw std::invalid_argument("train_probe: reps/labels mismatch");
    const size_t dim = reps[0].size();
    for (const auto& r : reps)
        if (r.size() != dim)
            throw std::invalid_argument("train_probe: ragged representation dims");
    {
        std::set<int> present(labels.begin(), labels.end());
        if (present.size() < 2)
            throw std::invalid_argument("train_probe: single-class labels");
    }
    if (grid.empty()) throw std::invalid_argument("train_probe: empty probe grid");

    // 80/20 split of the attacker's own data.
    std::vector<size_t> order(reps.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng split_rng = Rng::derive(seed, "probe_split");
    split_rng.shuffle(order);
    const size_t n_train = std::max<size_t>(1, (order.size() * 8) / 10);
    std::vector<std::vector<double>> tr, va;
    std::vector<int> trl, val;
    for (size_t i = 0; i < order.size(); ++i) {
        if (i < n_train) {
            tr.push_back(reps[order[i]]);
            trl.push_back(labels[order[i]]);
        } else {
            va.push_back(reps[order[i]]);
            val.push_back(labels[order[i]]);
        }
    }
    // A split that dropped a class from either side defeats early stopping on
    // UAR; fall back to using all data for both when that happens.
    auto has_all = [&](const std::vector<int>& l) {
        std::set<int> s(l.begin(), l.end());
        return s.size() == static_cast<size_t>(n_classes);
    };
    if (va.empty() || !has_all(trl) || !has_all(val)) {
        tr = reps; trl = labels; va = reps; val = labels;
    }

    AttackerProbe best;
    best.val_uar = -1.0;
    for (const auto& pspec : grid) {
        AttackerProbe p = train_one(tr, trl, va, val, n_classes, pspec, cfg, seed);
        if (p.val_uar > best.val_uar) best = std::move(p);
    }
    return best;
}

AttackResult privacy_metric(const model::ModelSpec& spec,
                            const model::ModelParams& params,
                            const data::Corpus& corpus,
                            const data::SplitPlan& plan,
                            const std::vector<ProbeSpec>& grid,
                            const ProbeConfig& cfg, uint64_t seed) {
    const auto d1 = plan.sample_indices(corpus, data::FoldRole::train);
    const auto d2 = plan.sample_indices(corpus, data::FoldRole::attacker);
    if (d1.empty() || d2.empty())
        throw std::invalid_argument("privacy_metric: plan lacks train/attacker roles");
    return privacy_metric_on(spec, params, corpus, d1, d2, grid, cfg, seed);
}

AttackResult privacy_metric_on(const model::ModelSpec& spec,
                               const model::ModelParams& params,
                               const data::Corpus& corpus,
                               const std::vector<size_t>& d1,
                               const std::vector<size_t>& d2,
                               const std::vector<ProbeSpec>& grid,
                               const ProbeConfig& cfg, uint64_t seed) {
    {
        std::set<int> s1, s2;
        for (size_t i : d1) s1.insert(corpus[i].speaker_id);
        for (size_t i : d2) s2.insert(corpus[i].speaker_id);
        for (int s : s2)
            if (s1.count(s))
                throw std::invalid_argument(
                    "privacy_metric: D1 and D2 share speaker " + std::to_string(s));
    }

    std::vector<std::vector<double>> d2_reps;
    std::vector<int> d2_labels;
    for (size_t i : d2) {
        d2_reps.push_back(model::embed(spec, params, corpus[i]));
        d2_labels.push_back(static_cast<int>(corpus[i].gender));
    }

    std::vector<int> d1_labels;
    for (size_t i : d1) d1_labels.push_back(static_cast<int>(corpus[i].gender));

    // A fold that happens to hold a single gender cannot support the attack;
    // report NaN (flagged) rather than failing the whole run.
    const auto single_class = [](const std::vector<int>& v) {
        return std::set<int>(v.begin(), v.end()).size() < 2;
    };
    if (single_class(d2_labels) || single_class(d1_labels)) {
        AttackResult res;
        res.attack = "gender";
        res.uar = std::numeric_limits<double>::quiet_NaN();
        res.metric = res.uar;
        res.flagged = true;
        res.n_eval = d1.size();
        return res;
    }

    AttackerProbe probe = train_probe(d2_reps, d2_labels, 2, grid, cfg, seed);

    std::vector<std::vector<double>> d1_reps;
    for (size_t i : d1)
        d1_reps.push_back(model::embed(spec, params, corpus[i]));
    AttackResult res;
    res.attack = "gender";
    res.uar = stats::uar(probe.predict(d1_reps), d1_labels, 2);
    res.metric = 1.0 - res.uar;
    res.flagged = res.metric < 0.0 || res.metric > 0.5;
    res.probe = probe.spec;
    res.n_eval = d1.size();
    return res;
}

AttackResult membership_attack(const model::ModelSpec& spec,
                               const model::ModelParams& params,
                               const data::Corpus& corpus,
                               const data::SplitPlan& plan,
                               const data::MISplit& mi,
                               const std::set<int>& training_utterances,
                               const std::vector<ProbeSpec>& grid,
                               const ProbeConfig& cfg, uint64_t seed) {
    // The MISplit must agree with what the model actually trained on.
    for (const auto& [spk, moved] : mi.moved_utterances)
        for (int u : moved)
            if (!training_utterances.count(u))
                throw std::invalid_argument(
                    "membership_attack: moved utterance " + std::to_string(u) +
                    " missing from the training set");
    for (const auto& [spk, held] : mi.held_out_utterances)
        for (int u : held)
            if (training_utterances.count(u))
                throw std::invalid_argument(
                    "membership_attack: held-out utterance " + std::to_string(u) +
                    " found in the training set");

    std::map<int, const data::UtteranceSample*> by_utt;
    std::map<int, std::vector<const data::UtteranceSample*>> by_speaker;
    for (const auto& s : corpus) {
        by_utt[s.utterance_id] = &s;
        by_speaker[s.speaker_id].push_back(&s);
    }
    auto rep_of = [&](const data::UtteranceSample& s) {
        return model::embed(spec, params, s);
    };

    // Probe training pools. Label 1 = member ('Yes'), 0 = non-member.
    std::vector<std::vector<double>> yes_reps, no_reps, val_reps;
    std::vector<int> val_labels;
    for (size_t i : plan.sample_indices(corpus, data::FoldRole::train))
        yes_reps.push_back(rep_of(corpus[i]));
    for (int spk : plan.speakers_in(data::FoldRole::mi_s4)) {
        const bool selected = mi.membership_label.at(spk);
        const bool reserved =
            spk == mi.validation_yes_speaker || spk == mi.validation_no_speaker;
        if (selected) {
            for (int u : mi.held_out_utterances.at(spk)) {
                if (reserved) {
                    val_reps.push_back(rep_of(*by_utt.at(u)));
                    val_labels.push_back(1);
                } else {
                    yes_reps.push_back(rep_of(*by_utt.at(u)));
                }
            }
        } else {
            for (const auto* s : by_speaker.at(spk)) {
                if (reserved) {
                    val_reps.push_back(rep_of(*s));
                    val_labels.push_back(0);
                } else {
                    no_reps.push_back(rep_of(*s));
                }
            }
        }
    }
    if (no_reps.empty())
        throw std::invalid_argument("membership_attack: no non-member training pool");

    // Cap 'Yes' to the 'No' pool size by seeded subsampling.
    Rng rng = Rng::derive(seed, "mi_balance");
    rng.shuffle(yes_reps);
    if (yes_reps.size() > no_reps.size()) yes_reps.resize(no_reps.size());

    std::vector<std::vector<double>> train_reps;
    std::vector<int> train_labels;
    for (auto& r : yes_reps) { train_reps.push_back(std::move(r)); train_labels.push_back(1); }
    for (auto& r : no_reps) { train_reps.push_back(std::move(r)); train_labels.push_back(0); }

    // Train with the reserved speakers as the fixed validation split.
    AttackerProbe best;
    best.val_uar = -1.0;
    for (const auto& pspec : grid) {
        // Grid selection uses the reserved speakers as the held-out split.
        AttackerProbe p = train_probe(train_reps, train_labels, 2, {pspec}, cfg, seed);
        const double v = stats::uar(p.predict(val_reps), val_labels, 2);
        p.val_uar = v;
        if (v > best.val_uar) best = std::move(p);
    }

    // Evaluate on s5: held-out samples of selected speakers are members.
    std::vector<std::vector<double>> eval_reps;
    std::vector<int> eval_labels;
    for (int spk : plan.speakers_in(data::FoldRole::mi_s5)) {
        const bool selected = mi.membership_label.at(spk);
        if (selected) {
            for (int u : mi.held_out_utterances.at(spk)) {
                eval_reps.push_back(rep_of(*by_utt.at(u)));
                eval_labels.push_back(1);
            }
        } else {
            for (const auto* s : by_speaker.at(spk)) {
                eval_reps.push_back(rep_of(*s));
                eval_labels.push_back(0);
            }
        }
    }
    AttackResult res;
    res.attack = "membership";
    res.uar = stats::uar(best.predict(eval_reps), eval_labels, 2);
    res.metric = res.uar;
    res.probe = best.spec;
    res.n_eval = eval_reps.size();
    return res;
}

double leakage(const model::ModelSpec& spec, const model::ModelParams& params,
               const data::Corpus& corpus, const std::vector<size_t>& idx) {
    size_t gender_head = spec.adversaries.size();
    for (size_t i = 0; i < spec.adversaries.size(); ++i)
        if (spec.adversaries[i].target == AdvTarget::gender) gender_head = i;
    if (gender_head == spec.adversaries.size())
        throw std::invalid_argument("leakage: model has no gender head");
    std::vector<int> preds, labels;
    for (size_t i : idx) {
        const auto probs = model::predict(spec, params, corpus[i],
                                          {false, gender_head});
        preds.push_back(static_cast<int>(
            std::max_element(probs.begin(), probs.end()) - probs.begin()));
        labels.push_back(static_cast<int>(corpus[i].gender));
    }
    // NaN when one gender is absent from the evaluation fold.
    return stats::uar_present(preds, labels, 2);
}

}  // namespace emopriv::attack
