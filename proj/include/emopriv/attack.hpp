#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "emopriv/data.hpp"
#include "emopriv/model.hpp"

namespace emopriv::attack {

struct ProbeSpec {
    int layers = 2;  // paper grid: {2, 3, 4}
    int width = 32;  // paper grid: {32, 64}
};

inline std::vector<ProbeSpec> default_probe_grid() { return {{2, 32}}; }
inline std::vector<ProbeSpec> full_probe_grid() {
    std::vector<ProbeSpec> g;
    for (int l : {2, 3, 4})
        for (int w : {32, 64}) g.push_back({l, w});
    return g;
}

// Optimizer settings mirror the trainer defaults.
struct ProbeConfig {
    int max_epochs = 40;
    int patience = 5;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double rmsprop_decay = 0.9;
    double rmsprop_epsilon = 1e-8;
};

// Feedforward probe over frozen fixed-length representations.
struct AttackerProbe {
    model::Head head;
    ProbeSpec spec;
    size_t in_dim = 0;
    size_t n_classes = 2;
    double val_uar = 0.0;

    int predict_one(const std::vector<double>& rep) const;
    std::vector<int> predict(const std::vector<std::vector<double>>& reps) const;
};

// Trains every probe in the grid with RMSProp + cross-entropy on an 80/20
// split of the attacker's data and returns the one with the best val UAR.
AttackerProbe train_probe(const std::vector<std::vector<double>>& reps,
                          const std::vector<int>& labels, size_t n_classes,
                          const std::vector<ProbeSpec>& grid,
                          const ProbeConfig& cfg, uint64_t seed);

struct AttackResult {
    std::string attack;  // "gender" or "membership"
    double uar = 0.0;
    double metric = 0.0;  // P = 1 - UAR for gender; MI = UAR for membership
    bool flagged = false;  // P outside [0, 0.5]; reported raw, never clamped
    ProbeSpec probe;
    size_t n_eval = 0;
};

// Four-phase demographic privacy protocol: embed D1 and D2 with the frozen
// sub-network, train the probe on D2's (rep, gender) pairs, evaluate its UAR
// on D1. Returns P = 1 - UAR.
AttackResult privacy_metric(const model::ModelSpec& spec,
                            const model::ModelParams& params,
                            const data::Corpus& corpus,
                            const data::SplitPlan& plan,
                            const std::vector<ProbeSpec>& grid,
                            const ProbeConfig& cfg, uint64_t seed);

// Same protocol with explicit D1/D2 sample index sets.
AttackResult privacy_metric_on(const model::ModelSpec& spec,
                               const model::ModelParams& params,
                               const data::Corpus& corpus,
                               const std::vector<size_t>& d1_idx,
                               const std::vector<size_t>& d2_idx,
                               const std::vector<ProbeSpec>& grid,
                               const ProbeConfig& cfg, uint64_t seed);

// Membership identification: probe trained on D1 reps ('Yes'), held-out reps
// of selected s4 speakers ('Yes'), and non-selected s4 speakers ('No'), with
// one speaker per label reserved for probe validation; evaluated on s5.
// `training_utterances` is the main model's actual training-sample set and is
// checked against the MISplit.
AttackResult membership_attack(const model::ModelSpec& spec,
                               const model::ModelParams& params,
                               const data::Corpus& corpus,
                               const data::SplitPlan& plan,
                               const data::MISplit& mi,
                               const std::set<int>& training_utterances,
                               const std::vector<ProbeSpec>& grid,
                               const ProbeConfig& cfg, uint64_t seed);

// Leakage: UAR of the jointly trained (gradient-stopped) gender head on the
// given samples.
double leakage(const model::ModelSpec& spec, const model::ModelParams& params,
               const data::Corpus& corpus, const std::vector<size_t>& idx);

}  // namespace emopriv::attack
