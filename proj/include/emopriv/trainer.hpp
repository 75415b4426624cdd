#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "emopriv/data.hpp"
#include "emopriv/model.hpp"

namespace emopriv::train {

struct TrainConfig {
    int max_epochs = 50;
    int patience = 5;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double rmsprop_decay = 0.9;
    double rmsprop_epsilon = 1e-8;
    double chance_band = 0.05;  // adversary-UAR tolerance around 0.5
    std::vector<uint64_t> seeds = {1, 2, 3};

    void validate() const;
};

// Per-parameter squared-gradient accumulators, aligned with the param list.
struct OptimizerState {
    std::vector<Tensor> cache;
};

// cache <- decay*cache + (1-decay)*g^2; theta <- theta - lr*g/(sqrt(cache)+eps).
// Throws on non-finite gradients. Initializes the cache lazily to zeros.
void rmsprop_step(const std::vector<ad::ValuePtr>& params, OptimizerState& state,
                  double lr, double decay, double eps);

struct EpochRecord {
    double train_loss = 0.0;
    double val_emotion_loss = 0.0;
    double val_emotion_uar = 0.0;
    std::vector<double> val_adversary_uar;  // NaN for speaker heads on val
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;  // 0-based index of the lowest val emotion loss
    std::string stop_reason;

    std::string to_json_lines() const;
};

// Train/validation views over a corpus; partitions must be speaker-disjoint.
struct Dataset {
    const data::Corpus* corpus = nullptr;
    std::vector<size_t> train_idx;
    std::vector<size_t> val_idx;
    std::map<int, int> speaker_index;  // training speaker_id -> class index

    static Dataset from_plan(const data::Corpus& corpus,
                             const data::SplitPlan& plan);
};

// Inverse-frequency weights w_k = n / (K * n_k); frequency-weighted mean 1.
std::vector<double> inverse_frequency_weights(const std::vector<long>& counts);

struct LossWeights {
    std::vector<double> emotion;
    std::vector<double> gender;
    std::vector<double> speaker;
};

LossWeights compute_loss_weights(const model::ModelSpec& spec,
                                 const Dataset& data);

// Mean over the batch of emotion weighted-CE plus the adversary weighted-CE
// terms. Reversal happens inside the graph via the GRL, so this single scalar
// backpropagates the min-max objective in one sweep.
ad::ValuePtr joint_loss(const std::vector<const data::UtteranceSample*>& batch,
                        const model::ModelSpec& spec,
                        const model::ModelParams& params, const LossWeights& w,
                        const std::map<int, int>& speaker_index);

struct TrainResult {
    model::ModelParams params;
    TrainHistory history;
};

TrainResult train(const model::ModelSpec& spec, const Dataset& data,
                  const TrainConfig& cfg, uint64_t seed);

// Priv mode: discard candidates whose best-epoch gender-adversary UAR lies
// outside 0.5 +- chance_band, then pick lowest val emotion loss. Gen mode:
// lowest val emotion loss outright. Throws if every candidate is discarded.
size_t select_model(const std::vector<TrainResult>& candidates,
                    const model::ModelSpec& spec, const TrainConfig& cfg);

struct EnsembleResult {
    std::vector<TrainResult> runs;                // one per seed
    std::vector<std::vector<double>> mean_probs;  // per test sample
    std::vector<int> predictions;                 // argmax of mean_probs
};

EnsembleResult seed_ensemble(const model::ModelSpec& spec, const Dataset& data,
                             const TrainConfig& cfg,
                             const std::vector<size_t>& test_idx);

// The full hyperparameter grid for one setup; Gen omits the lambda axis.
std::vector<model::ModelSpec> enumerate_grid(model::Modality modality,
                                             model::Task task, model::Mode mode,
                                             model::AdvTarget target,
                                             int n_speakers);

// Priv rank: (val emotion UAR) - |val adversary UAR - 0.5|; Gen rank: val
// emotion UAR. Ties break to fewer parameters, then enumeration order.
model::ModelSpec grid_search(const std::vector<model::ModelSpec>& grid,
                             const Dataset& data, const TrainConfig& cfg,
                             uint64_t seed);

size_t parameter_count(const model::ModelParams& params);

}  // namespace emopriv::train
