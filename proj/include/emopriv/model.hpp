#pragma once

#include <string>
#include <vector>

#include "emopriv/autodiff.hpp"
#include "emopriv/data.hpp"

namespace emopriv::model {

enum class Modality { acoustic, lexical, multimodal };
enum class Task { activation, valence };
enum class Mode { gen, priv };
enum class AdvTarget { gender, speaker };
enum class GrlPlacement { post_concat, per_stream };

struct AdversarySpec {
    AdvTarget target = AdvTarget::gender;
    double lambda = 0.0;
};

struct ModelSpec {
    Modality modality = Modality::multimodal;
    Task task = Task::activation;
    Mode mode = Mode::gen;
    std::vector<AdversarySpec> adversaries;  // may be empty (no heads at all)
    GrlPlacement placement = GrlPlacement::post_concat;

    int conv_layers = 3;
    int conv_width = 2;
    int conv_kernels = 32;
    int gru_layers = 2;
    int gru_width = 32;
    int dense_layers = 1;
    int dense_width = 32;
    int n_speakers = 0;  // required when a speaker adversary is present

    void validate() const;
    size_t rep_dim() const {
        return modality == Modality::multimodal ? 2 * gru_width : gru_width;
    }
    // Minimum acoustic sequence length the conv stack accepts.
    size_t receptive_field() const {
        return static_cast<size_t>(conv_layers * (conv_width - 1) + 1);
    }
    size_t head_classes(const AdversarySpec& adv) const {
        return adv.target == AdvTarget::gender ? 2
                                               : static_cast<size_t>(n_speakers);
    }
};

struct DenseLayer {
    ad::ValuePtr W, b;
};

// Hidden relu layers followed by a linear output layer.
struct Head {
    std::vector<DenseLayer> hidden;
    DenseLayer out;
    std::vector<ad::ValuePtr> params() const;
};

struct ModelParams {
    std::vector<ad::ValuePtr> conv_kernels;       // acoustic stream
    std::vector<ad::GruParams> acoustic_gru;
    std::vector<ad::GruParams> lexical_gru;
    Head emotion;
    std::vector<Head> adversaries;  // aligned with spec.adversaries

    std::vector<ad::ValuePtr> embedding_params() const;  // theta_M
    std::vector<ad::ValuePtr> all_params() const;
    std::vector<std::pair<std::string, ad::ValuePtr>> named_tensors() const;

    std::vector<Tensor> snapshot() const;
    void restore(const std::vector<Tensor>& snap);
};

ModelParams build_model(const ModelSpec& spec, uint64_t seed);

struct Forward {
    ad::ValuePtr representation;  // h, h_a, or h_l
    ad::ValuePtr emotion_logits;
    std::vector<ad::ValuePtr> adversary_logits;
};

// Builds the graph for one sample. Adversary branches pass through grl()
// per the spec's placement; the emotion head consumes the raw representation.
Forward forward(const ModelSpec& spec, const ModelParams& params,
                const data::UtteranceSample& sample);

std::vector<double> embed(const ModelSpec& spec, const ModelParams& params,
                          const data::UtteranceSample& sample);

struct HeadRef {
    bool emotion = true;
    size_t adversary_index = 0;
};

std::vector<double> predict(const ModelSpec& spec, const ModelParams& params,
                            const data::UtteranceSample& sample, HeadRef head);

// Dense stack over a fixed-length vector (shared by heads and attacker probes).
ad::ValuePtr run_head(const Head& head, const ad::ValuePtr& input);
Head init_head(size_t in_dim, int layers, int width, size_t n_out, Rng& rng);

// Checkpoint directory: manifest.json + one flat little-endian float64 file
// per tensor, row-major.
void save_checkpoint(const ModelSpec& spec, const ModelParams& params,
                     const std::string& dir);
std::pair<ModelSpec, ModelParams> load_checkpoint(const std::string& dir);

std::string to_string(Modality m);
std::string to_string(Task t);
std::string to_string(Mode m);
Modality modality_from_string(const std::string& s);
Task task_from_string(const std::string& s);
Mode mode_from_string(const std::string& s);

}  // namespace emopriv::model
