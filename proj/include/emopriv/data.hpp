#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "emopriv/tensor.hpp"

namespace emopriv::data {

enum class Emotion { low = 0, mid = 1, high = 2 };
enum class Gender { male = 0, female = 1 };
enum class RatingScale { pt5, pt7, pt9 };

struct UtteranceSample {
    Tensor acoustic;  // [T_a x 40]
    Tensor lexical;   // [T_l x 300]
    Emotion emotion = Emotion::low;
    Gender gender = Gender::male;
    int speaker_id = 0;
    int utterance_id = 0;
    double mean_rating = 0.0;  // latent rating the emotion label was binned from
};

using Corpus = std::vector<UtteranceSample>;

inline constexpr size_t kAcousticDim = 40;
inline constexpr size_t kLexicalDim = 300;

struct GenConfig {
    int n_speakers = 20;  // must be even, genders balanced
    int utterances_per_speaker = 20;
    double gender_signal_acoustic = 0.5;
    double gender_signal_lexical = 0.5;
    double emotion_signal = 0.7;
    double speaker_variance = 0.3;
    RatingScale rating_scale = RatingScale::pt9;
    int seq_len_min = 5;  // both ends within [3, 25]
    int seq_len_max = 12;
    uint64_t seed = 1;

    void validate() const;
};

Emotion bin_rating(double mean_rating, RatingScale scale);

Corpus generate_corpus(const GenConfig& cfg);

// Per speaker, per acoustic dimension: mean 0, std 1 across all of that
// speaker's frames. Zero-variance dimensions are centered, scale left at 1,
// and reported in `flagged` as (speaker_id, dim) when provided.
Corpus znorm_by_speaker(const Corpus& corpus,
                        std::vector<std::pair<int, size_t>>* flagged = nullptr);

enum class FoldRole { train, validation, attacker, mi_s4, mi_s5 };

struct SplitPlan {
    int k = 5;
    std::map<int, int> fold_of_speaker;   // speaker_id -> fold in [1, k]
    std::map<int, FoldRole> role_of_fold; // fold -> role

    std::vector<int> speakers_in(FoldRole role) const;
    std::vector<size_t> sample_indices(const Corpus& corpus, FoldRole role) const;
};

// Shuffle speakers by seed, deal round-robin into k folds. Roles default to
// folds 1..3 train, 4 validation, 5 attacker; MI runs reassign 4/5.
SplitPlan make_folds(const Corpus& corpus, int k, uint64_t seed);

struct MISplit {
    // Per s4/s5 speaker: Yes means some of the speaker's samples were moved
    // into the training set.
    std::map<int, bool> membership_label;
    std::set<int> selected_speakers;
    std::map<int, std::vector<int>> moved_utterances;     // speaker -> utterance ids
    std::map<int, std::vector<int>> held_out_utterances;  // speaker -> utterance ids
    int validation_yes_speaker = -1;  // reserved from s4
    int validation_no_speaker = -1;
};

MISplit make_mi_splits(const Corpus& corpus, const SplitPlan& plan,
                       double select_fraction, double move_fraction,
                       uint64_t seed);

// Directory layout: manifest.json plus one flat little-endian float32 file
// per utterance per modality, row-major.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace emopriv::data
