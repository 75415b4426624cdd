#include "emopriv/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "emopriv/rng.hpp"

namespace emopriv::data {

namespace fs = std::filesystem;
using nlohmann::json;

void GenConfig::validate() const {
    if (n_speakers < 2 || n_speakers % 2 != 0)
        throw std::invalid_argument("GenConfig: n_speakers must be even and >= 2");
    if (utterances_per_speaker < 1)
        throw std::invalid_argument("GenConfig: utterances_per_speaker must be >= 1");
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(gender_signal_acoustic) || !in01(gender_signal_lexical) ||
        !in01(emotion_signal))
        throw std::invalid_argument("GenConfig: signal strengths must lie in [0,1]");
    if (speaker_variance < 0)
        throw std::invalid_argument("GenConfig: speaker_variance must be >= 0");
    if (seq_len_min < 3 || seq_len_max > 25 || seq_len_min > seq_len_max)
        throw std::invalid_argument("GenConfig: seq_len_range must be within [3,25]");
}

namespace {

struct ScaleBounds {
    double lo, hi;       // valid rating range
    double low_hi;       // low: [lo, low_hi]
    double mid_hi;       // mid: (low_hi, mid_hi]; high: (mid_hi, hi]
};

ScaleBounds bounds_of(RatingScale s) {
    switch (s) {
        case RatingScale::pt9: return {1.0, 9.0, 4.5, 5.5};
        case RatingScale::pt5: return {1.0, 5.0, 2.75, 3.25};
        case RatingScale::pt7: return {1.0, 7.0, 3.75, 4.25};
    }
    throw std::logic_error("bounds_of: bad scale");
}

std::vector<double> unit_direction(size_t dim, Rng& rng) {
    std::vector<double> v(dim);
    double norm = 0.0;
    for (double& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

}  // namespace

Emotion bin_rating(double mean_rating, RatingScale scale) {
    const ScaleBounds b = bounds_of(scale);
    if (mean_rating < b.lo || mean_rating > b.hi)
        throw std::domain_error("bin_rating: rating outside scale range");
    if (mean_rating <= b.low_hi) return Emotion::low;
    if (mean_rating <= b.mid_hi) return Emotion::mid;
    return Emotion::high;
}

Corpus generate_corpus(const GenConfig& cfg) {
    cfg.validate();
    Rng rng = Rng::derive(cfg.seed, "generate_corpus");

    const auto g_a = unit_direction(kAcousticDim, rng);
    const auto e_a = unit_direction(kAcousticDim, rng);
    const auto g_l = unit_direction(kLexicalDim, rng);
    const auto e_l = unit_direction(kLexicalDim, rng);

    const ScaleBounds b = bounds_of(cfg.rating_scale);
    const double mid_point = 0.5 * (b.lo + b.hi);
    const double half_width = 0.5 * (b.hi - b.lo);

    // Per-speaker offsets planted so speaker identity is recoverable from
    // the features when speaker_variance is large.
    std::vector<std::vector<double>> spk_off_a(cfg.n_speakers),
        spk_off_l(cfg.n_speakers);
    for (int s = 0; s < cfg.n_speakers; ++s) {
        spk_off_a[s].resize(kAcousticDim);
        for (double& v : spk_off_a[s]) v = cfg.speaker_variance * rng.normal();
        spk_off_l[s].resize(kLexicalDim);
        for (double& v : spk_off_l[s]) v = cfg.speaker_variance * rng.normal();
    }

    Corpus corpus;
    corpus.reserve(static_cast<size_t>(cfg.n_speakers) * cfg.utterances_per_speaker);
    int utt_id = 0;
    for (int s = 0; s < cfg.n_speakers; ++s) {
        const Gender gender = (s % 2 == 0) ? Gender::male : Gender::female;
        const double gsign = (gender == Gender::male) ? 1.0 : -1.0;
        for (int u = 0; u < cfg.utterances_per_speaker; ++u) {
            // Draw the class first (balanced marginals), then a latent rating
            // inside that class's interval so bin_rating round-trips.
            const int cls = static_cast<int>(rng.uniform_index(3));
            double lo, hi;
            if (cls == 0) { lo = b.lo; hi = b.low_hi; }
            else if (cls == 1) { lo = std::nextafter(b.low_hi, b.hi); hi = b.mid_hi; }
            else { lo = std::nextafter(b.mid_hi, b.hi); hi = b.hi; }
            const double rating = rng.uniform(lo, hi);
            const double e_val = (rating - mid_point) / half_width;  // ~[-1, 1]

            UtteranceSample smp;
            smp.emotion = static_cast<Emotion>(cls);
            smp.gender = gender;
            smp.speaker_id = s;
            smp.utterance_id = utt_id++;
            smp.mean_rating = rating;

            const int ta = rng.uniform_int(cfg.seq_len_min, cfg.seq_len_max);
            smp.acoustic = Tensor({static_cast<size_t>(ta), kAcousticDim});
            for (int t = 0; t < ta; ++t)
                for (size_t d = 0; d < kAcousticDim; ++d)
                    smp.acoustic.at2(t, d) =
                        rng.normal() + spk_off_a[s][d] +
                        gsign * cfg.gender_signal_acoustic * g_a[d] +
                        e_val * cfg.emotion_signal * e_a[d];

            const int tl = rng.uniform_int(cfg.seq_len_min, cfg.seq_len_max);
            smp.lexical = Tensor({static_cast<size_t>(tl), kLexicalDim});
            for (int t = 0; t < tl; ++t)
                for (size_t d = 0; d < kLexicalDim; ++d)
                    smp.lexical.at2(t, d) =
                        rng.normal() + spk_off_l[s][d] +
                        gsign * cfg.gender_signal_lexical * g_l[d] +
                        e_val * cfg.emotion_signal * e_l[d];

            corpus.push_back(std::move(smp));
        }
    }
    return corpus;
}

Corpus znorm_by_speaker(const Corpus& corpus,
                        std::vector<std::pair<int, size_t>>* flagged) {
    Corpus out = corpus;
    std::map<int, std::vector<size_t>> by_speaker;
    for (size_t i = 0; i < out.size(); ++i)
        by_speaker[out[i].speaker_id].push_back(i);

    for (auto& [spk, idxs] : by_speaker) {
        size_t n_frames = 0;
        for (size_t i : idxs) n_frames += out[i].acoustic.rows();
        if (n_frames < 2)
            throw std::invalid_argument("znorm_by_speaker: speaker has < 2 frames");
        std::vector<double> mean(kAcousticDim, 0.0), var(kAcousticDim, 0.0);
        for (size_t i : idxs)
            for (size_t t = 0; t < out[i].acoustic.rows(); ++t)
                for (size_t d = 0; d < kAcousticDim; ++d)
                    mean[d] += out[i].acoustic.at2(t, d);
        for (double& m : mean) m /= static_cast<double>(n_frames);
        for (size_t i : idxs)
            for (size_t t = 0; t < out[i].acoustic.rows(); ++t)
                for (size_t d = 0; d < kAcousticDim; ++d) {
                    const double c = out[i].acoustic.at2(t, d) - mean[d];
                    var[d] += c * c;
                }
        for (size_t d = 0; d < kAcousticDim; ++d) {
            var[d] /= static_cast<double>(n_frames);
            if (var[d] < 1e-24) {
                if (flagged) flagged->emplace_back(spk, d);
                var[d] = 1.0;  // center only
            }
        }
        for (size_t i : idxs)
            for (size_t t = 0; t < out[i].acoustic.rows(); ++t)
                for (size_t d = 0; d < kAcousticDim; ++d)
                    out[i].acoustic.at2(t, d) =
                        (out[i].acoustic.at2(t, d) - mean[d]) / std::sqrt(var[d]);
    }
    return out;
}

std::vector<int> SplitPlan::speakers_in(FoldRole role) const {
    std::vector<int> out;
    for (const auto& [spk, fold] : fold_of_speaker) {
        auto it = role_of_fold.find(fold);
        if (it != role_of_fold.end() && it->second == role) out.push_back(spk);
    }
    return out;
}

std::vector<size_t> SplitPlan::sample_indices(const Corpus& corpus,
                                              FoldRole role) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < corpus.size(); ++i) {
        auto fit = fold_of_speaker.find(corpus[i].speaker_id);
        if (fit == fold_of_speaker.end()) continue;
        auto rit = role_of_fold.find(fit->second);
        if (rit != role_of_fold.end() && rit->second == role) out.push_back(i);
    }
    return out;
}

SplitPlan make_folds(const Corpus& corpus, int k, uint64_t seed) {
    std::set<int> speaker_set;
    for (const auto& s : corpus) speaker_set.insert(s.speaker_id);
    std::vector<int> speakers(speaker_set.begin(), speaker_set.end());
    if (static_cast<int>(speakers.size()) < k)
        throw std::invalid_argument("make_folds: fewer speakers than folds");

    Rng rng = Rng::derive(seed, "make_folds");
    rng.shuffle(speakers);

    SplitPlan plan;
    plan.k = k;
    for (size_t i = 0; i < speakers.size(); ++i)
        plan.fold_of_speaker[speakers[i]] = static_cast<int>(i % k) + 1;
    for (int f = 1; f <= k; ++f) {
        if (f <= k - 2) plan.role_of_fold[f] = FoldRole::train;
        else if (f == k - 1) plan.role_of_fold[f] = FoldRole::validation;
        else plan.role_of_fold[f] = FoldRole::attacker;
    }
    return plan;
}

MISplit make_mi_splits(const Corpus& corpus, const SplitPlan& plan,
                       double select_fraction, double move_fraction,
                       uint64_t seed) {
    Rng rng = Rng::derive(seed, "make_mi_splits");
    MISplit mi;
    for (FoldRole role : {FoldRole::mi_s4, FoldRole::mi_s5}) {
        std::vector<int> speakers = plan.speakers_in(role);
        if (role == FoldRole::mi_s4 && speakers.size() < 4)
            throw std::invalid_argument(
                "make_mi_splits: s4 needs >= 4 speakers to reserve validation "
                "speakers per label");
        if (speakers.empty())
            throw std::invalid_argument("make_mi_splits: plan lacks s4/s5 roles");
        rng.shuffle(speakers);
        const size_t n_sel = static_cast<size_t>(
            std::ceil(select_fraction * static_cast<double>(speakers.size())));
        for (size_t i = 0; i < speakers.size(); ++i) {
            const int spk = speakers[i];
            const bool selected = i < n_sel;
            mi.membership_label[spk] = selected;
            if (!selected) continue;
            mi.selected_speakers.insert(spk);
            std::vector<int> utts;
            for (const auto& s : corpus)
                if (s.speaker_id == spk) utts.push_back(s.utterance_id);
            rng.shuffle(utts);
            const size_t n_move = static_cast<size_t>(
                std::floor(move_fraction * static_cast<double>(utts.size())));
            mi.moved_utterances[spk].assign(utts.begin(), utts.begin() + n_move);
            mi.held_out_utterances[spk].assign(utts.begin() + n_move, utts.end());
            std::sort(mi.moved_utterances[spk].begin(), mi.moved_utterances[spk].end());
            std::sort(mi.held_out_utterances[spk].begin(),
                      mi.held_out_utterances[spk].end());
        }
        if (role == FoldRole::mi_s4) {
            // One speaker per membership label reserved for probe validation.
            for (int spk : speakers) {
                if (mi.membership_label[spk] && mi.validation_yes_speaker < 0)
                    mi.validation_yes_speaker = spk;
                if (!mi.membership_label[spk] && mi.validation_no_speaker < 0)
                    mi.validation_no_speaker = spk;
            }
            if (mi.validation_yes_speaker < 0 || mi.validation_no_speaker < 0)
                throw std::invalid_argument(
                    "make_mi_splits: cannot reserve one validation speaker per label");
        }
    }
    return mi;
}

namespace {

void write_f32(const fs::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_corpus: cannot open " + path.string());
    for (double v : t.data) {
        const float f = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        const unsigned char le[4] = {
            static_cast<unsigned char>(bits & 0xff),
            static_cast<unsigned char>((bits >> 8) & 0xff),
            static_cast<unsigned char>((bits >> 16) & 0xff),
            static_cast<unsigned char>((bits >> 24) & 0xff)};
        out.write(reinterpret_cast<const char*>(le), 4);
    }
}

Tensor read_f32(const fs::path& path, std::vector<size_t> shape) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_corpus: cannot open " + path.string());
    Tensor t(std::move(shape));
    for (double& v : t.data) {
        unsigned char le[4];
        if (!in.read(reinterpret_cast<char*>(le), 4))
            throw std::runtime_error("load_corpus: truncated file " + path.string());
        uint32_t bits = static_cast<uint32_t>(le[0]) |
                        (static_cast<uint32_t>(le[1]) << 8) |
                        (static_cast<uint32_t>(le[2]) << 16) |
                        (static_cast<uint32_t>(le[3]) << 24);
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<double>(f);
    }
    return t;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "emopriv-corpus-v1";
    json utts = json::array();
    for (const auto& s : corpus) {
        const std::string base = "u" + std::to_string(s.utterance_id);
        json u;
        u["utterance_id"] = s.utterance_id;
        u["speaker_id"] = s.speaker_id;
        u["gender"] = s.gender == Gender::male ? "M" : "F";
        u["emotion"] = static_cast<int>(s.emotion);
        u["mean_rating"] = s.mean_rating;
        u["acoustic"] = {{"file", base + "_a.f32"},
                         {"shape", {s.acoustic.rows(), s.acoustic.cols()}}};
        u["lexical"] = {{"file", base + "_l.f32"},
                        {"shape", {s.lexical.rows(), s.lexical.cols()}}};
        utts.push_back(u);
        write_f32(fs::path(dir) / (base + "_a.f32"), s.acoustic);
        write_f32(fs::path(dir) / (base + "_l.f32"), s.lexical);
    }
    manifest["utterances"] = utts;
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(2) << "\n";
}

Corpus load_corpus(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw std::runtime_error("load_corpus: missing manifest.json in " + dir);
    json manifest = json::parse(in);
    Corpus corpus;
    for (const auto& u : manifest.at("utterances")) {
        UtteranceSample s;
        s.utterance_id = u.at("utterance_id").get<int>();
        s.speaker_id = u.at("speaker_id").get<int>();
        s.gender = u.at("gender").get<std::string>() == "M" ? Gender::male
                                                            : Gender::female;
        s.emotion = static_cast<Emotion>(u.at("emotion").get<int>());
        s.mean_rating = u.value("mean_rating", 0.0);
        auto shape_of = [](const json& j) {
            std::vector<size_t> shape;
            for (const auto& d : j.at("shape")) shape.push_back(d.get<size_t>());
            return shape;
        };
        s.acoustic = read_f32(fs::path(dir) / u.at("acoustic").at("file").get<std::string>(),
                              shape_of(u.at("acoustic")));
        s.lexical = read_f32(fs::path(dir) / u.at("lexical").at("file").get<std::string>(),
                             shape_of(u.at("lexical")));
        corpus.push_back(std::move(s));
    }
    return corpus;
}

}  // namespace emopriv::data
