#include "emopriv/model.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace emopriv::model {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emopriv::ad;

void ModelSpec::validate() const {
    if (conv_layers < 1 || conv_width < 2 || conv_kernels < 1 ||
        gru_layers < 1 || gru_width < 1 || dense_layers < 1 || dense_width < 1)
        throw std::invalid_argument("ModelSpec: layer sizes must be positive");
    if (placement == GrlPlacement::per_stream && modality != Modality::multimodal)
        throw std::invalid_argument(
            "ModelSpec: per-stream GRL placement requires the multimodal setup");
    static const double kLambdaGrid[] = {0.3, 0.5, 0.75, 1.0};
    for (const auto& adv : adversaries) {
        if (mode == Mode::gen && adv.lambda != 0.0)
            throw std::invalid_argument("ModelSpec: Gen mode forces adversary lambda=0");
        if (mode == Mode::priv) {
            bool ok = false;
            for (double l : kLambdaGrid) ok = ok || adv.lambda == l;
            if (!ok)
                throw std::invalid_argument(
                    "ModelSpec: Priv lambda must be one of {0.3, 0.5, 0.75, 1}");
        }
        if (adv.target == AdvTarget::speaker && n_speakers < 2)
            throw std::invalid_argument(
                "ModelSpec: speaker adversary requires n_speakers >= 2");
    }
}

std::vector<ValuePtr> Head::params() const {
    std::vector<ValuePtr> out;
    for (const auto& l : hidden) {
        out.push_back(l.W);
        out.push_back(l.b);
    }
    out.push_back(this->out.W);
    out.push_back(this->out.b);
    return out;
}

std::vector<ValuePtr> ModelParams::embedding_params() const {
    std::vector<ValuePtr> out = conv_kernels;
    for (const auto& g : acoustic_gru)
        for (const auto& p : g.all()) out.push_back(p);
    for (const auto& g : lexical_gru)
        for (const auto& p : g.all()) out.push_back(p);
    return out;
}

std::vector<ValuePtr> ModelParams::all_params() const {
    std::vector<ValuePtr> out = embedding_params();
    for (const auto& p : emotion.params()) out.push_back(p);
    for (const auto& h : adversaries)
        for (const auto& p : h.params()) out.push_back(p);
    return out;
}

std::vector<std::pair<std::string, ValuePtr>> ModelParams::named_tensors() const {
    std::vector<std::pair<std::string, ValuePtr>> out;
    auto add_gru = [&](const std::string& prefix, const GruParams& g) {
        out.emplace_back(prefix + "_Wz", g.Wz);
        out.emplace_back(prefix + "_Uz", g.Uz);
        out.emplace_back(prefix + "_bz", g.bz);
        out.emplace_back(prefix + "_Wr", g.Wr);
        out.emplace_back(prefix + "_Ur", g.Ur);
        out.emplace_back(prefix + "_br", g.br);
        out.emplace_back(prefix + "_Wh", g.Wh);
        out.emplace_back(prefix + "_Uh", g.Uh);
        out.emplace_back(prefix + "_bh", g.bh);
    };
    auto add_head = [&](const std::string& prefix, const Head& h) {
        for (size_t i = 0; i < h.hidden.size(); ++i) {
            out.emplace_back(prefix + "_h" + std::to_string(i) + "_W", h.hidden[i].W);
            out.emplace_back(prefix + "_h" + std::to_string(i) + "_b", h.hidden[i].b);
        }
        out.emplace_back(prefix + "_out_W", h.out.W);
        out.emplace_back(prefix + "_out_b", h.out.b);
    };
    for (size_t i = 0; i < conv_kernels.size(); ++i)
        out.emplace_back("conv" + std::to_string(i), conv_kernels[i]);
    for (size_t i = 0; i < acoustic_gru.size(); ++i)
        add_gru("agru" + std::to_string(i), acoustic_gru[i]);
    for (size_t i = 0; i < lexical_gru.size(); ++i)
        add_gru("lgru" + std::to_string(i), lexical_gru[i]);
    add_head("emotion", emotion);
    for (size_t i = 0; i < adversaries.size(); ++i)
        add_head("adv" + std::to_string(i), adversaries[i]);
    return out;
}

std::vector<Tensor> ModelParams::snapshot() const {
    std::vector<Tensor> snap;
    for (const auto& p : all_params()) snap.push_back(p->val);
    return snap;
}

void ModelParams::restore(const std::vector<Tensor>& snap) {
    auto params = all_params();
    if (snap.size() != params.size())
        throw std::invalid_argument("ModelParams::restore: snapshot size mismatch");
    for (size_t i = 0; i < params.size(); ++i) params[i]->val = snap[i];
}

Head init_head(size_t in_dim, int layers, int width, size_t n_out, Rng& rng) {
    Head h;
    size_t d = in_dim;
    for (int i = 0; i < layers; ++i) {
        h.hidden.push_back({init_matrix(width, d, rng), init_bias(width)});
        d = width;
    }
    h.out = {init_matrix(n_out, d, rng), init_bias(n_out)};
    return h;
}

ValuePtr run_head(const Head& head, const ValuePtr& input) {
    ValuePtr x = input;
    for (const auto& l : head.hidden) x = dense(x, l.W, l.b, Activation::relu);
    return dense(x, head.out.W, head.out.b, Activation::identity);
}

ModelParams build_model(const ModelSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng = Rng::derive(seed, "build_model");
    ModelParams params;

    if (spec.modality != Modality::lexical) {
        size_t cin = data::kAcousticDim;
        for (int i = 0; i < spec.conv_layers; ++i) {
            params.conv_kernels.push_back(init_conv(
                spec.conv_kernels, spec.conv_width, cin, rng));
            cin = spec.conv_kernels;
        }
        size_t in = cin;
        for (int i = 0; i < spec.gru_layers; ++i) {
            params.acoustic_gru.push_back(init_gru(in, spec.gru_width, rng));
            in = spec.gru_width;
        }
    }
    if (spec.modality != Modality::acoustic) {
        size_t in = data::kLexicalDim;
        for (int i = 0; i < spec.gru_layers; ++i) {
            params.lexical_gru.push_back(init_gru(in, spec.gru_width, rng));
            in = spec.gru_width;
        }
    }
    params.emotion = init_head(spec.rep_dim(), spec.dense_layers,
                               spec.dense_width, 3, rng);
    for (const auto& adv : spec.adversaries)
        params.adversaries.push_back(init_head(
            spec.rep_dim(), spec.dense_layers, spec.dense_width,
            spec.head_classes(adv), rng));
    return params;
}

namespace {

ValuePtr acoustic_rep(const ModelSpec& spec, const ModelParams& params,
                      const data::UtteranceSample& sample) {
    if (sample.acoustic.rows() < spec.receptive_field())
        throw std::invalid_argument(
            "forward: acoustic sequence shorter than conv receptive field");
    ValuePtr x = leaf(sample.acoustic);
    for (const auto& k : params.conv_kernels) x = conv1d(x, k);
    for (const auto& g : params.acoustic_gru) x = gru_sequence(x, g);
    return mean_pool_time(x);
}

ValuePtr lexical_rep(const ModelParams& params,
                     const data::UtteranceSample& sample) {
    if (sample.lexical.rows() < 1)
        throw std::invalid_argument("forward: empty lexical sequence");
    ValuePtr x = leaf(sample.lexical);
    for (const auto& g : params.lexical_gru) x = gru_sequence(x, g);
    return mean_pool_time(x);
}

}  // namespace

Forward forward(const ModelSpec& spec, const ModelParams& params,
                const data::UtteranceSample& sample) {
    Forward fwd;
    ValuePtr h_a, h_l;
    switch (spec.modality) {
        case Modality::acoustic:
            fwd.representation = acoustic_rep(spec, params, sample);
            break;
        case Modality::lexical:
            fwd.representation = lexical_rep(params, sample);
            break;
        case Modality::multimodal:
            h_a = acoustic_rep(spec, params, sample);
            h_l = lexical_rep(params, sample);
            fwd.representation = concat(h_a, h_l);  // order pinned: h_a then h_l
            break;
    }
    fwd.emotion_logits = run_head(params.emotion, fwd.representation);
    for (size_t i = 0; i < spec.adversaries.size(); ++i) {
        const double lambda = spec.adversaries[i].lambda;
        ValuePtr branch;
        if (spec.placement == GrlPlacement::per_stream)
            branch = concat(grl(h_a, lambda), grl(h_l, lambda));
        else
            branch = grl(fwd.representation, lambda);
        fwd.adversary_logits.push_back(run_head(params.adversaries[i], branch));
    }
    return fwd;
}

std::vector<double> embed(const ModelSpec& spec, const ModelParams& params,
                          const data::UtteranceSample& sample) {
    ValuePtr h;
    switch (spec.modality) {
        case Modality::acoustic: h = acoustic_rep(spec, params, sample); break;
        case Modality::lexical: h = lexical_rep(params, sample); break;
        case Modality::multimodal:
            h = concat(acoustic_rep(spec, params, sample),
                       lexical_rep(params, sample));
            break;
    }
    return h->val.data;
}

std::vector<double> predict(const ModelSpec& spec, const ModelParams& params,
                            const data::UtteranceSample& sample, HeadRef head) {
    Forward fwd = forward(spec, params, sample);
    if (head.emotion) return softmax(fwd.emotion_logits->val);
    if (head.adversary_index >= fwd.adversary_logits.size())
        throw std::invalid_argument("predict: unknown adversary head");
    return softmax(fwd.adversary_logits[head.adversary_index]->val);
}

std::string to_string(Modality m) {
    switch (m) {
        case Modality::acoustic: return "acoustic";
        case Modality::lexical: return "lexical";
        case Modality::multimodal: return "multimodal";
    }
    return "?";
}
std::string to_string(Task t) {
    return t == Task::activation ? "activation" : "valence";
}
std::string to_string(Mode m) { return m == Mode::gen ? "gen" : "priv"; }

Modality modality_from_string(const std::string& s) {
    if (s == "acoustic") return Modality::acoustic;
    if (s == "lexical") return Modality::lexical;
    if (s == "multimodal") return Modality::multimodal;
    throw std::invalid_argument("unknown modality: " + s);
}
Task task_from_string(const std::string& s) {
    if (s == "activation") return Task::activation;
    if (s == "valence") return Task::valence;
    throw std::invalid_argument("unknown task: " + s);
}
Mode mode_from_string(const std::string& s) {
    if (s == "gen") return Mode::gen;
    if (s == "priv") return Mode::priv;
    throw std::invalid_argument("unknown mode: " + s);
}

namespace {

json spec_to_json(const ModelSpec& s) {
    json j;
    j["modality"] = to_string(s.modality);
    j["task"] = to_string(s.task);
    j["mode"] = to_string(s.mode);
    j["placement"] = s.placement == GrlPlacement::post_concat ? "post-concat"
                                                              : "per-stream";
    json advs = json::array();
    for (const auto& a : s.adversaries)
        advs.push_back({{"target", a.target == AdvTarget::gender ? "gender" : "speaker"},
                        {"lambda", a.lambda}});
    j["adversaries"] = advs;
    j["conv_layers"] = s.conv_layers;
    j["conv_width"] = s.conv_width;
    j["conv_kernels"] = s.conv_kernels;
    j["gru_layers"] = s.gru_layers;
    j["gru_width"] = s.gru_width;
    j["dense_layers"] = s.dense_layers;
    j["dense_width"] = s.dense_width;
    j["n_speakers"] = s.n_speakers;
    return j;
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec s;
    s.modality = modality_from_string(j.at("modality").get<std::string>());
    s.task = task_from_string(j.at("task").get<std::string>());
    s.mode = mode_from_string(j.at("mode").get<std::string>());
    s.placement = j.at("placement").get<std::string>() == "per-stream"
                      ? GrlPlacement::per_stream
                      : GrlPlacement::post_concat;
    for (const auto& a : j.at("adversaries")) {
        AdversarySpec adv;
        adv.target = a.at("target").get<std::string>() == "speaker"
                         ? AdvTarget::speaker
                         : AdvTarget::gender;
        adv.lambda = a.at("lambda").get<double>();
        s.adversaries.push_back(adv);
    }
    s.conv_layers = j.at("conv_layers").get<int>();
    s.conv_width = j.at("conv_width").get<int>();
    s.conv_kernels = j.at("conv_kernels").get<int>();
    s.gru_layers = j.at("gru_layers").get<int>();
    s.gru_width = j.at("gru_width").get<int>();
    s.dense_layers = j.at("dense_layers").get<int>();
    s.dense_width = j.at("dense_width").get<int>();
    s.n_speakers = j.at("n_speakers").get<int>();
    return s;
}

void write_f64(const fs::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    for (double v : t.data) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        unsigned char le[8];
        for (int i = 0; i < 8; ++i)
            le[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
        out.write(reinterpret_cast<const char*>(le), 8);
    }
}

void read_f64(const fs::path& path, Tensor& t) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    for (double& v : t.data) {
        unsigned char le[8];
        if (!in.read(reinterpret_cast<char*>(le), 8))
            throw std::runtime_error("load_checkpoint: truncated tensor file " +
                                     path.string());
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(le[i]) << (8 * i);
        std::memcpy(&v, &bits, 8);
    }
    char extra;
    if (in.read(&extra, 1))
        throw std::runtime_error("load_checkpoint: oversized tensor file " +
                                 path.string());
}

}  // namespace

void save_checkpoint(const ModelSpec& spec, const ModelParams& params,
                     const std::string& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "emopriv-checkpoint-v1";
    manifest["spec"] = spec_to_json(spec);
    json tensors = json::array();
    for (const auto& [name, v] : params.named_tensors()) {
        tensors.push_back({{"name", name}, {"shape", v->val.shape},
                           {"file", name + ".f64"}});
        write_f64(fs::path(dir) / (name + ".f64"), v->val);
    }
    manifest["tensors"] = tensors;
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(2) << "\n";
}

std::pair<ModelSpec, ModelParams> load_checkpoint(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw std::runtime_error("load_checkpoint: missing manifest in " + dir);
    json manifest = json::parse(in);
    ModelSpec spec = spec_from_json(manifest.at("spec"));
    ModelParams params = build_model(spec, 0);

    std::map<std::string, ValuePtr> by_name;
    for (auto& [name, v] : params.named_tensors()) by_name[name] = v;
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != by_name.size())
        throw std::runtime_error(
            "load_checkpoint: manifest tensor count does not match spec");
    for (const auto& entry : tensors) {
        const std::string name = entry.at("name").get<std::string>();
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("load_checkpoint: unknown tensor " + name);
        std::vector<size_t> shape;
        for (const auto& d : entry.at("shape")) shape.push_back(d.get<size_t>());
        if (shape != it->second->val.shape)
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        read_f64(fs::path(dir) / entry.at("file").get<std::string>(),
                 it->second->val);
    }
    return {spec, std::move(params)};
}

}  // namespace emopriv::model
