#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "emopriv/autodiff.hpp"
#include "emopriv/data.hpp"
#include "emopriv/model.hpp"

using namespace emopriv;
using namespace emopriv::model;

namespace {

ModelSpec small_spec(Modality m = Modality::multimodal) {
    ModelSpec s;
    s.modality = m;
    s.conv_layers = 2;
    s.conv_width = 2;
    s.conv_kernels = 8;
    s.gru_layers = 1;
    s.gru_width = 8;
    s.dense_layers = 1;
    s.dense_width = 8;
    return s;
}

data::UtteranceSample make_sample(uint64_t seed, int t_a = 6, int t_l = 5) {
    Rng rng(seed);
    data::UtteranceSample s;
    s.acoustic = Tensor({(size_t)t_a, data::kAcousticDim});
    s.lexical = Tensor({(size_t)t_l, data::kLexicalDim});
    for (auto& v : s.acoustic.data) v = rng.normal();
    for (auto& v : s.lexical.data) v = rng.normal();
    s.emotion = data::Emotion::mid;
    s.gender = data::Gender::female;
    return s;
}

}  // namespace

TEST_CASE("spec validation rules") {
    ModelSpec s = small_spec(Modality::acoustic);
    s.placement = GrlPlacement::per_stream;
    CHECK_THROWS(s.validate());  // per-stream needs multimodal

    s = small_spec();
    s.mode = Mode::priv;
    s.adversaries = {{AdvTarget::gender, 0.2}};  // lambda outside the grid
    CHECK_THROWS(s.validate());
    s.adversaries = {{AdvTarget::gender, 0.5}};
    CHECK_NOTHROW(s.validate());

    s.adversaries = {{AdvTarget::speaker, 0.5}};
    s.n_speakers = 0;
    CHECK_THROWS(s.validate());
    s.n_speakers = 6;
    CHECK_NOTHROW(s.validate());

    s = small_spec();
    s.mode = Mode::gen;
    s.adversaries = {{AdvTarget::gender, 0.5}};  // Gen requires lambda = 0
    CHECK_THROWS(s.validate());
}

TEST_CASE("multimodal representation has dimension 2 x gru width") {
    ModelSpec spec = small_spec();
    spec.gru_width = 32;
    ModelParams params = build_model(spec, 1);
    const auto h = embed(spec, params, make_sample(2));
    CHECK(h.size() == 64);
}

TEST_CASE("embed is deterministic and fixed-length for T in [3,25]") {
    ModelSpec spec = small_spec();
    ModelParams params = build_model(spec, 5);
    const auto s = make_sample(7);
    CHECK(embed(spec, params, s) == embed(spec, params, s));
    for (int t = 3; t <= 25; ++t)
        CHECK(embed(spec, params, make_sample(50 + t, t, t)).size() ==
              spec.rep_dim());
}

TEST_CASE("embed of constant sequences is frame-order invariant") {
    ModelSpec spec = small_spec(Modality::lexical);
    ModelParams params = build_model(spec, 5);
    data::UtteranceSample s = make_sample(9);
    for (size_t t = 0; t < s.lexical.rows(); ++t)
        for (size_t d = 0; d < data::kLexicalDim; ++d)
            s.lexical.at2(t, d) = s.lexical.at2(0, d);
    data::UtteranceSample r = s;  // any permutation of equal rows is itself
    CHECK(embed(spec, params, s) == embed(spec, params, r));
}

TEST_CASE("embed rejects sequences shorter than the receptive field") {
    ModelSpec spec = small_spec(Modality::acoustic);
    spec.conv_layers = 3;
    spec.conv_width = 3;  // receptive field 7
    ModelParams params = build_model(spec, 1);
    CHECK_THROWS(embed(spec, params, make_sample(3, 5, 5)));
    CHECK_NOTHROW(embed(spec, params, make_sample(3, 7, 7)));
}

TEST_CASE("predict softmax contracts") {
    ModelSpec spec = small_spec();
    spec.adversaries = {{AdvTarget::gender, 0.0}};
    ModelParams params = build_model(spec, 3);
    const auto s = make_sample(4);

    const auto pe = predict(spec, params, s, {true, 0});
    REQUIRE(pe.size() == 3);
    double sum = 0.0;
    for (double v : pe) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

    const auto pg = predict(spec, params, s, {false, 0});
    REQUIRE(pg.size() == 2);

    // Zero-weight head -> uniform distribution.
    for (auto& layer : params.adversaries[0].hidden) {
        layer.W->val.fill(0.0);
        layer.b->val.fill(0.0);
    }
    params.adversaries[0].out.W->val.fill(0.0);
    params.adversaries[0].out.b->val.fill(0.0);
    const auto pu = predict(spec, params, s, {false, 0});
    CHECK(pu[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(pu[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("GRL placement and lambda never affect forward outputs") {
    const auto s = make_sample(6);
    ModelSpec base = small_spec();
    base.mode = Mode::priv;
    base.adversaries = {{AdvTarget::gender, 0.3}};
    ModelParams params = build_model(base, 11);

    const auto ref = predict(base, params, s, {true, 0});
    for (double lambda : {0.5, 0.75, 1.0}) {
        for (auto placement :
             {GrlPlacement::post_concat, GrlPlacement::per_stream}) {
            ModelSpec v = base;
            v.adversaries[0].lambda = lambda;
            v.placement = placement;
            CHECK(predict(v, params, s, {true, 0}) == ref);
            CHECK(embed(v, params, s) == embed(base, params, s));
        }
    }
}

TEST_CASE("Gen mode gender head contributes zero gradient to theta_M") {
    ModelSpec spec = small_spec(Modality::acoustic);
    spec.mode = Mode::gen;
    spec.adversaries = {{AdvTarget::gender, 0.0}};
    ModelParams params = build_model(spec, 13);
    const auto s = make_sample(17);

    for (auto& p : params.all_params()) p->zero_grad();
    Forward fwd = forward(spec, params, s);
    ad::backward(ad::weighted_cross_entropy(fwd.adversary_logits[0], 0, {1, 1}));
    for (const auto& p : params.embedding_params())
        for (double g : p->grad.data) CHECK(g == 0.0);
    // The head itself still receives gradient.
    double head_norm = 0.0;
    for (const auto& p : params.adversaries[0].params())
        for (double g : p->grad.data) head_norm += std::fabs(g);
    CHECK(head_norm > 0.0);
}

TEST_CASE("adversary head gets the unreversed gradient, theta_M the reversed") {
    ModelSpec priv = small_spec(Modality::acoustic);
    priv.mode = Mode::priv;
    priv.adversaries = {{AdvTarget::gender, 0.75}};
    ModelParams params = build_model(priv, 19);
    const auto s = make_sample(23);

    for (auto& p : params.all_params()) p->zero_grad();
    {
        Forward fwd = forward(priv, params, s);
        ad::backward(
            ad::weighted_cross_entropy(fwd.adversary_logits[0], 1, {1, 1}));
    }
    std::vector<Tensor> emb_grl, head_grl;
    for (const auto& p : params.embedding_params()) emb_grl.push_back(p->grad);
    for (const auto& p : params.adversaries[0].params())
        head_grl.push_back(p->grad);

    // Same loss with lambda -1 sentinel not available; compare against the
    // Gen-spec graph with the GRL dropped by using lambda=1 and dividing, vs
    // direct recompute: use a lambda=0-free reference by evaluating the head
    // on a plain (identity) representation graph.
    ModelSpec ident = priv;
    ident.mode = Mode::gen;
    ident.adversaries[0].lambda = 0.0;
    for (auto& p : params.all_params()) p->zero_grad();
    {
        Forward fwd = forward(ident, params, s);
        ad::backward(
            ad::weighted_cross_entropy(fwd.adversary_logits[0], 1, {1, 1}));
    }
    // Head gradient is identical whether or not the GRL flips upstream flow.
    size_t i = 0;
    for (const auto& p : params.adversaries[0].params()) {
        for (size_t j = 0; j < p->grad.size(); ++j)
            CHECK(std::fabs(p->grad.data[j] - head_grl[i].data[j]) <= 1e-12);
        ++i;
    }
    // lambda=0 stops theta_M entirely; the reversed gradient through
    // lambda=0.75 equals -0.75 x the identity-graph gradient. Recompute the
    // identity-graph gradient by embedding the representation leaf-free:
    // compare priv lambda=1 vs priv lambda=0.75 proportionality instead.
    ModelSpec l1 = priv;
    l1.adversaries[0].lambda = 1.0;
    for (auto& p : params.all_params()) p->zero_grad();
    {
        Forward fwd = forward(l1, params, s);
        ad::backward(
            ad::weighted_cross_entropy(fwd.adversary_logits[0], 1, {1, 1}));
    }
    i = 0;
    for (const auto& p : params.embedding_params()) {
        for (size_t j = 0; j < p->grad.size(); ++j)
            CHECK(std::fabs(0.75 * p->grad.data[j] - emb_grl[i].data[j]) <=
                  1e-12);
        ++i;
    }
}

TEST_CASE("speaker adversary head sizes by n_speakers") {
    ModelSpec spec = small_spec(Modality::acoustic);
    spec.mode = Mode::priv;
    spec.adversaries = {{AdvTarget::speaker, 0.5}};
    spec.n_speakers = 7;
    ModelParams params = build_model(spec, 2);
    const auto p = predict(spec, params, make_sample(3), {false, 0});
    CHECK(p.size() == 7);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    namespace fs = std::filesystem;
    ModelSpec spec = small_spec();
    spec.mode = Mode::priv;
    spec.adversaries = {{AdvTarget::gender, 0.5}};
    ModelParams params = build_model(spec, 31);

    const std::string d1 = "ckpt_rt_a", d2 = "ckpt_rt_b";
    save_checkpoint(spec, params, d1);
    auto [spec2, params2] = load_checkpoint(d1);
    save_checkpoint(spec2, params2, d2);

    for (const auto& entry : fs::directory_iterator(d1)) {
        std::ifstream a(entry.path(), std::ios::binary);
        std::ifstream b(fs::path(d2) / entry.path().filename(),
                        std::ios::binary);
        REQUIRE(b.good());
        std::string sa((std::istreambuf_iterator<char>(a)), {});
        std::string sb((std::istreambuf_iterator<char>(b)), {});
        CHECK(sa == sb);
    }

    // Loaded parameters reproduce the same predictions.
    const auto s = make_sample(5);
    CHECK(predict(spec, params, s, {true, 0}) ==
          predict(spec2, params2, s, {true, 0}));

    // Manifest tensor count equals the model's parameter count.
    CHECK(params.named_tensors().size() == params.all_params().size());

    // Truncated sidecar -> checkpoint error.
    const auto name = params.named_tensors().front().first;
    fs::resize_file(fs::path(d1) / (name + ".f64"), 8);
    CHECK_THROWS(load_checkpoint(d1));

    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("per-stream placement reverses each stream before concat") {
    ModelSpec spec = small_spec();
    spec.mode = Mode::priv;
    spec.adversaries = {{AdvTarget::gender, 0.5}};
    spec.placement = GrlPlacement::per_stream;
    ModelParams params = build_model(spec, 37);
    const auto s = make_sample(41);

    for (auto& p : params.all_params()) p->zero_grad();
    Forward fwd = forward(spec, params, s);
    ad::backward(ad::weighted_cross_entropy(fwd.adversary_logits[0], 0, {1, 1}));
    Tensor per = params.conv_kernels[0]->grad;

    ModelSpec post = spec;
    post.placement = GrlPlacement::post_concat;
    for (auto& p : params.all_params()) p->zero_grad();
    Forward fwd2 = forward(post, params, s);
    ad::backward(
        ad::weighted_cross_entropy(fwd2.adversary_logits[0], 0, {1, 1}));
    // With a single post-concat GRL at the same lambda the upstream gradient
    // is identical: both place one -lambda factor on the path to theta_M.
    for (size_t j = 0; j < per.size(); ++j)
        CHECK(per.data[j] ==
              doctest::Approx(params.conv_kernels[0]->grad.data[j])
                  .epsilon(1e-12));
}
