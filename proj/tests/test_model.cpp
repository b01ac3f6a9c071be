#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "pvcd/decoder.hpp"
#include "pvcd/fusion.hpp"
#include "pvcd/model.hpp"
#include "pvcd/ops.hpp"
#include "reference.hpp"
#include "test_util.hpp"

using namespace pvcd;
using pvcd::testing::random_tensor;
using pvcd::testing::values;

namespace {

ViTConfig toy_vit() {
    ViTConfig v;
    v.image_size = 16;
    v.patch_size = 8;
    v.depth = 2;
    v.dim = 8;
    v.heads = 2;
    v.mlp_ratio = 2;
    return v;
}

ChangeDetector toy_model(PeftMethod method, std::uint64_t seed = 3) {
    PeftConfig peft;
    peft.method = method;
    peft.r = 2;
    peft.rank = 2;
    peft.prefix_count = 3;
    return build_model(toy_vit(), peft, 2, seed);
}

Tensor toy_frames(std::uint64_t seed) { return random_tensor({2, 3, 16, 16}, seed, 0.0, 1.0); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

std::size_t count_prefix(const ParameterStore& store, const std::string& prefix) {
    std::size_t n = 0;
    for (const Parameter* p : store.all()) {
        if (p->name().starts_with(prefix)) n += p->numel();
    }
    return n;
}

}  // namespace

// -- backbone ---------------------------------------------------------------

TEST(ViT, PatchifyRowMajorGridThenPixelThenChannel) {
    // value encodes (c, y, x) so every output slot can be decoded
    std::vector<double> v(3 * 4 * 6);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 6; ++x) v[(c * 4 + y) * 6 + x] = c * 100 + y * 10 + x;
    Tensor p = patchify(Tensor::from({3, 4, 6}, v), 2);
    ASSERT_EQ(p.shape(), (Shape{6, 12}));
    for (std::size_t gy = 0; gy < 2; ++gy)
        for (std::size_t gx = 0; gx < 3; ++gx)
            for (std::size_t py = 0; py < 2; ++py)
                for (std::size_t px = 0; px < 2; ++px)
                    for (std::size_t c = 0; c < 3; ++c) {
                        const double expect = c * 100 + (gy * 2 + py) * 10 + gx * 2 + px;
                        EXPECT_EQ(p.at({gy * 3 + gx, (py * 2 + px) * 3 + c}), expect);
                    }
    EXPECT_THROW(patchify(Tensor::zeros({3, 5, 4}), 2), ShapeError);
}

TEST(ViT, ConfigValidation) {
    ViTConfig v = toy_vit();
    v.heads = 3;  // 8 is not divisible by 3
    EXPECT_THROW(v.validate(), std::invalid_argument);
    v = toy_vit();
    v.image_size = 20;
    EXPECT_THROW(v.validate(), std::invalid_argument);
    EXPECT_NO_THROW(ViTConfig::small().validate());
}

TEST(ViT, FeatureShapeDropsClassToken) {
    ChangeDetector m = toy_model(PeftMethod::linear_probe);
    Graph g;
    EXPECT_EQ(m.features(g, toy_frames(1)).shape(), (Shape{2, 4, 8}));
    EXPECT_EQ(m.forward(g, toy_frames(1)).shape(), (Shape{2, 16, 16}));
}

TEST(ViT, AttentionRowsAreDistributions) {
    ChangeDetector m = toy_model(PeftMethod::adapter);
    AttentionTrace trace;
    Graph g;
    g.set_trace(&trace);
    m.forward(g, toy_frames(2));
    std::size_t checked = 0;
    for (const auto& rec : trace.records) {
        const std::size_t cols = rec.weights.dim(-1);
        for (std::size_t row = 0; row < rec.weights.numel() / cols; ++row) {
            double total = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                const double w = rec.weights.data()[row * cols + c];
                EXPECT_GE(w, 0.0);
                total += w;
            }
            EXPECT_NEAR(total, 1.0, 1e-12);
            ++checked;
        }
    }
    // 2 frames x 2 layers x 2 heads x 5 tokens, plus 4 fusion rows
    EXPECT_EQ(checked, 2u * 2 * 2 * 5 + 4);
}

TEST(ViT, BackboneFrozenExceptFullFineTune) {
    for (PeftMethod method : {PeftMethod::adapter, PeftMethod::lora, PeftMethod::ia3, PeftMethod::prefix,
                              PeftMethod::linear_probe, PeftMethod::full}) {
        ChangeDetector m = toy_model(method);
        for (const Parameter* p : m.parameters().all()) {
            const bool backbone = p->name().starts_with("backbone.");
            EXPECT_EQ(p->frozen(), backbone && method != PeftMethod::full) << p->name();
        }
    }
}

// -- PEFT -------------------------------------------------------------------

TEST(Peft, ZeroInitializedMethodsAreIdentityBitwise) {
    const ChangeDetector base = toy_model(PeftMethod::linear_probe);
    for (PeftMethod method : {PeftMethod::adapter, PeftMethod::lora, PeftMethod::ia3}) {
        const ChangeDetector m = toy_model(method);
        for (std::uint64_t s = 0; s < 3; ++s) {
            Graph g1, g2;
            const Tensor x = toy_frames(10 + s);
            EXPECT_TRUE(bitwise_equal(m.features(g1, x), base.features(g2, x))) << to_string(method);
            EXPECT_TRUE(bitwise_equal(m.forward(g1, x), base.forward(g2, x))) << to_string(method);
        }
    }
}

TEST(Peft, PrefixTokensChangeTheFeatures) {
    const ChangeDetector base = toy_model(PeftMethod::linear_probe);
    const ChangeDetector m = toy_model(PeftMethod::prefix);
    Graph g1, g2;
    const Tensor x = toy_frames(4);
    EXPECT_GT(max_abs_diff(m.features(g1, x), base.features(g2, x)), 0.0);
}

TEST(Peft, AdapterMatchesReference) {
    ChangeDetector m = toy_model(PeftMethod::adapter);
    std::mt19937_64 rng(5);
    for (Parameter* p : m.parameters().all()) ref::randomize(*p, rng);
    const auto& layer = m.backbone().layers[0];
    AdapterParams adapter = *m.peft()[0].adapter;
    adapter.scale = 0.7;
    const Tensor z = random_tensor({3, 8}, 6);
    Graph g;
    const Tensor out = adapter_forward(g, z, layer.ln2, layer.mlp, adapter);
    for (std::size_t row = 0; row < 3; ++row) {
        const ref::Vec zr(z.data().begin() + row * 8, z.data().begin() + row * 8 + 8);
        const ref::Vec branch = ref::linear(ref::gelu(ref::linear(zr, adapter.down)), adapter.up);
        const ref::Vec expect = ref::add(ref::add(zr, ref::mlp(ref::layer_norm(zr, layer.ln2), layer.mlp)), branch, 0.7);
        for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.at({row, j}), expect[j], 1e-12);
    }
}

TEST(Peft, AdapterScaleActsOnlyOnTheBranch) {
    ChangeDetector m = toy_model(PeftMethod::adapter);
    std::mt19937_64 rng(22);
    for (Parameter* p : m.parameters().all()) ref::randomize(*p, rng);
    const auto& layer = m.backbone().layers[1];
    const Tensor z = random_tensor({4, 8}, 23);
    const auto at_scale = [&](double s) {
        LayerPeft hooks = m.peft()[1];
        hooks.adapter->scale = s;
        Graph g;
        return transformer_layer(g, z, layer, 2, &hooks);
    };
    Graph g;
    const Tensor plain = transformer_layer(g, z, layer, 2, nullptr);
    const Tensor zero = at_scale(0.0), one = at_scale(1.0), a = at_scale(2.5);
    EXPECT_TRUE(bitwise_equal(zero, plain));
    for (std::size_t i = 0; i < plain.numel(); ++i) {
        EXPECT_NEAR(a.data()[i] - zero.data()[i], 2.5 * (one.data()[i] - zero.data()[i]), 1e-12);
    }
}

TEST(Peft, GradientsReachAdaptersThroughTheDecoder) {
    ChangeDetector m = toy_model(PeftMethod::adapter);
    Graph g;
    sum(m.forward(g, toy_frames(24))).backward();
    for (const Parameter* p : m.parameters().trainable()) {
        if (!p->name().starts_with("peft.")) continue;
        double norm = 0.0;
        for (double v : g.grad(*p)) norm += v * v;
        // W_down and b_down sit behind the zero W_up at init, so only the up projection sees gradient yet
        if (p->name().find("_up") != std::string::npos) EXPECT_GT(norm, 0.0) << p->name();
    }
}

TEST(Peft, BottleneckAndCounts) {
    PeftConfig cfg;
    EXPECT_EQ(cfg.bottleneck(384), 64u);
    cfg.r = 5;
    EXPECT_EQ(cfg.bottleneck(32), 6u);  // round(6.4)
    cfg.r = 100;
    EXPECT_EQ(cfg.bottleneck(32), 1u);

    // ViT-S at a small input: per-layer adapter = 2 * 384 * 64 + 64 + 384
    ChangeDetector adapter = build_model(ViTConfig::small(32), PeftConfig{}, 2, 0);
    EXPECT_EQ(count_prefix(adapter.parameters(), "peft.layer0."), 64u * 384 + 64 + 384 * 64 + 384);
    EXPECT_EQ(count_prefix(adapter.parameters(), "peft."), 12u * 49600);

    PeftConfig lora;
    lora.method = PeftMethod::lora;
    ChangeDetector lm = build_model(ViTConfig::small(32), lora, 2, 0);
    EXPECT_EQ(count_prefix(lm.parameters(), "peft.layer0."), 4u * (384 + 384));
}

TEST(Peft, MergedLoraMatchesUnmerged) {
    for (std::size_t rank : {1u, 2u, 4u}) {
        PeftConfig peft;
        peft.method = PeftMethod::lora;
        peft.rank = rank;
        ChangeDetector m = build_model(toy_vit(), peft, 2, 7);
        std::mt19937_64 rng(rank);
        for (Parameter* p : m.parameters().all()) {
            if (p->name().ends_with(".b") && p->name().starts_with("peft.")) ref::randomize(*p, rng);
        }
        std::vector<Tensor> before;
        for (std::uint64_t s = 0; s < 4; ++s) {
            Graph g;
            before.push_back(m.features(g, toy_frames(20 + s)));
        }
        m.merge_lora();
        for (const Parameter* p : m.parameters().all()) {
            if (p->name().ends_with(".b") && p->name().starts_with("peft.")) {
                for (double v : p->values()) EXPECT_EQ(v, 0.0);
            }
        }
        for (std::uint64_t s = 0; s < 4; ++s) {
            Graph g;
            EXPECT_LT(max_abs_diff(m.features(g, toy_frames(20 + s)), before[s]), 1e-9) << "rank " << rank;
        }
    }
}

TEST(Peft, Ia3ZeroValueScaleLeavesOnlyOutputBias) {
    ChangeDetector m = toy_model(PeftMethod::ia3);
    std::mt19937_64 rng(8);
    for (Parameter* p : m.parameters().all()) ref::randomize(*p, rng);
    const LayerPeft& hooks = m.peft()[0];
    for (double& v : hooks.ia3->l_v->values()) v = 0.0;
    const auto& attn = m.backbone().layers[0].attn;
    Graph g;
    const Tensor out = attention(g, random_tensor({5, 8}, 9), attn, 2, &hooks);
    const auto bo = attn[Projection::o].bias->values();
    for (std::size_t row = 0; row < 5; ++row)
        for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.at({row, j}), bo[j], 1e-15);
}

TEST(Peft, MethodNames) {
    EXPECT_EQ(parse_peft_method("linear-probe"), PeftMethod::linear_probe);
    EXPECT_EQ(parse_peft_method("lora"), PeftMethod::lora);
    EXPECT_THROW(parse_peft_method("bitfit"), std::invalid_argument);
    for (PeftMethod m : {PeftMethod::adapter, PeftMethod::lora, PeftMethod::ia3, PeftMethod::prefix,
                         PeftMethod::linear_probe, PeftMethod::full}) {
        EXPECT_EQ(parse_peft_method(to_string(m)), m);
    }
}

// -- fusion -----------------------------------------------------------------

namespace {

struct FusionFixture {
    ParameterStore store;
    McaParams params;

    FusionFixture(std::size_t dim, std::size_t frames, std::uint64_t seed) {
        params = register_fusion(store, dim, frames, 2, seed);
        std::mt19937_64 rng(seed);
        for (Parameter* p : store.all()) ref::randomize(*p, rng);
    }

    // Reference for one patch: rows of z_t (one per frame) already hold the temporal embedding.
    ref::Vec patch(const std::vector<ref::Vec>& zt_rows, ref::Vec* weights_out = nullptr) const {
        const std::size_t d = zt_rows[0].size();
        const ref::Vec zm(params.mask_query->values().begin(), params.mask_query->values().end());
        const ref::Vec zmn = ref::layer_norm(zm, params.ln2);
        const ref::Vec q = ref::linear(zmn, params.attn[Projection::q]);
        std::vector<ref::Vec> vs;
        ref::Vec scores;
        for (const auto& row : zt_rows) {
            const ref::Vec n = ref::layer_norm(row, params.ln1);
            const ref::Vec k = ref::linear(n, params.attn[Projection::k]);
            vs.push_back(ref::linear(n, params.attn[Projection::v]));
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += q[j] * k[j];
            scores.push_back(s / std::sqrt(static_cast<double>(d)));
        }
        const double top = *std::max_element(scores.begin(), scores.end());
        double z = 0.0;
        for (double& s : scores) z += (s = std::exp(s - top));
        ref::Vec mixed(d, 0.0);
        for (std::size_t t = 0; t < vs.size(); ++t) mixed = ref::add(mixed, vs[t], scores[t] / z);
        if (weights_out) {
            *weights_out = scores;
            for (double& w : *weights_out) w /= z;
        }
        const ref::Vec h = ref::add(zmn, ref::linear(mixed, params.attn[Projection::o]));
        return ref::add(h, ref::mlp(ref::layer_norm(h, params.ln3), params.mlp));
    }
};

}  // namespace

TEST(Fusion, MatchesReference) {
    const std::size_t d = 4, frames = 2, n = 6;
    FusionFixture fx(d, frames, 11);
    const Tensor features = random_tensor({frames, n, d}, 12, -2.0, 2.0);
    Graph g;
    const Tensor out = fuse(g, features, 2, 3, fx.params);
    ASSERT_EQ(out.shape(), (Shape{d, 2, 3}));
    const auto tp = fx.params.temporal_pos->values();
    for (std::size_t p = 0; p < n; ++p) {
        std::vector<ref::Vec> rows;
        for (std::size_t t = 0; t < frames; ++t) {
            ref::Vec row(d);
            for (std::size_t j = 0; j < d; ++j) row[j] = features.at({t, p, j}) + tp[t * d + j];
            rows.push_back(row);
        }
        const ref::Vec expect = fx.patch(rows);
        for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(out.at({j, p / 3, p % 3}), expect[j], 1e-12);
    }
}

TEST(Fusion, HandComputedWeights) {
    // D=2, two frames, every normalization and projection reduced to identity.
    ParameterStore store;
    McaParams p = register_fusion(store, 2, 2, 1, 0);
    for (Parameter* param : store.all()) {
        const bool gamma = param->name().ends_with(".gamma");
        for (double& v : param->values()) v = gamma ? 1.0 : 0.0;
    }
    for (Projection proj : {Projection::q, Projection::k, Projection::v, Projection::o}) {
        auto w = p.attn[proj].weight->values();
        w[0] = w[3] = 1.0;
    }
    auto mq = p.mask_query->values();
    mq[0] = 1.0, mq[1] = -1.0;
    // after LN1 frame 0 is (a,-a) and frame 1 is (-a,a); the query is (a,-a)
    const Tensor features = Tensor::from({2, 1, 2}, {3.0, 1.0, 0.0, 2.0});
    AttentionTrace trace;
    Graph g;
    g.set_trace(&trace);
    const Tensor out = fuse(g, features, 1, 1, p);

    const double a = 1.0 / std::sqrt(1.0 + 1e-6);  // layer-normalized magnitude
    const double s0 = 2.0 * a * a / std::sqrt(2.0);  // q.k0 / sqrt(D)
    const double w0 = 1.0 / (1.0 + std::exp(-2.0 * s0));
    ASSERT_EQ(trace.records.size(), 1u);
    EXPECT_NEAR(trace.records[0].weights.data()[0], w0, 1e-12);
    EXPECT_NEAR(trace.records[0].weights.data()[1], 1.0 - w0, 1e-12);
    // h = zm_n + (w0 - w1) * (a, -a); the MLP branch is zero.
    const double h0 = a + (2.0 * w0 - 1.0) * a;
    EXPECT_NEAR(out.at({0, 0, 0}), h0, 1e-12);
    EXPECT_NEAR(out.at({1, 0, 0}), -h0, 1e-12);
}

TEST(Fusion, SingleFrameGetsFullWeight) {
    FusionFixture fx(4, 1, 13);
    AttentionTrace trace;
    Graph g;
    g.set_trace(&trace);
    fuse(g, random_tensor({1, 3, 4}, 14), 1, 3, fx.params);
    for (double w : trace.records.at(0).weights.data()) EXPECT_EQ(w, 1.0);
}

TEST(Fusion, SwappingFramesAndEmbeddingsIsExact) {
    FusionFixture fx(4, 2, 15);
    const Tensor features = random_tensor({2, 4, 4}, 16);
    Graph g1;
    const Tensor a = fuse(g1, features, 2, 2, fx.params);

    const Tensor swapped = concat({slice(features, 0, 1, 1), slice(features, 0, 0, 1)}, 0);
    auto tp = fx.params.temporal_pos->values();
    std::swap_ranges(tp.begin(), tp.begin() + 4, tp.begin() + 4);
    Graph g2;
    const Tensor b = fuse(g2, swapped, 2, 2, fx.params);
    EXPECT_TRUE(bitwise_equal(a, b));
}

TEST(Fusion, ScoreCountIsPatchesTimesFrames) {
    for (std::size_t frames : {1u, 2u, 3u}) {
        FusionFixture fx(4, frames, 17);
        AttentionTrace trace;
        Graph g;
        g.set_trace(&trace);
        const Tensor out = fuse(g, random_tensor({frames, 6, 4}, 18), 2, 3, fx.params);
        EXPECT_EQ(out.shape(), (Shape{4, 2, 3}));
        EXPECT_EQ(trace.score_count("fusion"), 6u * frames);
    }
}

TEST(Fusion, PatchesAreFusedIndependently) {
    FusionFixture fx(4, 2, 19);
    const Tensor features = random_tensor({2, 4, 4}, 20);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    std::vector<Tensor> rows;
    for (std::size_t p : perm) rows.push_back(slice(features, 1, p, 1));
    Graph g1, g2;
    const Tensor a = fuse(g1, features, 1, 4, fx.params);
    const Tensor b = fuse(g2, concat(rows, 1), 1, 4, fx.params);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(b.at({j, 0, i}), a.at({j, 0, perm[i]}));
}

TEST(Fusion, RejectsMismatchedInputs) {
    FusionFixture fx(4, 2, 21);
    Graph g;
    EXPECT_THROW(fuse(g, random_tensor({3, 4, 4}, 1), 2, 2, fx.params), ShapeError);
    EXPECT_THROW(fuse(g, random_tensor({2, 5, 4}, 1), 2, 2, fx.params), ShapeError);
}

// -- decoder ----------------------------------------------------------------

TEST(Decoder, UpsamplesByPatchSize) {
    ParameterStore store;
    const DecoderParams p = register_decoder(store, 48, 16, 0);
    ASSERT_EQ(p.stages.size(), 4u);
    // channels halve with a floor of 16: 48 -> 24 -> 16 -> 16 -> 16
    EXPECT_EQ(p.stages[0].conv_weight->shape(), (Shape{24, 48, 3, 3}));
    EXPECT_EQ(p.stages[1].conv_weight->shape(), (Shape{16, 24, 3, 3}));
    EXPECT_EQ(p.stages[3].conv_weight->shape(), (Shape{16, 16, 3, 3}));
    Graph g;
    EXPECT_EQ(decode(g, random_tensor({48, 4, 4}, 1), p).shape(), (Shape{2, 64, 64}));
}

TEST(Decoder, RejectsNonPowerOfTwoPatch) {
    ParameterStore store;
    EXPECT_THROW(register_decoder(store, 32, 12, 0), std::invalid_argument);
    EXPECT_THROW(register_decoder(store, 32, 0, 0), std::invalid_argument);
}

TEST(Model, DeterministicInitialization) {
    const ChangeDetector a = toy_model(PeftMethod::adapter, 9);
    const ChangeDetector b = toy_model(PeftMethod::adapter, 9);
    const ChangeDetector c = toy_model(PeftMethod::adapter, 10);
    bool differs = false;
    for (const Parameter* p : a.parameters().all()) {
        const auto pb = b.parameters().at(p->name()).values();
        EXPECT_TRUE(std::equal(p->values().begin(), p->values().end(), pb.begin())) << p->name();
        const auto pc = c.parameters().at(p->name()).values();
        differs |= !std::equal(p->values().begin(), p->values().end(), pc.begin());
    }
    EXPECT_TRUE(differs);
}
