#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "support.hpp"
#include "megdec/model.hpp"

using namespace megdec;

namespace {

ModelSpec tiny_spec(Arch arch) {
    ModelSpec s;
    s.arch = arch;
    s.channels = 6;
    s.samples = 20;
    s.n_classes = 4;
    s.hidden_dim = 8;
    s.cnn_blocks = 3;
    s.kernel = 5;
    s.group_norm_groups = 4;
    s.transformer_layers = 2;
    s.transformer_heads = 2;
    s.stft_n_fft = 10;
    s.stft_hop = 5;
    return s;
}

Tensorf random_batch(const ModelSpec& s, Index B, uint64_t seed) {
    Tensorf x = Tensorf::zeros({B, s.channels, s.samples});
    Rng rng(seed);
    for (Index i = 0; i < x.numel(); ++i) x.array()[i] = float(rng.normal());
    return x;
}

std::vector<std::string> tap_names(Model& m, const Tensorf& batch) {
    TapRegistry<float> taps;
    m.forward(batch, false, &taps);
    std::vector<std::string> names;
    for (const auto& t : taps.taps()) names.push_back(t.name);
    return names;
}

}  // namespace

TEST_CASE("build lays out parameters in a stable order with exact counts") {
    ModelSpec s = tiny_spec(Arch::resnet_cnn);
    Model m = Model::build(s, 1);

    std::vector<std::string> want = {"conv0.w", "conv0.b", "conv0.gn_g", "conv0.gn_b",
                                     "conv1.w", "conv1.b", "conv1.gn_g", "conv1.gn_b",
                                     "conv2.w", "conv2.b", "conv2.gn_g", "conv2.gn_b",
                                     "head.w",  "head.b"};
    CHECK(m.param_names() == want);
    // conv0: 8*6*5 + 3*8, conv1/conv2: 8*8*5 + 3*8, head: 4*8 + 4
    CHECK(m.param_count() == 264 + 344 + 344 + 36);
    CHECK(m.param("head.w").shape() == Shape{4, 8});
    CHECK_THROWS_AS(m.param("nope"), UsageError);
    CHECK(m.bn_states().empty());

    ModelSpec bn = s;
    bn.block_norm = NormKind::batch;
    Model mb = Model::build(bn, 1);
    CHECK(mb.param_count() == m.param_count() + 16);  // norm.g + norm.b
    REQUIRE(mb.bn_names().size() == 1);
    CHECK(mb.bn_names()[0] == "norm");
}

TEST_CASE("initialization is a pure function of the seed") {
    ModelSpec s = tiny_spec(Arch::resnet_cnn);
    Model a = Model::build(s, 42);
    Model b = Model::build(s, 42);
    Model c = Model::build(s, 43);
    bool same_ab = true, same_ac = true;
    for (size_t i = 0; i < a.params().size(); ++i) {
        same_ab = same_ab && (a.params()[i].array() == b.params()[i].array()).all();
        same_ac = same_ac && (a.params()[i].array() == c.params()[i].array()).all();
    }
    CHECK(same_ab);
    CHECK_FALSE(same_ac);
}

TEST_CASE("forward produces [B, classes] logits and ordered taps per arch") {
    const Index B = 3;

    SUBCASE("resnet_cnn") {
        ModelSpec s = tiny_spec(Arch::resnet_cnn);
        Model m = Model::build(s, 2);
        Tensorf x = random_batch(s, B, 5);
        Tensorf logits = m.forward(x, false);
        CHECK(logits.shape() == Shape{B, 4});
        CHECK(tap_names(m, x) ==
              std::vector<std::string>{"conv0", "conv1", "conv2", "head"});
    }

    SUBCASE("resnet_cnn with extra norm") {
        ModelSpec s = tiny_spec(Arch::resnet_cnn);
        s.block_norm = NormKind::group;
        Model m = Model::build(s, 2);
        Tensorf x = random_batch(s, B, 5);
        CHECK(tap_names(m, x) ==
              std::vector<std::string>{"conv0", "conv1", "conv2", "norm", "head"});
    }

    SUBCASE("cnn_transformer") {
        ModelSpec s = tiny_spec(Arch::cnn_transformer);
        Model m = Model::build(s, 2);
        Tensorf x = random_batch(s, B, 5);
        Tensorf logits = m.forward(x, false);
        CHECK(logits.shape() == Shape{B, 4});
        CHECK(tap_names(m, x) ==
              std::vector<std::string>{"conv0", "conv1", "enc0.attn", "enc0.ffn", "enc1.attn",
                                       "enc1.ffn", "head"});
    }

    SUBCASE("stft_cnn") {
        ModelSpec s = tiny_spec(Arch::stft_cnn);
        s.cnn_blocks = 1;
        Model m = Model::build(s, 2);
        Tensorf x = random_batch(s, B, 5);
        Tensorf logits = m.forward(x, false);
        CHECK(logits.shape() == Shape{B, 4});
        CHECK(tap_names(m, x) == std::vector<std::string>{"conv0", "head"});
    }

    SUBCASE("geometry is enforced") {
        ModelSpec s = tiny_spec(Arch::resnet_cnn);
        Model m = Model::build(s, 2);
        CHECK_THROWS_AS(m.forward(Tensorf::zeros({B, 5, 20}), false), DimensionError);
        CHECK_THROWS_AS(m.forward(Tensorf::zeros({6, 20}), false), DimensionError);
    }
}

TEST_CASE("instance norm input makes logits invariant to per-channel affine maps") {
    for (Arch arch : {Arch::resnet_cnn, Arch::cnn_transformer}) {
        CAPTURE(arch_name(arch));
        ModelSpec s = tiny_spec(arch);
        s.input_instance_norm = true;
        Model m = Model::build(s, 3);
        const Index B = 4;
        Tensorf x = random_batch(s, B, 11);

        // Fresh gain/offset for every window and channel.
        Tensorf y = Tensorf::zeros(x.shape());
        Rng rng(12);
        for (Index b = 0; b < B; ++b) {
            for (Index c = 0; c < s.channels; ++c) {
                float g = float(rng.uniform(0.5, 2.0));
                float o = float(rng.uniform(-1.0, 1.0));
                for (Index t = 0; t < s.samples; ++t) {
                    Index at = (b * s.channels + c) * s.samples + t;
                    y.array()[at] = g * x.array()[at] + o;
                }
            }
        }

        Tensorf lx = m.forward(x, false);
        Tensorf ly = m.forward(y, false);
        float max_diff = (lx.array() - ly.array()).abs().maxCoeff();
        CHECK(max_diff <= 1e-4f);
        CHECK(predict(lx) == predict(ly));

        // Without the input norm the same perturbation moves the logits.
        ModelSpec raw = s;
        raw.input_instance_norm = false;
        Model mr = Model::build(raw, 3);
        float raw_diff =
            (mr.forward(x, false).array() - mr.forward(y, false).array()).abs().maxCoeff();
        CHECK(raw_diff > 1e-2f);
    }
}

TEST_CASE("predict takes the argmax and breaks ties toward the lower id") {
    Tensorf logits = Tensorf::zeros({3, 4});
    float vals[12] = {0.1f, 0.9f, 0.3f, 0.2f,
                      2.0f, 2.0f, 1.0f, 2.0f,
                      -5.0f, -4.0f, -4.0f, -6.0f};
    std::copy(vals, vals + 12, logits.array().data());
    CHECK(predict(logits) == std::vector<int>{1, 0, 1});
    CHECK_THROWS_AS(predict(Tensorf::zeros({2, 2, 2})), DimensionError);
}

TEST_CASE("checkpoints round-trip parameters, buffers and behaviour") {
    auto dir = megtest::scratch_dir("model_ckpt");
    ModelSpec s = tiny_spec(Arch::resnet_cnn);
    s.block_norm = NormKind::batch;
    Model m = Model::build(s, 9);
    Tensorf x = random_batch(s, 4, 21);
    m.forward(x, true);  // move the batch-norm buffers off their init values

    std::string path = (dir / "model.ckpt").string();
    m.save(path);
    Model back = Model::load(path);

    CHECK(back.spec().arch == s.arch);
    CHECK(back.spec().hidden_dim == s.hidden_dim);
    CHECK(back.spec().block_norm == NormKind::batch);
    CHECK(back.param_names() == m.param_names());
    for (size_t i = 0; i < m.params().size(); ++i) {
        CHECK((back.params()[i].array() == m.params()[i].array()).all());
    }
    REQUIRE(back.bn_states().size() == 1);
    CHECK((back.bn_states()[0].running_mean == m.bn_states()[0].running_mean).all());
    CHECK((back.bn_states()[0].running_var == m.bn_states()[0].running_var).all());

    Tensorf a = m.forward(x, false);
    Tensorf b = back.forward(x, false);
    CHECK((a.array() == b.array()).all());

    CHECK_THROWS_AS(Model::load((dir / "missing.ckpt").string()), IoError);

    std::ofstream junk(dir / "junk.ckpt", std::ios::binary);
    junk << "not a checkpoint at all";
    junk.close();
    CHECK_THROWS_AS(Model::load((dir / "junk.ckpt").string()), ParseError);
}

TEST_CASE("snapshot and restore round-trip the full state") {
    ModelSpec s = tiny_spec(Arch::resnet_cnn);
    s.block_norm = NormKind::batch;
    Model m = Model::build(s, 4);
    Tensorf x = random_batch(s, 3, 31);
    m.forward(x, true);
    Tensorf before = m.forward(x, false);
    auto snap = m.snapshot_state();

    for (auto& p : m.params()) p.array() += 0.25f;
    m.forward(x, true);  // also perturb the bn buffers
    Tensorf perturbed = m.forward(x, false);
    CHECK((before.array() != perturbed.array()).any());

    m.restore_state(snap);
    Tensorf after = m.forward(x, false);
    CHECK((before.array() == after.array()).all());

    snap.pop_back();
    CHECK_THROWS_AS(m.restore_state(snap), UsageError);
}

TEST_CASE("spec validation rejects inconsistent settings") {
    ModelSpec s = tiny_spec(Arch::resnet_cnn);
    s.kernel = 4;
    CHECK_THROWS_AS(s.validate(), ConfigError);

    s = tiny_spec(Arch::resnet_cnn);
    s.n_classes = 1;
    CHECK_THROWS_AS(s.validate(), ConfigError);

    s = tiny_spec(Arch::resnet_cnn);
    s.group_norm_groups = 3;  // does not divide hidden_dim 8
    CHECK_THROWS_AS(s.validate(), ConfigError);

    s = tiny_spec(Arch::cnn_transformer);
    s.transformer_heads = 3;
    CHECK_THROWS_AS(s.validate(), ConfigError);

    s = tiny_spec(Arch::stft_cnn);
    s.stft_n_fft = 21;  // longer than the window
    CHECK_THROWS_AS(s.validate(), ConfigError);

    s = tiny_spec(Arch::resnet_cnn);
    s.nonlinearity = "gelu";
    CHECK_THROWS_AS(s.validate(), ConfigError);

    CHECK_THROWS_AS(arch_from_name("mlp"), ConfigError);
    CHECK_THROWS_AS(norm_kind_from_name("rms"), ConfigError);
    for (Arch a : {Arch::resnet_cnn, Arch::stft_cnn, Arch::cnn_transformer}) {
        CHECK(arch_from_name(arch_name(a)) == a);
    }
    for (NormKind k : {NormKind::none, NormKind::layer, NormKind::batch, NormKind::group}) {
        CHECK(norm_kind_from_name(norm_kind_name(k)) == k);
    }
}
