#include <cmath>
#include <cstring>
#include <filesystem>

#include "dasd/backbone.hpp"
#include "dasd/gradcheck.hpp"
#include "dasd/rng.hpp"
#include "dasd/synthdata.hpp"
#include "dasd/trainer.hpp"
#include "doctest.h"

using namespace dasd;

namespace {

BackboneConfig tiny_backbone() {
    BackboneConfig cfg;
    cfg.layers = 2;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.ffn_dim = 32;
    cfg.max_seq_len = 12;
    // The synthetic world draws token ids from fixed 256-wide ranges.
    cfg.source_vocab = 256;
    cfg.target_vocab = 256;
    cfg.visual_dim = 8;
    cfg.proj_dim = 8;
    cfg.vision_hidden = 12;
    return cfg;
}

ParamStore tiny_store(const BackboneConfig& cfg, std::uint64_t seed = 1, bool frozen = true) {
    ParamStore store;
    init_backbone_params(store, cfg, seed);
    if (frozen) store.freeze_prefix("backbone.");
    return store;
}

}  // namespace

TEST_CASE("config validation") {
    BackboneConfig cfg = tiny_backbone();
    cfg.heads = 3;  // 16 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg = tiny_backbone();
    cfg.max_seq_len = 2;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
}

TEST_CASE("embed_tokens shapes and positional additivity") {
    BackboneConfig cfg = tiny_backbone();
    ParamStore store = tiny_store(cfg);

    TokenSequence minimal = {kSosToken, kEosToken};
    Tensor e = embed_tokens(store, cfg, minimal, EmbeddingSide::kSource);
    CHECK(e.shape() == Shape{2, 16});
    // Row i equals table row + position row.
    const auto& table = store.param("backbone.src_embed").data();
    const auto& pos = store.param("backbone.pos_embed").data();
    for (std::size_t j = 0; j < 16; ++j) {
        CHECK(e.at(0, j) == table[kSosToken * 16 + j] + pos[0 * 16 + j]);
        CHECK(e.at(1, j) == table[kEosToken * 16 + j] + pos[1 * 16 + j]);
    }

    // Swapping two tokens changes rows exactly by the positional difference.
    TokenSequence ab = {kSosToken, 10, 11, kEosToken};
    TokenSequence ba = {kSosToken, 11, 10, kEosToken};
    Tensor ea = embed_tokens(store, cfg, ab, EmbeddingSide::kSource);
    Tensor eb = embed_tokens(store, cfg, ba, EmbeddingSide::kSource);
    for (std::size_t j = 0; j < 16; ++j) {
        double lhs = ea.at(1, j) - pos[1 * 16 + j];
        double rhs = eb.at(2, j) - pos[2 * 16 + j];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-15));
    }
}

TEST_CASE("desk config shape arithmetic: 7 tokens -> 9 x 64") {
    BackboneConfig cfg;
    cfg.layers = 4;
    cfg.dim = 64;
    cfg.heads = 4;
    cfg.ffn_dim = 128;
    cfg.max_seq_len = 24;
    cfg.source_vocab = 256;
    cfg.target_vocab = 256;
    cfg.visual_dim = 48;
    cfg.proj_dim = 32;
    cfg.vision_hidden = 64;
    ParamStore store = tiny_store(cfg, 2);
    TokenSequence caption = {kSosToken, 10, 11, 12, 13, 14, 15, 16, kEosToken};
    CHECK(caption.size() == 9);
    Tensor e = embed_tokens(store, cfg, caption, EmbeddingSide::kSource);
    CHECK(e.shape() == Shape{9, 64});
}

TEST_CASE("embed_tokens rejects vocabulary overflow and long sequences") {
    BackboneConfig cfg = tiny_backbone();
    ParamStore store = tiny_store(cfg);
    TokenSequence overflow = {kSosToken, 256, kEosToken};
    CHECK_THROWS_AS((void)embed_tokens(store, cfg, overflow, EmbeddingSide::kSource),
                    VocabOverflow);
    TokenSequence too_long(cfg.max_seq_len + 1, 5);
    too_long.front() = kSosToken;
    too_long.back() = kEosToken;
    CHECK_THROWS_AS((void)embed_tokens(store, cfg, too_long, EmbeddingSide::kSource),
                    SequenceTooLong);
}

TEST_CASE("transformer layer: single position attends to itself") {
    BackboneConfig cfg = tiny_backbone();
    ParamStore store = tiny_store(cfg);
    SplitMix64 rng(5);
    std::vector<double> row(cfg.dim);
    for (auto& v : row) v = rng.uniform(-1, 1);
    Tensor x = Tensor::from_data({1, cfg.dim}, row);
    Tensor out = transformer_layer(store, cfg, x, 0, {1});
    CHECK(out.shape() == Shape{1, cfg.dim});
    // Attention over one position is the identity mix; output equals the
    // residual stack applied to that single token.
    Tensor again = transformer_layer(store, cfg, x, 0, {1});
    CHECK(out.data() == again.data());
}

TEST_CASE("masked padding rows do not affect unmasked outputs") {
    BackboneConfig cfg = tiny_backbone();
    ParamStore store = tiny_store(cfg);
    TokenSequence clean = {kSosToken, 9, 12, kEosToken};
    TokenSequence padded = clean;
    padded.push_back(kPadToken);
    padded.push_back(kPadToken);

    Tensor r_clean = encode_source(store, cfg, clean);
    Tensor r_padded = encode_source(store, cfg, padded);
    CHECK(r_clean.data() == r_padded.data());

    // Garbage beyond the mask: swap pad token id for another id entirely.
    TokenSequence garbage = clean;
    garbage.push_back(33);
    garbage.push_back(7);
    Tensor r_garbage = encode_source(store, cfg, garbage);
    CHECK(r_clean.data() == r_garbage.data());
}

TEST_CASE("attention rows over unmasked positions sum to one") {
    BackboneConfig cfg = tiny_backbone();
    ParamStore store = tiny_store(cfg);
    SplitMix64 rng(6);
    std::vector<double> data(5 * cfg.dim);
    for (auto& v : data) v = rng.uniform(-1, 1);
    Tensor q = Tensor::from_data({5, 5}, std::vector<double>(25, 0.3));
    std::vector<std::uint8_t> mask = {1, 1, 1, 0, 0};
    Tensor w = softmax(q, mask);
    for (std::size_t i = 0; i < 5; ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < 5; ++j) sum += w.at(i, j);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(w.at(i, 3) == 0.0);
        CHECK(w.at(i, 4) == 0.0);
    }
}

TEST_CASE("encode_source is deterministic and refuses an unfrozen backbone") {
    BackboneConfig cfg = tiny_backbone();
    ParamStore unfrozen = tiny_store(cfg, 3, /*frozen=*/false);
    TokenSequence caption = {kSosToken, 5, 6, 7, kEosToken};
    CHECK_THROWS_AS((void)encode_source(unfrozen, cfg, caption), NotFrozen);
    CHECK_NOTHROW((void)encode_source(unfrozen, cfg, caption, /*allow_unfrozen=*/true));

    ParamStore store = tiny_store(cfg, 3);
    Tensor a = encode_source(store, cfg, caption);
    Tensor b = encode_source(store, cfg, caption);
    CHECK(a.data() == b.data());
    CHECK(a.shape() == Shape{cfg.proj_dim});
    double norm = 0;
    for (double v : a.data()) norm += v * v;
    CHECK(norm > 0.0);
}

TEST_CASE("encode_vision: zero input hits the bias path; scaling is non-homogeneous") {
    BackboneConfig cfg = tiny_backbone();
    ParamStore store = tiny_store(cfg, 4);
    VisualFeature zero(cfg.visual_dim, 0.0);
    Tensor r0 = encode_vision(store, cfg, zero);

    // Bias path computed directly.
    const auto& b1 = store.param("backbone.vision.b1").data();
    const auto& w2 = store.param("backbone.vision.w2").data();
    const auto& b2 = store.param("backbone.vision.b2").data();
    for (std::size_t j = 0; j < cfg.proj_dim; ++j) {
        double expected = b2[j];
        for (std::size_t h = 0; h < cfg.vision_hidden; ++h) {
            expected += (b1[h] > 0 ? b1[h] : 0.0) * w2[h * cfg.proj_dim + j];
        }
        CHECK(r0.at(j) == doctest::Approx(expected).epsilon(1e-12));
    }

    SplitMix64 rng(9);
    VisualFeature v(cfg.visual_dim);
    for (auto& x : v) x = rng.uniform(-1, 1);
    Tensor r1 = encode_vision(store, cfg, v);
    VisualFeature v2 = v;
    for (auto& x : v2) x *= 2.0;
    Tensor r2 = encode_vision(store, cfg, v2);
    double diff = 0;
    for (std::size_t j = 0; j < cfg.proj_dim; ++j) {
        diff += std::abs(r2.at(j) - 2.0 * r1.at(j));
    }
    CHECK(diff > 1e-9);  // relu breaks homogeneity
}

TEST_CASE("gradients flow through a transformer layer to upstream inputs") {
    BackboneConfig cfg = tiny_backbone();
    ParamStore store = tiny_store(cfg);
    SplitMix64 rng(17);
    std::vector<double> data(3 * cfg.dim);
    for (auto& v : data) v = rng.uniform(-0.5, 0.5);
    std::vector<std::uint8_t> mask = {1, 1, 1};
    auto fn = [&](std::span<const Tensor> leaves) {
        Tensor out = transformer_layer(store, cfg, leaves[0], 0, mask);
        return squared_l2(row_select(out, 2), Tensor::full({cfg.dim}, 0.1));
    };
    auto result = finite_difference_check(fn, std::vector<Tensor>{Tensor::from_data({3, cfg.dim}, data)});
    CHECK(result.max_rel_error < 1e-4);
}

TEST_CASE("pretraining contract: freeze flag and FrozenWrite") {
    BackboneConfig cfg = tiny_backbone();
    ParamStore store = tiny_store(cfg, 8, /*frozen=*/true);
    AdamState state;
    GradMap grads;
    grads.emplace("backbone.text_proj",
                  Tensor::zeros(store.param("backbone.text_proj").shape()));
    CHECK_THROWS_AS(adam_update(store, grads, state, 1e-3), FrozenWrite);
}

TEST_CASE("short deterministic pretraining run reproduces bit-identically") {
    BackboneConfig cfg = tiny_backbone();
    WorldConfig wcfg;
    wcfg.seed = 77;
    wcfg.n_concepts = 24;
    wcfg.styles = 2;
    wcfg.captions_per_concept = 2;
    wcfg.visual_dim = cfg.visual_dim;
    wcfg.visual_noise = 0.02;
    Corpus corpus = build_corpus(gen_world(wcfg), {8, 1, 1}, false);

    PretrainConfig pcfg;
    pcfg.steps = 12;
    pcfg.batch = 6;
    pcfg.lr = 1e-3;
    pcfg.temperature = 0.1;

    auto run = [&] {
        ParamStore store;
        init_backbone_params(store, cfg, 55);
        PretrainReport report = pretrain_backbone(store, cfg, corpus, pcfg, 55);
        return std::pair(report.loss_trace, store.snapshot_bytes("backbone."));
    };
    auto a = run();
    auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);

    // Golden regression within this build: first run writes the file,
    // later runs must match bit-exactly. The name carries the compile
    // stamp so a rebuilt binary starts a fresh golden.
    auto golden_path = std::filesystem::temp_directory_path() /
                       ("dasd_pretrain_golden_" +
                        std::to_string(fnv1a(__DATE__ __TIME__) & 0xFFFFFFFF) + ".bin");
    std::vector<unsigned char> bytes = a.second;
    if (!std::filesystem::exists(golden_path)) {
        FILE* f = std::fopen(golden_path.string().c_str(), "wb");
        REQUIRE(f);
        std::fwrite(bytes.data(), 1, bytes.size(), f);
        std::fclose(f);
    }
    FILE* f = std::fopen(golden_path.string().c_str(), "rb");
    REQUIRE(f);
    std::fseek(f, 0, SEEK_END);
    long n = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<unsigned char> golden(static_cast<std::size_t>(n));
    REQUIRE(std::fread(golden.data(), 1, golden.size(), f) == golden.size());
    std::fclose(f);
    CHECK(bytes == golden);
}

TEST_CASE("zero pretraining steps leaves retrieval near chance") {
    BackboneConfig cfg = tiny_backbone();
    WorldConfig wcfg;
    wcfg.seed = 99;
    wcfg.n_concepts = 40;
    wcfg.styles = 2;
    wcfg.captions_per_concept = 2;
    wcfg.visual_dim = cfg.visual_dim;
    Corpus corpus = build_corpus(gen_world(wcfg), {8, 1, 1}, false);

    PretrainConfig pcfg;
    pcfg.steps = 0;
    ParamStore store;
    init_backbone_params(store, cfg, 100);
    PretrainReport report = pretrain_backbone(store, cfg, corpus, pcfg, 100);
    // Gallery has ~40 concepts; random features should sit within a few
    // multiples of chance.
    CHECK(report.heldout_recall_at_1 <= 5.0 / 20.0);
    CHECK(store.all_frozen_with_prefix("backbone."));
}
