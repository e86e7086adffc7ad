#include "dasd/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "dasd/errors.hpp"
#include "dasd/losses.hpp"
#include "dasd/synthdata.hpp"
#include "dasd/trainer.hpp"

namespace dasd {

void BackboneConfig::validate() const {
    std::vector<std::string> problems;
    if (layers == 0) problems.push_back("layers must be >= 1");
    if (dim == 0 || heads == 0 || dim % heads != 0) problems.push_back("dim must be divisible by heads");
    if (ffn_dim == 0) problems.push_back("ffn_dim must be >= 1");
    if (max_seq_len < 3) problems.push_back("max_seq_len must be >= 3");
    if (source_vocab <= kPadToken || target_vocab <= kPadToken)
        problems.push_back("vocabularies must cover the reserved tokens");
    if (visual_dim == 0 || proj_dim == 0 || vision_hidden == 0)
        problems.push_back("visual dims must be >= 1");
    if (!problems.empty()) {
        std::string msg = "invalid backbone config:";
        for (const auto& p : problems) msg += " " + p + ";";
        throw InvalidConfig(msg);
    }
}

std::size_t eos_index(const TokenSequence& tokens) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == kEosToken) return i;
    }
    throw InvalidValue("token sequence has no [EOS]");
}

std::vector<std::uint8_t> sequence_mask(const TokenSequence& tokens) {
    std::size_t eos = eos_index(tokens);
    std::vector<std::uint8_t> mask(tokens.size(), 0);
    for (std::size_t i = 0; i <= eos; ++i) mask[i] = 1;
    return mask;
}

void validate_tokens(const TokenSequence& tokens, const BackboneConfig& cfg, EmbeddingSide side) {
    if (tokens.size() > cfg.max_seq_len) {
        throw SequenceTooLong("sequence of length " + std::to_string(tokens.size()) +
                              " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    std::size_t vocab = side == EmbeddingSide::kSource ? cfg.source_vocab : cfg.target_vocab;
    for (auto id : tokens) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw VocabOverflow("token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(vocab));
        }
    }
    (void)eos_index(tokens);
}

std::map<std::string, Shape> backbone_param_shapes(const BackboneConfig& cfg) {
    std::map<std::string, Shape> shapes;
    shapes["backbone.src_embed"] = {cfg.source_vocab, cfg.dim};
    shapes["backbone.tgt_embed"] = {cfg.target_vocab, cfg.dim};
    shapes["backbone.pos_embed"] = {cfg.max_seq_len, cfg.dim};
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        std::string p = "backbone.layer" + std::to_string(i) + ".";
        shapes[p + "attn_wq"] = {cfg.dim, cfg.dim};
        shapes[p + "attn_bq"] = {cfg.dim};
        shapes[p + "attn_wk"] = {cfg.dim, cfg.dim};
        shapes[p + "attn_bk"] = {cfg.dim};
        shapes[p + "attn_wv"] = {cfg.dim, cfg.dim};
        shapes[p + "attn_bv"] = {cfg.dim};
        shapes[p + "attn_wo"] = {cfg.dim, cfg.dim};
        shapes[p + "attn_bo"] = {cfg.dim};
        shapes[p + "ffn_w1"] = {cfg.dim, cfg.ffn_dim};
        shapes[p + "ffn_b1"] = {cfg.ffn_dim};
        shapes[p + "ffn_w2"] = {cfg.ffn_dim, cfg.dim};
        shapes[p + "ffn_b2"] = {cfg.dim};
    }
    shapes["backbone.text_proj"] = {cfg.dim, cfg.proj_dim};
    shapes["backbone.vision.w1"] = {cfg.visual_dim, cfg.vision_hidden};
    shapes["backbone.vision.b1"] = {cfg.vision_hidden};
    shapes["backbone.vision.w2"] = {cfg.vision_hidden, cfg.proj_dim};
    shapes["backbone.vision.b2"] = {cfg.proj_dim};
    return shapes;
}

namespace {

// The frozen target table stands in for a pretrained multilingual
// embedding block, so it carries coarse structure rather than pure
// noise: tokens of one syntactic family share a cluster center.
std::vector<double> structured_target_table(const Shape& shape, SplitMix64& rng) {
    const std::size_t vocab = shape[0], dim = shape[1];
    const int families = 12;
    std::vector<std::vector<double>> centers(families, std::vector<double>(dim));
    for (auto& center : centers) {
        for (auto& x : center) x = rng.normal(0.0, 0.07);
    }
    auto family_of = [&](std::size_t token) {
        if (token < 3) return 0;          // specials
        if (token < 128) return 1;        // ids the target language never uses
        if (token < 136) return 2;        // quantifiers
        if (token < 152) return 3;        // modifiers
        if (token < 216) return 4;        // objects
        if (token < 230) return 5;        // locations
        if (token < 256) {
            // Function words cluster by syntactic role; each register's
            // private block forms its own subfamily.
            return 6 + static_cast<int>((token - 230) / 6) % 5;
        }
        return 11;
    };
    std::vector<double> data(vocab * dim);
    for (std::size_t t = 0; t < vocab; ++t) {
        const auto& center = centers[family_of(t)];
        for (std::size_t d = 0; d < dim; ++d) {
            data[t * dim + d] = center[d] + rng.normal(0.0, 0.07);
        }
    }
    return data;
}

}  // namespace

void init_backbone_params(ParamStore& store, const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    auto shapes = backbone_param_shapes(cfg);
    SplitMix64 rng = substream(seed, "init.backbone");
    for (const auto& [name, shape] : shapes) {
        std::vector<double> data(numel(shape), 0.0);
        bool is_bias = shape.size() == 1;
        if (name == "backbone.tgt_embed") {
            data = structured_target_table(shape, rng);
        } else if (!is_bias) {
            double sigma;
            if (name == "backbone.pos_embed") {
                sigma = 0.02;
            } else if (name == "backbone.src_embed") {
                sigma = 0.1;
            } else {
                // Xavier-style scale for the projection matrices.
                sigma = std::sqrt(2.0 / static_cast<double>(shape[0] + shape[1]));
            }
            for (auto& x : data) x = rng.normal(0.0, sigma);
        } else if (name.rfind("backbone.vision.", 0) == 0) {
            // Non-zero bias so the head is not positively homogeneous
            // even before training.
            for (auto& x : data) x = rng.normal(0.0, 0.02);
        }
        // The target embedding table stands in for a pretrained frozen
        // embedding block; it is never trained, not even in pretraining.
        bool frozen = name == "backbone.tgt_embed";
        store.insert(name, Tensor::from_data(shape, std::move(data)), frozen);
    }
}

Tensor embed_tokens(const ParamStore& store, const BackboneConfig& cfg,
                    const TokenSequence& tokens, EmbeddingSide side,
                    const std::string& proj_name) {
    validate_tokens(tokens, cfg, side);
    const char* table = side == EmbeddingSide::kSource ? "backbone.src_embed" : "backbone.tgt_embed";
    Tensor embedded = gather_rows(store.param(table), tokens);
    if (!proj_name.empty()) {
        embedded = matmul(embedded, store.param(proj_name));
    }
    Tensor positions = gather_rows(store.param("backbone.pos_embed"), [&] {
        std::vector<std::int32_t> idx(tokens.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int32_t>(i);
        return idx;
    }());
    return add(embedded, positions);
}

Tensor transformer_layer(const ParamStore& store, const BackboneConfig& cfg, const Tensor& x,
                         std::size_t layer_index, const std::vector<std::uint8_t>& mask) {
    if (layer_index >= cfg.layers) {
        throw LayerOutOfRange("layer " + std::to_string(layer_index) + " out of range");
    }
    if (x.shape().size() != 2 || x.shape()[1] != cfg.dim) {
        throw ShapeMismatch("transformer_layer expects (seq x dim), got " + shape_str(x.shape()));
    }
    const std::string p = "backbone.layer" + std::to_string(layer_index) + ".";
    const std::size_t head_dim = cfg.dim / cfg.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Tensor normed = layer_norm(x);
    Tensor q = add(matmul(normed, store.param(p + "attn_wq")), store.param(p + "attn_bq"));
    Tensor k = add(matmul(normed, store.param(p + "attn_wk")), store.param(p + "attn_bk"));
    Tensor v = add(matmul(normed, store.param(p + "attn_wv")), store.param(p + "attn_bv"));

    std::vector<Tensor> head_outputs;
    head_outputs.reserve(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        std::size_t lo = h * head_dim, hi = lo + head_dim;
        Tensor qh = slice_cols(q, lo, hi);
        Tensor kh = slice_cols(k, lo, hi);
        Tensor vh = slice_cols(v, lo, hi);
        Tensor scores = scalar_mul(matmul(qh, transpose(kh)), scale);
        Tensor weights = softmax(scores, mask);  // masked keys get zero weight
        head_outputs.push_back(matmul(weights, vh));
    }
    Tensor attn = concat(head_outputs, 1);
    Tensor attn_out = add(matmul(attn, store.param(p + "attn_wo")), store.param(p + "attn_bo"));
    Tensor x1 = add(x, attn_out);

    Tensor ffn_in = layer_norm(x1);
    Tensor hidden = relu(add(matmul(ffn_in, store.param(p + "ffn_w1")), store.param(p + "ffn_b1")));
    Tensor ffn_out = add(matmul(hidden, store.param(p + "ffn_w2")), store.param(p + "ffn_b2"));
    return add(x1, ffn_out);
}

Tensor project_eos_state(const ParamStore& store, const Tensor& hidden, std::size_t eos_pos) {
    Tensor normed = layer_norm(hidden);
    return matmul(row_select(normed, eos_pos), store.param("backbone.text_proj"));
}

Tensor encode_source(const ParamStore& store, const BackboneConfig& cfg,
                     const TokenSequence& tokens, bool allow_unfrozen) {
    if (!allow_unfrozen && !store.all_frozen_with_prefix("backbone.")) {
        throw NotFrozen("encode_source called before the backbone was frozen");
    }
    auto mask = sequence_mask(tokens);
    Tensor x = embed_tokens(store, cfg, tokens, EmbeddingSide::kSource);
    for (std::size_t i = 0; i < cfg.layers; ++i) x = transformer_layer(store, cfg, x, i, mask);
    return project_eos_state(store, x, eos_index(tokens));
}

Tensor encode_vision(const ParamStore& store, const BackboneConfig& cfg, const VisualFeature& v) {
    if (v.size() != cfg.visual_dim) {
        throw ShapeMismatch("visual feature has " + std::to_string(v.size()) + " entries, expected " +
                            std::to_string(cfg.visual_dim));
    }
    Tensor x = Tensor::from_data({cfg.visual_dim}, v);
    Tensor hidden = relu(add(matmul(x, store.param("backbone.vision.w1")),
                             store.param("backbone.vision.b1")));
    return add(matmul(hidden, store.param("backbone.vision.w2")), store.param("backbone.vision.b2"));
}

namespace {

// Concept-distinct batch of train indices; duplicate concepts in one
// contrastive batch would put identical gallery rows on both sides of
// the softmax.
std::vector<std::size_t> sample_batch(const std::vector<TripletExample>& items, std::size_t batch,
                                      SplitMix64& rng) {
    std::vector<std::size_t> picked;
    std::vector<int> used_concepts;
    picked.reserve(batch);
    std::size_t guard = 0;
    while (picked.size() < batch && guard < batch * 200) {
        ++guard;
        std::size_t idx = static_cast<std::size_t>(rng.below(items.size()));
        int cid = items[idx].concept_id;
        bool clash = false;
        for (int c : used_concepts) clash = clash || c == cid;
        if (clash) continue;
        picked.push_back(idx);
        used_concepts.push_back(cid);
    }
    if (picked.size() < batch) {
        // Tiny corpora cannot always supply distinct concepts; pad with
        // repeats rather than spinning forever.
        while (picked.size() < batch)
            picked.push_back(static_cast<std::size_t>(rng.below(items.size())));
    }
    return picked;
}

}  // namespace

PretrainReport pretrain_backbone(ParamStore& store, const BackboneConfig& cfg,
                                 const Corpus& corpus, const PretrainConfig& pcfg,
                                 std::uint64_t seed) {
    cfg.validate();
    if (corpus.train.empty()) throw EmptySplit("pretraining corpus has no train split");

    PretrainReport report;
    AdamState adam;
    SplitMix64 rng = substream(seed, "pretrain");

    auto run_steps = [&](std::size_t steps, double lr) {
        for (std::size_t step = 0; step < steps; ++step) {
            auto batch = sample_batch(corpus.train, pcfg.batch, rng);
            GradTape tape;
            double loss_value;
            GradMap grads;
            try {
                TapeScope scope(tape);
                std::vector<Tensor> text_rows, vision_rows;
                text_rows.reserve(batch.size());
                vision_rows.reserve(batch.size());
                for (std::size_t idx : batch) {
                    const auto& ex = corpus.train[idx];
                    text_rows.push_back(encode_source(store, cfg, ex.source_tokens,
                                                      /*allow_unfrozen=*/true));
                    vision_rows.push_back(encode_vision(store, cfg, ex.visual));
                }
                Tensor loss = cross_modal_nce(stack_rows(text_rows), stack_rows(vision_rows),
                                              pcfg.temperature);
                loss_value = loss.value();
                grads = backward(loss, tape);
            } catch (const NonFinite& e) {
                throw DivergedTraining(std::string("pretraining diverged: ") + e.what());
            }
            if (!std::isfinite(loss_value)) {
                throw DivergedTraining("pretraining loss is not finite");
            }
            report.loss_trace.push_back(loss_value);
            report.final_loss = loss_value;
            adam_update(store, grads, adam, warmup_lr(lr, step, steps, pcfg.warmup_fraction));
        }
    };

    run_steps(pcfg.steps, pcfg.lr);
    if (pcfg.finetune_then_freeze) {
        run_steps(pcfg.finetune_steps, pcfg.finetune_lr);
    }
    store.freeze_prefix("backbone.");

    ModelConfig eval_cfg;
    eval_cfg.backbone = cfg;
    RetrievalMetrics metrics =
        evaluate_retrieval(store, eval_cfg, corpus.test, TextBranch::kSource);
    report.heldout_recall_at_1 = metrics.r1_tv;
    return report;
}

}  // namespace dasd
