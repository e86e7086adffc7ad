#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dasd/param_store.hpp"
#include "dasd/rng.hpp"
#include "dasd/tensor.hpp"

namespace dasd {

// Reserved token ids, shared by both vocabularies.
constexpr std::int32_t kSosToken = 0;
constexpr std::int32_t kEosToken = 1;
constexpr std::int32_t kPadToken = 2;

using TokenSequence = std::vector<std::int32_t>;
using VisualFeature = std::vector<double>;

struct BackboneConfig {
    std::size_t layers = 12;
    std::size_t dim = 512;
    std::size_t heads = 8;
    std::size_t ffn_dim = 2048;
    std::size_t max_seq_len = 77;
    std::size_t source_vocab = 49408;
    std::size_t target_vocab = 49408;
    std::size_t visual_dim = 768;
    std::size_t proj_dim = 512;
    std::size_t vision_hidden = 256;

    void validate() const;  // InvalidConfig on violation
};

enum class EmbeddingSide { kSource, kTarget };

// Position of the [EOS] token; SequenceTooLong / VocabOverflow checks.
std::size_t eos_index(const TokenSequence& tokens);
std::vector<std::uint8_t> sequence_mask(const TokenSequence& tokens);
void validate_tokens(const TokenSequence& tokens, const BackboneConfig& cfg, EmbeddingSide side);

// Shapes of every backbone parameter, keyed by name. Init and the
// parameter-count checks both derive from this single map.
std::map<std::string, Shape> backbone_param_shapes(const BackboneConfig& cfg);

// Inserts freshly initialized backbone parameters (prefix "backbone.").
// The target embedding table stands in for a frozen pretrained embedding
// block and is inserted frozen from the start.
void init_backbone_params(ParamStore& store, const BackboneConfig& cfg, std::uint64_t seed);

// Token embeddings + positions: row i = projection(table[token_i]) + pos[i].
// Source side uses the identity projection; the target side applies the
// trainable dimension-consistency projection named by proj_name.
Tensor embed_tokens(const ParamStore& store, const BackboneConfig& cfg,
                    const TokenSequence& tokens, EmbeddingSide side,
                    const std::string& proj_name = "");

// Pre-norm self-attention + FFN block using frozen backbone weights.
Tensor transformer_layer(const ParamStore& store, const BackboneConfig& cfg, const Tensor& x,
                         std::size_t layer_index, const std::vector<std::uint8_t>& mask);

// Final norm + [EOS] projection shared by every text branch.
Tensor project_eos_state(const ParamStore& store, const Tensor& hidden, std::size_t eos_pos);

// r^S from a source caption through the full frozen stack. Raises
// NotFrozen when any backbone parameter is still trainable, unless
// allow_unfrozen (pretraining path).
Tensor encode_source(const ParamStore& store, const BackboneConfig& cfg,
                     const TokenSequence& tokens, bool allow_unfrozen = false);

// r^V through the two-layer MLP vision head.
Tensor encode_vision(const ParamStore& store, const BackboneConfig& cfg, const VisualFeature& v);

struct PretrainConfig {
    std::size_t steps = 3000;
    std::size_t batch = 32;
    double lr = 1e-3;
    double warmup_fraction = 0.1;
    double temperature = 0.05;
    // Optional short source-side refinement pass before freezing, at the
    // much smaller finetune rate; off by default.
    bool finetune_then_freeze = false;
    std::size_t finetune_steps = 200;
    double finetune_lr = 3e-6;
};

class Corpus;  // synthdata

struct PretrainReport {
    double final_loss = 0.0;
    double heldout_recall_at_1 = 0.0;
    std::vector<double> loss_trace;
};

// NCE pretraining of the source encoder against the vision head on
// source-language pairs only; freezes everything under "backbone." when
// done. DivergedTraining if the loss turns non-finite.
PretrainReport pretrain_backbone(ParamStore& store, const BackboneConfig& cfg,
                                 const Corpus& corpus, const PretrainConfig& pcfg,
                                 std::uint64_t seed);

}  // namespace dasd
