#pragma once

#include <map>
#include <string>

#include "dasd/backbone.hpp"
#include "dasd/param_store.hpp"
#include "dasd/tensor.hpp"

namespace dasd {

// Semantics disentangling: semantic-related and semantic-agnostic feature
// extraction over the first frozen backbone layer(s), each branch with its
// own lightweight bottleneck adapter and output projection. The two
// branches share only frozen weights, so adversarial gradients can never
// leak into the semantic-related path.

struct SdmConfig {
    // Frozen backbone layers used as the extraction trunk. 0 swaps the
    // trunk for a trainable one-hidden-layer MLP (layer-count sweep).
    std::size_t layers = 1;
    std::size_t bottleneck = 32;   // adapter bottleneck width
    std::size_t mlp_hidden = 256;  // hidden size of the layers==0 variant

    void validate(const BackboneConfig& backbone) const;
};

struct DiscConfig {
    std::size_t hidden1 = 64;
    std::size_t hidden2 = 32;
    double logit_clamp = 15.0;  // keeps probabilities strictly inside (0, 1)
};

struct DisentangledPair {
    Tensor f_sr;
    Tensor f_sa;
};

std::map<std::string, Shape> sdm_param_shapes(const BackboneConfig& backbone, const SdmConfig& sdm);
std::map<std::string, Shape> discriminator_param_shapes(const BackboneConfig& backbone,
                                                        const DiscConfig& disc);

void init_sdm_params(ParamStore& store, const BackboneConfig& backbone, const SdmConfig& sdm,
                     std::uint64_t seed);
void init_discriminator_params(ParamStore& store, const BackboneConfig& backbone,
                               const DiscConfig& disc, std::uint64_t seed);

// Bottleneck projection W_upper * relu(W_down * x); the residual add is
// the caller's, so the closed form stays literal.
Tensor static_adapter(const Tensor& x, const Tensor& w_down, const Tensor& w_upper);

Tensor extract_semantic_related(const ParamStore& store, const BackboneConfig& backbone,
                                const SdmConfig& sdm, const TokenSequence& tokens);
Tensor extract_semantic_agnostic(const ParamStore& store, const BackboneConfig& backbone,
                                 const SdmConfig& sdm, const TokenSequence& tokens);
DisentangledPair extract_features(const ParamStore& store, const BackboneConfig& backbone,
                                  const SdmConfig& sdm, const TokenSequence& tokens);

enum class DiscriminatorMode {
    kTrainable,  // live discriminator weights (its own update step)
    kDetached,   // constant weights (confusion step for the sa-branch)
};

// P(pair is matched) from the feed-forward classifier over concat(f_sa, r),
// logits clamped so log terms stay finite.
Tensor discriminate(const ParamStore& store, const DiscConfig& disc, const Tensor& f_sa,
                    const Tensor& r, DiscriminatorMode mode);

// Same classifier shape under an arbitrary prefix; used for the fresh
// probe that checks how much semantic signal a feature still carries.
Tensor classify_pair(const ParamStore& store, const DiscConfig& disc, const std::string& prefix,
                     const Tensor& feature, const Tensor& r, DiscriminatorMode mode);

}  // namespace dasd
