#pragma once

#include <map>
#include <string>

#include "dasd/disentangle.hpp"

namespace dasd {

// Input-conditional parameter generation and the dynamic-adapter-equipped
// target-language branch.

struct AdapterConfig {
    std::size_t d_u = 32;        // adapter bottleneck / generated-matrix side
    std::size_t d_z = 128;       // global-code width
    std::size_t gen_hidden = 256;
    bool dynamic = true;         // false: drop the generated inner matrix (static ablation)
    bool use_fsr = true;         // feature toggles for the generator input
    bool use_fsa = true;

    void validate() const;
};

struct ModelConfig {
    BackboneConfig backbone;
    SdmConfig sdm;
    AdapterConfig adapter;
    DiscConfig disc;

    void validate() const;
};

// Per-input generated matrices, one per backbone layer. Regenerated for
// every caption; never serialized.
struct DynamicParamSet {
    std::vector<Tensor> per_layer;  // each (d_u x d_u)
};

std::map<std::string, Shape> generator_param_shapes(const ModelConfig& cfg);       // gen.*
std::map<std::string, Shape> target_branch_param_shapes(const ModelConfig& cfg);   // da.* + tgt.*

// Every trainable transfer parameter: target branch, SDM, generator (when
// dynamic) and discriminator, freshly initialized under the given seed.
void init_transfer_params(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed);

// Shapes of the full trainable set, for parameter counting without
// instantiation.
std::map<std::string, Shape> transfer_param_shapes(const ModelConfig& cfg);
std::size_t count_elements(const std::map<std::string, Shape>& shapes);

// z = MLP(f_sr ∘ f_sa); excluded features enter as zeros so the generator
// input layout never changes between ablation arms.
Tensor global_code(const ParamStore& store, const ModelConfig& cfg, const DisentangledPair& pair);

// Generated inner matrix for one layer: row-major reshape of the linear
// down-projection of z. Layers are zero-based; LayerOutOfRange otherwise.
Tensor layer_params(const ParamStore& store, const ModelConfig& cfg, const Tensor& z,
                    std::size_t layer);

DynamicParamSet generate_dynamic_params(const ParamStore& store, const ModelConfig& cfg,
                                        const Tensor& z);

// One adapter application with its single residual:
//   dynamic: W_up * relu(W_z * (W_down * h)) + h
//   static (wz undefined): W_up * relu(W_down * h) + h
Tensor dynamic_adapter(const Tensor& h, const Tensor& w_down, const Tensor& w_up, const Tensor& wz);

// Full target-language encoding r^T: SDM features, generated adapter
// matrices, then the frozen stack with one adapter after every layer and
// the frozen shared text projection on the [EOS] state.
Tensor encode_target(const ParamStore& store, const ModelConfig& cfg, const TokenSequence& tokens);

// Same pipeline over features the caller already extracted, so training
// steps share one SDM pass between the branch and the disentangling
// losses (gradients flow through the shared nodes).
Tensor encode_target_with_features(const ParamStore& store, const ModelConfig& cfg,
                                   const TokenSequence& tokens, const DisentangledPair& pair);

// Adapter-free reference path (frozen pipeline through W_e^T only).
Tensor encode_target_frozen(const ParamStore& store, const ModelConfig& cfg,
                            const TokenSequence& tokens);

}  // namespace dasd
