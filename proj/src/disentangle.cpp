#include "dasd/disentangle.hpp"

#include <cmath>

#include "dasd/errors.hpp"
#include "dasd/rng.hpp"

namespace dasd {

void SdmConfig::validate(const BackboneConfig& backbone) const {
    std::vector<std::string> problems;
    if (layers > backbone.layers) problems.push_back("sdm layers exceed backbone depth");
    if (layers > 0 && bottleneck == 0) problems.push_back("bottleneck must be >= 1");
    if (layers > 0 && bottleneck >= backbone.dim) problems.push_back("bottleneck must be < dim");
    if (layers == 0 && mlp_hidden == 0) problems.push_back("mlp_hidden must be >= 1");
    if (!problems.empty()) {
        std::string msg = "invalid sdm config:";
        for (const auto& p : problems) msg += " " + p + ";";
        throw InvalidConfig(msg);
    }
}

std::map<std::string, Shape> sdm_param_shapes(const BackboneConfig& backbone, const SdmConfig& sdm) {
    sdm.validate(backbone);
    std::map<std::string, Shape> shapes;
    for (const char* branch : {"sr", "sa"}) {
        std::string p = std::string("sdm.") + branch + ".";
        // Only the related branch re-maps the frozen embeddings; handing
        // the adversarially-trained branch a full-rank input remap lets
        // it hash captions into noise instead of shedding semantics.
        if (branch[0] == 's' && branch[1] == 'r') {
            shapes[p + "embed_proj"] = {backbone.dim, backbone.dim};
        }
        if (sdm.layers == 0) {
            shapes[p + "mlp.w1"] = {backbone.dim, sdm.mlp_hidden};
            shapes[p + "mlp.b1"] = {sdm.mlp_hidden};
            shapes[p + "mlp.w2"] = {sdm.mlp_hidden, backbone.dim};
            shapes[p + "mlp.b2"] = {backbone.dim};
        } else {
            for (std::size_t j = 0; j < sdm.layers; ++j) {
                std::string a = p + "adapter" + std::to_string(j) + ".";
                shapes[a + "down"] = {backbone.dim, sdm.bottleneck};
                shapes[a + "up"] = {sdm.bottleneck, backbone.dim};
            }
        }
        shapes[p + "out_proj"] = {backbone.dim, backbone.proj_dim};
    }
    return shapes;
}

std::map<std::string, Shape> discriminator_param_shapes(const BackboneConfig& backbone,
                                                        const DiscConfig& disc) {
    std::map<std::string, Shape> shapes;
    shapes["disc.w1"] = {2 * backbone.proj_dim, disc.hidden1};
    shapes["disc.b1"] = {disc.hidden1};
    shapes["disc.w2"] = {disc.hidden1, disc.hidden2};
    shapes["disc.b2"] = {disc.hidden2};
    shapes["disc.w3"] = {disc.hidden2, 1};
    shapes["disc.b3"] = {1};
    return shapes;
}

namespace {

std::vector<double> identity_matrix(std::size_t n) {
    std::vector<double> data(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) data[i * n + i] = 1.0;
    return data;
}

void insert_initialized(ParamStore& store, const std::map<std::string, Shape>& shapes,
                        SplitMix64& rng) {
    for (const auto& [name, shape] : shapes) {
        std::vector<double> data(numel(shape), 0.0);
        bool is_bias = shape.size() == 1;
        bool is_embed_proj = name.find("embed_proj") != std::string::npos;
        bool is_adapter_up = name.size() > 3 && name.rfind(".up") == name.size() - 3;
        if (is_embed_proj) {
            data = identity_matrix(shape[0]);  // scale-preserving start
        } else if (is_adapter_up) {
            // zero: the adapted pipeline starts exactly at the frozen one
        } else if (!is_bias) {
            bool is_out_proj = name.find("out_proj") != std::string::npos;
            double sigma = is_out_proj ? 1.0 / std::sqrt(static_cast<double>(shape[0]))
                                       : std::sqrt(2.0 / static_cast<double>(shape[0] + shape[1]));
            for (auto& x : data) x = rng.normal(0.0, sigma);
        }
        store.insert(name, Tensor::from_data(shape, std::move(data)));
    }
}

}  // namespace

void init_sdm_params(ParamStore& store, const BackboneConfig& backbone, const SdmConfig& sdm,
                     std::uint64_t seed) {
    SplitMix64 rng = substream(seed, "init.sdm");
    insert_initialized(store, sdm_param_shapes(backbone, sdm), rng);
}

void init_discriminator_params(ParamStore& store, const BackboneConfig& backbone,
                               const DiscConfig& disc, std::uint64_t seed) {
    SplitMix64 rng = substream(seed, "init.disc");
    insert_initialized(store, discriminator_param_shapes(backbone, disc), rng);
}

Tensor static_adapter(const Tensor& x, const Tensor& w_down, const Tensor& w_upper) {
    return matmul(relu(matmul(x, w_down)), w_upper);
}

namespace {

// Shared trunk: projected embeddings through the first frozen layers,
// each followed by the branch adapter with its residual.
Tensor sdm_trunk(const ParamStore& store, const BackboneConfig& backbone, const SdmConfig& sdm,
                 const TokenSequence& tokens, const std::string& branch) {
    if (!store.all_frozen_with_prefix("backbone.")) {
        throw NotFrozen("semantics disentangling requires a frozen backbone");
    }
    const std::string p = "sdm." + branch + ".";
    auto mask = sequence_mask(tokens);
    std::string proj = branch == "sr" ? p + "embed_proj" : "";
    Tensor x = embed_tokens(store, backbone, tokens, EmbeddingSide::kTarget, proj);
    if (sdm.layers == 0) {
        Tensor hidden = relu(add(matmul(x, store.param(p + "mlp.w1")), store.param(p + "mlp.b1")));
        return add(matmul(hidden, store.param(p + "mlp.w2")), store.param(p + "mlp.b2"));
    }
    for (std::size_t j = 0; j < sdm.layers; ++j) {
        Tensor h = transformer_layer(store, backbone, x, j, mask);
        std::string a = p + "adapter" + std::to_string(j) + ".";
        x = add(static_adapter(h, store.param(a + "down"), store.param(a + "up")), h);
    }
    return x;
}

}  // namespace

Tensor extract_semantic_related(const ParamStore& store, const BackboneConfig& backbone,
                                const SdmConfig& sdm, const TokenSequence& tokens) {
    Tensor x = sdm_trunk(store, backbone, sdm, tokens, "sr");
    Tensor normed = layer_norm(x);
    return matmul(row_select(normed, eos_index(tokens)), store.param("sdm.sr.out_proj"));
}

Tensor extract_semantic_agnostic(const ParamStore& store, const BackboneConfig& backbone,
                                 const SdmConfig& sdm, const TokenSequence& tokens) {
    Tensor x = sdm_trunk(store, backbone, sdm, tokens, "sa");
    Tensor pooled = mean_pool_masked(layer_norm(x), sequence_mask(tokens));
    // Normalize the pooled state like the per-row states feeding the
    // related branch; an unbounded pooled scale hands the adversarial
    // game a magnitude channel that drowns the register signal.
    return matmul(layer_norm(pooled), store.param("sdm.sa.out_proj"));
}

DisentangledPair extract_features(const ParamStore& store, const BackboneConfig& backbone,
                                  const SdmConfig& sdm, const TokenSequence& tokens) {
    return DisentangledPair{extract_semantic_related(store, backbone, sdm, tokens),
                            extract_semantic_agnostic(store, backbone, sdm, tokens)};
}

Tensor classify_pair(const ParamStore& store, const DiscConfig& disc, const std::string& prefix,
                     const Tensor& feature, const Tensor& r, DiscriminatorMode mode) {
    if (feature.shape() != r.shape() || feature.shape().size() != 1) {
        throw ShapeMismatch("classifier expects two vectors of projection width");
    }
    auto weight = [&](const char* name) {
        std::string full = prefix + name;
        return mode == DiscriminatorMode::kTrainable ? store.param(full) : store.constant(full);
    };
    const Tensor parts[] = {feature, r};
    Tensor x = concat(parts, 0);
    Tensor h1 = relu(add(matmul(x, weight("w1")), weight("b1")));
    Tensor h2 = relu(add(matmul(h1, weight("w2")), weight("b2")));
    Tensor logit = add(matmul(h2, weight("w3")), weight("b3"));
    return sigmoid(clamp(logit, -disc.logit_clamp, disc.logit_clamp));
}

Tensor discriminate(const ParamStore& store, const DiscConfig& disc, const Tensor& f_sa,
                    const Tensor& r, DiscriminatorMode mode) {
    return classify_pair(store, disc, "disc.", f_sa, r, mode);
}

}  // namespace dasd
