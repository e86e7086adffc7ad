#include "dasd/hypernet.hpp"

#include <cmath>

#include "dasd/errors.hpp"
#include "dasd/rng.hpp"

namespace dasd {

void AdapterConfig::validate() const {
    std::vector<std::string> problems;
    if (d_u == 0 || d_z == 0 || gen_hidden == 0) problems.push_back("adapter dims must be >= 1");
    // The generated matrix must stay small next to the global code; the
    // bound d_u <= d_z holds for both the desk and paper profiles.
    if (d_u > d_z) problems.push_back("d_u must not exceed d_z");
    if (!dynamic && (use_fsr != true || use_fsa != true)) {
        // Feature toggles only make sense when a generator exists.
        problems.push_back("feature toggles require the dynamic adapter");
    }
    if (!problems.empty()) {
        std::string msg = "invalid adapter config:";
        for (const auto& p : problems) msg += " " + p + ";";
        throw InvalidConfig(msg);
    }
}

void ModelConfig::validate() const {
    backbone.validate();
    sdm.validate(backbone);
    adapter.validate();
}

std::map<std::string, Shape> generator_param_shapes(const ModelConfig& cfg) {
    std::map<std::string, Shape> shapes;
    if (!cfg.adapter.dynamic) return shapes;
    shapes["gen.mlp.w1"] = {2 * cfg.backbone.proj_dim, cfg.adapter.gen_hidden};
    shapes["gen.mlp.b1"] = {cfg.adapter.gen_hidden};
    shapes["gen.mlp.w2"] = {cfg.adapter.gen_hidden, cfg.adapter.d_z};
    shapes["gen.mlp.b2"] = {cfg.adapter.d_z};
    for (std::size_t i = 0; i < cfg.backbone.layers; ++i) {
        shapes["gen.layer" + std::to_string(i) + ".down"] = {cfg.adapter.d_z,
                                                             cfg.adapter.d_u * cfg.adapter.d_u};
    }
    return shapes;
}

std::map<std::string, Shape> target_branch_param_shapes(const ModelConfig& cfg) {
    std::map<std::string, Shape> shapes;
    shapes["tgt.embed_proj"] = {cfg.backbone.dim, cfg.backbone.dim};
    for (std::size_t i = 0; i < cfg.backbone.layers; ++i) {
        std::string p = "da.layer" + std::to_string(i) + ".";
        shapes[p + "down"] = {cfg.backbone.dim, cfg.adapter.d_u};
        shapes[p + "up"] = {cfg.adapter.d_u, cfg.backbone.dim};
    }
    return shapes;
}

std::map<std::string, Shape> transfer_param_shapes(const ModelConfig& cfg) {
    cfg.validate();
    auto shapes = target_branch_param_shapes(cfg);
    for (auto& [name, shape] : sdm_param_shapes(cfg.backbone, cfg.sdm)) shapes[name] = shape;
    for (auto& [name, shape] : generator_param_shapes(cfg)) shapes[name] = shape;
    for (auto& [name, shape] : discriminator_param_shapes(cfg.backbone, cfg.disc))
        shapes[name] = shape;
    return shapes;
}

std::size_t count_elements(const std::map<std::string, Shape>& shapes) {
    std::size_t n = 0;
    for (const auto& [_, shape] : shapes) n += numel(shape);
    return n;
}

void init_transfer_params(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    init_sdm_params(store, cfg.backbone, cfg.sdm, seed);
    init_discriminator_params(store, cfg.backbone, cfg.disc, seed);

    SplitMix64 rng = substream(seed, "init.target_branch");
    for (const auto& [name, shape] : target_branch_param_shapes(cfg)) {
        std::vector<double> data(numel(shape), 0.0);
        if (name == "tgt.embed_proj") {
            for (std::size_t i = 0; i < shape[0]; ++i) data[i * shape[1] + i] = 1.0;
        } else if (name.rfind(".down") == name.size() - 5) {
            for (auto& x : data) x = rng.normal(0.0, 0.02);
        }
        // .up stays zero: identity start, training perturbs the frozen
        // pipeline gently.
        store.insert(name, Tensor::from_data(shape, std::move(data)));
    }

    SplitMix64 gen_rng = substream(seed, "init.generator");
    for (const auto& [name, shape] : generator_param_shapes(cfg)) {
        std::vector<double> data(numel(shape), 0.0);
        if (shape.size() == 2) {
            double sigma = name.rfind(".down") == name.size() - 5
                               ? 0.02
                               : std::sqrt(2.0 / static_cast<double>(shape[0] + shape[1]));
            for (auto& x : data) x = gen_rng.normal(0.0, sigma);
        }
        store.insert(name, Tensor::from_data(shape, std::move(data)));
    }
}

Tensor global_code(const ParamStore& store, const ModelConfig& cfg, const DisentangledPair& pair) {
    if (!cfg.adapter.dynamic) {
        throw InvalidConfig("global_code requires the dynamic adapter configuration");
    }
    std::size_t p = cfg.backbone.proj_dim;
    if (pair.f_sr.shape() != Shape{p} || pair.f_sa.shape() != Shape{p}) {
        throw ShapeMismatch("global_code expects two projection-width vectors");
    }
    Tensor f_sr = cfg.adapter.use_fsr ? pair.f_sr : Tensor::zeros({p});
    Tensor f_sa = cfg.adapter.use_fsa ? pair.f_sa : Tensor::zeros({p});
    const Tensor parts[] = {f_sr, f_sa};
    Tensor x = concat(parts, 0);
    Tensor hidden = relu(add(matmul(x, store.param("gen.mlp.w1")), store.param("gen.mlp.b1")));
    return add(matmul(hidden, store.param("gen.mlp.w2")), store.param("gen.mlp.b2"));
}

Tensor layer_params(const ParamStore& store, const ModelConfig& cfg, const Tensor& z,
                    std::size_t layer) {
    if (layer >= cfg.backbone.layers) {
        throw LayerOutOfRange("generator layer " + std::to_string(layer) + " out of range");
    }
    Tensor flat = matmul(z, store.param("gen.layer" + std::to_string(layer) + ".down"));
    return reshape(flat, {cfg.adapter.d_u, cfg.adapter.d_u});
}

DynamicParamSet generate_dynamic_params(const ParamStore& store, const ModelConfig& cfg,
                                        const Tensor& z) {
    DynamicParamSet set;
    set.per_layer.reserve(cfg.backbone.layers);
    for (std::size_t i = 0; i < cfg.backbone.layers; ++i) {
        set.per_layer.push_back(layer_params(store, cfg, z, i));
    }
    return set;
}

Tensor dynamic_adapter(const Tensor& h, const Tensor& w_down, const Tensor& w_up,
                       const Tensor& wz) {
    Tensor inner = matmul(h, w_down);
    if (wz.defined()) inner = matmul(inner, wz);
    return add(matmul(relu(inner), w_up), h);
}

namespace {

Tensor target_pipeline(const ParamStore& store, const ModelConfig& cfg,
                       const TokenSequence& tokens, const DynamicParamSet* dyn,
                       bool with_adapters) {
    if (!store.all_frozen_with_prefix("backbone.")) {
        throw NotFrozen("target encoding requires a frozen backbone");
    }
    auto mask = sequence_mask(tokens);
    Tensor x = embed_tokens(store, cfg.backbone, tokens, EmbeddingSide::kTarget, "tgt.embed_proj");
    for (std::size_t i = 0; i < cfg.backbone.layers; ++i) {
        Tensor h = transformer_layer(store, cfg.backbone, x, i, mask);
        if (with_adapters) {
            std::string p = "da.layer" + std::to_string(i) + ".";
            Tensor wz = dyn ? dyn->per_layer[i] : Tensor{};
            x = dynamic_adapter(h, store.param(p + "down"), store.param(p + "up"), wz);
        } else {
            x = h;
        }
    }
    return project_eos_state(store, x, eos_index(tokens));
}

}  // namespace

Tensor encode_target(const ParamStore& store, const ModelConfig& cfg, const TokenSequence& tokens) {
    if (cfg.adapter.dynamic) {
        DisentangledPair pair = extract_features(store, cfg.backbone, cfg.sdm, tokens);
        return encode_target_with_features(store, cfg, tokens, pair);
    }
    return target_pipeline(store, cfg, tokens, nullptr, /*with_adapters=*/true);
}

Tensor encode_target_with_features(const ParamStore& store, const ModelConfig& cfg,
                                   const TokenSequence& tokens, const DisentangledPair& pair) {
    if (!cfg.adapter.dynamic) {
        return target_pipeline(store, cfg, tokens, nullptr, /*with_adapters=*/true);
    }
    Tensor z = global_code(store, cfg, pair);
    DynamicParamSet dyn = generate_dynamic_params(store, cfg, z);
    return target_pipeline(store, cfg, tokens, &dyn, /*with_adapters=*/true);
}

Tensor encode_target_frozen(const ParamStore& store, const ModelConfig& cfg,
                            const TokenSequence& tokens) {
    return target_pipeline(store, cfg, tokens, nullptr, /*with_adapters=*/false);
}

}  // namespace dasd
