#include "dasd/config.hpp"

#include <fstream>
#include <sstream>

#include "dasd/errors.hpp"
#include "dasd/rng.hpp"
#include "json.hpp"

namespace dasd {

namespace {

using OrderedJson = nlohmann::ordered_json;

ExperimentConfig desk_overrides(ExperimentConfig cfg) {
    cfg.profile = "desk";
    cfg.model.backbone.layers = 4;
    cfg.model.backbone.dim = 64;
    cfg.model.backbone.heads = 4;
    cfg.model.backbone.ffn_dim = 128;
    cfg.model.backbone.max_seq_len = 24;
    cfg.model.backbone.source_vocab = 256;
    cfg.model.backbone.target_vocab = 256;
    cfg.model.backbone.visual_dim = 48;
    cfg.model.backbone.proj_dim = 32;
    cfg.model.backbone.vision_hidden = 64;
    cfg.model.sdm.layers = 1;
    cfg.model.sdm.bottleneck = 8;  // parity with d_u
    cfg.model.sdm.mlp_hidden = 32;
    cfg.model.adapter.d_u = 8;
    cfg.model.adapter.d_z = 32;
    cfg.model.adapter.gen_hidden = 32;
    // Pinned from the tuning runs: longer pretraining overfits the
    // synthetic world and costs held-out recall.
    cfg.pretrain.steps = 600;
    cfg.pretrain.batch = 64;
    cfg.pretrain.lr = 1e-3;
    cfg.pretrain.temperature = 0.07;
    // Paper-scale rates undertrain badly in 2000 desk steps; the desk
    // stage-1 rate is retuned (see the transfer-efficacy gate).
    cfg.cross_lingual.steps = 2000;
    cfg.cross_lingual.lr = 1e-3;
    cfg.cross_lingual.batch = 32;
    cfg.cross_modal.steps = 500;
    cfg.cross_modal.batch = 32;
    cfg.world.n_concepts = 200;
    cfg.world.styles = 4;
    cfg.world.captions_per_concept = 5;
    cfg.world.visual_noise = 0.05;
    cfg.ablation.cl_steps = 400;
    cfg.ablation.cm_steps = 120;
    cfg.ablation.batch = 16;
    cfg.ablation.seeds = 3;
    return cfg;
}

}  // namespace

ExperimentConfig default_config(const std::string& profile) {
    ExperimentConfig cfg;
    cfg.profile = "paper";
    cfg.seed = 42;
    // Backbone defaults follow the published setup this stands in for.
    cfg.model.backbone = BackboneConfig{};
    cfg.model.sdm = SdmConfig{};           // 1 frozen layer, bottleneck 32, hidden 256
    cfg.model.adapter = AdapterConfig{};   // d_u 32, d_z 128, hidden 256
    cfg.model.disc = DiscConfig{};
    cfg.loss = LossWeights{};              // lambda1 1, lambda2 0.1, tau 0.01
    cfg.pretrain = PretrainConfig{};
    cfg.pretrain.batch = 128;
    cfg.cross_lingual = StageConfig{45000, 2e-4, 0.1, 128};
    cfg.cross_modal = StageConfig{6000, 6e-6, 0.1, 128};
    cfg.world = WorldConfig{};
    cfg.world.visual_dim = cfg.model.backbone.visual_dim;
    cfg.world.seed = cfg.seed;

    if (profile == "paper") return cfg;
    if (profile == "desk") {
        ExperimentConfig desk = desk_overrides(cfg);
        desk.world.visual_dim = desk.model.backbone.visual_dim;
        desk.world.seed = desk.seed;
        return desk;
    }
    throw InvalidValue("unknown profile: " + profile + " (expected paper or desk)");
}

void ExperimentConfig::validate() const {
    std::vector<std::string> problems;
    auto collect = [&](const auto& fn) {
        try {
            fn();
        } catch (const Error& e) {
            problems.push_back(e.what());
        }
    };
    collect([&] { model.validate(); });
    collect([&] { loss.validate(); });
    collect([&] { cross_lingual.validate(); });
    collect([&] { cross_modal.validate(); });
    collect([&] { world.validate(); });
    if (world.visual_dim != model.backbone.visual_dim) {
        problems.push_back("world.visual_dim must match backbone.visual_dim");
    }
    if (model.backbone.source_vocab < 256 || model.backbone.target_vocab < 256) {
        problems.push_back("vocabularies must cover the synthetic token ranges (>= 256)");
    }
    if (split_ratio[0] + split_ratio[1] + split_ratio[2] == 0) {
        problems.push_back("split_ratio sums to zero");
    }
    if (pretrain.batch == 0 || !(pretrain.lr > 0)) {
        problems.push_back("pretrain batch/lr invalid");
    }
    if (!(pretrain.temperature > 0)) problems.push_back("pretrain temperature must be > 0");
    if (ablation.batch == 0 || ablation.seeds == 0) {
        problems.push_back("ablation batch/seeds invalid");
    }
    if (!problems.empty()) {
        std::string msg = "invalid config:";
        for (const auto& p : problems) msg += " [" + p + "]";
        throw InvalidValue(msg);
    }
}

namespace {

struct KeyChecker {
    std::vector<std::string> unknown;

    void check(const OrderedJson& node, const std::vector<std::string>& allowed,
               const std::string& path) {
        for (const auto& [key, _] : node.items()) {
            bool ok = false;
            for (const auto& a : allowed) ok = ok || a == key;
            if (!ok) unknown.push_back(path.empty() ? key : path + "." + key);
        }
    }
};

template <typename T>
void read_field(const OrderedJson& node, const char* key, T& out) {
    if (node.contains(key)) out = node.at(key).get<T>();
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    OrderedJson root = OrderedJson::parse(json_text, nullptr, false);
    if (root.is_discarded()) throw InvalidValue("config is not valid JSON");
    if (!root.is_object()) throw InvalidValue("config must be a JSON object");

    std::string profile = "paper";
    read_field(root, "profile", profile);
    ExperimentConfig cfg = default_config(profile);

    KeyChecker keys;
    keys.check(root,
               {"profile", "seed", "backbone", "sdm", "adapter", "discriminator", "loss",
                "joint_training", "pretrain", "cross_lingual", "cross_modal", "world", "corpus",
                "ablation"},
               "");

    read_field(root, "seed", cfg.seed);
    if (root.contains("backbone")) {
        const auto& node = root.at("backbone");
        keys.check(node,
                   {"layers", "dim", "heads", "ffn_dim", "max_seq_len", "source_vocab",
                    "target_vocab", "visual_dim", "proj_dim", "vision_hidden"},
                   "backbone");
        read_field(node, "layers", cfg.model.backbone.layers);
        read_field(node, "dim", cfg.model.backbone.dim);
        read_field(node, "heads", cfg.model.backbone.heads);
        read_field(node, "ffn_dim", cfg.model.backbone.ffn_dim);
        read_field(node, "max_seq_len", cfg.model.backbone.max_seq_len);
        read_field(node, "source_vocab", cfg.model.backbone.source_vocab);
        read_field(node, "target_vocab", cfg.model.backbone.target_vocab);
        read_field(node, "visual_dim", cfg.model.backbone.visual_dim);
        read_field(node, "proj_dim", cfg.model.backbone.proj_dim);
        read_field(node, "vision_hidden", cfg.model.backbone.vision_hidden);
    }
    if (root.contains("sdm")) {
        const auto& node = root.at("sdm");
        keys.check(node, {"layers", "bottleneck", "mlp_hidden"}, "sdm");
        read_field(node, "layers", cfg.model.sdm.layers);
        read_field(node, "bottleneck", cfg.model.sdm.bottleneck);
        read_field(node, "mlp_hidden", cfg.model.sdm.mlp_hidden);
    }
    if (root.contains("adapter")) {
        const auto& node = root.at("adapter");
        keys.check(node, {"d_u", "d_z", "gen_hidden", "dynamic", "use_fsr", "use_fsa"}, "adapter");
        read_field(node, "d_u", cfg.model.adapter.d_u);
        read_field(node, "d_z", cfg.model.adapter.d_z);
        read_field(node, "gen_hidden", cfg.model.adapter.gen_hidden);
        read_field(node, "dynamic", cfg.model.adapter.dynamic);
        read_field(node, "use_fsr", cfg.model.adapter.use_fsr);
        read_field(node, "use_fsa", cfg.model.adapter.use_fsa);
    }
    if (root.contains("discriminator")) {
        const auto& node = root.at("discriminator");
        keys.check(node, {"hidden1", "hidden2", "logit_clamp"}, "discriminator");
        read_field(node, "hidden1", cfg.model.disc.hidden1);
        read_field(node, "hidden2", cfg.model.disc.hidden2);
        read_field(node, "logit_clamp", cfg.model.disc.logit_clamp);
    }
    if (root.contains("loss")) {
        const auto& node = root.at("loss");
        keys.check(node, {"lambda_adv", "lambda_sc", "temperature"}, "loss");
        read_field(node, "lambda_adv", cfg.loss.lambda_adv);
        read_field(node, "lambda_sc", cfg.loss.lambda_sc);
        read_field(node, "temperature", cfg.loss.temperature);
    }
    read_field(root, "joint_training", cfg.joint_training);
    if (root.contains("pretrain")) {
        const auto& node = root.at("pretrain");
        keys.check(node,
                   {"steps", "batch", "lr", "warmup_fraction", "temperature",
                    "finetune_then_freeze", "finetune_steps", "finetune_lr"},
                   "pretrain");
        read_field(node, "steps", cfg.pretrain.steps);
        read_field(node, "batch", cfg.pretrain.batch);
        read_field(node, "lr", cfg.pretrain.lr);
        read_field(node, "warmup_fraction", cfg.pretrain.warmup_fraction);
        read_field(node, "temperature", cfg.pretrain.temperature);
        read_field(node, "finetune_then_freeze", cfg.pretrain.finetune_then_freeze);
        read_field(node, "finetune_steps", cfg.pretrain.finetune_steps);
        read_field(node, "finetune_lr", cfg.pretrain.finetune_lr);
    }
    auto read_stage = [&](const char* key, StageConfig& stage) {
        if (!root.contains(key)) return;
        const auto& node = root.at(key);
        keys.check(node, {"steps", "lr", "warmup_fraction", "batch"}, key);
        read_field(node, "steps", stage.steps);
        read_field(node, "lr", stage.lr);
        read_field(node, "warmup_fraction", stage.warmup_fraction);
        read_field(node, "batch", stage.batch);
    };
    read_stage("cross_lingual", cfg.cross_lingual);
    read_stage("cross_modal", cfg.cross_modal);
    if (root.contains("world")) {
        const auto& node = root.at("world");
        keys.check(node, {"n_concepts", "styles", "captions_per_concept", "visual_noise", "mt_noise"},
                   "world");
        read_field(node, "n_concepts", cfg.world.n_concepts);
        read_field(node, "styles", cfg.world.styles);
        read_field(node, "captions_per_concept", cfg.world.captions_per_concept);
        read_field(node, "visual_noise", cfg.world.visual_noise);
        read_field(node, "mt_noise", cfg.world.mt_noise);
    }
    if (root.contains("corpus")) {
        const auto& node = root.at("corpus");
        keys.check(node, {"zero_shot", "split_ratio"}, "corpus");
        read_field(node, "zero_shot", cfg.zero_shot);
        if (node.contains("split_ratio")) {
            auto ratio = node.at("split_ratio");
            if (!ratio.is_array() || ratio.size() != 3) {
                throw InvalidValue("corpus.split_ratio must be a 3-element array");
            }
            for (std::size_t i = 0; i < 3; ++i) cfg.split_ratio[i] = ratio.at(i).get<std::size_t>();
        }
    }
    if (root.contains("ablation")) {
        const auto& node = root.at("ablation");
        keys.check(node, {"cl_steps", "cm_steps", "batch", "seeds"}, "ablation");
        read_field(node, "cl_steps", cfg.ablation.cl_steps);
        read_field(node, "cm_steps", cfg.ablation.cm_steps);
        read_field(node, "batch", cfg.ablation.batch);
        read_field(node, "seeds", cfg.ablation.seeds);
    }

    if (!keys.unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : keys.unknown) msg += " " + k;
        throw UnknownKey(msg);
    }

    // Wired fields, never read from the file.
    cfg.world.seed = cfg.seed;
    cfg.world.visual_dim = cfg.model.backbone.visual_dim;

    cfg.validate();
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
    OrderedJson root;
    root["profile"] = cfg.profile;
    root["seed"] = cfg.seed;
    root["backbone"] = {{"layers", cfg.model.backbone.layers},
                        {"dim", cfg.model.backbone.dim},
                        {"heads", cfg.model.backbone.heads},
                        {"ffn_dim", cfg.model.backbone.ffn_dim},
                        {"max_seq_len", cfg.model.backbone.max_seq_len},
                        {"source_vocab", cfg.model.backbone.source_vocab},
                        {"target_vocab", cfg.model.backbone.target_vocab},
                        {"visual_dim", cfg.model.backbone.visual_dim},
                        {"proj_dim", cfg.model.backbone.proj_dim},
                        {"vision_hidden", cfg.model.backbone.vision_hidden}};
    root["sdm"] = {{"layers", cfg.model.sdm.layers},
                   {"bottleneck", cfg.model.sdm.bottleneck},
                   {"mlp_hidden", cfg.model.sdm.mlp_hidden}};
    root["adapter"] = {{"d_u", cfg.model.adapter.d_u},
                       {"d_z", cfg.model.adapter.d_z},
                       {"gen_hidden", cfg.model.adapter.gen_hidden},
                       {"dynamic", cfg.model.adapter.dynamic},
                       {"use_fsr", cfg.model.adapter.use_fsr},
                       {"use_fsa", cfg.model.adapter.use_fsa}};
    root["discriminator"] = {{"hidden1", cfg.model.disc.hidden1},
                             {"hidden2", cfg.model.disc.hidden2},
                             {"logit_clamp", cfg.model.disc.logit_clamp}};
    root["loss"] = {{"lambda_adv", cfg.loss.lambda_adv},
                    {"lambda_sc", cfg.loss.lambda_sc},
                    {"temperature", cfg.loss.temperature}};
    root["joint_training"] = cfg.joint_training;
    root["pretrain"] = {{"steps", cfg.pretrain.steps},
                        {"batch", cfg.pretrain.batch},
                        {"lr", cfg.pretrain.lr},
                        {"warmup_fraction", cfg.pretrain.warmup_fraction},
                        {"temperature", cfg.pretrain.temperature},
                        {"finetune_then_freeze", cfg.pretrain.finetune_then_freeze},
                        {"finetune_steps", cfg.pretrain.finetune_steps},
                        {"finetune_lr", cfg.pretrain.finetune_lr}};
    root["cross_lingual"] = {{"steps", cfg.cross_lingual.steps},
                             {"lr", cfg.cross_lingual.lr},
                             {"warmup_fraction", cfg.cross_lingual.warmup_fraction},
                             {"batch", cfg.cross_lingual.batch}};
    root["cross_modal"] = {{"steps", cfg.cross_modal.steps},
                           {"lr", cfg.cross_modal.lr},
                           {"warmup_fraction", cfg.cross_modal.warmup_fraction},
                           {"batch", cfg.cross_modal.batch}};
    root["world"] = {{"n_concepts", cfg.world.n_concepts},
                     {"styles", cfg.world.styles},
                     {"captions_per_concept", cfg.world.captions_per_concept},
                     {"visual_noise", cfg.world.visual_noise},
                     {"mt_noise", cfg.world.mt_noise}};
    root["corpus"] = {{"zero_shot", cfg.zero_shot}, {"split_ratio", cfg.split_ratio}};
    root["ablation"] = {{"cl_steps", cfg.ablation.cl_steps},
                        {"cm_steps", cfg.ablation.cm_steps},
                        {"batch", cfg.ablation.batch},
                        {"seeds", cfg.ablation.seeds}};
    return root.dump(2);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a(config_to_json(cfg)); }

}  // namespace dasd
