#include "dasd/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include "dasd/errors.hpp"
#include "dasd/report.hpp"
#include "dasd/rng.hpp"

namespace dasd {

namespace fs = std::filesystem;

namespace {

constexpr const char* kSummarySchema = "dasd.summary.v1";

Json summary_base(const char* command, const ExperimentConfig& cfg) {
    Json j;
    j["schema"] = kSummarySchema;
    j["command"] = command;
    j["seed"] = cfg.seed;
    j["profile"] = cfg.profile;
    j["config_hash"] = config_hash(cfg);
    return j;
}

Json metrics_to_json(const RetrievalMetrics& m) {
    Json j;
    j["r1_tv"] = m.r1_tv;
    j["r5_tv"] = m.r5_tv;
    j["r10_tv"] = m.r10_tv;
    j["r1_vt"] = m.r1_vt;
    j["r5_vt"] = m.r5_vt;
    j["r10_vt"] = m.r10_vt;
    j["mAR"] = m.mAR;
    j["median_rank_tv"] = m.median_rank_tv;
    j["median_rank_vt"] = m.median_rank_vt;
    j["queries"] = m.n_queries;
    j["gallery"] = m.n_gallery;
    return j;
}

std::string trace_to_jsonl(const std::vector<StepRecord>& trace) {
    std::string out;
    for (const auto& rec : trace) {
        Json row;
        row["step"] = rec.step;
        row["stage"] = rec.stage;
        row["total"] = rec.total;
        row["cross_lingual"] = rec.cross_lingual;
        row["semantic_consistency"] = rec.semantic_consistency;
        row["adversarial"] = rec.adversarial;
        row["discriminator"] = rec.discriminator;
        row["cross_modal"] = rec.cross_modal;
        row["lr"] = rec.lr;
        out += row.dump();
        out += "\n";
    }
    return out;
}

std::vector<StepRecord> trace_from_jsonl(const std::string& text) {
    std::vector<StepRecord> trace;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Json row = Json::parse(line);
        StepRecord rec;
        rec.step = row.at("step").get<std::size_t>();
        rec.stage = row.at("stage").get<std::string>();
        rec.total = row.at("total").get<double>();
        rec.cross_lingual = row.at("cross_lingual").get<double>();
        rec.semantic_consistency = row.at("semantic_consistency").get<double>();
        rec.adversarial = row.at("adversarial").get<double>();
        rec.discriminator = row.at("discriminator").get<double>();
        rec.cross_modal = row.at("cross_modal").get<double>();
        rec.lr = row.at("lr").get<double>();
        trace.push_back(std::move(rec));
    }
    return trace;
}

// Transfer model = frozen backbone from the checkpoint + fresh (or
// loaded) transfer parameters.
ParamStore assemble_transfer_store(const CheckpointData& ckpt, const ExperimentConfig& cfg) {
    ParamStore store = clone_store(ckpt.store);
    if (!store.all_frozen_with_prefix("backbone.")) {
        throw NotFrozen("checkpoint backbone is not frozen");
    }
    if (!store.contains("tgt.embed_proj")) {
        init_transfer_params(store, cfg.model, cfg.seed);
    }
    return store;
}

std::uint64_t file_hash(const std::string& path) {
    std::string bytes = read_text_file(path);
    return fnv1a_bytes(bytes.data(), bytes.size());
}

}  // namespace

ParamStore clone_store(const ParamStore& source) {
    ParamStore copy;
    for (const auto& [name, entry] : source.entries()) {
        copy.insert(name, Tensor::from_data(entry.tensor.shape(), entry.tensor.data()),
                    entry.frozen);
    }
    return copy;
}

Json cmd_genworld(const ExperimentConfig& cfg, const std::string& out_path) {
    cfg.validate();
    World world = gen_world(cfg.world);
    Corpus corpus = build_corpus(world, cfg.split_ratio, cfg.zero_shot);
    save_corpus(corpus, out_path);
    Json j = summary_base("genworld", cfg);
    j["corpus"] = out_path;
    j["concepts"] = cfg.world.n_concepts;
    j["styles"] = cfg.world.styles;
    j["triplets"] = corpus.total();
    j["sizes"] = {{"train", corpus.train.size()},
                  {"val", corpus.val.size()},
                  {"test", corpus.test.size()}};
    j["zero_shot"] = cfg.zero_shot;
    return j;
}

Json cmd_pretrain(const ExperimentConfig& cfg, const std::string& corpus_path,
                  const std::string& out_ckpt) {
    cfg.validate();
    Corpus corpus = load_corpus(corpus_path);
    ParamStore store;
    init_backbone_params(store, cfg.model.backbone, cfg.seed);
    PretrainReport report = pretrain_backbone(store, cfg.model.backbone, corpus, cfg.pretrain,
                                              cfg.seed);
    save_checkpoint(store, out_ckpt, config_hash(cfg), "pretrained");
    Json j = summary_base("pretrain", cfg);
    j["checkpoint"] = out_ckpt;
    j["steps"] = cfg.pretrain.steps;
    j["final_loss"] = report.final_loss;
    j["heldout_source_r1"] = report.heldout_recall_at_1;
    return j;
}

Json cmd_transfer(const ExperimentConfig& cfg, const std::string& corpus_path,
                  const std::string& in_ckpt, const std::string& run_dir) {
    cfg.validate();
    Corpus corpus = load_corpus(corpus_path);
    CheckpointData ckpt = load_checkpoint(in_ckpt);
    ParamStore store = assemble_transfer_store(ckpt, cfg);

    fs::create_directories(run_dir);
    write_text_file((fs::path(run_dir) / "config.json").string(), config_to_json(cfg));

    TrainerState state;
    StageResult stage1 = run_cross_lingual_stage(store, cfg.model, corpus, cfg.cross_lingual,
                                                 cfg.loss, state, cfg.seed);
    StageResult stage2 = run_cross_modal_stage(store, cfg.model, corpus, cfg.cross_modal, cfg.loss,
                                               state, cfg.seed);

    std::vector<StepRecord> trace = stage1.trace;
    trace.insert(trace.end(), stage2.trace.begin(), stage2.trace.end());
    write_text_file((fs::path(run_dir) / "trace.jsonl").string(), trace_to_jsonl(trace));

    std::string out_ckpt = (fs::path(run_dir) / "model.dasd").string();
    save_checkpoint(store, out_ckpt, config_hash(cfg), "transfer", &state);

    RetrievalMetrics target = evaluate_retrieval(store, cfg.model, corpus.test, TextBranch::kTarget);

    Json j = summary_base("transfer", cfg);
    j["checkpoint"] = out_ckpt;
    j["run_dir"] = run_dir;
    auto stage_summary = [](const std::vector<StepRecord>& t) {
        Json s;
        s["steps"] = t.size();
        s["initial_loss"] = t.empty() ? 0.0 : t.front().total;
        s["final_loss"] = t.empty() ? 0.0 : t.back().total;
        return s;
    };
    j["stage1"] = stage_summary(stage1.trace);
    j["stage2"] = stage_summary(stage2.trace);
    j["target_metrics"] = metrics_to_json(target);
    write_text_file((fs::path(run_dir) / "summary.json").string(), j.dump(2));
    return j;
}

Json cmd_eval(const ExperimentConfig& cfg, const std::string& corpus_path,
              const std::string& ckpt_path) {
    cfg.validate();
    Corpus corpus = load_corpus(corpus_path);
    CheckpointData ckpt = load_checkpoint(ckpt_path);
    ParamStore store = assemble_transfer_store(ckpt, cfg);

    RetrievalMetrics source = evaluate_retrieval(store, cfg.model, corpus.test, TextBranch::kSource);
    RetrievalMetrics target = evaluate_retrieval(store, cfg.model, corpus.test, TextBranch::kTarget);

    auto features = collect_agnostic_features(store, cfg.model, corpus.test);
    std::vector<int> styles;
    styles.reserve(corpus.test.size());
    for (const auto& ex : corpus.test) styles.push_back(ex.target_style);
    double purity = style_cluster_purity(features, styles, cfg.world.styles, cfg.seed);
    double disc_acc = discriminator_holdout_accuracy(store, cfg.model, corpus.test, cfg.seed);

    Json j = summary_base("eval", cfg);
    j["checkpoint"] = ckpt_path;
    j["phase"] = ckpt.phase;
    j["source_metrics"] = metrics_to_json(source);
    j["target_metrics"] = metrics_to_json(target);
    j["style_purity"] = purity;
    j["discriminator_holdout_accuracy"] = disc_acc;
    j["chance_r1"] = source.n_gallery ? 1.0 / static_cast<double>(source.n_gallery) : 0.0;
    return j;
}

const std::vector<std::string>& ablation_arm_names() {
    static const std::vector<std::string> arms = {"full",   "static_adapter", "fsr_only",
                                                  "fsa_only", "no_sc",          "no_adv",
                                                  "no_sc_no_adv"};
    return arms;
}

ExperimentConfig arm_config(const ExperimentConfig& base, const std::string& arm) {
    ExperimentConfig cfg = base;
    if (arm == "full") return cfg;
    if (arm == "static_adapter") {
        cfg.model.adapter.dynamic = false;
        return cfg;
    }
    if (arm == "fsr_only") {
        cfg.model.adapter.use_fsa = false;
        return cfg;
    }
    if (arm == "fsa_only") {
        cfg.model.adapter.use_fsr = false;
        return cfg;
    }
    if (arm == "no_sc") {
        cfg.loss.lambda_sc = 0.0;
        return cfg;
    }
    if (arm == "no_adv") {
        cfg.loss.lambda_adv = 0.0;
        return cfg;
    }
    if (arm == "no_sc_no_adv") {
        cfg.loss.lambda_sc = 0.0;
        cfg.loss.lambda_adv = 0.0;
        return cfg;
    }
    throw UnknownArm("unknown ablation arm: " + arm);
}

std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& base,
                                            const ParamStore& pretrained, const Corpus& corpus,
                                            const std::vector<std::string>& arms) {
    std::vector<AblationRow> rows;
    for (const auto& arm : arms) {
        ExperimentConfig cfg = arm_config(base, arm);
        // Ablation arms share the schedule in base.ablation and the same
        // seed list, so differences come from the arm alone.
        StageConfig stage1 = cfg.cross_lingual;
        stage1.steps = cfg.ablation.cl_steps;
        stage1.batch = cfg.ablation.batch;
        StageConfig stage2 = cfg.cross_modal;
        stage2.steps = cfg.ablation.cm_steps;
        stage2.batch = cfg.ablation.batch;
        for (std::size_t s = 0; s < cfg.ablation.seeds; ++s) {
            std::uint64_t seed = cfg.seed + s;
            // Arms start from the shared frozen backbone and nothing else.
            ParamStore store;
            for (const auto& [name, entry] : pretrained.entries()) {
                if (name.rfind("backbone.", 0) == 0) {
                    store.insert(name, Tensor::from_data(entry.tensor.shape(), entry.tensor.data()),
                                 entry.frozen);
                }
            }
            init_transfer_params(store, cfg.model, seed);
            TrainerState state;
            run_cross_lingual_stage(store, cfg.model, corpus, stage1, cfg.loss, state, seed);
            run_cross_modal_stage(store, cfg.model, corpus, stage2, cfg.loss, state, seed);
            AblationRow row;
            row.arm = arm;
            row.seed = seed;
            row.metrics = evaluate_retrieval(store, cfg.model, corpus.test, TextBranch::kTarget);
            row.trainable_entries = transfer_param_shapes(cfg.model).size();
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

Json cmd_ablate(const ExperimentConfig& cfg, const std::string& corpus_path,
                const std::string& ckpt_path, const std::vector<std::string>& arms,
                const std::string& out_dir) {
    cfg.validate();
    for (const auto& arm : arms) (void)arm_config(cfg, arm);  // validate before the long runs
    Corpus corpus = load_corpus(corpus_path);
    CheckpointData ckpt = load_checkpoint(ckpt_path);

    auto rows = run_ablation_suite(cfg, ckpt.store, corpus, arms);

    fs::create_directories(out_dir);
    std::vector<std::vector<std::string>> csv_rows;
    std::map<std::string, double> arm_mean_mar;
    std::map<std::string, std::size_t> arm_counts;
    for (const auto& row : rows) {
        const auto& m = row.metrics;
        csv_rows.push_back({row.arm, std::to_string(row.seed), std::to_string(m.r1_tv),
                            std::to_string(m.r1_vt), std::to_string(m.r5_tv),
                            std::to_string(m.r5_vt), std::to_string(m.r10_tv),
                            std::to_string(m.r10_vt), std::to_string(m.mAR)});
        arm_mean_mar[row.arm] += m.mAR;
        arm_counts[row.arm] += 1;
    }
    for (auto& [arm, total] : arm_mean_mar) total /= static_cast<double>(arm_counts[arm]);
    std::string csv = to_csv({"arm", "seed", "R@1_tv", "R@1_vt", "R@5_tv", "R@5_vt", "R@10_tv",
                              "R@10_vt", "mAR"},
                             csv_rows);
    std::string csv_path = (fs::path(out_dir) / "ablation.csv").string();
    write_text_file(csv_path, csv);

    Json j = summary_base("ablate", cfg);
    j["csv"] = csv_path;
    j["arms"] = arms;
    j["seeds"] = cfg.ablation.seeds;
    Json means;
    for (const auto& [arm, mean] : arm_mean_mar) means[arm] = mean;
    j["mean_mAR"] = means;
    if (arm_mean_mar.count("full")) {
        Json deltas;
        for (const auto& [arm, mean] : arm_mean_mar) {
            if (arm != "full") deltas[arm] = arm_mean_mar.at("full") - mean;
        }
        j["full_minus_arm"] = deltas;
    }
    return j;
}

Json cmd_report(const std::string& run_dir) {
    fs::path dir(run_dir);
    std::string trace_path = (dir / "trace.jsonl").string();
    if (!fs::exists(trace_path)) throw IoError("no trace.jsonl under " + run_dir);
    auto trace = trace_from_jsonl(read_text_file(trace_path));

    std::string svg_path = (dir / "loss_curve.svg").string();
    write_text_file(svg_path, render_loss_curve_svg(trace));

    std::vector<std::vector<std::string>> rows;
    std::string csv_path = (dir / "metrics.csv").string();
    std::string summary_path = (dir / "summary.json").string();
    if (fs::exists(summary_path)) {
        Json summary = Json::parse(read_text_file(summary_path));
        if (summary.contains("target_metrics")) {
            for (const auto& [key, value] : summary.at("target_metrics").items()) {
                rows.push_back({key, value.dump()});
            }
        }
    }
    write_text_file(csv_path, to_csv({"metric", "value"}, rows));

    Json j;
    j["schema"] = kSummarySchema;
    j["command"] = "report";
    j["svg"] = svg_path;
    j["csv"] = csv_path;
    j["steps"] = trace.size();
    return j;
}

Json run_full_pipeline(const ExperimentConfig& cfg, const std::string& dir) {
    fs::create_directories(dir);
    fs::path base(dir);
    std::string corpus_path = (base / "corpus.jsonl").string();
    std::string pretrain_ckpt = (base / "backbone.dasd").string();
    std::string run_dir = (base / "run").string();

    Json world_summary = cmd_genworld(cfg, corpus_path);
    Json pretrain_summary = cmd_pretrain(cfg, corpus_path, pretrain_ckpt);
    Json transfer_summary = cmd_transfer(cfg, corpus_path, pretrain_ckpt, run_dir);
    Json eval_summary = cmd_eval(cfg, corpus_path,
                                 (fs::path(run_dir) / "model.dasd").string());

    std::string metrics_path = (base / "metrics.json").string();
    write_text_file(metrics_path, eval_summary.dump(2));

    Json j;
    j["schema"] = kSummarySchema;
    j["command"] = "pipeline";
    j["corpus_hash"] = file_hash(corpus_path);
    j["backbone_ckpt_hash"] = file_hash(pretrain_ckpt);
    j["model_ckpt_hash"] = file_hash((fs::path(run_dir) / "model.dasd").string());
    j["metrics_hash"] = file_hash(metrics_path);
    j["genworld"] = world_summary;
    j["pretrain"] = pretrain_summary;
    j["transfer"] = transfer_summary;
    j["eval"] = eval_summary;
    return j;
}

}  // namespace dasd
