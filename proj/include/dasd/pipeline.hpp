#pragma once

#include <string>
#include <vector>

#include "dasd/checkpoint.hpp"
#include "dasd/config.hpp"
#include "json.hpp"

namespace dasd {

using Json = nlohmann::ordered_json;

// Command-level operations shared by the CLI and the test suites. Every
// command returns its machine-readable summary (schema dasd.summary.v1)
// and writes artifacts under the given paths. Deterministic per seed.

Json cmd_genworld(const ExperimentConfig& cfg, const std::string& out_path);
Json cmd_pretrain(const ExperimentConfig& cfg, const std::string& corpus_path,
                  const std::string& out_ckpt);
Json cmd_transfer(const ExperimentConfig& cfg, const std::string& corpus_path,
                  const std::string& in_ckpt, const std::string& run_dir);
Json cmd_eval(const ExperimentConfig& cfg, const std::string& corpus_path,
              const std::string& ckpt_path);
Json cmd_ablate(const ExperimentConfig& cfg, const std::string& corpus_path,
                const std::string& ckpt_path, const std::vector<std::string>& arms,
                const std::string& out_dir);
Json cmd_report(const std::string& run_dir);

// Arm names accepted by the ablation suite.
const std::vector<std::string>& ablation_arm_names();

// Derives the arm's configuration from the base one; UnknownArm otherwise.
ExperimentConfig arm_config(const ExperimentConfig& base, const std::string& arm);

struct AblationRow {
    std::string arm;
    std::uint64_t seed = 0;
    RetrievalMetrics metrics;
    std::size_t trainable_entries = 0;
};

// Trains every (arm, seed) from the same pretrained backbone under the
// ablation schedule and evaluates mAR on the test split.
std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& base,
                                            const ParamStore& pretrained, const Corpus& corpus,
                                            const std::vector<std::string>& arms);

// Deep copy: fresh nodes, same values and frozen flags.
ParamStore clone_store(const ParamStore& source);

// Full deterministic pipeline (world -> pretrain -> transfer -> eval)
// staged under dir; returns the eval summary plus artifact hashes. Used
// by the reproducibility checks.
Json run_full_pipeline(const ExperimentConfig& cfg, const std::string& dir);

}  // namespace dasd
