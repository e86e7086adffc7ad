#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "dasd/backbone.hpp"
#include "dasd/hypernet.hpp"
#include "dasd/losses.hpp"
#include "dasd/synthdata.hpp"
#include "dasd/trainer.hpp"

namespace dasd {

struct AblationConfig {
    std::size_t cl_steps = 400;
    std::size_t cm_steps = 120;
    std::size_t batch = 16;
    std::size_t seeds = 3;
};

// One experiment, fully specified: together with the code version this
// determines every byte of every artifact.
struct ExperimentConfig {
    std::string profile = "paper";
    std::uint64_t seed = 42;
    ModelConfig model;
    LossWeights loss;
    bool joint_training = false;  // fold both alignment terms into one objective
    PretrainConfig pretrain;
    StageConfig cross_lingual;
    StageConfig cross_modal;
    WorldConfig world;  // world.seed and visual_dim are wired from seed/backbone
    bool zero_shot = true;
    std::array<std::size_t, 3> split_ratio{8, 1, 1};
    AblationConfig ablation;

    void validate() const;
};

// Profile presets: "paper" carries the published hyperparameters;
// "desk" is the minutes-scale configuration every test runs on.
ExperimentConfig default_config(const std::string& profile = "paper");

// Parses JSON text over the profile defaults. Unknown keys and invalid
// values are collected and reported together, not one at a time.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path);

// Canonical serialization; equal configs serialize identically.
std::string config_to_json(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace dasd
