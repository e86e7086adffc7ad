#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "dasd/param_store.hpp"
#include "dasd/trainer.hpp"

namespace dasd {

// Checkpoint container: "DASD1" magic, a JSON manifest (tensor names,
// shapes, offsets, frozen flags, checksum, config hash, optimizer and
// sampling state) and a payload of raw little-endian doubles. Round-trips
// bitwise; generated per-input adapter matrices are never stored.

struct CheckpointData {
    ParamStore store;
    std::optional<TrainerState> trainer;
    std::uint64_t config_hash = 0;
    std::string phase;  // "pretrained" or "transfer"
};

void save_checkpoint(const ParamStore& store, const std::string& path, std::uint64_t config_hash,
                     const std::string& phase, const TrainerState* trainer = nullptr);

CheckpointData load_checkpoint(const std::string& path);

}  // namespace dasd
