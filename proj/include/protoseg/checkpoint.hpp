#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "protoseg/model.hpp"
#include "protoseg/train.hpp"

namespace protoseg {

struct CheckpointInfo {
  std::uint64_t seed = 0;
  int epochs_trained = 0;
};

// `path` receives the JSON manifest; the parameters go to `path` + ".bin" as
// little-endian float32 in manifest block order.
void save_checkpoint(const RpNetModel& model, const CheckpointInfo& info, const std::filesystem::path& path);

struct LoadedCheckpoint {
  RpNetModel model;
  CheckpointInfo info;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path payload_path(const std::filesystem::path& manifest);

// Config file: {"model": {...ModelConfig fields}, "train": {...TrainConfig fields}}.
// Keys absent from the file keep the values already in `model` / `train`.
void apply_config_file(const std::filesystem::path& path, ModelConfig& model, TrainConfig& train);

// key=value lines describing the effective configuration, for CSV headers.
std::vector<std::string> describe(const ModelConfig& model);
std::vector<std::string> describe(const TrainConfig& train);

}  // namespace protoseg
