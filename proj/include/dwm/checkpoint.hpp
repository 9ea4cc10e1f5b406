#pragma once

// Parameter checkpoints: a JSON container of named tensors (shape + float64
// values written with round-trip precision) plus model configuration,
// training position and optimizer moments for resuming.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "dwm/parameters.hpp"
#include "dwm/tasks.hpp"
#include "dwm/training.hpp"

namespace dwm {

struct Checkpoint {
  std::string model_kind;  // "dwm" or "baseline"
  nlohmann::json model_config;
  std::string task;
  ParameterSet params;
  std::size_t episode = 0;
  std::optional<AdamState> adam;
};

Checkpoint make_checkpoint(const SequenceModel& model, Task task, std::size_t episode,
                           std::optional<AdamState> adam = std::nullopt);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json checkpoint_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

// Rebuilds the model a checkpoint describes. Throws ConfigError on mismatch.
std::unique_ptr<SequenceModel> restore_model(const Checkpoint& checkpoint);

// Fresh model for a task's encoding. `config` may override model fields.
std::unique_ptr<SequenceModel> create_model(std::string_view kind, Task task, const nlohmann::json& config,
                                            std::uint64_t seed);

// Short content hash of the parameter values (hex), used to tag reports.
std::string parameter_digest(const ParameterSet& params);

}  // namespace dwm
