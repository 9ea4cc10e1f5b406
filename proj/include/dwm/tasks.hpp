#pragma once

// Seeded generators for the eight working-memory tasks, their reference
// solver, and the line-delimited JSON episode format.
//
// Every input item is data_bits data channels followed by the task's control
// channels. A command marker sets exactly one control channel; data items
// have all control channels clear; dummies are all zero.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwm/autodiff.hpp"

namespace dwm {

inline constexpr std::size_t kDataBits = 8;

enum class Task { SerialRecall, ReverseRecall, RotateShape, ReadingSpan, Forget, OperationSpan, ScratchPad, Ignore };

inline constexpr Task kAllTasks[] = {Task::SerialRecall, Task::ReverseRecall, Task::RotateShape,
                                     Task::ReadingSpan,  Task::Forget,        Task::OperationSpan,
                                     Task::ScratchPad,   Task::Ignore};

std::string_view task_name(Task task);  // snake_case, e.g. "serial_recall"
// Accepts snake_case, kebab-case, or CamelCase. Throws ConfigError.
Task parse_task(std::string_view name);
bool is_complex(Task task);

enum class Phase { Training, Validation, Testing };

std::string_view phase_name(Phase phase);  // "train", "val", "test"
Phase parse_phase(std::string_view name);

// Marker kinds; which of them a task uses determines its control width.
enum class Marker { X, Y, Recall, Immediate };

std::size_t control_bits(Task task);
// Control channel index (0-based, after the data channels) of a marker, or
// nullopt when the task does not use it.
std::optional<std::size_t> marker_channel(Task task, Marker marker);

struct Range {
  std::size_t min = 1;
  std::size_t max = 1;
  friend bool operator==(const Range&, const Range&) = default;
};

struct GenerationRegime {
  Phase phase = Phase::Training;
  Range subseq_len;
  Range num_subseq;

  // Lengths and counts for the standard training/validation/testing phases.
  static GenerationRegime standard(Task task, Phase phase);
  void validate() const;
};

struct TaskSpec {
  Task task = Task::SerialRecall;
  std::size_t data_bits = kDataBits;
  std::uint64_t seed = 0;

  std::size_t control_bits() const { return dwm::control_bits(task); }
  std::size_t input_width() const { return data_bits + control_bits(); }
};

enum class SegmentKind { Marker, Data, Dummy };

// A contiguous run of timesteps. Roles: markers and data use "x" / "y" /
// "recall" / "immediate"; dummies use "recall" (end-of-episode recall) or
// "immediate" (output right after a y block).
struct Segment {
  SegmentKind kind = SegmentKind::Data;
  std::string role;
  std::size_t begin = 0;
  std::size_t length = 0;
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct TaskEpisode {
  Task task = Task::SerialRecall;
  std::size_t data_bits = kDataBits;
  ad::Tensor inputs;   // T x input_width, entries 0/1
  ad::Tensor targets;  // T x data_bits, zero where mask is false
  std::vector<bool> mask;
  std::vector<Segment> segments;

  std::size_t length() const { return mask.size(); }
  std::size_t input_width() const { return inputs.cols(); }
  std::size_t masked_steps() const;
  friend bool operator==(const TaskEpisode&, const TaskEpisode&) = default;
};

// output[i] = item[(i + n/2) mod n]
std::vector<double> rotate_half(std::span<const double> item);

// All episodes of one batch share the same layout (and therefore length);
// only the data bits differ. Pure function of (spec, regime, batch_index).
std::vector<TaskEpisode> generate(const TaskSpec& spec, const GenerationRegime& regime, std::size_t batch_size,
                                  std::uint64_t batch_index = 0);

// Reference solver: recomputes the task output from the input items and the
// segment layout. Returns T x data_bits with zeros off-mask.
ad::Tensor oracle_solve(const TaskEpisode& episode);

// Common sequence length of the batch, or `override_size` when given. An
// override must still hold the longest data subsequence.
std::size_t memory_size_for(std::span<const TaskEpisode> episodes,
                            std::optional<std::size_t> override_size = std::nullopt);

void to_json(nlohmann::json& j, const TaskEpisode& e);
void from_json(const nlohmann::json& j, TaskEpisode& e);

void write_episodes(std::span<const TaskEpisode> episodes, const std::filesystem::path& path);
std::vector<TaskEpisode> read_episodes(const std::filesystem::path& path);

}  // namespace dwm
