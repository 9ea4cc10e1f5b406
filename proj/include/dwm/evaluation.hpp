#pragma once

// Length-generalization evaluation, trace recording, and strategy signatures
// computed from traces.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dwm/autodiff.hpp"
#include "dwm/model.hpp"
#include "dwm/parameters.hpp"
#include "dwm/tasks.hpp"
#include "dwm/trace.hpp"

namespace dwm {

// Anything that emits T x data_bits logits for an episode.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  // Required input width, or 0 if any encoding is accepted.
  virtual std::size_t input_width() const = 0;
  virtual ad::Tensor logits(const TaskEpisode& episode, std::size_t num_addresses) const = 0;
};

class ModelPredictor final : public Predictor {
 public:
  explicit ModelPredictor(const SequenceModel& model) : model_(model) {}
  std::string name() const override { return std::string(model_.kind()); }
  std::size_t input_width() const override { return model_.input_width(); }
  ad::Tensor logits(const TaskEpisode& episode, std::size_t num_addresses) const override;

 private:
  const SequenceModel& model_;
};

// Emits +/-kOracleLogit from oracle_solve().
class OraclePredictor final : public Predictor {
 public:
  static constexpr double kOracleLogit = 30.0;
  std::string name() const override { return "oracle"; }
  std::size_t input_width() const override { return 0; }
  ad::Tensor logits(const TaskEpisode& episode, std::size_t num_addresses) const override;
};

// Same probability for every bit.
class ConstantPredictor final : public Predictor {
 public:
  explicit ConstantPredictor(double probability = 0.5);
  std::string name() const override { return "constant"; }
  std::size_t input_width() const override { return 0; }
  ad::Tensor logits(const TaskEpisode& episode, std::size_t num_addresses) const override;

 private:
  double logit_;
};

struct EvalOptions {
  std::size_t num_batches = 1;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::optional<std::size_t> memory_size;
  std::size_t threads = 1;
  std::string checkpoint;  // identity recorded in the report
};

struct EvalRow {
  Task task = Task::SerialRecall;
  std::string model;
  Phase regime = Phase::Testing;
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t episodes = 0;
  std::size_t masked_bits = 0;
  std::size_t sequence_length = 0;  // length of the first batch
  std::string checkpoint;
};

// Seed of the evaluation stream, disjoint from training and validation.
std::uint64_t evaluation_seed(std::uint64_t seed);

// Deterministic in (predictor, task, regime, options).
EvalRow evaluate(const Predictor& predictor, Task task, Phase regime, const EvalOptions& options);

// One row per (task, model, checkpoint) with train/validation/test accuracies in percent.
void write_report_csv(std::span<const EvalRow> rows, const std::filesystem::path& path);

EpisodeTrace record_trace(const DwmModel& model, const TaskEpisode& episode, bool memory_per_step = false,
                          std::optional<std::size_t> memory_size = std::nullopt);

// ---------------------------------------------------------------------------
// Strategy signatures

std::size_t argmax(std::span<const double> v);

// Fraction of steps inside "x" data segments (store phase) where argmax(w_t)
// moves by exactly one address. Walking +1 and -1 are mirror images under
// circular addressing, so the more frequent direction is counted.
double store_advance_fraction(const EpisodeTrace& trace, const TaskEpisode& episode);

struct OverwriteSignature {
  std::size_t marker_steps = 0;      // x markers after the first, plus the recall marker
  std::size_t bookmark_selected = 0; // argmax(delta) picks a bookmark, not the pass-through
  std::size_t static_selected = 0;   // argmax(delta) picks the static bookmark
  double rewrite_fraction = 0.0;     // last block's write addresses already used by earlier blocks
  bool holds() const { return marker_steps > 0 && bookmark_selected == marker_steps && rewrite_fraction >= 0.5; }
};

// Scratch-pad style "Overwrite": at markers of later subsequences attention
// returns via a bookmark, and later blocks are written over earlier ones.
OverwriteSignature overwrite_signature(const EpisodeTrace& trace, const TaskEpisode& episode);

// Fraction of steps inside "y" data segments where argmax(w_t) stays put
// ("Skip" signature).
double skip_fraction(const EpisodeTrace& trace, const TaskEpisode& episode);

}  // namespace dwm
