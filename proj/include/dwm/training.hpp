#pragma once

// Masked binary cross-entropy, Adam, and the episode-based training loop with
// early stopping on a held-out validation batch.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwm/autodiff.hpp"
#include "dwm/parameters.hpp"
#include "dwm/tasks.hpp"

namespace dwm {

// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before the log.
inline constexpr double kProbClamp = 1e-12;

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t batch_size = 16;
  std::size_t max_episodes = 100000;  // cap on the episode counter, resumed episodes included
  double early_stop_threshold = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::size_t validation_interval = 100;
  std::size_t validation_batch_size = 16;
  double grad_clip = 10.0;  // global L2 norm; <= 0 disables
  std::size_t threads = 1;  // workers splitting each batch
  // Optional extra stop: training accuracy pooled over the masked bits of the last
  // `train_accuracy_window` episodes reaches this value. 0 disables.
  double train_accuracy_target = 0.0;
  std::size_t train_accuracy_window = 50;
  std::optional<std::size_t> memory_size;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

// Sum over masked (step, bit) pairs of -[y log p + (1-y) log(1-p)].
ad::Var masked_bce_sum(std::span<const ad::Var> logits, const ad::Tensor& targets, const std::vector<bool>& mask);
// Mean over masked (step, bit) pairs. Throws ContractError on an empty mask.
ad::Var bce_loss(std::span<const ad::Var> logits, const ad::Tensor& targets, const std::vector<bool>& mask);
double bce_loss(const ad::Tensor& logits, const ad::Tensor& targets, const std::vector<bool>& mask);

// Fraction of masked bits with (sigmoid(logit) > 0.5) == target.
double accuracy(const ad::Tensor& logits, const ad::Tensor& targets, const std::vector<bool>& mask);

// Stacks per-step logit vectors into a T x width matrix.
ad::Tensor stack_logits(std::span<const ad::Var> logits);

// Sufficient statistics for loss and accuracy over many episodes.
struct MaskedScore {
  double bce_sum = 0.0;
  std::size_t correct = 0;
  std::size_t bits = 0;

  double loss() const { return bits ? bce_sum / static_cast<double>(bits) : 0.0; }
  double accuracy() const { return bits ? static_cast<double>(correct) / static_cast<double>(bits) : 0.0; }
  MaskedScore& operator+=(const MaskedScore& o) {
    bce_sum += o.bce_sum;
    correct += o.correct;
    bits += o.bits;
    return *this;
  }
};

MaskedScore score(const ad::Tensor& logits, const ad::Tensor& targets, const std::vector<bool>& mask);

// Graph-free evaluation of a model on a batch.
MaskedScore score_batch(const SequenceModel& model, std::span<const TaskEpisode> batch,
                        std::optional<std::size_t> memory_size = std::nullopt, std::size_t threads = 1);

// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps), with bias-corrected moments.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const TrainConfig& config);
void adam_step(ParameterSet& params, std::span<const double> grads, AdamState& state, const TrainConfig& config);

// Gradient of the batch-mean masked BCE, flattened in parameter order.
struct BatchGradient {
  std::vector<double> grad;
  MaskedScore score;
};
BatchGradient batch_gradient(const SequenceModel& model, std::span<const TaskEpisode> batch,
                             std::optional<std::size_t> memory_size = std::nullopt, std::size_t threads = 1);

enum class StopReason { ValidationThreshold, EpisodeCap, TrainAccuracyTarget };
std::string_view stop_reason_name(StopReason r);  // "validation-threshold", "episode-cap", "train-accuracy-target"

struct LossRecord {
  std::size_t episode = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::size_t start_episode = 0;        // episodes already completed (resume)
  std::optional<AdamState> adam;        // optimizer state to resume from
  std::function<void(const LossRecord&)> on_record;
};

struct TrainResult {
  std::unique_ptr<SequenceModel> best;   // lowest validation loss seen
  std::unique_ptr<SequenceModel> last;   // parameters after the final step
  AdamState adam;
  std::vector<LossRecord> curve;
  StopReason reason = StopReason::EpisodeCap;
  std::size_t episodes = 0;  // total completed, including any resumed ones
  double best_val_loss = 0.0;
  double best_val_accuracy = 0.0;
  double best_train_accuracy = 0.0;
};

// Seed of the held-out validation stream for a training seed.
std::uint64_t validation_seed(std::uint64_t train_seed);

TrainResult train(const SequenceModel& initial, Task task, const TrainConfig& config, TrainOptions options = {});

}  // namespace dwm
