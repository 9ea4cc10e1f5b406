#include "dwm/training.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "dwm/errors.hpp"
#include "dwm/json_config.hpp"
#include "dwm/rng.hpp"
#include "parallel.hpp"

namespace dwm {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_episodes == 0) throw ConfigError("max_episodes must be positive");
  if (!(early_stop_threshold > 0.0)) throw ConfigError("early_stop_threshold must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must be in [0,1)");
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  if (validation_interval == 0) throw ConfigError("validation_interval must be positive");
  if (validation_batch_size == 0) throw ConfigError("validation_batch_size must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
  if (train_accuracy_target < 0.0 || train_accuracy_target > 1.0) throw ConfigError("train_accuracy_target must be in [0,1]");
  if (train_accuracy_window == 0) throw ConfigError("train_accuracy_window must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"max_episodes", c.max_episodes},
                     {"early_stop_threshold", c.early_stop_threshold},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"epsilon", c.epsilon},
                     {"seed", c.seed},
                     {"validation_interval", c.validation_interval},
                     {"validation_batch_size", c.validation_batch_size},
                     {"grad_clip", c.grad_clip},
                     {"threads", c.threads},
                     {"train_accuracy_target", c.train_accuracy_target},
                     {"train_accuracy_window", c.train_accuracy_window}};
  j["memory_size"] = c.memory_size ? nlohmann::json(*c.memory_size) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  require_known_keys(j,
                     {"learning_rate", "batch_size", "max_episodes", "early_stop_threshold", "beta1", "beta2",
                      "epsilon", "seed", "validation_interval", "validation_batch_size", "grad_clip", "threads",
                      "train_accuracy_target", "train_accuracy_window", "memory_size"},
                     "train config");
  const TrainConfig d;
  c.learning_rate = config_value(j, "learning_rate", d.learning_rate, "train config");
  c.batch_size = config_value(j, "batch_size", d.batch_size, "train config");
  c.max_episodes = config_value(j, "max_episodes", d.max_episodes, "train config");
  c.early_stop_threshold = config_value(j, "early_stop_threshold", d.early_stop_threshold, "train config");
  c.beta1 = config_value(j, "beta1", d.beta1, "train config");
  c.beta2 = config_value(j, "beta2", d.beta2, "train config");
  c.epsilon = config_value(j, "epsilon", d.epsilon, "train config");
  c.seed = config_value(j, "seed", d.seed, "train config");
  c.validation_interval = config_value(j, "validation_interval", d.validation_interval, "train config");
  c.validation_batch_size = config_value(j, "validation_batch_size", d.validation_batch_size, "train config");
  c.grad_clip = config_value(j, "grad_clip", d.grad_clip, "train config");
  c.threads = config_value(j, "threads", d.threads, "train config");
  c.train_accuracy_target = config_value(j, "train_accuracy_target", d.train_accuracy_target, "train config");
  c.train_accuracy_window = config_value(j, "train_accuracy_window", d.train_accuracy_window, "train config");
  c.memory_size.reset();
  if (j.contains("memory_size") && !j["memory_size"].is_null()) {
    c.memory_size = config_value(j, "memory_size", std::size_t{0}, "train config");
  }
  c.validate();
}

// ---------------------------------------------------------------------------
// Loss and metrics

namespace {

void check_masked(std::size_t steps, const ad::Tensor& targets, const std::vector<bool>& mask) {
  if (mask.size() != steps || targets.rank() != 2 || targets.rows() != steps) {
    throw DimensionError("loss: logits, targets and mask disagree on sequence length");
  }
  if (std::find(mask.begin(), mask.end(), true) == mask.end()) throw ContractError("loss: mask selects no step");
}

double clamped_sigmoid(double x) {
  const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

}  // namespace

ad::Var masked_bce_sum(std::span<const ad::Var> logits, const ad::Tensor& targets, const std::vector<bool>& mask) {
  check_masked(logits.size(), targets, mask);
  const std::size_t bits = targets.cols();
  std::vector<ad::Var> terms;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    if (!mask[t]) continue;
    if (logits[t].size() != bits) throw DimensionError("loss: logit width does not match target width");
    const ad::Tensor y = targets.row(t);
    ad::Tensor not_y(y.shape());
    for (std::size_t i = 0; i < bits; ++i) not_y[i] = 1.0 - y[i];
    const ad::Var p = ad::clamp(ad::sigmoid(logits[t]), kProbClamp, 1.0 - kProbClamp);
    const ad::Var ll = ad::add(ad::mul(ad::constant(y), ad::log(p)), ad::mul(ad::constant(not_y), ad::log(ad::one_minus(p))));
    terms.push_back(ad::sum(ll));
  }
  return ad::scale(ad::sum(ad::concat(terms)), -1.0);
}

ad::Var bce_loss(std::span<const ad::Var> logits, const ad::Tensor& targets, const std::vector<bool>& mask) {
  const ad::Var total = masked_bce_sum(logits, targets, mask);
  const auto steps = static_cast<double>(std::count(mask.begin(), mask.end(), true));
  return ad::scale(total, 1.0 / (steps * static_cast<double>(targets.cols())));
}

MaskedScore score(const ad::Tensor& logits, const ad::Tensor& targets, const std::vector<bool>& mask) {
  if (logits.rank() != 2 || logits.cols() != targets.cols()) throw DimensionError("score: logit/target width mismatch");
  check_masked(logits.rows(), targets, mask);
  MaskedScore s;
  const std::size_t bits = targets.cols();
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    for (std::size_t i = 0; i < bits; ++i) {
      const double y = targets.at(t, i);
      const double x = logits.at(t, i);
      const double p = clamped_sigmoid(x);
      s.bce_sum -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
      const bool predicted = p > 0.5;
      s.correct += predicted == (y > 0.5) ? 1 : 0;
      ++s.bits;
    }
  }
  return s;
}

double bce_loss(const ad::Tensor& logits, const ad::Tensor& targets, const std::vector<bool>& mask) {
  return score(logits, targets, mask).loss();
}

double accuracy(const ad::Tensor& logits, const ad::Tensor& targets, const std::vector<bool>& mask) {
  return score(logits, targets, mask).accuracy();
}

ad::Tensor stack_logits(std::span<const ad::Var> logits) {
  if (logits.empty()) return ad::Tensor(ad::Shape{0, 0});
  const std::size_t width = logits.front().size();
  std::vector<double> data;
  data.reserve(logits.size() * width);
  for (const auto& l : logits) {
    if (l.size() != width) throw DimensionError("stack_logits: ragged logits");
    data.insert(data.end(), l.value().data().begin(), l.value().data().end());
  }
  return ad::Tensor(ad::Shape{logits.size(), width}, std::move(data));
}

MaskedScore score_batch(const SequenceModel& model, std::span<const TaskEpisode> batch,
                        std::optional<std::size_t> memory_size, std::size_t threads) {
  const std::size_t addresses = memory_size_for(batch, memory_size);
  const auto weights = model.parameters().as_constants();
  std::vector<MaskedScore> parts(batch.size());
  detail::parallel_for(batch.size(), threads, [&](std::size_t i) {
    const auto logits = model.unroll(weights, batch[i].inputs, addresses);
    parts[i] = score(stack_logits(logits), batch[i].targets, batch[i].mask);
  });
  MaskedScore total;
  for (const auto& p : parts) total += p;
  return total;
}

// ---------------------------------------------------------------------------
// Optimizer

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const TrainConfig& config) {
  if (grads.size() != params.size()) throw DimensionError("adam_step: gradient size mismatch");
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    if (state.step != 0 || !state.m.empty() || !state.v.empty()) throw DimensionError("adam_step: state size mismatch");
    state = AdamState::zeros(params.size());
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

void adam_step(ParameterSet& params, std::span<const double> grads, AdamState& state, const TrainConfig& config) {
  std::vector<double> flat = params.flatten();
  adam_step(std::span<double>(flat), grads, state, config);
  params.assign_flat(flat);
}

// ---------------------------------------------------------------------------
// Training loop

BatchGradient batch_gradient(const SequenceModel& model, std::span<const TaskEpisode> batch,
                             std::optional<std::size_t> memory_size, std::size_t threads) {
  const std::size_t addresses = memory_size_for(batch, memory_size);
  const std::size_t n = model.parameters().count();
  std::vector<std::vector<double>> grads(batch.size());
  std::vector<MaskedScore> scores(batch.size());
  detail::parallel_for(batch.size(), threads, [&](std::size_t i) {
    const auto weights = model.parameters().as_parameters();
    const auto logits = model.unroll(weights, batch[i].inputs, addresses);
    ad::backward(masked_bce_sum(logits, batch[i].targets, batch[i].mask));
    scores[i] = score(stack_logits(logits), batch[i].targets, batch[i].mask);
    auto& g = grads[i];
    g.reserve(n);
    for (const auto& w : weights) {
      const auto wg = w.grad();
      if (wg.empty()) {
        g.insert(g.end(), w.size(), 0.0);
      } else {
        g.insert(g.end(), wg.begin(), wg.end());
      }
    }
  });
  BatchGradient out;
  out.grad.assign(n, 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.score += scores[i];
    for (std::size_t k = 0; k < n; ++k) out.grad[k] += grads[i][k];
  }
  const double inv = 1.0 / static_cast<double>(out.score.bits);
  for (double& g : out.grad) g *= inv;
  return out;
}

std::string_view stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::ValidationThreshold: return "validation-threshold";
    case StopReason::EpisodeCap: return "episode-cap";
    case StopReason::TrainAccuracyTarget: return "train-accuracy-target";
  }
  return "";
}

std::uint64_t validation_seed(std::uint64_t train_seed) { return derive_key(train_seed, {0x7661'6c69'6461'7465ULL}); }

TrainResult train(const SequenceModel& initial, Task task, const TrainConfig& config, TrainOptions options) {
  config.validate();
  if (initial.input_width() != TaskSpec{task}.input_width()) {
    throw ConfigError("model input width " + std::to_string(initial.input_width()) + " does not match task '" +
                      std::string(task_name(task)) + "' (" + std::to_string(TaskSpec{task}.input_width()) + ")");
  }
  if (initial.output_width() != kDataBits) throw ConfigError("model output width must equal the data width");

  const TaskSpec train_spec{task, kDataBits, config.seed};
  const TaskSpec val_spec{task, kDataBits, validation_seed(config.seed)};
  const auto train_regime = GenerationRegime::standard(task, Phase::Training);
  const auto validation =
      generate(val_spec, GenerationRegime::standard(task, Phase::Validation), config.validation_batch_size, 0);

  std::unique_ptr<SequenceModel> model = initial.clone();
  TrainResult result;
  result.adam = options.adam ? *options.adam : AdamState::zeros(model->parameters().count());
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::deque<MaskedScore> recent_scores;

  auto run_validation = [&](LossRecord& rec) {
    MaskedScore s;
    try {
      s = score_batch(*model, validation, config.memory_size, config.threads);
    } catch (const DomainError& e) {
      throw TrainingDiverged("validation left its domain at episode " + std::to_string(rec.episode) + ": " + e.what());
    }
    rec.val_loss = s.loss();
    rec.val_accuracy = s.accuracy();
    if (!std::isfinite(s.loss())) throw TrainingDiverged("validation loss is not finite at episode " + std::to_string(rec.episode));
    if (s.loss() < result.best_val_loss) {
      result.best_val_loss = s.loss();
      result.best_val_accuracy = s.accuracy();
      result.best = model->clone();
    }
    return s.loss() < config.early_stop_threshold;
  };

  if (options.start_episode >= config.max_episodes) {
    throw ConfigError("resumed at episode " + std::to_string(options.start_episode) + ", already at the cap of " +
                      std::to_string(config.max_episodes));
  }
  std::size_t episode = options.start_episode;
  bool stopped = false;
  while (!stopped && episode < config.max_episodes) {
    ++episode;
    const auto batch = generate(train_spec, train_regime, config.batch_size, episode);
    BatchGradient bg;
    try {
      bg = batch_gradient(*model, batch, config.memory_size, config.threads);
    } catch (const DomainError& e) {
      throw TrainingDiverged("forward pass left its domain at episode " + std::to_string(episode) + ": " + e.what());
    }

    LossRecord rec;
    rec.episode = episode;
    rec.train_loss = bg.score.loss();
    rec.train_accuracy = bg.score.accuracy();
    if (!std::isfinite(rec.train_loss)) {
      throw TrainingDiverged("training loss became non-finite at episode " + std::to_string(episode));
    }
    for (double g : bg.grad) {
      if (!std::isfinite(g)) throw TrainingDiverged("non-finite gradient at episode " + std::to_string(episode));
    }
    result.best_train_accuracy = std::max(result.best_train_accuracy, rec.train_accuracy);

    if (config.grad_clip > 0.0) {
      const double norm = std::sqrt(std::inner_product(bg.grad.begin(), bg.grad.end(), bg.grad.begin(), 0.0));
      if (norm > config.grad_clip) {
        const double f = config.grad_clip / norm;
        for (double& g : bg.grad) g *= f;
      }
    }
    adam_step(model->parameters(), bg.grad, result.adam, config);

    recent_scores.push_back(bg.score);
    if (recent_scores.size() > config.train_accuracy_window) recent_scores.pop_front();

    const bool last = episode == config.max_episodes;
    if (episode % config.validation_interval == 0 || last) {
      if (run_validation(rec)) {
        result.reason = StopReason::ValidationThreshold;
        stopped = true;
      }
    }
    if (!stopped && config.train_accuracy_target > 0.0 && recent_scores.size() == config.train_accuracy_window) {
      // Pooled over masked bits, so short batches do not dominate.
      const MaskedScore pooled = std::accumulate(recent_scores.begin(), recent_scores.end(), MaskedScore{},
                                                 [](MaskedScore a, const MaskedScore& b) { return a += b; });
      if (pooled.accuracy() >= config.train_accuracy_target) {
        result.reason = StopReason::TrainAccuracyTarget;
        stopped = true;
        if (!rec.val_loss) run_validation(rec);
      }
    }
    result.curve.push_back(rec);
    if (options.on_record) options.on_record(rec);
  }
  if (!stopped) result.reason = StopReason::EpisodeCap;
  result.episodes = episode;
  result.last = std::move(model);
  if (!result.best) result.best = result.last->clone();
  return result;
}

}  // namespace dwm
