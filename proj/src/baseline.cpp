#include "dwm/baseline.hpp"

#include "dwm/errors.hpp"
#include "dwm/json_config.hpp"
#include "dwm/rng.hpp"

namespace dwm {

using ad::Var;

void BaselineConfig::validate() const {
  if (input_width == 0 || output_width == 0 || hidden_size == 0) throw ConfigError("baseline: sizes must be positive");
}

void to_json(nlohmann::json& j, const BaselineConfig& c) {
  j = nlohmann::json{{"input_width", c.input_width},
                     {"output_width", c.output_width},
                     {"hidden_size", c.hidden_size},
                     {"forget_bias", c.forget_bias}};
}

void from_json(const nlohmann::json& j, BaselineConfig& c) {
  require_known_keys(j, {"input_width", "output_width", "hidden_size", "forget_bias"}, "baseline config");
  const BaselineConfig d;
  c.input_width = config_value(j, "input_width", d.input_width, "baseline config");
  c.output_width = config_value(j, "output_width", d.output_width, "baseline config");
  c.hidden_size = config_value(j, "hidden_size", d.hidden_size, "baseline config");
  c.forget_bias = config_value(j, "forget_bias", d.forget_bias, "baseline config");
}

LstmState lstm_init(const BaselineConfig& config) {
  return {ad::constant(ad::Tensor(ad::Shape{config.hidden_size})),
          ad::constant(ad::Tensor(ad::Shape{config.hidden_size}))};
}

std::pair<LstmState, Var> lstm_step(const BaselineConfig& config, const Var& input, const LstmState& state,
                                    const LstmWeights& weights) {
  const std::size_t h = config.hidden_size;
  if (input.size() != config.input_width || state.hidden.size() != h || state.cell.size() != h) {
    throw DimensionError("lstm_step: input or state width does not match the configuration");
  }
  const Var joined = ad::concat({input, state.hidden, ad::constant(ad::Tensor::vector({1.0}))});
  const Var pre = ad::matvec(weights.gates, joined);
  const Var in_gate = ad::sigmoid(ad::slice(pre, 0, h));
  const Var forget_gate = ad::sigmoid(ad::slice(pre, h, h));
  const Var candidate = ad::tanh(ad::slice(pre, 2 * h, h));
  const Var out_gate = ad::sigmoid(ad::slice(pre, 3 * h, h));

  LstmState next;
  next.cell = ad::add(ad::mul(forget_gate, state.cell), ad::mul(in_gate, candidate));
  next.hidden = ad::mul(out_gate, ad::tanh(next.cell));
  const Var logits = ad::matvec(weights.output, ad::concat({next.hidden, ad::constant(ad::Tensor::vector({1.0}))}));
  return {std::move(next), logits};
}

LstmBaseline::LstmBaseline(BaselineConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t h = config_.hidden_size;
  ad::Tensor gates = fan_in_uniform_with_bias(4 * h, config_.input_width + h, derive_key(seed, {2, 0}));
  const std::size_t bias = gates.cols() - 1;
  for (std::size_t r = h; r < 2 * h; ++r) gates.at(r, bias) = config_.forget_bias;
  params_.add("W_gates", std::move(gates));
  params_.add("W_out", fan_in_uniform_with_bias(config_.output_width, h, derive_key(seed, {2, 1})));
}

LstmBaseline::LstmBaseline(BaselineConfig config, ParameterSet params) : config_(config) {
  config_.validate();
  params_ = std::move(params);
  const std::size_t h = config_.hidden_size;
  const ad::Shape gates{4 * h, config_.input_width + h + 1};
  const ad::Shape out{config_.output_width, h + 1};
  if (params_.size() != 2 || params_[0].value.shape() != gates || params_[1].value.shape() != out) {
    throw ConfigError("baseline: checkpoint tensors do not match the configuration");
  }
}

std::vector<Var> LstmBaseline::unroll(std::span<const Var> weights, const ad::Tensor& inputs, std::size_t) const {
  if (weights.size() != 2) throw DimensionError("baseline: expected 2 weight tensors");
  if (inputs.rank() != 2 || inputs.rows() == 0) throw ContractError("baseline: empty input sequence");
  const LstmWeights w{weights[0], weights[1]};
  LstmState state = lstm_init(config_);
  std::vector<Var> logits;
  logits.reserve(inputs.rows());
  for (std::size_t t = 0; t < inputs.rows(); ++t) {
    auto [next, y] = lstm_step(config_, ad::constant(inputs.row(t)), state, w);
    logits.push_back(std::move(y));
    state = std::move(next);
  }
  return logits;
}

}  // namespace dwm
