#include "dwm/model.hpp"

#include <algorithm>
#include <cmath>

#include "dwm/errors.hpp"
#include "dwm/json_config.hpp"
#include "dwm/rng.hpp"

namespace dwm {

using ad::Var;

DwmConfig DwmConfig::for_widths(std::size_t input_width, std::size_t output_width) {
  DwmConfig c;
  c.input_width = input_width;
  c.output_width = output_width;
  c.word_width = input_width;
  return c;
}

void DwmConfig::validate() const {
  if (input_width == 0 || output_width == 0 || word_width == 0) throw ConfigError("dwm: widths must be positive");
  if (hidden_size == 0) throw ConfigError("dwm: hidden_size must be positive");
  if (hidden_size >= input_width) {
    throw ConfigError("dwm: hidden_size (" + std::to_string(hidden_size) + ") must be smaller than input_width (" +
                      std::to_string(input_width) + ")");
  }
  if (num_bookmarks < 2) throw ConfigError("dwm: num_bookmarks must be at least 2");
  if (shift_span == 0 || shift_span % 2 == 0) throw ConfigError("dwm: shift_span must be odd");
}

void to_json(nlohmann::json& j, const DwmConfig& c) {
  j = nlohmann::json{{"input_width", c.input_width},     {"output_width", c.output_width},
                     {"hidden_size", c.hidden_size},     {"word_width", c.word_width},
                     {"num_bookmarks", c.num_bookmarks}, {"shift_span", c.shift_span}};
}

void from_json(const nlohmann::json& j, DwmConfig& c) {
  require_known_keys(j, {"input_width", "output_width", "hidden_size", "word_width", "num_bookmarks", "shift_span"},
                     "dwm config");
  DwmConfig d;
  c.input_width = config_value(j, "input_width", d.input_width, "dwm config");
  c.output_width = config_value(j, "output_width", d.output_width, "dwm config");
  c.hidden_size = config_value(j, "hidden_size", d.hidden_size, "dwm config");
  c.word_width = config_value(j, "word_width", c.input_width, "dwm config");
  c.num_bookmarks = config_value(j, "num_bookmarks", d.num_bookmarks, "dwm config");
  c.shift_span = config_value(j, "shift_span", d.shift_span, "dwm config");
}

DwmState init_state(const DwmConfig& config, std::size_t num_addresses) {
  if (num_addresses == 0) throw ConfigError("dwm: memory needs at least one address");
  ad::Tensor w0(ad::Shape{num_addresses});
  w0[0] = 1.0;
  DwmState s;
  s.hidden = ad::constant(ad::Tensor(ad::Shape{config.hidden_size}));
  s.attention = ad::constant(w0);
  s.bookmarks.assign(config.num_bookmarks, s.attention);
  s.memory = ad::constant(ad::Tensor(ad::Shape{config.word_width, num_addresses}));
  return s;
}

Var read(const Var& memory, const Var& attention) { return ad::matvec(memory, attention); }

ControllerOutput controller_step(const DwmConfig& config, const Var& input, const Var& hidden_prev,
                                 const Var& read_prev, const DwmWeights& weights) {
  if (input.size() != config.input_width || hidden_prev.size() != config.hidden_size ||
      read_prev.size() != config.word_width) {
    throw DimensionError("controller_step: input widths do not match the configuration");
  }
  const Var joined = ad::concat({input, hidden_prev, read_prev, ad::constant(ad::Tensor::vector({1.0}))});
  return {ad::sigmoid(ad::matvec(weights.hidden, joined)), ad::matvec(weights.output, joined),
          ad::matvec(weights.interface, joined)};
}

InterfaceParams process_interface(const Var& raw, const DwmConfig& config) {
  if (raw.shape() != ad::Shape{config.interface_width()}) {
    throw DimensionError("process_interface: expected " + std::to_string(config.interface_width()) + " values, got " +
                         ad::shape_string(raw.shape()));
  }
  std::size_t pos = 0;
  auto take = [&](std::size_t n) {
    Var v = ad::slice(raw, pos, n);
    pos += n;
    return v;
  };
  InterfaceParams p;
  p.add = take(config.word_width);
  p.erase = ad::sigmoid(take(config.word_width));
  p.shift = ad::softmax(ad::softplus(take(config.shift_span)));
  p.bookmark_gates = ad::sigmoid(take(config.num_bookmarks - 1));
  p.attention_gates = ad::softmax(take(config.num_bookmarks + 1));
  p.sharpening = ad::add_scalar(ad::softplus(take(1)), 1.0);
  return p;
}

Var write(const Var& memory, const Var& attention, const Var& erase, const Var& add) {
  const auto& shape = memory.shape();
  if (shape.size() != 2 || attention.size() != shape[1] || erase.size() != shape[0] || add.size() != shape[0]) {
    throw DimensionError("write: memory " + ad::shape_string(shape) + " incompatible with attention/content widths");
  }
  const Var kept = ad::mul(memory, ad::one_minus(ad::outer(erase, attention)));
  return ad::add(kept, ad::outer(add, attention));
}

std::vector<Var> update_bookmarks(std::span<const Var> bookmarks, const Var& attention_prev, const Var& gates) {
  if (bookmarks.empty() || gates.size() + 1 != bookmarks.size()) {
    throw DimensionError("update_bookmarks: need one gate per dynamic bookmark");
  }
  std::vector<Var> out;
  out.reserve(bookmarks.size());
  out.push_back(bookmarks[0]);
  for (std::size_t i = 1; i < bookmarks.size(); ++i) {
    const Var g = ad::element(gates, i - 1);
    out.push_back(ad::add(ad::mul(g, attention_prev), ad::mul(ad::one_minus(g), bookmarks[i])));
  }
  return out;
}

Var gate_attention(const Var& attention_prev, std::span<const Var> bookmarks, const Var& gates) {
  if (gates.size() != bookmarks.size() + 1) {
    throw DimensionError("gate_attention: need num_bookmarks + 1 gates");
  }
  Var out = ad::mul(ad::element(gates, 0), attention_prev);
  for (std::size_t i = 0; i < bookmarks.size(); ++i) out = ad::add(out, ad::mul(ad::element(gates, i + 1), bookmarks[i]));
  return out;
}

Var shift(const Var& attention, const Var& kernel) { return ad::circular_conv(attention, kernel); }

Var sharpen(const Var& attention, const Var& gamma) {
  // (w + eps)^gamma / sum, evaluated as a softmax of gamma * log(w + eps) so
  // that large gamma over diffuse attention cannot underflow to 0/0.
  return ad::softmax(ad::mul(gamma, ad::log(ad::add_scalar(attention, kSharpenFloor))));
}

StepResult dwm_step(const DwmConfig& config, const DwmState& state, const Var& input, const DwmWeights& weights) {
  StepResult r;
  r.read = read(state.memory, state.attention);
  ControllerOutput c = controller_step(config, input, state.hidden, r.read, weights);
  r.interface = process_interface(c.raw_interface, config);
  r.logits = c.logits;

  const InterfaceParams& p = r.interface;
  r.state.hidden = c.hidden;
  r.state.memory = write(state.memory, state.attention, p.erase, p.add);
  const Var gated = gate_attention(state.attention, state.bookmarks, p.attention_gates);
  r.state.bookmarks = update_bookmarks(state.bookmarks, state.attention, p.bookmark_gates);
  r.state.attention = sharpen(shift(gated, p.shift), p.sharpening);
  return r;
}

namespace {

std::vector<double> copy_values(const Var& v) { return {v.value().data().begin(), v.value().data().end()}; }

std::vector<double> sigmoid_values(const Var& v) {
  std::vector<double> out = copy_values(v);
  for (double& x : out) x = 1.0 / (1.0 + std::exp(-x));
  return out;
}

}  // namespace

SequenceOutput forward_sequence(const DwmConfig& config, const DwmWeights& weights, const ad::Tensor& inputs,
                                std::size_t num_addresses, const TraceOptions& options) {
  if (inputs.rank() != 2 || inputs.rows() == 0) throw ContractError("forward_sequence: empty input sequence");
  if (inputs.cols() != config.input_width) {
    throw DimensionError("forward_sequence: input width " + std::to_string(inputs.cols()) + " != " +
                         std::to_string(config.input_width));
  }
  const std::size_t steps = inputs.rows();
  SequenceOutput out;
  out.logits.reserve(steps);
  if (options.capture) {
    out.trace.emplace();
    out.trace->num_addresses = num_addresses;
    out.trace->word_width = config.word_width;
    out.trace->steps.reserve(steps);
  }

  DwmState state = init_state(config, num_addresses);
  for (std::size_t t = 0; t < steps; ++t) {
    StepResult r = dwm_step(config, state, ad::constant(inputs.row(t)), weights);
    out.logits.push_back(r.logits);
    if (options.capture) {
      TraceStep s;
      s.attention = copy_values(r.state.attention);
      for (const Var& b : r.state.bookmarks) s.bookmarks.push_back(copy_values(b));
      s.shift = copy_values(r.interface.shift);
      s.bookmark_gates = copy_values(r.interface.bookmark_gates);
      s.attention_gates = copy_values(r.interface.attention_gates);
      s.sharpening = r.interface.sharpening.item();
      s.erase = copy_values(r.interface.erase);
      s.add = copy_values(r.interface.add);
      s.read = copy_values(r.read);
      s.output = sigmoid_values(r.logits);
      if (options.memory_per_step) s.memory = copy_values(r.state.memory);
      out.trace->steps.push_back(std::move(s));
    }
    state = std::move(r.state);
  }
  if (options.capture) out.trace->final_memory = copy_values(state.memory);
  return out;
}

// ---------------------------------------------------------------------------

DwmModel::DwmModel(DwmConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t fan_in = config_.controller_input_width() - 1;
  params_.add("W_h", fan_in_uniform_with_bias(config_.hidden_size, fan_in, derive_key(seed, {1, 0})));
  params_.add("W_y", fan_in_uniform_with_bias(config_.output_width, fan_in, derive_key(seed, {1, 1})));
  params_.add("W_P", fan_in_uniform_with_bias(config_.interface_width(), fan_in, derive_key(seed, {1, 2})));
}

DwmModel::DwmModel(DwmConfig config, ParameterSet params) : config_(config) {
  config_.validate();
  params_ = std::move(params);
  const std::size_t cols = config_.controller_input_width();
  const ad::Shape shapes[] = {{config_.hidden_size, cols}, {config_.output_width, cols}, {config_.interface_width(), cols}};
  const char* names[] = {"W_h", "W_y", "W_P"};
  if (params_.size() != 3) throw ConfigError("dwm: checkpoint must hold exactly W_h, W_y, W_P");
  for (std::size_t i = 0; i < 3; ++i) {
    if (params_[i].name != names[i] || params_[i].value.shape() != shapes[i]) {
      throw ConfigError("dwm: tensor '" + params_[i].name + "' " + ad::shape_string(params_[i].value.shape()) +
                        " does not match expected '" + names[i] + "' " + ad::shape_string(shapes[i]));
    }
  }
}

DwmWeights DwmModel::bind(std::span<const Var> weights) {
  if (weights.size() != 3) throw DimensionError("dwm: expected 3 weight tensors");
  return {weights[0], weights[1], weights[2]};
}

std::vector<Var> DwmModel::unroll(std::span<const Var> weights, const ad::Tensor& inputs,
                                  std::size_t num_addresses) const {
  return forward_sequence(config_, bind(weights), inputs, num_addresses).logits;
}

SequenceOutput DwmModel::run(const ad::Tensor& inputs, std::size_t num_addresses, const TraceOptions& options) const {
  const auto weights = params_.as_constants();
  return forward_sequence(config_, bind(weights), inputs, num_addresses, options);
}

}  // namespace dwm
