#pragma once

// The working-memory cell: a small sigmoid RNN controller driving a single
// shared read/write attention over an external memory. Attention moves by
// circular shifts and can jump back to bookmarks, one of which is pinned to
// the initial attention.
//
// Memory is a word_width x A matrix; column j holds the content of address j.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dwm/autodiff.hpp"
#include "dwm/parameters.hpp"
#include "dwm/trace.hpp"

namespace dwm {

struct DwmConfig {
  std::size_t input_width = 10;  // data bits + control bits
  std::size_t output_width = 8;
  std::size_t hidden_size = 5;
  std::size_t word_width = 10;
  std::size_t num_bookmarks = 2;  // static bookmark + dynamic ones
  std::size_t shift_span = 3;     // offsets -1, 0, +1

  // Default widths for a task encoding; word width tracks the input width.
  static DwmConfig for_widths(std::size_t input_width, std::size_t output_width);

  // Throws ConfigError when an invariant is broken.
  void validate() const;

  // [x_t, h_{t-1}, r_{t-1}] plus the bias input.
  std::size_t controller_input_width() const { return input_width + hidden_size + word_width + 1; }
  std::size_t interface_width() const {
    return 2 * word_width + shift_span + (num_bookmarks - 1) + (num_bookmarks + 1) + 1;
  }
  std::size_t parameter_count() const {
    return (hidden_size + output_width + interface_width()) * controller_input_width();
  }

  friend bool operator==(const DwmConfig&, const DwmConfig&) = default;
};

void to_json(nlohmann::json& j, const DwmConfig& c);
void from_json(const nlohmann::json& j, DwmConfig& c);

// Lower bound added before exponentiation in sharpen().
inline constexpr double kSharpenFloor = 1e-12;

// Graph handles for the three controller matrices. Each carries a trailing
// bias column.
struct DwmWeights {
  ad::Var hidden;     // hidden_size x (controller_input_width)
  ad::Var output;     // output_width x (controller_input_width)
  ad::Var interface;  // interface_width x (controller_input_width)
};

struct InterfaceParams {
  ad::Var add;              // word_width, unactivated
  ad::Var erase;            // word_width, in [0,1]
  ad::Var shift;            // shift_span, simplex
  ad::Var bookmark_gates;   // num_bookmarks - 1, in [0,1]
  ad::Var attention_gates;  // num_bookmarks + 1, simplex
  ad::Var sharpening;       // scalar, >= 1
};

struct DwmState {
  ad::Var hidden;
  ad::Var attention;
  std::vector<ad::Var> bookmarks;  // [0] is the static bookmark
  ad::Var memory;
};

struct ControllerOutput {
  ad::Var hidden;
  ad::Var logits;
  ad::Var raw_interface;
};

struct StepResult {
  DwmState state;
  ad::Var logits;
  InterfaceParams interface;
  ad::Var read;  // r_{t-1}, the vector the controller consumed
};

DwmState init_state(const DwmConfig& config, std::size_t num_addresses);

ad::Var read(const ad::Var& memory, const ad::Var& attention);

ControllerOutput controller_step(const DwmConfig& config, const ad::Var& input, const ad::Var& hidden_prev,
                                 const ad::Var& read_prev, const DwmWeights& weights);

InterfaceParams process_interface(const ad::Var& raw, const DwmConfig& config);

// M'[i][j] = M[i][j] * (1 - w[j] * e[i]) + w[j] * a[i]
ad::Var write(const ad::Var& memory, const ad::Var& attention, const ad::Var& erase, const ad::Var& add);

std::vector<ad::Var> update_bookmarks(std::span<const ad::Var> bookmarks, const ad::Var& attention_prev,
                                      const ad::Var& gates);

// gates[0] weights the previous attention, gates[i] weights bookmark i-1.
ad::Var gate_attention(const ad::Var& attention_prev, std::span<const ad::Var> bookmarks, const ad::Var& gates);

// Circular convolution; s[0], s[1], s[2] move attention by -1, 0, +1.
ad::Var shift(const ad::Var& attention, const ad::Var& kernel);

ad::Var sharpen(const ad::Var& attention, const ad::Var& gamma);

StepResult dwm_step(const DwmConfig& config, const DwmState& state, const ad::Var& input, const DwmWeights& weights);

struct TraceOptions {
  bool capture = false;
  bool memory_per_step = false;
};

struct SequenceOutput {
  std::vector<ad::Var> logits;
  std::optional<EpisodeTrace> trace;
};

// `inputs` is T x input_width. Memory holds `num_addresses` columns.
SequenceOutput forward_sequence(const DwmConfig& config, const DwmWeights& weights, const ad::Tensor& inputs,
                                std::size_t num_addresses, const TraceOptions& options = {});

class DwmModel final : public SequenceModel {
 public:
  DwmModel(DwmConfig config, std::uint64_t seed);
  DwmModel(DwmConfig config, ParameterSet params);

  std::string_view kind() const override { return "dwm"; }
  std::size_t input_width() const override { return config_.input_width; }
  std::size_t output_width() const override { return config_.output_width; }
  nlohmann::json config_json() const override { return config_; }
  std::unique_ptr<SequenceModel> clone() const override { return std::make_unique<DwmModel>(*this); }

  std::vector<ad::Var> unroll(std::span<const ad::Var> weights, const ad::Tensor& inputs,
                              std::size_t num_addresses) const override;

  // Graph-free forward pass with trace capture.
  SequenceOutput run(const ad::Tensor& inputs, std::size_t num_addresses, const TraceOptions& options = {}) const;

  const DwmConfig& config() const noexcept { return config_; }

  static DwmWeights bind(std::span<const ad::Var> weights);

 private:
  DwmConfig config_;
};

}  // namespace dwm
