#pragma once

// Single-layer LSTM baseline trained with the same harness as the memory model.

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

#include "dwm/autodiff.hpp"
#include "dwm/parameters.hpp"

namespace dwm {

struct BaselineConfig {
  std::size_t input_width = 10;
  std::size_t output_width = 8;
  std::size_t hidden_size = 64;
  double forget_bias = 1.0;  // initial bias of the forget gate

  void validate() const;
  // Gates: 4H x (input + H + 1); readout: output x (H + 1).
  std::size_t parameter_count() const {
    return 4 * hidden_size * (input_width + hidden_size + 1) + output_width * (hidden_size + 1);
  }
  friend bool operator==(const BaselineConfig&, const BaselineConfig&) = default;
};

void to_json(nlohmann::json& j, const BaselineConfig& c);
void from_json(const nlohmann::json& j, BaselineConfig& c);

struct LstmState {
  ad::Var hidden;
  ad::Var cell;
};

struct LstmWeights {
  ad::Var gates;   // rows: input, forget, candidate, output blocks of H
  ad::Var output;  // readout from [h_t, 1]
};

LstmState lstm_init(const BaselineConfig& config);

// Returns (state', y_logits).
std::pair<LstmState, ad::Var> lstm_step(const BaselineConfig& config, const ad::Var& input, const LstmState& state,
                                        const LstmWeights& weights);

class LstmBaseline final : public SequenceModel {
 public:
  LstmBaseline(BaselineConfig config, std::uint64_t seed);
  LstmBaseline(BaselineConfig config, ParameterSet params);

  std::string_view kind() const override { return "baseline"; }
  std::size_t input_width() const override { return config_.input_width; }
  std::size_t output_width() const override { return config_.output_width; }
  nlohmann::json config_json() const override { return config_; }
  std::unique_ptr<SequenceModel> clone() const override { return std::make_unique<LstmBaseline>(*this); }

  // num_addresses is ignored: the baseline has no external memory.
  std::vector<ad::Var> unroll(std::span<const ad::Var> weights, const ad::Tensor& inputs,
                              std::size_t num_addresses) const override;

  const BaselineConfig& config() const noexcept { return config_; }

 private:
  BaselineConfig config_;
};

}  // namespace dwm
