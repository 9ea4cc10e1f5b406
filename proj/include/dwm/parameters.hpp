#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwm/autodiff.hpp"

namespace dwm {

struct NamedTensor {
  std::string name;
  ad::Tensor value;
};

// Ordered, named collection of trainable tensors.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(std::vector<NamedTensor> tensors) : tensors_(std::move(tensors)) {}

  void add(std::string name, ad::Tensor value) { tensors_.push_back({std::move(name), std::move(value)}); }

  std::size_t size() const noexcept { return tensors_.size(); }
  // Total number of scalar parameters.
  std::size_t count() const noexcept;

  NamedTensor& operator[](std::size_t i) { return tensors_[i]; }
  const NamedTensor& operator[](std::size_t i) const { return tensors_[i]; }
  const NamedTensor* find(std::string_view name) const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  // Fresh graph leaves, one per tensor, in order.
  std::vector<ad::Var> as_parameters() const;
  std::vector<ad::Var> as_constants() const;

  // Flat views used by the optimizer and gradient checks.
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> values);

  friend bool operator==(const ParameterSet&, const ParameterSet&);

 private:
  std::vector<NamedTensor> tensors_;
};

bool operator==(const NamedTensor& a, const NamedTensor& b);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights with a zero bias column.
// The last column of the returned rows x (fan_in + 1) matrix is the bias.
ad::Tensor fan_in_uniform_with_bias(std::size_t rows, std::size_t fan_in, std::uint64_t key);

// A recurrent sequence model that maps T input rows to T logit vectors. Both
// the memory model and the recurrent baseline implement this, so the training
// and evaluation harness treat them identically.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;

  virtual std::string_view kind() const = 0;
  virtual std::size_t input_width() const = 0;
  virtual std::size_t output_width() const = 0;
  virtual nlohmann::json config_json() const = 0;
  virtual std::unique_ptr<SequenceModel> clone() const = 0;

  // `weights` are graph handles for parameters(), in order. Passing
  // as_constants() gives a graph-free forward pass.
  virtual std::vector<ad::Var> unroll(std::span<const ad::Var> weights, const ad::Tensor& inputs,
                                      std::size_t num_addresses) const = 0;

  const ParameterSet& parameters() const noexcept { return params_; }
  ParameterSet& parameters() noexcept { return params_; }

 protected:
  ParameterSet params_;
};

}  // namespace dwm
