#include "dwm/parameters.hpp"

#include <cmath>

#include "dwm/errors.hpp"
#include "dwm/rng.hpp"

namespace dwm {

std::size_t ParameterSet::count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

const NamedTensor* ParameterSet::find(std::string_view name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<ad::Var> ParameterSet::as_parameters() const {
  std::vector<ad::Var> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.push_back(ad::parameter(t.value));
  return out;
}

std::vector<ad::Var> ParameterSet::as_constants() const {
  std::vector<ad::Var> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.push_back(ad::constant(t.value));
  return out;
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> out;
  out.reserve(count());
  for (const auto& t : tensors_) out.insert(out.end(), t.value.data().begin(), t.value.data().end());
  return out;
}

void ParameterSet::assign_flat(std::span<const double> values) {
  if (values.size() != count()) throw DimensionError("assign_flat: expected " + std::to_string(count()) + " values");
  std::size_t pos = 0;
  for (auto& t : tensors_)
    for (double& v : t.value.data()) v = values[pos++];
}

bool operator==(const NamedTensor& a, const NamedTensor& b) { return a.name == b.name && a.value == b.value; }

bool operator==(const ParameterSet& a, const ParameterSet& b) { return a.tensors_ == b.tensors_; }

ad::Tensor fan_in_uniform_with_bias(std::size_t rows, std::size_t fan_in, std::uint64_t key) {
  CounterRng rng(key);
  const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
  ad::Tensor w(ad::Shape{rows, fan_in + 1});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < fan_in; ++c) w.at(r, c) = rng.uniform(-k, k);
  return w;
}

}  // namespace dwm
