#include <gtest/gtest.h>

#include <cmath>

#include "dwm/errors.hpp"
#include "dwm/model.hpp"
#include "test_support.hpp"

using namespace dwm;
using ad::Tensor;
using ad::Var;

namespace {

Var vec(std::vector<double> v) { return ad::constant(Tensor::vector(std::move(v))); }

std::vector<double> values(const Var& v) { return {v.value().data().begin(), v.value().data().end()}; }

void expect_near(const Var& v, const std::vector<double>& want, double tol) {
  ASSERT_EQ(v.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(v.value()[i], want[i], tol) << "index " << i;
}

void expect_simplex(std::span<const double> w, double tol = 1e-6) {
  double s = 0.0;
  for (double v : w) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0 + tol);
    s += v;
  }
  EXPECT_NEAR(s, 1.0, tol);
}

DwmConfig small_config(std::size_t input, std::size_t output, std::size_t hidden) {
  DwmConfig c;
  c.input_width = input;
  c.output_width = output;
  c.hidden_size = hidden;
  c.word_width = input;
  return c;
}

Tensor random_bits(CounterRng& rng, std::size_t rows, std::size_t cols) {
  Tensor t(ad::Shape{rows, cols});
  for (double& v : t.data()) v = rng.bit() ? 1.0 : 0.0;
  return t;
}

}  // namespace

TEST(Config, DefaultParameterCount) {
  const DwmConfig c;
  EXPECT_EQ(c.controller_input_width(), 26u);
  EXPECT_EQ(c.interface_width(), 28u);
  EXPECT_EQ(c.parameter_count(), 5u * 26 + 8u * 26 + 28u * 26);
  EXPECT_EQ(c.parameter_count(), 1066u);
  EXPECT_EQ(DwmModel(c, 1).parameters().count(), 1066u);
}

TEST(Config, ValidationRejectsBadShapes) {
  DwmConfig c;
  c.hidden_size = 10;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DwmConfig{};
  c.num_bookmarks = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DwmConfig{};
  c.shift_span = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(DwmConfig{}.validate());
}

TEST(Config, JsonRoundTrip) {
  DwmConfig c = small_config(6, 3, 2);
  c.num_bookmarks = 3;
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<DwmConfig>(), c);
}

TEST(InitState, DefaultConfig) {
  const DwmState s = init_state(DwmConfig{}, 4);
  EXPECT_EQ(values(s.attention), (std::vector<double>{1, 0, 0, 0}));
  ASSERT_EQ(s.bookmarks.size(), 2u);
  for (const auto& b : s.bookmarks) EXPECT_EQ(values(b), (std::vector<double>{1, 0, 0, 0}));
  EXPECT_EQ(s.memory.value(), Tensor::zeros({10, 4}));
  EXPECT_EQ(s.hidden.value(), Tensor::zeros({5}));
  EXPECT_THROW(init_state(DwmConfig{}, 0), ConfigError);
}

TEST(Read, Examples) {
  CounterRng rng(3);
  const Var m = ad::constant(check::random_tensor(rng, {3, 4}));
  const Var r = read(m, vec({0, 0, 1, 0}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.value()[i], m.value().at(i, 2));
  EXPECT_EQ(values(read(ad::constant(Tensor::zeros({3, 4})), vec({0.1, 0.2, 0.3, 0.4}))),
            (std::vector<double>{0, 0, 0}));
  expect_near(read(ad::constant(Tensor::matrix(2, 2, {1, 3, 2, 4})), vec({0.5, 0.5})), {2, 3}, 1e-15);
  EXPECT_THROW(read(m, vec({1, 0})), DimensionError);
}

TEST(Read, StaysInsideConvexHull) {
  CounterRng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t a = 1 + rng.below(8);
    const Tensor m = check::random_tensor(rng, {4, a}, -3, 3);
    const Var r = read(ad::constant(m), ad::constant(check::random_simplex(rng, a)));
    for (std::size_t i = 0; i < 4; ++i) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t j = 0; j < a; ++j) {
        lo = std::min(lo, m.at(i, j));
        hi = std::max(hi, m.at(i, j));
      }
      EXPECT_GE(r.value()[i], lo - 1e-12);
      EXPECT_LE(r.value()[i], hi + 1e-12);
    }
  }
}

TEST(Controller, ZeroWeights) {
  const DwmConfig c;
  const std::size_t in = c.controller_input_width();
  const DwmWeights w{ad::constant(Tensor::zeros({c.hidden_size, in})),
                     ad::constant(Tensor::zeros({c.output_width, in})),
                     ad::constant(Tensor::zeros({c.interface_width(), in}))};
  const ControllerOutput out = controller_step(c, ad::constant(Tensor::zeros({10})), ad::constant(Tensor::zeros({5})),
                                               ad::constant(Tensor::zeros({10})), w);
  EXPECT_EQ(values(out.hidden), std::vector<double>(5, 0.5));
  EXPECT_EQ(values(out.logits), std::vector<double>(8, 0.0));
  EXPECT_EQ(values(out.raw_interface), std::vector<double>(28, 0.0));
}

TEST(Controller, BiasColumnIsLast) {
  DwmConfig c = small_config(2, 1, 1);
  const std::size_t in = c.controller_input_width();
  Tensor wy = Tensor::zeros({1, in});
  wy.at(0, in - 1) = 2.5;
  wy.at(0, 0) = 1.0;  // x_t[0]
  const DwmWeights w{ad::constant(Tensor::zeros({1, in})), ad::constant(wy),
                     ad::constant(Tensor::zeros({c.interface_width(), in}))};
  const ControllerOutput out =
      controller_step(c, vec({3, 0}), ad::constant(Tensor::zeros({1})), ad::constant(Tensor::zeros({2})), w);
  EXPECT_DOUBLE_EQ(out.logits.item(), 5.5);
}

TEST(Interface, ZeroRaw) {
  const InterfaceParams p = process_interface(ad::constant(Tensor::zeros({28})), DwmConfig{});
  EXPECT_EQ(values(p.add), std::vector<double>(10, 0.0));
  EXPECT_EQ(values(p.erase), std::vector<double>(10, 0.5));
  expect_near(p.shift, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
  expect_near(p.bookmark_gates, {0.5}, 1e-15);
  expect_near(p.attention_gates, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
  EXPECT_NEAR(p.sharpening.item(), 1.0 + std::log(2.0), 1e-15);
}

TEST(Interface, FieldOrderAndActivations) {
  Tensor raw = Tensor::zeros({28});
  raw[20] = 1.0;    // first shift logit
  raw[27] = -20.0;  // sharpening
  const InterfaceParams p = process_interface(ad::constant(raw), DwmConfig{});
  // softmax([softplus(1), ln 2, ln 2]) = [e, 2, 2] / (e + 4) after exponentiation
  const double e1 = std::exp(std::log1p(std::exp(1.0)));
  expect_near(p.shift, {e1 / (e1 + 4), 2 / (e1 + 4), 2 / (e1 + 4)}, 1e-12);
  expect_near(p.shift, {0.4817, 0.2591, 0.2591}, 1e-4);
  EXPECT_NEAR(p.sharpening.item(), 1.0, 1e-8);
  EXPECT_GE(p.sharpening.item(), 1.0);
  EXPECT_THROW(process_interface(ad::constant(Tensor::zeros({27})), DwmConfig{}), DimensionError);
}

TEST(Write, Examples) {
  CounterRng rng(8);
  const Tensor m = check::random_tensor(rng, {2, 3});
  const Var full = write(ad::constant(m), vec({0, 1, 0}), vec({1, 1}), vec({7, 8}));
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(full.value().at(i, 0), m.at(i, 0));
    EXPECT_EQ(full.value().at(i, 2), m.at(i, 2));
  }
  EXPECT_EQ(full.value().at(0, 1), 7.0);
  EXPECT_EQ(full.value().at(1, 1), 8.0);
  EXPECT_EQ(write(ad::constant(m), vec({0.2, 0.3, 0.5}), vec({0, 0}), vec({0, 0})).value(), m);
  const Var small = write(ad::constant(Tensor::matrix(2, 1, {1, 1})), vec({1}), vec({0.5, 0}), vec({2, 3}));
  expect_near(small, {2.5, 4}, 1e-15);
}

TEST(Bookmarks, UpdateExamples) {
  const std::vector<Var> books{vec({1, 0}), vec({1, 0})};
  const Var prev = vec({0, 1});
  EXPECT_EQ(values(update_bookmarks(books, prev, vec({1}))[1]), (std::vector<double>{0, 1}));
  EXPECT_EQ(values(update_bookmarks(books, prev, vec({0}))[1]), (std::vector<double>{1, 0}));
  const auto half = update_bookmarks(books, prev, vec({0.5}));
  expect_near(half[1], {0.5, 0.5}, 1e-15);
  EXPECT_EQ(values(half[0]), (std::vector<double>{1, 0}));
}

TEST(GateAttention, Examples) {
  const Var prev = vec({0, 0, 1, 0});
  const std::vector<Var> books{vec({1, 0, 0, 0}), vec({0, 1, 0, 0})};
  EXPECT_EQ(values(gate_attention(prev, books, vec({1, 0, 0}))), values(prev));
  EXPECT_EQ(values(gate_attention(prev, books, vec({0, 1, 0}))), values(books[0]));
  const std::vector<Var> two{vec({1, 0}), vec({0, 1})};
  expect_near(gate_attention(vec({1, 0}), two, vec({0.5, 0, 0.5})), {0.5, 0.5}, 1e-15);
}

TEST(Shift, Examples) {
  CounterRng rng(12);
  const Tensor w = check::random_simplex(rng, 5);
  EXPECT_EQ(shift(ad::constant(w), vec({0, 1, 0})).value(), w);
  EXPECT_EQ(values(shift(vec({1, 0, 0, 0}), vec({0, 0, 1}))), (std::vector<double>{0, 1, 0, 0}));
  expect_near(shift(vec({1, 0, 0, 0}), vec({0.5, 0, 0.5})), {0, 0.5, 0, 0.5}, 1e-15);
}

TEST(Sharpen, Examples) {
  CounterRng rng(13);
  const Tensor w = check::random_simplex(rng, 6);
  expect_near(sharpen(ad::constant(w), ad::constant(1.0)), values(ad::constant(w)), 1e-10);
  expect_near(sharpen(vec({0.25, 0.25, 0.25, 0.25}), ad::constant(7.3)), {0.25, 0.25, 0.25, 0.25}, 1e-15);
  expect_near(sharpen(vec({0.8, 0.2}), ad::constant(2.0)), {0.64 / 0.68, 0.04 / 0.68}, 1e-10);
  expect_near(sharpen(vec({0.8, 0.2}), ad::constant(2.0)), {0.9412, 0.0588}, 1e-4);
}

TEST(Sharpen, LargeGammaOnDiffuseAttentionStaysFinite) {
  std::vector<double> w(500, 1.0 / 500);
  w[7] += 1e-3;
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  const Var out = sharpen(vec(w), ad::constant(400.0));
  expect_simplex(out.value().data());
  EXPECT_GT(out.value()[7], 0.5);
}

TEST(Simplex, ClosureOfGateShiftSharpen) {
  CounterRng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t a = 1 + rng.below(10);
    const std::size_t nb = 2 + rng.below(3);
    std::vector<Var> books;
    for (std::size_t i = 0; i < nb; ++i) books.push_back(ad::constant(check::random_simplex(rng, a)));
    const Var prev = ad::constant(check::random_simplex(rng, a));
    const Var gated = gate_attention(prev, books, ad::constant(check::random_simplex(rng, nb + 1)));
    expect_simplex(gated.value().data());
    const Var shifted = shift(gated, ad::constant(check::random_simplex(rng, 3)));
    expect_simplex(shifted.value().data());
    EXPECT_NEAR(check::sum_of(shifted.value()), check::sum_of(gated.value()), 1e-12);
    const Var sharp = sharpen(shifted, ad::constant(rng.uniform(1.0, 30.0)));
    expect_simplex(sharp.value().data());
  }
}

TEST(Simplex, ShiftConservesMassExactly) {
  CounterRng rng(22);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t a = 1 + rng.below(12);
    const Tensor w = check::random_tensor(rng, {a}, 0.0, 1.0);
    const Var out = shift(ad::constant(w), ad::constant(check::random_simplex(rng, 3)));
    EXPECT_NEAR(check::sum_of(out.value()), check::sum_of(w), 1e-12);
  }
}

TEST(Step, ZeroWeightsKeepStaticBookmark) {
  const DwmConfig c;
  const std::size_t in = c.controller_input_width();
  const DwmWeights w{ad::constant(Tensor::zeros({c.hidden_size, in})),
                     ad::constant(Tensor::zeros({c.output_width, in})),
                     ad::constant(Tensor::zeros({c.interface_width(), in}))};
  const DwmState s0 = init_state(c, 4);
  const StepResult r = dwm_step(c, s0, ad::constant(Tensor::zeros({10})), w);
  EXPECT_EQ(values(r.state.bookmarks[0]), (std::vector<double>{1, 0, 0, 0}));
  expect_simplex(r.state.attention.value().data());
}

TEST(Step, WriteUsesPreviousAttention) {
  // Interface tuned so the step writes a = 1 with full erase and shifts by +1.
  DwmConfig c = small_config(2, 1, 1);
  const std::size_t in = c.controller_input_width();
  Tensor wp = Tensor::zeros({c.interface_width(), in});
  const std::size_t bias = in - 1;
  for (std::size_t i = 0; i < c.word_width; ++i) {
    wp.at(i, bias) = 1.0;                   // a
    wp.at(c.word_width + i, bias) = 50.0;   // e -> 1
  }
  wp.at(2 * c.word_width + 2, bias) = 60.0;  // shift +1
  const DwmWeights w{ad::constant(Tensor::zeros({1, in})), ad::constant(Tensor::zeros({1, in})), ad::constant(wp)};
  const StepResult r = dwm_step(c, init_state(c, 3), ad::constant(Tensor::zeros({2})), w);
  // Content lands at address 0 (w_0), attention moves on to address 1.
  EXPECT_NEAR(r.state.memory.value().at(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(r.state.memory.value().at(0, 1), 0.0, 1e-12);
  EXPECT_GT(r.state.attention.value()[1], 0.99);
}

TEST(Sequence, StaticBookmarkAndSimplexOverRandomRuns) {
  CounterRng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    DwmConfig c = small_config(4, 2, 3);
    c.num_bookmarks = 2 + rng.below(2);
    DwmModel model(c, derive_key(7, {static_cast<std::uint64_t>(trial)}));
    // Scale weights up so gates saturate in varied ways.
    auto flat = model.parameters().flatten();
    for (double& v : flat) v *= 6.0;
    model.parameters().assign_flat(flat);
    const std::size_t a = 2 + rng.below(5);
    const SequenceOutput out = model.run(random_bits(rng, 100, 4), a, TraceOptions{true, true});
    ASSERT_EQ(out.trace->steps.size(), 100u);
    for (const auto& s : out.trace->steps) {
      std::vector<double> home(a, 0.0);
      home[0] = 1.0;
      EXPECT_EQ(s.bookmarks[0], home);
      expect_simplex(s.attention);
      for (const auto& b : s.bookmarks) expect_simplex(b);
      expect_simplex(s.shift);
      expect_simplex(s.attention_gates);
      for (double g : s.bookmark_gates) EXPECT_TRUE(g >= 0.0 && g <= 1.0);
      for (double e : s.erase) EXPECT_TRUE(e >= 0.0 && e <= 1.0);
      EXPECT_GE(s.sharpening, 1.0);
      ASSERT_TRUE(s.memory.has_value());
      EXPECT_EQ(s.memory->size(), 4 * a);
    }
  }
}

TEST(Sequence, SingleStepAndEmptyInput) {
  const DwmModel model(DwmConfig{}, 5);
  EXPECT_EQ(model.run(Tensor::zeros({1, 10}), 1).logits.size(), 1u);
  EXPECT_THROW(model.run(Tensor::zeros({0, 10}), 1), ContractError);
  EXPECT_THROW(model.run(Tensor::zeros({3, 9}), 3), DimensionError);
}

TEST(Sequence, DeterministicAcrossRuns) {
  CounterRng rng(41);
  const Tensor inputs = random_bits(rng, 30, 10);
  const DwmModel a(DwmConfig{}, 9);
  const DwmModel b(DwmConfig{}, 9);
  const auto ra = a.run(inputs, 30, TraceOptions{true, false});
  const auto rb = b.run(inputs, 30, TraceOptions{true, false});
  for (std::size_t t = 0; t < 30; ++t) EXPECT_EQ(ra.logits[t].value(), rb.logits[t].value());
  EXPECT_EQ(*ra.trace, *rb.trace);
  EXPECT_NE(DwmModel(DwmConfig{}, 10).parameters(), a.parameters());
}

TEST(Model, RejectsMisnamedOrMisshapedParameters) {
  const DwmModel m(DwmConfig{}, 1);
  ParameterSet bad = m.parameters();
  bad[0].name = "W_x";
  EXPECT_THROW(DwmModel(DwmConfig{}, bad), ConfigError);
  ParameterSet wrong = m.parameters();
  wrong[1].value = Tensor::zeros({8, 25});
  EXPECT_THROW(DwmModel(DwmConfig{}, wrong), ConfigError);
}

TEST(Model, InitializationScale) {
  const DwmModel m(DwmConfig{}, 3);
  const double k = 1.0 / std::sqrt(25.0);
  for (const auto& t : m.parameters()) {
    const std::size_t cols = t.value.cols();
    for (std::size_t r = 0; r < t.value.rows(); ++r) {
      for (std::size_t col = 0; col + 1 < cols; ++col) EXPECT_LE(std::abs(t.value.at(r, col)), k);
      EXPECT_EQ(t.value.at(r, cols - 1), 0.0);
    }
  }
}

// Central differences over every weight of an unrolled rollout.
double rollout_gradient_error(const DwmConfig& c, std::uint64_t seed, std::size_t steps, std::size_t addresses) {
  CounterRng rng(derive_key(seed, {1}));
  DwmModel model(c, seed);
  auto flat = model.parameters().flatten();
  for (double& v : flat) v *= 3.0;
  model.parameters().assign_flat(flat);
  const Tensor inputs = random_bits(rng, steps, c.input_width);
  std::vector<Tensor> weights;
  for (const auto& t : model.parameters()) weights.push_back(t.value);
  const Tensor proj = check::random_tensor(rng, {steps * c.output_width});
  return check::max_gradient_error(weights, [&](std::span<const Var> w) {
    const auto logits = model.unroll(w, inputs, addresses);
    Var total = ad::constant(0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      const Var p = ad::constant(Tensor(ad::Shape{c.output_width},
                                        std::vector<double>(proj.data().begin() + t * c.output_width,
                                                            proj.data().begin() + (t + 1) * c.output_width)));
      total = total + ad::sum(ad::mul(ad::sigmoid(logits[t]), p));
    }
    return total;
  });
}

TEST(Gradient, FiveStepRolloutOnFourAddresses) {
  EXPECT_LT(rollout_gradient_error(small_config(4, 3, 3), 101, 5, 4), 1e-4);
}

TEST(Gradient, ThreeStepDefaultConfig) { EXPECT_LT(rollout_gradient_error(DwmConfig{}, 102, 3, 3), 1e-4); }

TEST(Gradient, RandomSmallConfigs) {
  CounterRng rng(202);
  for (int trial = 0; trial < 6; ++trial) {
    DwmConfig c = small_config(3 + rng.below(3), 1 + rng.below(3), 1 + rng.below(2));
    const std::size_t a = 3 + rng.below(3);
    const std::size_t t = 2 + rng.below(5);
    EXPECT_LT(rollout_gradient_error(c, 300 + trial, t, a), 1e-4) << "trial " << trial;
  }
}
