#include "dwm/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dwm/model.hpp"
#include "dwm/rng.hpp"
#include "dwm/tasks.hpp"
#include "dwm/training.hpp"

namespace dwm {

using ad::Tensor;
using ad::Var;

namespace {

constexpr double kSimplexTol = 1e-9;

Tensor random_bits(CounterRng& rng, std::size_t rows, std::size_t cols) {
  Tensor t(ad::Shape{rows, cols});
  for (double& v : t.data()) v = rng.bit() ? 1.0 : 0.0;
  return t;
}

Tensor random_simplex(CounterRng& rng, std::size_t n) {
  Tensor t(ad::Shape{n});
  double total = 0.0;
  for (double& v : t.data()) {
    v = -std::log(1.0 - rng.uniform());
    total += v;
  }
  for (double& v : t.data()) v /= total;
  return t;
}

std::vector<bool> random_mask(CounterRng& rng, std::size_t n) {
  std::vector<bool> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = rng.bit();
  m[rng.below(n)] = true;
  return m;
}

bool on_simplex(std::span<const double> w) {
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0 && v <= 1.0 + kSimplexTol)) return false;
    total += v;
  }
  return std::abs(total - 1.0) < kSimplexTol;
}

bool in_unit_interval(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0 && x <= 1.0; });
}

double total(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

// Records the first failure of a suite.
struct Tally {
  CheckResult result;

  explicit Tally(std::string name) { result.name = std::move(name); }
  void expect(bool ok, std::size_t trial, const std::string& what) {
    if (ok) return;
    if (result.failures++ == 0) result.detail = "trial " + std::to_string(trial) + ": " + what;
  }
};

double rollout_gradient_error(const DwmConfig& config, std::uint64_t key, std::size_t steps, std::size_t addresses) {
  CounterRng rng(derive_key(key, {1}));
  DwmModel model(config, key);
  // Larger weights push gates away from their symmetric starting point.
  auto flat = model.parameters().flatten();
  for (double& v : flat) v *= 3.0;
  model.parameters().assign_flat(flat);
  const Tensor inputs = random_bits(rng, steps, config.input_width);
  const Tensor targets = random_bits(rng, steps, config.output_width);
  std::vector<bool> mask = random_mask(rng, steps);
  mask.back() = true;  // the last output depends on every weight

  std::vector<Tensor> values;
  for (const auto& t : model.parameters()) values.push_back(t.value);
  auto loss_of = [&](std::span<const Var> w) { return bce_loss(model.unroll(w, inputs, addresses), targets, mask); };

  const std::vector<Var> leaves = model.parameters().as_parameters();
  ad::backward(loss_of(leaves));

  constexpr double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    // A leaf the loss never reached has an empty (zero) gradient.
    const std::vector<double> analytic = leaves[k].grad().empty()
                                             ? std::vector<double>(values[k].size(), 0.0)
                                             : std::vector<double>(leaves[k].grad().begin(), leaves[k].grad().end());
    for (std::size_t i = 0; i < values[k].size(); ++i) {
      auto eval = [&](double delta) {
        const double saved = values[k][i];
        values[k][i] = saved + delta;
        std::vector<Var> probe;
        for (const auto& v : values) probe.push_back(ad::constant(v));
        const double out = loss_of(probe).item();
        values[k][i] = saved;
        return out;
      };
      const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
    }
  }
  return worst;
}

CheckResult simplex_closure(std::size_t trials, std::uint64_t seed) {
  Tally tally("simplex closure of gate, shift and sharpen");
  CounterRng rng(seed);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t a = 1 + rng.below(10);
    const std::size_t nb = 2 + rng.below(3);
    std::vector<Var> books;
    for (std::size_t i = 0; i < nb; ++i) books.push_back(ad::constant(random_simplex(rng, a)));
    const Var gated = gate_attention(ad::constant(random_simplex(rng, a)), books,
                                     ad::constant(random_simplex(rng, nb + 1)));
    tally.expect(on_simplex(gated.value().data()), trial, "gated attention left the simplex");
    const Var shifted = shift(gated, ad::constant(random_simplex(rng, 3)));
    tally.expect(on_simplex(shifted.value().data()), trial, "shifted attention left the simplex");
    const Var sharp = sharpen(shifted, ad::constant(rng.uniform(1.0, 50.0)));
    tally.expect(on_simplex(sharp.value().data()), trial, "sharpened attention left the simplex");
  }
  tally.result.trials = trials;
  return tally.result;
}

CheckResult shift_mass(std::size_t trials, std::uint64_t seed) {
  Tally tally("shift mass conservation");
  CounterRng rng(seed);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t a = 1 + rng.below(12);
    Tensor w(ad::Shape{a});
    for (double& v : w.data()) v = rng.uniform();
    const Var out = shift(ad::constant(w), ad::constant(random_simplex(rng, 3)));
    const double err = std::abs(total(out.value().data()) - total(w.data()));
    tally.result.worst = std::max(tally.result.worst, err);
    tally.expect(err < 1e-12, trial, "mass changed by " + std::to_string(err));
  }
  tally.result.trials = trials;
  return tally.result;
}

CheckResult rollout_constraints(std::size_t trials, std::uint64_t seed) {
  Tally tally("static bookmark and gate constraints over rollouts");
  CounterRng rng(seed);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    DwmConfig c;
    c.input_width = 2 + rng.below(4);
    c.output_width = 1 + rng.below(3);
    c.hidden_size = 1 + rng.below(std::min<std::size_t>(3, c.input_width - 1));
    c.word_width = c.input_width;
    c.num_bookmarks = 2 + rng.below(2);
    DwmModel model(c, derive_key(seed, {trial}));
    auto flat = model.parameters().flatten();
    const double scale = rng.uniform(1.0, 8.0);
    for (double& v : flat) v *= scale;
    model.parameters().assign_flat(flat);
    const std::size_t a = 1 + rng.below(6);
    const std::size_t steps = 1 + rng.below(30);
    const SequenceOutput out = model.run(random_bits(rng, steps, c.input_width), a, TraceOptions{true, false});
    const EpisodeTrace& trace = *out.trace;
    tally.expect(trace.steps.size() == steps, trial, "trace length differs from the input");
    std::vector<double> home(a, 0.0);
    home[0] = 1.0;
    for (const TraceStep& s : trace.steps) {
      tally.expect(s.bookmarks.at(0) == home, trial, "static bookmark moved");
      tally.expect(on_simplex(s.attention), trial, "attention left the simplex");
      for (const auto& b : s.bookmarks) tally.expect(on_simplex(b), trial, "bookmark left the simplex");
      tally.expect(on_simplex(s.shift), trial, "shift kernel left the simplex");
      tally.expect(on_simplex(s.attention_gates), trial, "attention gates left the simplex");
      tally.expect(in_unit_interval(s.bookmark_gates), trial, "bookmark gate outside [0,1]");
      tally.expect(in_unit_interval(s.erase), trial, "erase outside [0,1]");
      tally.expect(s.sharpening >= 1.0, trial, "sharpening below 1");
    }
    tally.expect(std::all_of(trace.final_memory.begin(), trace.final_memory.end(),
                             [](double v) { return std::isfinite(v); }),
                 trial, "memory is not finite");
  }
  tally.result.trials = trials;
  return tally.result;
}

CheckResult masked_loss(std::size_t trials, std::uint64_t seed) {
  Tally tally("masked-loss independence");
  CounterRng rng(seed);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t steps = 1 + rng.below(12);
    const Tensor targets = random_bits(rng, steps, kDataBits);
    const auto mask = random_mask(rng, steps);
    Tensor logits(ad::Shape{steps, kDataBits});
    for (double& v : logits.data()) v = rng.uniform(-5, 5);
    const double loss = bce_loss(logits, targets, mask);
    const double acc = accuracy(logits, targets, mask);
    for (std::size_t t = 0; t < steps; ++t)
      if (!mask[t])
        for (std::size_t b = 0; b < kDataBits; ++b) logits.at(t, b) = rng.uniform(-50, 50);
    tally.expect(bce_loss(logits, targets, mask) == loss && accuracy(logits, targets, mask) == acc, trial,
                 "unmasked steps changed the loss");
  }
  tally.result.trials = trials;
  return tally.result;
}

CheckResult generator_consistency(std::size_t trials, std::uint64_t seed) {
  Tally tally("generator mask/target consistency");
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const Task task = kAllTasks[trial % std::size(kAllTasks)];
    const TaskSpec spec{task, kDataBits, seed};
    const TaskEpisode e = generate(spec, GenerationRegime::standard(task, Phase::Training), 1, trial).front();
    const std::string tag = std::string(task_name(task)) + ": ";
    tally.expect(e.inputs.rows() == e.length() && e.targets.rows() == e.length(), trial, tag + "ragged episode");
    tally.expect(e.input_width() == spec.input_width(), trial, tag + "wrong input width");
    tally.expect(e.masked_steps() > 0, trial, tag + "nothing to predict");
    tally.expect(oracle_solve(e) == e.targets, trial, tag + "targets disagree with the oracle");
    std::size_t cursor = 0;
    for (const auto& s : e.segments) {
      tally.expect(s.begin == cursor && s.length > 0, trial, tag + "segments do not tile the episode");
      cursor = s.begin + s.length;
      for (std::size_t t = s.begin; t < cursor && t < e.length(); ++t) {
        double data = 0.0;
        double control = 0.0;
        for (std::size_t c = 0; c < e.input_width(); ++c) (c < kDataBits ? data : control) += e.inputs.at(t, c);
        const bool dummy = s.kind == SegmentKind::Dummy;
        tally.expect(e.mask[t] == dummy, trial, tag + "mask does not match the dummy steps");
        if (s.kind == SegmentKind::Marker) tally.expect(data == 0.0 && control == 1.0, trial, tag + "bad marker");
        if (s.kind == SegmentKind::Data) tally.expect(control == 0.0, trial, tag + "control bit on a data step");
        if (dummy) tally.expect(data + control == 0.0, trial, tag + "non-blank dummy step");
        if (!e.mask[t])
          for (std::size_t b = 0; b < kDataBits; ++b)
            tally.expect(e.targets.at(t, b) == 0.0, trial, tag + "target outside the mask");
      }
    }
    tally.expect(cursor == e.length(), trial, tag + "segments do not cover the episode");
  }
  tally.result.trials = trials;
  return tally.result;
}

}  // namespace

CheckResult gradient_check(std::size_t configs, std::uint64_t seed, double tolerance) {
  Tally tally("gradient check of rollouts against central differences");
  CounterRng rng(seed);
  for (std::size_t trial = 0; trial < configs; ++trial) {
    DwmConfig c;
    c.input_width = 2 + rng.below(4);
    c.output_width = 1 + rng.below(3);
    c.hidden_size = 1 + rng.below(std::min<std::size_t>(3, c.input_width - 1));
    c.word_width = c.input_width;
    c.num_bookmarks = 2 + rng.below(2);
    const std::size_t addresses = 3 + rng.below(3);
    const std::size_t steps = 2 + rng.below(5);
    const double err = rollout_gradient_error(c, derive_key(seed, {trial}), steps, addresses);
    tally.result.worst = std::max(tally.result.worst, err);
    std::ostringstream what;
    what << "relative error " << err << " (A=" << addresses << ", T=" << steps << ")";
    tally.expect(err < tolerance, trial, what.str());
  }
  tally.result.trials = configs;
  return tally.result;
}

std::vector<CheckResult> invariant_suites(std::size_t trials, std::uint64_t seed) {
  return {simplex_closure(trials, derive_key(seed, {1})), shift_mass(trials, derive_key(seed, {2})),
          rollout_constraints(trials, derive_key(seed, {3})), masked_loss(trials, derive_key(seed, {4})),
          generator_consistency(trials, derive_key(seed, {5}))};
}

}  // namespace dwm
