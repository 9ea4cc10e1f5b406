#include "dwm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <tuple>

#include "dwm/errors.hpp"
#include "dwm/rng.hpp"
#include "dwm/training.hpp"
#include "parallel.hpp"

namespace dwm {

ad::Tensor ModelPredictor::logits(const TaskEpisode& episode, std::size_t num_addresses) const {
  const auto weights = model_.parameters().as_constants();
  return stack_logits(model_.unroll(weights, episode.inputs, num_addresses));
}

ad::Tensor OraclePredictor::logits(const TaskEpisode& episode, std::size_t) const {
  ad::Tensor out = oracle_solve(episode);
  for (double& v : out.data()) v = v > 0.5 ? kOracleLogit : -kOracleLogit;
  return out;
}

ConstantPredictor::ConstantPredictor(double probability) {
  if (!(probability > 0.0 && probability < 1.0)) throw ConfigError("constant predictor probability must be in (0,1)");
  logit_ = std::log(probability / (1.0 - probability));
}

ad::Tensor ConstantPredictor::logits(const TaskEpisode& episode, std::size_t) const {
  return ad::Tensor(ad::Shape{episode.length(), episode.data_bits}, logit_);
}

std::uint64_t evaluation_seed(std::uint64_t seed) { return derive_key(seed, {0x6576'616c'7561'7465ULL}); }

EvalRow evaluate(const Predictor& predictor, Task task, Phase regime, const EvalOptions& options) {
  const TaskSpec spec{task, kDataBits, evaluation_seed(options.seed)};
  if (predictor.input_width() != 0 && predictor.input_width() != spec.input_width()) {
    throw ConfigError("model input width " + std::to_string(predictor.input_width()) + " does not match task '" +
                      std::string(task_name(task)) + "' (" + std::to_string(spec.input_width()) + ")");
  }
  if (options.num_batches == 0 || options.batch_size == 0) throw ConfigError("evaluation needs at least one batch");
  const auto gen = GenerationRegime::standard(task, regime);

  EvalRow row;
  row.task = task;
  row.model = predictor.name();
  row.regime = regime;
  row.checkpoint = options.checkpoint;
  MaskedScore total;
  for (std::size_t b = 0; b < options.num_batches; ++b) {
    const auto batch = generate(spec, gen, options.batch_size, b);
    const std::size_t addresses = memory_size_for(batch, options.memory_size);
    if (b == 0) row.sequence_length = batch.front().length();
    std::vector<MaskedScore> parts(batch.size());
    detail::parallel_for(batch.size(), options.threads, [&](std::size_t i) {
      parts[i] = score(predictor.logits(batch[i], addresses), batch[i].targets, batch[i].mask);
    });
    for (const auto& p : parts) total += p;
    row.episodes += batch.size();
  }
  row.accuracy = total.accuracy();
  row.loss = total.loss();
  row.masked_bits = total.bits;
  return row;
}

void write_report_csv(std::span<const EvalRow> rows, const std::filesystem::path& path) {
  using Key = std::tuple<std::string, std::string, std::string>;  // task, model, checkpoint
  std::vector<Key> order;
  std::map<Key, std::map<Phase, const EvalRow*>> table;
  for (const auto& r : rows) {
    Key key{std::string(task_name(r.task)), r.model, r.checkpoint};
    if (!table.contains(key)) order.push_back(key);
    table[key][r.regime] = &r;
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "task,model,checkpoint,train_accuracy,validation_accuracy,test_accuracy,train_episodes,validation_episodes,"
         "test_episodes\n";
  out << std::fixed << std::setprecision(2);
  for (const auto& key : order) {
    const auto& by_phase = table[key];
    out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key);
    for (Phase p : {Phase::Training, Phase::Validation, Phase::Testing}) {
      out << ',';
      if (auto it = by_phase.find(p); it != by_phase.end()) out << 100.0 * it->second->accuracy;
    }
    for (Phase p : {Phase::Training, Phase::Validation, Phase::Testing}) {
      out << ',';
      if (auto it = by_phase.find(p); it != by_phase.end()) out << it->second->episodes;
    }
    out << '\n';
  }
}

EpisodeTrace record_trace(const DwmModel& model, const TaskEpisode& episode, bool memory_per_step,
                          std::optional<std::size_t> memory_size) {
  if (episode.input_width() != model.input_width()) {
    throw ConfigError("trace: episode width does not match the model");
  }
  const std::size_t addresses = memory_size_for(std::span<const TaskEpisode>(&episode, 1), memory_size);
  SequenceOutput out = model.run(episode.inputs, addresses, TraceOptions{true, memory_per_step});
  EpisodeTrace trace = std::move(*out.trace);
  const nlohmann::json ej = episode;
  trace.metadata = {{"task", task_name(episode.task)},
                    {"length", episode.length()},
                    {"num_addresses", addresses},
                    {"segments", ej["meta"]["segments"]},
                    {"mask", ej["mask"]}};
  return trace;
}

// ---------------------------------------------------------------------------
// Strategy signatures

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

namespace {

// Attention in force before step t (the one used to read and write at t).
std::size_t focus_before(const EpisodeTrace& trace, std::size_t t) {
  return t == 0 ? 0 : argmax(trace.steps[t - 1].attention);
}

void check_aligned(const EpisodeTrace& trace, const TaskEpisode& episode) {
  if (trace.steps.size() != episode.length()) throw ContractError("trace and episode lengths differ");
}

}  // namespace

double store_advance_fraction(const EpisodeTrace& trace, const TaskEpisode& episode) {
  check_aligned(trace, episode);
  std::size_t total = 0;
  std::size_t forward = 0;
  std::size_t backward = 0;
  const std::size_t a = trace.num_addresses;
  for (const auto& s : episode.segments) {
    if (s.kind != SegmentKind::Data || s.role != "x") continue;
    for (std::size_t t = s.begin; t < s.begin + s.length; ++t) {
      ++total;
      const std::size_t from = focus_before(trace, t);
      const std::size_t to = argmax(trace.steps[t].attention);
      if (to == (from + 1) % a) ++forward;
      if (to == (from + a - 1) % a) ++backward;
    }
  }
  return total ? static_cast<double>(std::max(forward, backward)) / static_cast<double>(total) : 0.0;
}

OverwriteSignature overwrite_signature(const EpisodeTrace& trace, const TaskEpisode& episode) {
  check_aligned(trace, episode);
  OverwriteSignature sig;
  std::size_t x_markers = 0;
  std::vector<std::set<std::size_t>> written;
  for (const auto& s : episode.segments) {
    const bool later_x = s.kind == SegmentKind::Marker && s.role == "x" && x_markers++ > 0;
    const bool recall = s.kind == SegmentKind::Marker && s.role == "recall";
    if (later_x || recall) {
      const std::size_t pick = argmax(trace.steps[s.begin].attention_gates);
      ++sig.marker_steps;
      if (pick != 0) ++sig.bookmark_selected;
      if (pick == 1) ++sig.static_selected;
    }
    if (s.kind == SegmentKind::Data && s.role == "x") {
      std::set<std::size_t> addrs;
      for (std::size_t t = s.begin; t < s.begin + s.length; ++t) addrs.insert(focus_before(trace, t));
      written.push_back(std::move(addrs));
    }
  }
  if (written.size() >= 2) {
    std::set<std::size_t> earlier;
    for (std::size_t i = 0; i + 1 < written.size(); ++i) earlier.insert(written[i].begin(), written[i].end());
    const auto& last = written.back();
    const auto reused = std::count_if(last.begin(), last.end(), [&](std::size_t a) { return earlier.contains(a); });
    sig.rewrite_fraction = static_cast<double>(reused) / static_cast<double>(last.size());
  }
  return sig;
}

double skip_fraction(const EpisodeTrace& trace, const TaskEpisode& episode) {
  check_aligned(trace, episode);
  std::size_t total = 0;
  std::size_t stayed = 0;
  for (const auto& s : episode.segments) {
    if (s.kind != SegmentKind::Data || s.role != "y") continue;
    for (std::size_t t = s.begin; t < s.begin + s.length; ++t) {
      ++total;
      if (argmax(trace.steps[t].attention) == focus_before(trace, t)) ++stayed;
    }
  }
  return total ? static_cast<double>(stayed) / static_cast<double>(total) : 0.0;
}

}  // namespace dwm
