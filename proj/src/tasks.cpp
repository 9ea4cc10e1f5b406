#include "dwm/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>

#include "dwm/errors.hpp"
#include "dwm/rng.hpp"

namespace dwm {

namespace {

using Item = std::vector<double>;

std::string normalize_name(std::string_view name) {
  std::string out;
  for (std::size_t i = 0; i < name.size(); ++i) {
    const char c = name[i];
    if (c == '-' || c == ' ') {
      out.push_back('_');
    } else if (std::isupper(static_cast<unsigned char>(c))) {
      if (i > 0 && out.back() != '_') out.push_back('_');
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      out.push_back(c);
    }
  }
  return out;
}

bool uses_y(Task task) { return task == Task::Forget || task == Task::OperationSpan || task == Task::Ignore; }
bool uses_immediate(Task task) { return task == Task::Forget || task == Task::OperationSpan; }

const char* role_name(Marker m) {
  switch (m) {
    case Marker::X: return "x";
    case Marker::Y: return "y";
    case Marker::Recall: return "recall";
    case Marker::Immediate: return "immediate";
  }
  return "";
}

std::string_view kind_name(SegmentKind k) {
  switch (k) {
    case SegmentKind::Marker: return "marker";
    case SegmentKind::Data: return "data";
    case SegmentKind::Dummy: return "dummy";
  }
  return "";
}

SegmentKind parse_kind(std::string_view s) {
  if (s == "marker") return SegmentKind::Marker;
  if (s == "data") return SegmentKind::Data;
  if (s == "dummy") return SegmentKind::Dummy;
  throw ContractError("unknown segment kind '" + std::string(s) + "'");
}

// Accumulates rows of an episode together with its segment layout.
class EpisodeBuilder {
 public:
  EpisodeBuilder(Task task, std::size_t data_bits)
      : task_(task), data_bits_(data_bits), width_(data_bits + control_bits(task)) {}

  void marker(Marker m) {
    Item row(width_, 0.0);
    row[data_bits_ + *marker_channel(task_, m)] = 1.0;
    open(SegmentKind::Marker, role_name(m), 1);
    push(std::move(row), std::nullopt);
  }

  void data(const std::vector<Item>& items, const char* role) {
    open(SegmentKind::Data, role, items.size());
    for (const Item& it : items) {
      Item row(width_, 0.0);
      std::copy(it.begin(), it.end(), row.begin());
      push(std::move(row), std::nullopt);
    }
  }

  void dummies(const std::vector<Item>& targets, const char* role) {
    open(SegmentKind::Dummy, role, targets.size());
    for (const Item& t : targets) push(Item(width_, 0.0), t);
  }

  TaskEpisode finish() && {
    TaskEpisode e;
    e.task = task_;
    e.data_bits = data_bits_;
    const std::size_t steps = mask_.size();
    e.inputs = ad::Tensor(ad::Shape{steps, width_}, std::move(inputs_));
    e.targets = ad::Tensor(ad::Shape{steps, data_bits_}, std::move(targets_));
    e.mask = std::move(mask_);
    e.segments = std::move(segments_);
    return e;
  }

 private:
  void open(SegmentKind kind, const char* role, std::size_t length) {
    segments_.push_back({kind, role, mask_.size(), length});
  }

  void push(Item row, const std::optional<Item>& target) {
    inputs_.insert(inputs_.end(), row.begin(), row.end());
    if (target) {
      targets_.insert(targets_.end(), target->begin(), target->end());
    } else {
      targets_.insert(targets_.end(), data_bits_, 0.0);
    }
    mask_.push_back(target.has_value());
  }

  Task task_;
  std::size_t data_bits_;
  std::size_t width_;
  std::vector<double> inputs_;
  std::vector<double> targets_;
  std::vector<bool> mask_;
  std::vector<Segment> segments_;
};

std::vector<Item> random_items(CounterRng& rng, std::size_t count, std::size_t bits) {
  std::vector<Item> items(count, Item(bits));
  for (auto& it : items)
    for (double& b : it) b = rng.bit() ? 1.0 : 0.0;
  return items;
}

std::vector<Item> concat_items(const std::vector<std::vector<Item>>& blocks) {
  std::vector<Item> out;
  for (const auto& b : blocks) out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<Item> rotated(const std::vector<Item>& items) {
  std::vector<Item> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(rotate_half(it));
  return out;
}

// The recall-phase output for a task given the stored x blocks.
std::vector<Item> recall_targets(Task task, const std::vector<std::vector<Item>>& xs) {
  switch (task) {
    case Task::SerialRecall:
    case Task::Forget:
    case Task::OperationSpan:
    case Task::Ignore:
      return concat_items(xs);
    case Task::ReverseRecall: {
      std::vector<Item> all = concat_items(xs);
      std::reverse(all.begin(), all.end());
      return all;
    }
    case Task::RotateShape:
      return rotated(concat_items(xs));
    case Task::ReadingSpan: {
      std::vector<Item> last;
      for (const auto& b : xs) {
        if (b.empty()) throw ContractError("reading span: empty subsequence");
        last.push_back(b.back());
      }
      return last;
    }
    case Task::ScratchPad:
      if (xs.empty()) throw ContractError("scratch pad: no subsequence");
      return xs.back();
  }
  return {};
}

std::vector<Item> immediate_targets(Task task, const std::vector<Item>& y) {
  return task == Task::OperationSpan ? rotated(y) : y;
}

}  // namespace

std::string_view task_name(Task task) {
  switch (task) {
    case Task::SerialRecall: return "serial_recall";
    case Task::ReverseRecall: return "reverse_recall";
    case Task::RotateShape: return "rotate_shape";
    case Task::ReadingSpan: return "reading_span";
    case Task::Forget: return "forget";
    case Task::OperationSpan: return "operation_span";
    case Task::ScratchPad: return "scratch_pad";
    case Task::Ignore: return "ignore";
  }
  return "";
}

Task parse_task(std::string_view name) {
  const std::string n = normalize_name(name);
  for (Task t : kAllTasks)
    if (task_name(t) == n) return t;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

bool is_complex(Task task) {
  return !(task == Task::SerialRecall || task == Task::ReverseRecall || task == Task::RotateShape);
}

std::string_view phase_name(Phase phase) {
  switch (phase) {
    case Phase::Training: return "train";
    case Phase::Validation: return "val";
    case Phase::Testing: return "test";
  }
  return "";
}

Phase parse_phase(std::string_view name) {
  if (name == "train" || name == "training") return Phase::Training;
  if (name == "val" || name == "validation") return Phase::Validation;
  if (name == "test" || name == "testing") return Phase::Testing;
  throw ConfigError("unknown regime '" + std::string(name) + "' (expected train, val or test)");
}

std::size_t control_bits(Task task) {
  if (uses_immediate(task)) return 4;
  if (uses_y(task)) return 3;
  return 2;
}

std::optional<std::size_t> marker_channel(Task task, Marker marker) {
  switch (marker) {
    case Marker::X: return 0;
    case Marker::Y:
      if (uses_y(task)) return 1;
      return std::nullopt;
    case Marker::Recall: return uses_y(task) ? 2 : 1;
    case Marker::Immediate:
      if (uses_immediate(task)) return 3;
      return std::nullopt;
  }
  return std::nullopt;
}

GenerationRegime GenerationRegime::standard(Task task, Phase phase) {
  GenerationRegime r;
  r.phase = phase;
  if (!is_complex(task)) {
    switch (phase) {
      case Phase::Training: r.subseq_len = {1, 10}; break;
      case Phase::Validation: r.subseq_len = {100, 100}; break;
      case Phase::Testing: r.subseq_len = {1000, 1000}; break;
    }
    r.num_subseq = {1, 1};
  } else {
    switch (phase) {
      case Phase::Training:
        r.subseq_len = {1, 6};
        r.num_subseq = {1, 3};
        break;
      case Phase::Validation:
        r.subseq_len = {20, 20};
        r.num_subseq = {5, 5};
        break;
      case Phase::Testing:
        r.subseq_len = {20, 20};
        r.num_subseq = {50, 50};
        break;
    }
  }
  return r;
}

void GenerationRegime::validate() const {
  if (subseq_len.min == 0 || subseq_len.min > subseq_len.max) throw ConfigError("empty subsequence length range");
  if (num_subseq.min == 0 || num_subseq.min > num_subseq.max) throw ConfigError("empty subsequence count range");
}

std::size_t TaskEpisode::masked_steps() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)); }

std::vector<double> rotate_half(std::span<const double> item) {
  const std::size_t n = item.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = item[(i + n / 2) % n];
  return out;
}

std::vector<TaskEpisode> generate(const TaskSpec& spec, const GenerationRegime& regime, std::size_t batch_size,
                                  std::uint64_t batch_index) {
  regime.validate();
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (spec.data_bits == 0) throw ConfigError("data_bits must be positive");
  if (!is_complex(spec.task) && regime.num_subseq.max != 1) {
    throw ConfigError("simple tasks use exactly one subsequence");
  }
  const Task task = spec.task;
  const auto phase_tag = static_cast<std::uint64_t>(regime.phase);

  // Layout draws are shared by the whole batch so every episode has the same length.
  CounterRng layout(derive_key(spec.seed, {phase_tag, batch_index, 0}));
  const std::size_t k = layout.between(regime.num_subseq.min, regime.num_subseq.max);
  std::vector<std::size_t> x_len(k);
  std::vector<std::size_t> y_len(k, 0);
  for (std::size_t i = 0; i < k; ++i) {
    x_len[i] = layout.between(regime.subseq_len.min, regime.subseq_len.max);
    if (task == Task::OperationSpan) {
      y_len[i] = 1;
    } else if (uses_y(task)) {
      y_len[i] = layout.between(regime.subseq_len.min, regime.subseq_len.max);
    }
  }

  std::vector<TaskEpisode> batch;
  batch.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    CounterRng data(derive_key(spec.seed, {phase_tag, batch_index, 1, b}));
    EpisodeBuilder eb(task, spec.data_bits);
    std::vector<std::vector<Item>> xs;
    for (std::size_t i = 0; i < k; ++i) {
      xs.push_back(random_items(data, x_len[i], spec.data_bits));
      eb.marker(Marker::X);
      eb.data(xs.back(), "x");
      if (uses_y(task)) {
        std::vector<Item> y = random_items(data, y_len[i], spec.data_bits);
        eb.marker(Marker::Y);
        eb.data(y, "y");
        if (uses_immediate(task)) {
          eb.marker(Marker::Immediate);
          eb.dummies(immediate_targets(task, y), "immediate");
        }
      }
    }
    eb.marker(Marker::Recall);
    eb.dummies(recall_targets(task, xs), "recall");
    batch.push_back(std::move(eb).finish());
  }
  return batch;
}

ad::Tensor oracle_solve(const TaskEpisode& episode) {
  const std::size_t steps = episode.length();
  const std::size_t bits = episode.data_bits;
  if (episode.inputs.rank() != 2 || episode.inputs.rows() != steps ||
      episode.inputs.cols() != bits + control_bits(episode.task)) {
    throw ContractError("oracle_solve: input matrix does not match the episode layout");
  }
  ad::Tensor out(ad::Shape{steps, bits});
  std::vector<std::vector<Item>> xs;
  std::vector<Item> last_y;
  std::size_t cursor = 0;
  for (const Segment& s : episode.segments) {
    if (s.begin != cursor) throw ContractError("oracle_solve: segments do not tile the episode");
    cursor += s.length;
    if (cursor > steps) throw ContractError("oracle_solve: segment runs past the episode end");
    auto items = [&] {
      std::vector<Item> v;
      for (std::size_t t = s.begin; t < s.begin + s.length; ++t) {
        const auto row = episode.inputs.data().subspan(t * episode.input_width(), bits);
        v.emplace_back(row.begin(), row.end());
      }
      return v;
    };
    std::vector<Item> emitted;
    if (s.kind == SegmentKind::Data && s.role == "x") {
      xs.push_back(items());
    } else if (s.kind == SegmentKind::Data && s.role == "y") {
      last_y = items();
    } else if (s.kind == SegmentKind::Dummy && s.role == "immediate") {
      emitted = immediate_targets(episode.task, last_y);
    } else if (s.kind == SegmentKind::Dummy && s.role == "recall") {
      emitted = recall_targets(episode.task, xs);
    } else if (s.kind != SegmentKind::Marker) {
      throw ContractError("oracle_solve: unexpected segment role '" + s.role + "'");
    }
    if (s.kind == SegmentKind::Dummy) {
      if (emitted.size() != s.length) throw ContractError("oracle_solve: dummy block length does not match its output");
      for (std::size_t i = 0; i < s.length; ++i)
        std::copy(emitted[i].begin(), emitted[i].end(), out.data().begin() + static_cast<std::ptrdiff_t>((s.begin + i) * bits));
    }
  }
  if (cursor != steps) throw ContractError("oracle_solve: segments do not cover the episode");
  return out;
}

std::size_t memory_size_for(std::span<const TaskEpisode> episodes, std::optional<std::size_t> override_size) {
  if (episodes.empty()) throw ContractError("memory_size_for: empty batch");
  const std::size_t steps = episodes.front().length();
  for (const auto& e : episodes)
    if (e.length() != steps) throw ContractError("memory_size_for: ragged batch");
  if (!override_size) return steps;
  std::size_t longest = 0;
  for (const auto& e : episodes)
    for (const auto& s : e.segments)
      if (s.kind == SegmentKind::Data) longest = std::max(longest, s.length);
  if (*override_size == 0 || *override_size < longest) {
    throw ConfigError("memory size " + std::to_string(*override_size) + " cannot hold a subsequence of length " +
                      std::to_string(longest));
  }
  return *override_size;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json matrix_json(const ad::Tensor& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(static_cast<int>(m.at(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

ad::Tensor matrix_from_json(const nlohmann::json& j, std::size_t cols) {
  std::vector<double> data;
  for (const auto& row : j) {
    if (row.size() != cols) throw ContractError("episode json: row width mismatch");
    for (const auto& v : row) data.push_back(v.get<double>());
  }
  return ad::Tensor(ad::Shape{j.size(), cols}, std::move(data));
}

}  // namespace

void to_json(nlohmann::json& j, const TaskEpisode& e) {
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& s : e.segments) {
    segments.push_back({{"kind", kind_name(s.kind)}, {"role", s.role}, {"begin", s.begin}, {"length", s.length}});
  }
  std::vector<int> mask(e.mask.begin(), e.mask.end());
  j = nlohmann::json{{"task", task_name(e.task)},
                     {"inputs", matrix_json(e.inputs)},
                     {"targets", matrix_json(e.targets)},
                     {"mask", mask},
                     {"meta",
                      {{"length", e.length()},
                       {"data_bits", e.data_bits},
                       {"control_bits", control_bits(e.task)},
                       {"segments", std::move(segments)}}}};
}

void from_json(const nlohmann::json& j, TaskEpisode& e) {
  e.task = parse_task(j.at("task").get<std::string>());
  const auto& meta = j.at("meta");
  e.data_bits = meta.at("data_bits").get<std::size_t>();
  e.inputs = matrix_from_json(j.at("inputs"), e.data_bits + meta.at("control_bits").get<std::size_t>());
  e.targets = matrix_from_json(j.at("targets"), e.data_bits);
  e.mask.clear();
  for (const auto& m : j.at("mask")) e.mask.push_back(m.get<int>() != 0);
  e.segments.clear();
  for (const auto& s : meta.at("segments")) {
    e.segments.push_back({parse_kind(s.at("kind").get<std::string>()), s.at("role").get<std::string>(),
                          s.at("begin").get<std::size_t>(), s.at("length").get<std::size_t>()});
  }
}

void write_episodes(std::span<const TaskEpisode> episodes, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& e : episodes) out << nlohmann::json(e).dump() << '\n';
}

std::vector<TaskEpisode> read_episodes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<TaskEpisode> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line).get<TaskEpisode>());
  }
  return out;
}

}  // namespace dwm
