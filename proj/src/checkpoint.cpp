#include "dwm/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dwm/baseline.hpp"
#include "dwm/errors.hpp"
#include "dwm/model.hpp"

namespace dwm {

namespace {

constexpr const char* kFormat = "dwm-checkpoint";
constexpr int kVersion = 1;

nlohmann::json tensor_json(const std::string& name, const ad::Tensor& t) {
  return {{"name", name}, {"shape", t.shape()}, {"data", t.values()}};
}

NamedTensor tensor_from_json(const nlohmann::json& j) {
  return {j.at("name").get<std::string>(),
          ad::Tensor(j.at("shape").get<ad::Shape>(), j.at("data").get<std::vector<double>>())};
}

}  // namespace

Checkpoint make_checkpoint(const SequenceModel& model, Task task, std::size_t episode, std::optional<AdamState> adam) {
  return {std::string(model.kind()), model.config_json(), std::string(task_name(task)), model.parameters(), episode,
          std::move(adam)};
}

nlohmann::json checkpoint_json(const Checkpoint& c) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : c.params) tensors.push_back(tensor_json(t.name, t.value));
  nlohmann::json j{{"format", kFormat},          {"version", kVersion},     {"model", c.model_kind},
                   {"config", c.model_config},   {"task", c.task},          {"episode", c.episode},
                   {"parameter_count", c.params.count()}, {"tensors", std::move(tensors)}};
  if (c.adam) j["adam"] = {{"step", c.adam->step}, {"m", c.adam->m}, {"v", c.adam->v}};
  return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kFormat) throw ConfigError("not a checkpoint file");
  if (j.value("version", 0) != kVersion) throw ConfigError("unsupported checkpoint version");
  Checkpoint c;
  c.model_kind = j.at("model").get<std::string>();
  c.model_config = j.at("config");
  c.task = j.at("task").get<std::string>();
  c.episode = j.value("episode", std::size_t{0});
  std::vector<NamedTensor> tensors;
  for (const auto& t : j.at("tensors")) tensors.push_back(tensor_from_json(t));
  c.params = ParameterSet(std::move(tensors));
  if (j.contains("adam")) {
    const auto& a = j["adam"];
    c.adam = AdamState{a.at("m").get<std::vector<double>>(), a.at("v").get<std::vector<double>>(),
                       a.at("step").get<std::uint64_t>()};
    if (c.adam->m.size() != c.params.count() || c.adam->v.size() != c.params.count()) {
      throw ConfigError("checkpoint optimizer state does not match the parameters");
    }
  }
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << checkpoint_json(checkpoint).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

std::unique_ptr<SequenceModel> restore_model(const Checkpoint& c) {
  if (c.model_kind == "dwm") return std::make_unique<DwmModel>(c.model_config.get<DwmConfig>(), c.params);
  if (c.model_kind == "baseline") return std::make_unique<LstmBaseline>(c.model_config.get<BaselineConfig>(), c.params);
  throw ConfigError("unknown model kind '" + c.model_kind + "'");
}

std::unique_ptr<SequenceModel> create_model(std::string_view kind, Task task, const nlohmann::json& config,
                                            std::uint64_t seed) {
  const TaskSpec spec{task};
  nlohmann::json merged = config.is_object() ? config : nlohmann::json::object();
  merged["input_width"] = spec.input_width();
  merged["output_width"] = spec.data_bits;
  if (kind == "dwm") {
    if (!merged.contains("word_width")) merged["word_width"] = spec.input_width();
    return std::make_unique<DwmModel>(merged.get<DwmConfig>(), seed);
  }
  if (kind == "baseline") return std::make_unique<LstmBaseline>(merged.get<BaselineConfig>(), seed);
  throw ConfigError("unknown model kind '" + std::string(kind) + "' (expected dwm or baseline)");
}

std::string parameter_digest(const ParameterSet& params) {
  // FNV-1a over names and IEEE-754 bit patterns.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::uint64_t byte) {
    h ^= byte;
    h *= 0x100000001b3ULL;
  };
  for (const auto& t : params) {
    for (char ch : t.name) mix(static_cast<unsigned char>(ch));
    for (double v : t.value.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int k = 0; k < 8; ++k) mix((bits >> (8 * k)) & 0xff);
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace dwm
