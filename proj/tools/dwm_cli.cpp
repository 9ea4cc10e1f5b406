#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dwm/checkpoint.hpp"
#include "dwm/errors.hpp"
#include "dwm/evaluation.hpp"
#include "dwm/json_config.hpp"
#include "dwm/model.hpp"
#include "dwm/selftest.hpp"
#include "dwm/tasks.hpp"
#include "dwm/trace.hpp"
#include "dwm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dwm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCapStop = 3;

// Everything a command needs besides its own flags. Seeds live in train.seed.
struct RunConfig {
  Task task = Task::SerialRecall;
  std::string model = "dwm";
  json dwm = json::object();
  json baseline = json::object();
  TrainConfig train;
  std::size_t eval_batches = 1;
  std::size_t eval_batch_size = 16;
  std::size_t generate_batch_size = 16;
  std::uint64_t generate_batch_index = 0;

  const json& model_config() const { return model == "dwm" ? dwm : baseline; }
};

void check_model_kind(const std::string& kind) {
  if (kind != "dwm" && kind != "baseline") throw ConfigError("unknown model '" + kind + "' (expected dwm or baseline)");
}

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path + ": " + e.what());
  }
  require_known_keys(j, {"task", "model", "dwm", "baseline", "train", "eval", "generate"}, "config");
  if (j.contains("task")) rc.task = parse_task(config_value<std::string>(j, "task", "", "config"));
  rc.model = config_value<std::string>(j, "model", rc.model, "config");
  check_model_kind(rc.model);
  rc.dwm = j.value("dwm", json::object());
  rc.baseline = j.value("baseline", json::object());
  if (j.contains("train")) rc.train = j["train"].get<TrainConfig>();
  if (j.contains("eval")) {
    const json& e = j["eval"];
    require_known_keys(e, {"num_batches", "batch_size"}, "eval config");
    rc.eval_batches = config_value(e, "num_batches", rc.eval_batches, "eval config");
    rc.eval_batch_size = config_value(e, "batch_size", rc.eval_batch_size, "eval config");
  }
  if (j.contains("generate")) {
    const json& g = j["generate"];
    require_known_keys(g, {"batch_size", "batch_index"}, "generate config");
    rc.generate_batch_size = config_value(g, "batch_size", rc.generate_batch_size, "generate config");
    rc.generate_batch_index = config_value(g, "batch_index", rc.generate_batch_index, "generate config");
  }
  return rc;
}

json run_config_json(const RunConfig& rc) {
  return {{"task", task_name(rc.task)},
          {"model", rc.model},
          {"dwm", rc.dwm},
          {"baseline", rc.baseline},
          {"train", rc.train},
          {"eval", {{"num_batches", rc.eval_batches}, {"batch_size", rc.eval_batch_size}}},
          {"generate", {{"batch_size", rc.generate_batch_size}, {"batch_index", rc.generate_batch_index}}}};
}

// Flags shared by every command that reads a run configuration.
struct CommonFlags {
  std::string config;
  std::string task;
  std::string model;
  std::optional<std::uint64_t> seed;
  std::string output_root = "runs";
  std::string out;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd.add_option("--task", task, "task name, e.g. serial_recall");
    cmd.add_option("--model", model, "dwm or baseline");
    cmd.add_option("--output-root", output_root, "root directory for outputs")->envname("DWM_OUTPUT_ROOT");
    cmd.add_option("--out", out, "output directory (default: under the output root)");
  }

  RunConfig resolve() const {
    RunConfig rc = load_run_config(config);
    if (!task.empty()) rc.task = parse_task(task);
    if (!model.empty()) {
      check_model_kind(model);
      rc.model = model;
    }
    if (seed) rc.train.seed = *seed;
    return rc;
  }

  fs::path out_dir(const std::string& fallback) const {
    return out.empty() ? fs::path(output_root) / fallback : fs::path(out);
  }
};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

json manifest(const std::string& command, const RunConfig& rc) {
  return {{"command", command}, {"created", utc_timestamp()}, {"config", run_config_json(rc)}};
}

Phase parse_regime(const std::string& name) { return parse_phase(name); }

// ---------------------------------------------------------------------------

struct GenerateFlags {
  CommonFlags common;
  std::string regime = "train";
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> batch_index;
};

int cmd_generate(const GenerateFlags& f) {
  const RunConfig rc = f.common.resolve();
  const Phase phase = parse_regime(f.regime);
  const std::size_t batch_size = f.batch_size.value_or(rc.generate_batch_size);
  const std::uint64_t batch_index = f.batch_index.value_or(rc.generate_batch_index);
  if (batch_size == 0) throw ConfigError("generate: batch_size must be positive");
  const TaskSpec spec{rc.task, kDataBits, rc.train.seed};
  const auto regime = GenerationRegime::standard(rc.task, phase);
  const auto episodes = generate(spec, regime, batch_size, batch_index);

  const fs::path dir = f.common.out_dir("generate_" + std::string(task_name(rc.task)) + "_" + f.regime + "_s" +
                                        std::to_string(rc.train.seed));
  fs::create_directories(dir);
  write_episodes(episodes, dir / "episodes.jsonl");

  std::size_t masked = 0;
  for (const auto& e : episodes) masked += e.masked_steps();
  const json summary{{"episodes", episodes.size()},
                     {"length", episodes.front().length()},
                     {"input_width", episodes.front().input_width()},
                     {"masked_steps", masked},
                     {"memory_size", memory_size_for(episodes)}};
  json m = manifest("generate", rc);
  m["regime"] = f.regime;
  m["seed"] = rc.train.seed;
  m["batch_size"] = batch_size;
  m["batch_index"] = batch_index;
  m["artifacts"] = {{"episodes", (dir / "episodes.jsonl").string()}};
  m["outcome"] = summary;
  write_json(dir / "manifest.json", m);
  std::cout << "wrote " << episodes.size() << " " << task_name(rc.task) << " episodes of length "
            << episodes.front().length() << " (" << masked << " masked steps) to " << (dir / "episodes.jsonl").string()
            << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
  CommonFlags common;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
  std::string resume;
  std::optional<std::size_t> max_episodes;
};

void write_loss_curve(const std::vector<LossRecord>& curve, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "episode,train_loss,train_accuracy,val_loss,val_accuracy\n" << std::setprecision(10);
  for (const auto& r : curve) {
    out << r.episode << ',' << r.train_loss << ',' << r.train_accuracy << ',';
    if (r.val_loss) out << *r.val_loss;
    out << ',';
    if (r.val_accuracy) out << *r.val_accuracy;
    out << '\n';
  }
}

struct SeedOutcome {
  StopReason reason = StopReason::EpisodeCap;
  std::exception_ptr error;
};

SeedOutcome train_seed(const RunConfig& rc, std::uint64_t seed, const std::optional<Checkpoint>& resume,
                       const std::string& resume_path, const fs::path& dir, std::mutex& log_mutex) {
  TrainConfig cfg = rc.train;
  cfg.seed = seed;
  std::unique_ptr<SequenceModel> model =
      resume ? restore_model(*resume) : create_model(rc.model, rc.task, rc.model_config(), seed);
  TrainOptions options;
  if (resume) {
    options.start_episode = resume->episode;
    options.adam = resume->adam;
  }
  options.on_record = [&](const LossRecord& r) {
    if (!r.val_loss) return;
    std::lock_guard lock(log_mutex);
    std::cout << "seed " << seed << " episode " << r.episode << " train_loss " << r.train_loss << " val_loss "
              << *r.val_loss << " val_accuracy " << *r.val_accuracy << std::endl;
  };
  const auto started = std::chrono::steady_clock::now();
  const TrainResult result = train(*model, rc.task, cfg, std::move(options));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  fs::create_directories(dir);
  save_checkpoint(make_checkpoint(*result.best, rc.task, result.episodes), dir / "checkpoint.json");
  save_checkpoint(make_checkpoint(*result.last, rc.task, result.episodes, result.adam), dir / "last.json");
  write_loss_curve(result.curve, dir / "loss_curve.csv");

  RunConfig used = rc;
  used.model = std::string(model->kind());
  used.train = cfg;
  json m = manifest("train", used);
  m["seed"] = seed;
  m["model_config"] = model->config_json();
  m["parameter_count"] = model->parameters().count();
  if (resume) m["resumed_from"] = {{"checkpoint", resume_path}, {"episode", resume->episode}};
  m["artifacts"] = {{"checkpoint", (dir / "checkpoint.json").string()},
                    {"last", (dir / "last.json").string()},
                    {"loss_curve", (dir / "loss_curve.csv").string()}};
  m["outcome"] = {{"stop_reason", stop_reason_name(result.reason)},
                  {"episodes", result.episodes},
                  {"best_val_loss", result.best_val_loss},
                  {"best_val_accuracy", result.best_val_accuracy},
                  {"best_train_accuracy", result.best_train_accuracy},
                  {"checkpoint_digest", parameter_digest(result.best->parameters())},
                  {"seconds", seconds}};
  write_json(dir / "manifest.json", m);
  {
    std::lock_guard lock(log_mutex);
    std::cout << "seed " << seed << " stopped (" << stop_reason_name(result.reason) << ") after " << result.episodes
              << " episodes, best val_loss " << result.best_val_loss << "; wrote " << dir.string() << std::endl;
  }
  return {result.reason, nullptr};
}

int cmd_train(TrainFlags f) {
  RunConfig rc = f.common.resolve();
  if (f.max_episodes) rc.train.max_episodes = *f.max_episodes;
  rc.train.validate();
  if (f.seeds.empty()) f.seeds.push_back(rc.train.seed);
  if (f.jobs == 0) throw ConfigError("--jobs must be positive");

  std::optional<Checkpoint> resume;
  if (!f.resume.empty()) {
    if (f.seeds.size() != 1) throw ConfigError("--resume continues a single seed");
    resume = load_checkpoint(f.resume);
    if (f.common.task.empty() && f.common.config.empty()) rc.task = parse_task(resume->task);
    if (resume->task != task_name(rc.task)) {
      throw ConfigError("checkpoint was trained on '" + resume->task + "', not '" + std::string(task_name(rc.task)) +
                        "'");
    }
    rc.model = resume->model_kind;
  } else {
    // Surface configuration errors before any worker starts.
    (void)create_model(rc.model, rc.task, rc.model_config(), 0);
  }

  const fs::path root = f.common.out_dir("train_" + std::string(task_name(rc.task)) + "_" + rc.model);
  std::vector<SeedOutcome> outcomes(f.seeds.size());
  std::mutex log_mutex;
  auto run = [&](std::size_t i) {
    try {
      outcomes[i] = train_seed(rc, f.seeds[i], resume, f.resume,
                               root / ("seed_" + std::to_string(f.seeds[i])), log_mutex);
    } catch (...) {
      outcomes[i].error = std::current_exception();
    }
  };
  const std::size_t workers = std::min(f.jobs, f.seeds.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < f.seeds.size(); i += workers) run(i);
    });
  }
  for (auto& t : pool) t.join();

  bool cap = false;
  for (const auto& o : outcomes) {
    if (o.error) std::rethrow_exception(o.error);
    cap = cap || o.reason == StopReason::EpisodeCap;
  }
  return cap ? kExitCapStop : kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalFlags {
  CommonFlags common;
  std::vector<std::string> checkpoints;
  std::vector<std::string> regimes{"train", "val", "test"};
  bool oracle = false;
  bool constant = false;
  bool untrained = false;
  std::optional<std::size_t> batches;
  std::optional<std::size_t> batch_size;
  std::size_t jobs = 1;
};

int cmd_eval(const EvalFlags& f) {
  RunConfig rc = f.common.resolve();
  std::vector<Checkpoint> checkpoints;
  for (const auto& path : f.checkpoints) checkpoints.push_back(load_checkpoint(path));
  if (!checkpoints.empty() && f.common.task.empty() && f.common.config.empty()) {
    rc.task = parse_task(checkpoints.front().task);
  }
  if (checkpoints.empty() && !f.oracle && !f.constant && !f.untrained) {
    throw ConfigError("eval: give --checkpoint, --oracle, --constant or --untrained");
  }
  std::vector<Phase> phases;
  for (const auto& r : f.regimes) phases.push_back(parse_regime(r));

  EvalOptions options;
  options.num_batches = f.batches.value_or(rc.eval_batches);
  options.batch_size = f.batch_size.value_or(rc.eval_batch_size);
  options.seed = rc.train.seed;
  options.threads = f.jobs;
  options.memory_size = rc.train.memory_size;

  struct Entry {
    std::unique_ptr<Predictor> predictor;
    std::unique_ptr<SequenceModel> model;
    std::string identity;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    Entry e;
    e.model = restore_model(checkpoints[i]);
    e.predictor = std::make_unique<ModelPredictor>(*e.model);
    e.identity = f.checkpoints[i] + "@" + parameter_digest(e.model->parameters());
    entries.push_back(std::move(e));
  }
  if (f.untrained) {
    Entry e;
    e.model = create_model(rc.model, rc.task, rc.model_config(), rc.train.seed);
    e.predictor = std::make_unique<ModelPredictor>(*e.model);
    e.identity = "untrained-seed-" + std::to_string(rc.train.seed);
    entries.push_back(std::move(e));
  }
  if (f.oracle) entries.push_back({std::make_unique<OraclePredictor>(), nullptr, "oracle"});
  if (f.constant) entries.push_back({std::make_unique<ConstantPredictor>(), nullptr, "constant-0.5"});

  std::vector<EvalRow> rows;
  for (const auto& e : entries) {
    options.checkpoint = e.identity;
    for (Phase p : phases) {
      rows.push_back(evaluate(*e.predictor, rc.task, p, options));
      const EvalRow& r = rows.back();
      std::cout << task_name(r.task) << ' ' << r.model << ' ' << phase_name(r.regime) << " accuracy " << std::fixed
                << std::setprecision(2) << 100.0 * r.accuracy << "% over " << r.episodes << " episodes (length "
                << r.sequence_length << ")" << std::defaultfloat << '\n';
    }
  }

  const fs::path dir = f.common.out_dir("eval_" + std::string(task_name(rc.task)));
  write_report_csv(rows, dir / "report.csv");
  json m = manifest("eval", rc);
  m["checkpoints"] = f.checkpoints;
  m["regimes"] = f.regimes;
  m["options"] = {{"num_batches", options.num_batches}, {"batch_size", options.batch_size}, {"seed", options.seed}};
  json results = json::array();
  for (const auto& r : rows) {
    results.push_back({{"model", r.model},
                       {"checkpoint", r.checkpoint},
                       {"regime", phase_name(r.regime)},
                       {"accuracy", r.accuracy},
                       {"loss", r.loss},
                       {"episodes", r.episodes},
                       {"masked_bits", r.masked_bits},
                       {"sequence_length", r.sequence_length}});
  }
  m["artifacts"] = {{"report", (dir / "report.csv").string()}};
  m["outcome"] = results;
  write_json(dir / "manifest.json", m);
  std::cout << "wrote " << (dir / "report.csv").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TraceFlags {
  CommonFlags common;
  std::string checkpoint;
  std::string regime = "train";
  std::uint64_t batch_index = 0;
  bool trace_memory = false;
  std::vector<std::string> fields{"attention"};
};

int cmd_trace(const TraceFlags& f) {
  RunConfig rc = f.common.resolve();
  std::unique_ptr<SequenceModel> model;
  std::string identity;
  if (!f.checkpoint.empty()) {
    const Checkpoint c = load_checkpoint(f.checkpoint);
    if (f.common.task.empty() && f.common.config.empty()) rc.task = parse_task(c.task);
    model = restore_model(c);
    identity = f.checkpoint + "@" + parameter_digest(model->parameters());
  } else {
    model = create_model(rc.model, rc.task, rc.model_config(), rc.train.seed);
    identity = "untrained-seed-" + std::to_string(rc.train.seed);
  }
  const auto* dwm_model = dynamic_cast<const DwmModel*>(model.get());
  if (!dwm_model) throw ConfigError("trace: only the memory model records internal traces");

  const Phase phase = parse_regime(f.regime);
  const TaskSpec spec{rc.task, kDataBits, evaluation_seed(rc.train.seed)};
  const TaskEpisode episode = generate(spec, GenerationRegime::standard(rc.task, phase), 1, f.batch_index).front();
  EpisodeTrace trace = record_trace(*dwm_model, episode, f.trace_memory, rc.train.memory_size);
  trace.metadata["checkpoint"] = identity;
  trace.metadata["regime"] = f.regime;

  const fs::path dir = f.common.out_dir("trace_" + std::string(task_name(rc.task)) + "_" + f.regime);
  fs::create_directories(dir);
  write_trace(trace, dir / "trace.jsonl");
  json images = json::object();
  for (const auto& field : f.fields) {
    const fs::path image = dir / (field + ".pgm");
    write_pgm(heatmap(trace, field), image);
    images[field] = image.string();
  }

  const ad::Tensor logits = ModelPredictor(*model).logits(episode, trace.num_addresses);
  const OverwriteSignature ow = overwrite_signature(trace, episode);
  json m = manifest("trace", rc);
  m["checkpoint"] = identity;
  m["regime"] = f.regime;
  m["batch_index"] = f.batch_index;
  m["artifacts"] = {{"trace", (dir / "trace.jsonl").string()}, {"heatmaps", images}};
  m["outcome"] = {{"steps", trace.steps.size()},
                  {"num_addresses", trace.num_addresses},
                  {"accuracy", accuracy(logits, episode.targets, episode.mask)},
                  {"store_advance_fraction", store_advance_fraction(trace, episode)},
                  {"skip_fraction", skip_fraction(trace, episode)},
                  {"overwrite",
                   {{"marker_steps", ow.marker_steps},
                    {"bookmark_selected", ow.bookmark_selected},
                    {"static_selected", ow.static_selected},
                    {"rewrite_fraction", ow.rewrite_fraction},
                    {"holds", ow.holds()}}}};
  write_json(dir / "manifest.json", m);
  std::cout << "wrote " << trace.steps.size() << "-step trace and " << f.fields.size() << " heatmap(s) to "
            << dir.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SelftestFlags {
  std::size_t trials = 1000;
  std::size_t configs = 20;
  std::uint64_t seed = 1;
};

int cmd_selftest(const SelftestFlags& f) {
  std::vector<CheckResult> results{gradient_check(f.configs, f.seed)};
  for (auto& r : invariant_suites(f.trials, f.seed)) results.push_back(std::move(r));
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.passed();
    std::cout << (r.passed() ? "PASS " : "FAIL ") << r.name << " (" << r.trials << " trials";
    if (r.worst > 0.0) std::cout << ", worst " << r.worst;
    std::cout << ")";
    if (!r.passed()) std::cout << ": " << r.detail;
    std::cout << '\n';
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable working memory: generate tasks, train, evaluate, trace and self-test"};
  app.require_subcommand(1);

  GenerateFlags gen;
  auto* generate_cmd = app.add_subcommand("generate", "materialize one batch of task episodes");
  gen.common.attach(*generate_cmd);
  generate_cmd->add_option("--seed", gen.common.seed, "generator seed");
  generate_cmd->add_option("--regime", gen.regime, "train, val or test");
  generate_cmd->add_option("--batch-size", gen.batch_size, "episodes in the batch");
  generate_cmd->add_option("--batch-index", gen.batch_index, "index of the batch in the stream");

  TrainFlags tr;
  auto* train_cmd = app.add_subcommand("train", "train one model per seed");
  tr.common.attach(*train_cmd);
  train_cmd->add_option("--seed", tr.seeds, "training seed; repeat for several independent runs");
  train_cmd->add_option("--jobs", tr.jobs, "seeds trained in parallel");
  train_cmd->add_option("--resume", tr.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  train_cmd->add_option("--max-episodes", tr.max_episodes, "episode cap (overrides the config)");

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "score models on the length regimes and write a CSV report");
  ev.common.attach(*eval_cmd);
  eval_cmd->add_option("--seed", ev.common.seed, "evaluation seed");
  eval_cmd->add_option("--checkpoint", ev.checkpoints, "checkpoint to score; may repeat")->check(CLI::ExistingFile);
  eval_cmd->add_option("--regime", ev.regimes, "regimes to score (train, val, test)");
  eval_cmd->add_flag("--oracle", ev.oracle, "also score the reference solver");
  eval_cmd->add_flag("--constant", ev.constant, "also score the constant 0.5 predictor");
  eval_cmd->add_flag("--untrained", ev.untrained, "also score a freshly initialized model");
  eval_cmd->add_option("--batches", ev.batches, "batches per regime");
  eval_cmd->add_option("--batch-size", ev.batch_size, "episodes per batch");
  eval_cmd->add_option("--jobs", ev.jobs, "worker threads per batch");

  TraceFlags tc;
  auto* trace_cmd = app.add_subcommand("trace", "record a per-step trace of one episode and render heatmaps");
  tc.common.attach(*trace_cmd);
  trace_cmd->add_option("--seed", tc.common.seed, "episode seed (and model seed without a checkpoint)");
  trace_cmd->add_option("--checkpoint", tc.checkpoint, "memory-model checkpoint")->check(CLI::ExistingFile);
  trace_cmd->add_option("--regime", tc.regime, "train, val or test");
  trace_cmd->add_option("--batch-index", tc.batch_index, "which episode of the stream");
  trace_cmd->add_flag("--trace-memory", tc.trace_memory, "store a memory snapshot at every step");
  trace_cmd->add_option("--field", tc.fields, "heatmap field; may repeat");

  SelftestFlags st;
  auto* selftest_cmd = app.add_subcommand("selftest", "run the gradient-check and invariant suites");
  selftest_cmd->add_option("--trials", st.trials, "randomized trials per invariant suite");
  selftest_cmd->add_option("--configs", st.configs, "random configurations for the gradient check");
  selftest_cmd->add_option("--seed", st.seed, "seed of the randomized suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*generate_cmd) return cmd_generate(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*eval_cmd) return cmd_eval(ev);
    if (*trace_cmd) return cmd_trace(tc);
    if (*selftest_cmd) return cmd_selftest(st);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
