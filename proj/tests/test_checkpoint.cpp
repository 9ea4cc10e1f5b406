#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dwm/baseline.hpp"
#include "dwm/checkpoint.hpp"
#include "dwm/errors.hpp"
#include "dwm/model.hpp"

using namespace dwm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dwm_test_checkpoint";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto model = create_model("dwm", Task::SerialRecall, nlohmann::json::object(), 7);
  AdamState adam = AdamState::zeros(model->parameters().count());
  adam.m[0] = 0.1 + 0.2;
  adam.v[3] = 1.0 / 3.0;
  adam.step = 12;
  const fs::path path = scratch("dwm.json");
  save_checkpoint(make_checkpoint(*model, Task::SerialRecall, 42, adam), path);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.model_kind, "dwm");
  EXPECT_EQ(back.task, "serial_recall");
  EXPECT_EQ(back.episode, 42u);
  EXPECT_EQ(back.params, model->parameters());
  ASSERT_TRUE(back.adam);
  EXPECT_EQ(back.adam->m, adam.m);
  EXPECT_EQ(back.adam->v, adam.v);
  EXPECT_EQ(back.adam->step, 12u);
  const auto restored = restore_model(back);
  EXPECT_EQ(restored->parameters(), model->parameters());
  EXPECT_EQ(parameter_digest(restored->parameters()), parameter_digest(model->parameters()));
}

TEST(Checkpoint, BaselineRoundTrip) {
  const auto model = create_model("baseline", Task::Forget, nlohmann::json{{"hidden_size", 5}}, 3);
  EXPECT_EQ(model->input_width(), 12u);
  const auto restored = restore_model(checkpoint_from_json(checkpoint_json(make_checkpoint(*model, Task::Forget, 0))));
  EXPECT_EQ(restored->kind(), "baseline");
  EXPECT_EQ(restored->parameters(), model->parameters());
}

TEST(Checkpoint, CreateModelFollowsTaskEncoding) {
  const auto dwm_model = create_model("dwm", Task::Ignore, nlohmann::json::object(), 1);
  EXPECT_EQ(dwm_model->input_width(), 11u);
  EXPECT_EQ(dwm_model->output_width(), 8u);
  EXPECT_EQ(create_model("dwm", Task::SerialRecall, nlohmann::json::object(), 1)->parameters().count(), 1066u);
  EXPECT_THROW(create_model("dnc", Task::SerialRecall, nlohmann::json::object(), 1), ConfigError);
}

TEST(Checkpoint, DigestIsSensitiveToValues) {
  const auto a = create_model("dwm", Task::SerialRecall, nlohmann::json::object(), 1);
  const auto b = create_model("dwm", Task::SerialRecall, nlohmann::json::object(), 2);
  EXPECT_NE(parameter_digest(a->parameters()), parameter_digest(b->parameters()));
  EXPECT_EQ(parameter_digest(a->parameters()).size(), 16u);
}

TEST(Checkpoint, BadFilesAreConfigErrors) {
  EXPECT_THROW(load_checkpoint(scratch("missing.json")), ConfigError);
  {
    std::ofstream(scratch("garbage.json")) << "{not json";
  }
  EXPECT_THROW(load_checkpoint(scratch("garbage.json")), ConfigError);
  EXPECT_THROW(checkpoint_from_json(nlohmann::json{{"format", "other"}}), ConfigError);

  const auto model = create_model("dwm", Task::SerialRecall, nlohmann::json::object(), 1);
  nlohmann::json j = checkpoint_json(make_checkpoint(*model, Task::SerialRecall, 0));
  j["version"] = 99;
  EXPECT_THROW(checkpoint_from_json(j), ConfigError);

  Checkpoint c = make_checkpoint(*model, Task::SerialRecall, 0);
  c.model_config["hidden_size"] = 4;
  EXPECT_THROW(restore_model(c), ConfigError);
  c = make_checkpoint(*model, Task::SerialRecall, 0);
  c.model_kind = "dnc";
  EXPECT_THROW(restore_model(c), ConfigError);
}
