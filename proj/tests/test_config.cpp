#include <doctest.h>

#include <filesystem>

#include "rnnt/config.hpp"

using namespace rnnt;

namespace {

const char* kSample = R"(# toy run
seed = 5

[model]
feature_dim = 20
stack = 3
vocab_size = 21
joint_dim = 32   # desk size

[encoder]
kind = eclt_gru
layers = 2
hidden = 24
tau = 2

[prediction]
kind = ln_gru
hidden = 16
embed_dim = 8

[train]
learning_rate = 0.002
epochs = 3
shuffle = sorted

[decode]
mode = beam
beam_width = 4
)";

std::string error_of(const std::string& text) {
  try {
    run_config_from(KeyValueConfig::parse(text));
  } catch (const ContractError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("sectioned key = value parsing") {
  const KeyValueConfig kv = KeyValueConfig::parse(kSample);
  CHECK(kv.raw("seed") == "5");
  CHECK(kv.raw("model.joint_dim") == "32");
  CHECK(kv.get_int("encoder.tau", 0) == 2);
  CHECK(kv.get_double("train.learning_rate", 0) == 0.002);
  CHECK(kv.get_string("missing.key", "x") == "x");
  CHECK_THROWS_AS(KeyValueConfig::parse("[model\nx = 1"), ContractError);
  CHECK_THROWS_AS(KeyValueConfig::parse("just words"), ContractError);
}

TEST_CASE("run config from text") {
  const RunConfig c = run_config_from(KeyValueConfig::parse(kSample));
  CHECK(c.seed == 5);
  CHECK(c.model.encoder.kind == CellKind::eclt_gru);
  CHECK(c.model.encoder.tau == 2);
  CHECK(c.model.encoder.input_dim == 60);
  CHECK(c.model.prediction.input_dim == 8);
  CHECK(c.train.shuffle == ShuffleMode::sorted);
  CHECK(c.train.epochs == 3);
  CHECK(c.train.seed == 5);
  CHECK(c.decode.mode == DecodeMode::beam);
  CHECK(c.decode.beam_width == 4);
  CHECK(c.task.num_labels == 20);
}

TEST_CASE("config errors name the offending key") {
  CHECK(error_of("[model]\njoint_dimm = 3").find("model.joint_dimm") != std::string::npos);
  CHECK(error_of("[encoder]\nkind = transformer").find("encoder.kind") != std::string::npos);
  CHECK(error_of("[train]\nepochs = many").find("train.epochs") != std::string::npos);
  CHECK(error_of("[train]\nclip_norm = 0").find("train") != std::string::npos);
  CHECK(error_of("[encoder]\nkind = ln_gru\ntau = 2").find("encoder") != std::string::npos);
  CHECK(error_of("[prediction]\nkind = eclt_gru").find("prediction") != std::string::npos);
  CHECK(error_of("[data]\ndir = /no/such/dir").find("data.dir") != std::string::npos);
  CHECK(error_of("[task]\nnum_labels = 7").find("task.num_labels") != std::string::npos);
  CHECK(error_of("[decode]\nbeam_width = 0").find("decode") != std::string::npos);
}

TEST_CASE("dumped config reproduces the run config") {
  KeyValueConfig kv = KeyValueConfig::parse(kSample);
  kv.apply_override("train.learning_rate=0.0005");
  kv.apply_override("data.dir = " + std::filesystem::temp_directory_path().string());
  const RunConfig a = run_config_from(kv);
  CHECK(a.train.learning_rate == 0.0005);
  const std::string dumped = to_key_values(a).dump();
  const RunConfig b = run_config_from(KeyValueConfig::parse(dumped));
  CHECK(to_key_values(b).dump() == dumped);
  CHECK(b.train.learning_rate == 0.0005);
  CHECK(b.seed == 5);
  CHECK(b.data_dir == a.data_dir);
  CHECK(dumped.rfind("seed = 5\n", 0) == 0);
  CHECK_THROWS_AS(kv.apply_override("novalue"), ContractError);
}

TEST_CASE("model config round trip") {
  const RunConfig c = run_config_from(KeyValueConfig::parse(kSample));
  const ModelConfig m = model_config_from(KeyValueConfig::parse(model_key_values(c.model).dump()));
  CHECK(model_key_values(m).dump() == model_key_values(c.model).dump());
}
