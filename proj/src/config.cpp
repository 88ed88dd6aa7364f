#include "rnnt/config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace rnnt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig kv;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ContractError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ContractError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ContractError(where + ": empty key");
    kv.values_[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

const std::string& KeyValueConfig::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ContractError("missing config key " + key);
  return it->second;
}

void KeyValueConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || trim(assignment.substr(0, eq)).empty())
    throw ContractError("override must look like key=value: " + assignment);
  values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? raw(key) : fallback;
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  if (!has(key)) return fallback;
  const std::string& s = raw(key);
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ContractError("config key " + key + ": expected an integer, got '" + s + "'");
  return v;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string& s = raw(key);
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ContractError("config key " + key + ": expected a number, got '" + s + "'");
  return v;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& s = raw(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ContractError("config key " + key + ": expected true or false, got '" + s + "'");
}

void KeyValueConfig::reject_unknown(const std::set<std::string>& allowed) const {
  for (const auto& [k, v] : values_)
    if (!allowed.count(k)) throw ContractError("unknown config key " + k);
}

std::string KeyValueConfig::dump() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_)
    if (k.find('.') == std::string::npos) os << k << " = " << v << '\n';
  std::string section;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    if (dot == std::string::npos) continue;
    const std::string sec = k.substr(0, dot);
    if (sec != section) {
      if (os.tellp() > 0) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << k.substr(dot + 1) << " = " << v << '\n';
  }
  return os.str();
}

namespace {

const std::set<std::string> kModelKeys = {
    "model.feature_dim",   "model.stack",        "model.vocab_size",     "model.joint_dim",
    "model.activation",    "encoder.kind",       "encoder.layers",       "encoder.hidden",
    "encoder.projection",  "encoder.tau",        "encoder.lookahead_init",        "prediction.kind",      "prediction.layers",
    "prediction.hidden",   "prediction.projection", "prediction.embed_dim"};

template <typename F>
auto keyed(const std::string& key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ContractError& e) {
    const std::string what = e.what();
    if (what.find(key) != std::string::npos) throw;
    throw ContractError("config key " + key + ": " + what);
  }
}

NetConfig net_from(const KeyValueConfig& kv, const std::string& sec, const NetConfig& base) {
  NetConfig n = base;
  n.kind = keyed(sec + ".kind", [&] { return parse_cell_kind(kv.get_string(sec + ".kind", to_string(base.kind))); });
  n.num_layers = static_cast<int>(kv.get_int(sec + ".layers", base.num_layers));
  n.hidden = kv.get_int(sec + ".hidden", base.hidden);
  n.projection = kv.get_int(sec + ".projection", base.projection);
  n.tau = static_cast<int>(kv.get_int(sec + ".tau", base.tau));
  n.lookahead_init = keyed(sec + ".lookahead_init", [&] {
    return parse_lookahead_init(kv.get_string(sec + ".lookahead_init", to_string(base.lookahead_init)));
  });
  return n;
}

void put_net(KeyValueConfig& kv, const std::string& sec, const NetConfig& n, bool encoder) {
  kv.set(sec + ".kind", to_string(n.kind));
  kv.set(sec + ".layers", std::to_string(n.num_layers));
  kv.set(sec + ".hidden", std::to_string(n.hidden));
  kv.set(sec + ".projection", std::to_string(n.projection));
  if (encoder) {
    kv.set(sec + ".tau", std::to_string(n.tau));
    kv.set(sec + ".lookahead_init", to_string(n.lookahead_init));
  }
}

}  // namespace

ModelConfig model_config_from(const KeyValueConfig& kv) {
  ModelConfig m;
  m.feature_dim = kv.get_int("model.feature_dim", m.feature_dim);
  m.stack = static_cast<int>(kv.get_int("model.stack", m.stack));
  m.vocab_size = kv.get_int("model.vocab_size", m.vocab_size);
  m.joint_dim = kv.get_int("model.joint_dim", m.joint_dim);
  m.activation = keyed("model.activation",
                       [&] { return parse_activation(kv.get_string("model.activation", to_string(m.activation))); });
  NetConfig enc;
  enc.kind = CellKind::lt_gru;
  enc.num_layers = 2;
  enc.hidden = 64;
  m.encoder = net_from(kv, "encoder", enc);
  m.encoder.input_dim = m.feature_dim * m.stack;
  NetConfig pred;
  pred.kind = CellKind::ln_gru;
  pred.num_layers = 1;
  pred.hidden = 64;
  m.prediction = net_from(kv, "prediction", pred);
  m.prediction.input_dim = kv.get_int("prediction.embed_dim", 32);
  for (const char* key : {"prediction.tau", "prediction.lookahead_init"})
    if (kv.has(key)) throw ContractError(std::string("config key ") + key + ": lookahead is encoder-only");
  keyed("encoder", [&] { m.encoder.validate(true); });
  keyed("prediction", [&] { m.prediction.validate(false); });
  m.validate();
  return m;
}

KeyValueConfig model_key_values(const ModelConfig& m) {
  KeyValueConfig kv;
  kv.set("model.feature_dim", std::to_string(m.feature_dim));
  kv.set("model.stack", std::to_string(m.stack));
  kv.set("model.vocab_size", std::to_string(m.vocab_size));
  kv.set("model.joint_dim", std::to_string(m.joint_dim));
  kv.set("model.activation", to_string(m.activation));
  put_net(kv, "encoder", m.encoder, true);
  put_net(kv, "prediction", m.prediction, false);
  kv.set("prediction.embed_dim", std::to_string(m.prediction.input_dim));
  return kv;
}

const std::set<std::string>& run_config_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k = kModelKeys;
    for (const char* s : {"train.optimizer", "train.learning_rate", "train.clip_norm", "train.epochs",
                          "train.batch_budget", "train.shuffle", "train.sorted_first_epoch", "decode.mode",
                          "decode.beam_width", "decode.max_symbols_per_frame", "task.num_labels",
                          "task.min_labels", "task.max_labels", "task.min_duration", "task.max_duration",
                          "task.noise", "task.train_size", "task.dev_size", "task.test_size", "task.seed",
                          "data.dir", "seed"})
      k.insert(s);
    return k;
  }();
  return keys;
}

RunConfig run_config_from(const KeyValueConfig& kv) {
  kv.reject_unknown(run_config_keys());
  RunConfig c;
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  c.model = model_config_from(kv);

  c.train.optimizer = keyed("train.optimizer", [&] { return parse_optimizer(kv.get_string("train.optimizer", "adam")); });
  c.train.learning_rate = kv.get_double("train.learning_rate", c.train.learning_rate);
  c.train.clip_norm = kv.get_double("train.clip_norm", c.train.clip_norm);
  c.train.epochs = static_cast<int>(kv.get_int("train.epochs", c.train.epochs));
  c.train.batch_budget = kv.get_int("train.batch_budget", c.train.batch_budget);
  c.train.shuffle = keyed("train.shuffle", [&] { return parse_shuffle(kv.get_string("train.shuffle", "random")); });
  c.train.sorted_first_epoch = kv.get_bool("train.sorted_first_epoch", false);
  c.train.seed = c.seed;
  keyed("train", [&] { c.train.validate(); });

  c.decode.mode = keyed("decode.mode", [&] { return parse_decode_mode(kv.get_string("decode.mode", "greedy")); });
  c.decode.beam_width = static_cast<int>(kv.get_int("decode.beam_width", c.decode.beam_width));
  c.decode.max_symbols_per_frame =
      static_cast<int>(kv.get_int("decode.max_symbols_per_frame", c.decode.max_symbols_per_frame));
  keyed("decode", [&] { c.decode.validate(); });

  auto& t = c.task;
  t.num_labels = static_cast<int>(kv.get_int("task.num_labels", c.model.vocab_size - 1));
  t.min_labels = static_cast<int>(kv.get_int("task.min_labels", t.min_labels));
  t.max_labels = static_cast<int>(kv.get_int("task.max_labels", t.max_labels));
  t.min_duration = static_cast<int>(kv.get_int("task.min_duration", t.min_duration));
  t.max_duration = static_cast<int>(kv.get_int("task.max_duration", t.max_duration));
  t.noise = kv.get_double("task.noise", t.noise);
  t.train_size = static_cast<int>(kv.get_int("task.train_size", t.train_size));
  t.dev_size = static_cast<int>(kv.get_int("task.dev_size", t.dev_size));
  t.test_size = static_cast<int>(kv.get_int("task.test_size", t.test_size));
  t.seed = static_cast<std::uint64_t>(kv.get_int("task.seed", static_cast<long long>(t.seed)));
  keyed("task", [&] { t.validate(); });
  if (t.vocab_size() != c.model.vocab_size)
    throw ContractError("config key task.num_labels: must equal model.vocab_size - 1");
  if (t.feature_dim() != c.model.feature_dim)
    throw ContractError("config key model.feature_dim: must equal task.num_labels for the synthetic task");

  c.data_dir = kv.get_string("data.dir", "");
  if (!c.data_dir.empty() && !std::filesystem::is_directory(c.data_dir))
    throw ContractError("config key data.dir: no such directory " + c.data_dir);
  return c;
}

KeyValueConfig to_key_values(const RunConfig& c) {
  KeyValueConfig kv = model_key_values(c.model);
  kv.set("seed", std::to_string(c.seed));
  kv.set("train.optimizer", to_string(c.train.optimizer));
  kv.set("train.learning_rate", format_double(c.train.learning_rate));
  kv.set("train.clip_norm", format_double(c.train.clip_norm));
  kv.set("train.epochs", std::to_string(c.train.epochs));
  kv.set("train.batch_budget", std::to_string(c.train.batch_budget));
  kv.set("train.shuffle", to_string(c.train.shuffle));
  kv.set("train.sorted_first_epoch", c.train.sorted_first_epoch ? "true" : "false");
  kv.set("decode.mode", to_string(c.decode.mode));
  kv.set("decode.beam_width", std::to_string(c.decode.beam_width));
  kv.set("decode.max_symbols_per_frame", std::to_string(c.decode.max_symbols_per_frame));
  kv.set("task.num_labels", std::to_string(c.task.num_labels));
  kv.set("task.min_labels", std::to_string(c.task.min_labels));
  kv.set("task.max_labels", std::to_string(c.task.max_labels));
  kv.set("task.min_duration", std::to_string(c.task.min_duration));
  kv.set("task.max_duration", std::to_string(c.task.max_duration));
  kv.set("task.noise", format_double(c.task.noise));
  kv.set("task.train_size", std::to_string(c.task.train_size));
  kv.set("task.dev_size", std::to_string(c.task.dev_size));
  kv.set("task.test_size", std::to_string(c.task.test_size));
  kv.set("task.seed", std::to_string(c.task.seed));
  if (!c.data_dir.empty()) kv.set("data.dir", c.data_dir);
  return kv;
}

}  // namespace rnnt
