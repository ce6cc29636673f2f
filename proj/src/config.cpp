#include "irtune/config.hpp"

#include "irtune/error.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace irtune {

namespace {

template <typename T>
T get_as(const nlohmann::json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

Index get_index(const nlohmann::json& j, const std::string& key) {
  if (!j.is_number_integer()) throw ConfigError("config key '" + key + "' must be an integer");
  return j.get<Index>();
}

int get_int(const nlohmann::json& j, const std::string& key) { return static_cast<int>(get_index(j, key)); }

std::uint64_t get_seed(const nlohmann::json& j, const std::string& key) {
  if (!j.is_number_integer() || j.get<long long>() < 0) {
    throw ConfigError("config key '" + key + "' must be a nonnegative integer");
  }
  return j.get<std::uint64_t>();
}

double get_double(const nlohmann::json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  return j.get<double>();
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run configuration must be a JSON object");
  RunConfig c;
  bool max_len_given = false;
  bool k_layers_given = false;

  for (const auto& [key, v] : j.items()) {
    if (key == "model.layers") c.model.layers = get_index(v, key);
    else if (key == "model.dim") c.model.dim = get_index(v, key);
    else if (key == "model.heads") c.model.heads = get_index(v, key);
    else if (key == "model.ff_dim") c.model.ff_dim = get_index(v, key);
    else if (key == "model.vocab") c.model.vocab = get_index(v, key);
    else if (key == "model.max_len") { c.model.max_len = get_index(v, key); max_len_given = true; }
    else if (key == "model.classes") c.model.classes = get_index(v, key);
    else if (key == "train.policy") c.train.policy.kind = parse_policy(get_as<std::string>(v, key));
    else if (key == "train.max_splits") c.train.policy.max_splits = get_int(v, key);
    else if (key == "train.k_layers") { c.train.policy.k_layers = get_int(v, key); k_layers_given = true; }
    else if (key == "train.reselect_k") c.train.reselect_interval = get_int(v, key);
    else if (key == "train.batch") c.train.batch_size = get_int(v, key);
    else if (key == "train.lr") c.train.learning_rate = get_double(v, key);
    else if (key == "train.epochs") c.train.epochs = get_int(v, key);
    else if (key == "train.seed") c.train.seed = get_seed(v, key);
    else if (key == "train.importance_metric") c.train.importance_metric = parse_importance_metric(get_as<std::string>(v, key));
    else if (key == "train.format") c.format = parse_text_format(get_as<std::string>(v, key));
    else if (key == "train.log_every") c.train.log_every = get_int(v, key);
    else if (key == "train.grad_clip") c.train.grad_clip = get_double(v, key);
    else if (key == "train.train_head") c.train.train_head = get_as<bool>(v, key);
    else if (key == "lora.rank") c.lora.rank = get_index(v, key);
    else if (key == "lora.alpha") c.lora.alpha = get_double(v, key);
    else if (key == "lora.targets") {
      if (!v.is_array() || v.empty()) throw ConfigError("lora.targets must be a non-empty array of names");
      c.lora.targets.clear();
      std::set<LoraTarget> seen;
      for (const auto& name : v) {
        const LoraTarget t = parse_lora_target(get_as<std::string>(name, key));
        if (seen.insert(t).second) c.lora.targets.push_back(t);
      }
    }
    else if (key == "data.classes") c.data.classes = get_int(v, key);
    else if (key == "data.per_class") c.data.per_class = get_int(v, key);
    else if (key == "data.min_len") c.data.min_len = get_int(v, key);
    else if (key == "data.max_len") c.data.max_len = get_int(v, key);
    else if (key == "data.vocab") c.data.vocab = get_int(v, key);
    else if (key == "data.noise") c.data.noise = get_double(v, key);
    else if (key == "data.seed") c.data.seed = get_seed(v, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }

  if (!max_len_given) c.model.max_len = default_cutoff(c.format);
  // The fixed-count baselines default to their 32-layer k rescaled to this depth.
  if (!k_layers_given && (c.train.policy.kind == PolicyKind::IST || c.train.policy.kind == PolicyKind::LISA)) {
    c.train.policy.k_layers = scaled_k_layers(c.train.policy.kind, c.model.layers);
  }
  c.train.policy.seed = c.train.seed;
  c.model.seed = c.train.seed;
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["model.layers"] = model.layers;
  j["model.dim"] = model.dim;
  j["model.heads"] = model.heads;
  j["model.ff_dim"] = model.ff_dim;
  j["model.vocab"] = model.vocab;
  j["model.max_len"] = model.max_len;
  j["model.classes"] = model.classes;
  j["train.policy"] = to_string(train.policy.kind);
  j["train.max_splits"] = train.policy.max_splits;
  j["train.k_layers"] = train.policy.k_layers;
  j["train.reselect_k"] = train.reselect_interval;
  j["train.batch"] = train.batch_size;
  j["train.lr"] = train.learning_rate;
  j["train.epochs"] = train.epochs;
  j["train.seed"] = train.seed;
  j["train.importance_metric"] = to_string(train.importance_metric);
  j["train.format"] = to_string(format);
  j["train.log_every"] = train.log_every;
  j["train.grad_clip"] = train.grad_clip;
  j["train.train_head"] = train.train_head;
  j["lora.rank"] = lora.rank;
  j["lora.alpha"] = lora.alpha;
  std::vector<std::string> targets;
  for (LoraTarget t : lora.targets) targets.push_back(to_string(t));
  j["lora.targets"] = targets;
  j["data.classes"] = data.classes;
  j["data.per_class"] = data.per_class;
  j["data.min_len"] = data.min_len;
  j["data.max_len"] = data.max_len;
  j["data.vocab"] = data.vocab;
  j["data.noise"] = data.noise;
  j["data.seed"] = data.seed;
  return j;
}

Index RunConfig::cutoff() const { return std::min(default_cutoff(format), model.max_len); }

void RunConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
  if (lora.rank < 1 || lora.rank > std::min(model.dim, model.ff_dim)) {
    throw ConfigError("lora.rank must lie in [1, min(model.dim, model.ff_dim)]");
  }
  if (!(lora.alpha > 0.0)) throw ConfigError("lora.alpha must be positive");
  if (lora.targets.empty()) throw ConfigError("lora.targets must not be empty");
  if (train.policy.kind == PolicyKind::IST || train.policy.kind == PolicyKind::LISA) {
    if (train.policy.k_layers < 1) throw ConfigError("train.k_layers must be >= 1");
  }
  train.policy.validate(model.layers);
}

void apply_env_overrides(RunConfig& config) {
  if (const char* seed = std::getenv("IRTUNE_SEED"); seed && *seed) {
    char* end = nullptr;
    const unsigned long long value = std::strtoull(seed, &end, 10);
    if (end == seed || *end != '\0') throw ConfigError(std::string("IRTUNE_SEED is not an integer: ") + seed);
    config.train.seed = value;
    config.train.policy.seed = value;
    config.model.seed = value;
  }
}

}  // namespace irtune
