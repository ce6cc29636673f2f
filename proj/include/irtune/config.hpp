#pragma once

#include "irtune/data.hpp"
#include "irtune/lora.hpp"
#include "irtune/model.hpp"
#include "irtune/trainer.hpp"

#include <json.hpp>

#include <filesystem>

namespace irtune {

// Flat run configuration: every key is "<section>.<name>" (model., train., lora., data.).
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  LoraConfig lora;
  SynthConfig data;
  TextFormat format = TextFormat::Vanilla;

  // Applies defaults, then the keys of `j`. Unknown keys and ill-typed values raise ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  // Every key with its resolved value.
  nlohmann::ordered_json to_json() const;

  // Token cutoff applied when formatting: the format's cutoff, capped by model.max_len.
  Index cutoff() const;
  void validate() const;
};

// IRTUNE_SEED, when set, replaces train.seed.
void apply_env_overrides(RunConfig& config);

}  // namespace irtune
