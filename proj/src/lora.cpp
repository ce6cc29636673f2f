#include "irtune/lora.hpp"

namespace irtune {

std::string to_string(LoraTarget target) {
  switch (target) {
    case LoraTarget::Query: return "query";
    case LoraTarget::Key: return "key";
    case LoraTarget::Value: return "value";
    case LoraTarget::Output: return "output";
    case LoraTarget::FfnUp: return "ffn_up";
    case LoraTarget::FfnDown: return "ffn_down";
  }
  return "unknown";
}

LoraTarget parse_lora_target(const std::string& name) {
  for (LoraTarget t : kAllLoraTargets) {
    if (to_string(t) == name) return t;
  }
  throw ConfigError("unknown lora target '" + name + "' (expected query, key, value, output, ffn_up or ffn_down)");
}

}  // namespace irtune
