#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ssdrl/env.h"
#include "ssdrl/policy.h"
#include "ssdrl/ppo.h"

// Run configuration as flat `section.key=value` text. Every key has a
// default; unknown keys and malformed values are rejected with the key in
// the message. The canonical serialization lists every key in a fixed order
// and is what gets persisted next to results.

namespace ssdrl {

struct RunSettings {
  std::size_t iterations = 150;
  std::vector<std::uint64_t> seeds{0};
  std::size_t eval_every = 0;        // 0: evaluate only after the last iteration
  std::size_t eval_episodes = 3;
  std::uint64_t eval_seed = 1234;
  bool eval_deterministic = true;
  std::size_t checkpoint_every = 10; // 0: checkpoint only after the last iteration
  bool salt_noise = true;
  bool log_wall_time = false;        // false writes 0 in the metrics wall_s column
};

struct RunConfig {
  WorldConfig world;
  PhysicsRanges physics;
  CurriculumSchedule curriculum{4.0, 20.0, 100};
  ModelConfig model;
  PpoConfig ppo;
  RunSettings run;
};

// Cross-field checks (frame size vs. patch size, PPO batch arithmetic...).
void validate(const RunConfig& config);

// Applies one `key=value` assignment.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

// Applies "key=value" overrides in order.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

// Parses config text on top of the defaults. Blank lines and lines starting
// with '#' are ignored; whitespace around keys and values is trimmed.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Every key, one per line, fixed order, values formatted to round-trip.
std::string serialize_config(const RunConfig& config);

// FNV-1a over serialize_config.
std::uint64_t config_digest(const RunConfig& config);

std::vector<std::string> config_keys();

std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace ssdrl
