#include "ssdrl/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <system_error>

#include "ssdrl/errors.h"

namespace ssdrl {

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    bad_value(key, v, "a non-negative integer");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "a boolean (true/false)");
}

std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  // "a..b" is an inclusive range; otherwise a comma-separated list.
  const auto dots = v.find("..");
  if (dots != std::string::npos) {
    const std::uint64_t lo = parse_u64(key, trim(v.substr(0, dots)));
    const std::uint64_t hi = parse_u64(key, trim(v.substr(dots + 2)));
    if (hi < lo) bad_value(key, v, "an increasing range");
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    return out;
  }
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, trim(item)));
  if (out.empty()) bad_value(key, v, "a non-empty seed list");
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Member>
Field real(std::string key, Member member) {
  return Field{key,
               [member](const RunConfig& c) { return format_double(member(c)); },
               [member, key](RunConfig& c, const std::string& v) { member(c) = parse_double(key, v); }};
}

template <typename Member>
Field count(std::string key, Member member) {
  return Field{key,
               [member](const RunConfig& c) {
                 return std::to_string(member(c));
               },
               [member, key](RunConfig& c, const std::string& v) {
                 using U = std::remove_cvref_t<decltype(member(c))>;
                 const std::uint64_t x = parse_u64(key, v);
                 if (x > std::numeric_limits<U>::max()) bad_value(key, v, "a smaller integer");
                 member(c) = U(x);
               }};
}

template <typename Member>
Field flag(std::string key, Member member) {
  return Field{key,
               [member](const RunConfig& c) {
                 return std::string(member(c) ? "true" : "false");
               },
               [member, key](RunConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }};
}

template <typename Member, typename Parse>
Field choice(std::string key, Member member, Parse parse) {
  return Field{key,
               [member](const RunConfig& c) {
                 return std::string(to_string(member(c)));
               },
               [member, parse, key](RunConfig& c, const std::string& v) {
                 try {
                   member(c) = parse(v);
                 } catch (const ConfigError& e) {
                   throw ConfigError("config key '" + key + "': " + e.what());
                 }
               }};
}

#define SSDRL_M(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      real("world.half_extent", SSDRL_M(world.half_extent)),
      choice("world.obstacle_kind", SSDRL_M(world.obstacle_kind), parse_obstacle_kind),
      choice("world.terrain", SSDRL_M(world.terrain), parse_terrain),
      count("world.goal_count", SSDRL_M(world.goal_count)),
      real("world.max_range", SSDRL_M(world.max_range)),
      count("world.depth_resolution", SSDRL_M(world.depth_resolution)),
      real("world.dt", SSDRL_M(world.dt)),
      count("world.horizon", SSDRL_M(world.horizon)),
      real("world.sphere_reward", SSDRL_M(world.sphere_reward)),
      count("world.fall_steps", SSDRL_M(world.fall_steps)),
      flag("world.randomize_physics", SSDRL_M(world.randomize_physics)),
      real("world.agent_radius", SSDRL_M(world.agent_radius)),
      real("world.spawn_clearance", SSDRL_M(world.spawn_clearance)),
      real("world.thin_half_x", SSDRL_M(world.thin_half_x)),
      real("world.thin_half_y", SSDRL_M(world.thin_half_y)),
      real("world.sphere_radius", SSDRL_M(world.sphere_radius)),
      real("world.goal_radius", SSDRL_M(world.goal_radius)),
      real("world.accel_max", SSDRL_M(world.accel_max)),
      real("world.linear_damping", SSDRL_M(world.linear_damping)),
      real("world.ang_accel_max", SSDRL_M(world.ang_accel_max)),
      real("world.angular_damping", SSDRL_M(world.angular_damping)),
      real("world.fov", SSDRL_M(world.fov)),
      real("world.terrain_cell", SSDRL_M(world.terrain_cell)),
      real("world.terrain_amplitude", SSDRL_M(world.terrain_amplitude)),
      real("world.mass_lo", SSDRL_M(physics.mass_lo)),
      real("world.mass_hi", SSDRL_M(physics.mass_hi)),
      real("world.friction_lo", SSDRL_M(physics.friction_lo)),
      real("world.friction_hi", SSDRL_M(physics.friction_hi)),
      real("world.motor_lo", SSDRL_M(physics.motor_lo)),
      real("world.motor_hi", SSDRL_M(physics.motor_hi)),
      real("world.latency_lo", SSDRL_M(physics.latency_lo)),
      real("world.latency_hi", SSDRL_M(physics.latency_hi)),
      real("curriculum.start_density", SSDRL_M(curriculum.start)),
      real("curriculum.target_density", SSDRL_M(curriculum.target)),
      count("curriculum.ramp_iters", SSDRL_M(curriculum.ramp_iters)),
      choice("model.backbone", SSDRL_M(model.backbone), parse_backbone_kind),
      count("model.width", SSDRL_M(model.width)),
      count("model.layers", SSDRL_M(model.layers)),
      count("model.proprio_hidden", SSDRL_M(model.proprio_hidden)),
      count("model.head_hidden", SSDRL_M(model.head_hidden)),
      count("model.patch_size", SSDRL_M(model.patch_size)),
      choice("model.scan_mode", SSDRL_M(model.scan_mode), parse_scan_mode),
      count("model.chunk_size", SSDRL_M(model.chunk_size)),
      real("model.init_log_std", SSDRL_M(model.init_log_std)),
      real("ppo.gamma", SSDRL_M(ppo.gamma)),
      real("ppo.lambda", SSDRL_M(ppo.lambda)),
      real("ppo.clip", SSDRL_M(ppo.clip)),
      real("ppo.entropy_coef", SSDRL_M(ppo.entropy_coef)),
      real("ppo.value_coef", SSDRL_M(ppo.value_coef)),
      real("ppo.policy_lr", SSDRL_M(ppo.policy_lr)),
      real("ppo.value_lr", SSDRL_M(ppo.value_lr)),
      count("ppo.samples_per_iter", SSDRL_M(ppo.samples_per_iter)),
      count("ppo.minibatch", SSDRL_M(ppo.minibatch)),
      count("ppo.epochs", SSDRL_M(ppo.epochs)),
      real("ppo.grad_clip", SSDRL_M(ppo.grad_clip)),
      count("ppo.lanes", SSDRL_M(ppo.lanes)),
      count("run.iterations", SSDRL_M(run.iterations)),
      Field{"run.seeds",
            [](const RunConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.run.seeds.size(); ++i) {
                s += (i ? "," : "") + std::to_string(c.run.seeds[i]);
              }
              return s;
            },
            [](RunConfig& c, const std::string& v) { c.run.seeds = parse_seed_list("run.seeds", v); }},
      count("run.eval_every", SSDRL_M(run.eval_every)),
      count("run.eval_episodes", SSDRL_M(run.eval_episodes)),
      count("run.eval_seed", SSDRL_M(run.eval_seed)),
      flag("run.eval_deterministic", SSDRL_M(run.eval_deterministic)),
      count("run.checkpoint_every", SSDRL_M(run.checkpoint_every)),
      flag("run.salt_noise", SSDRL_M(run.salt_noise)),
      flag("run.log_wall_time", SSDRL_M(run.log_wall_time)),
  };
  return table;
}

#undef SSDRL_M

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (f.key == key) {
      f.set(config, value);
      config.model.frame_size = config.world.depth_resolution;
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("override '" + o + "' is not of the form key=value");
    }
    apply_setting(config, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  validate(config);
}

void validate(const RunConfig& c) {
  if (c.model.frame_size != c.world.depth_resolution) {
    throw ConfigError("model frame size must equal world.depth_resolution");
  }
  try {
    validate(c.model.depth_encoder());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model.patch_size: ") + e.what());
  }
  if (c.model.width < 2) throw ConfigError("model.width: must be at least 2");
  if (c.model.layers == 0) throw ConfigError("model.layers: must be positive");
  if (c.model.chunk_size == 0) throw ConfigError("model.chunk_size: must be positive");
  if (c.world.depth_resolution < 4) throw ConfigError("world.depth_resolution: must be at least 4");
  if (!(c.world.dt > 0)) throw ConfigError("world.dt: must be positive");
  if (!(c.world.half_extent > 0)) throw ConfigError("world.half_extent: must be positive");
  if (!(c.world.max_range > 0)) throw ConfigError("world.max_range: must be positive");
  if (c.world.horizon == 0) throw ConfigError("world.horizon: must be positive");
  if (c.curriculum.start < 0 || c.curriculum.target < 0) {
    throw ConfigError("curriculum.start_density/target_density: must be non-negative");
  }
  if (c.run.seeds.empty()) throw ConfigError("run.seeds: must list at least one seed");
  validate(c.ppo);
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        t + "'");
    }
    apply_setting(config, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  validate(config);
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += f.key + "=" + f.get(config) + "\n";
  return out;
}

std::uint64_t config_digest(const RunConfig& config) {
  const std::string s = serialize_config(config);
  return fnv1a64(s.data(), s.size());
}

}  // namespace ssdrl
