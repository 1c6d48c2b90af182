#include "ssdrl/env.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "ssdrl/errors.h"

namespace ssdrl {

namespace {

constexpr int kMaxPlacementAttempts = 1000;

// Maps v into [-h, h).
double wrap_periodic(double v, double h) {
  const double period = 2.0 * h;
  double r = std::fmod(v + h, period);
  if (r < 0) r += period;
  return r - h;
}

double bounding_radius(const Obstacle& o) { return std::hypot(o.hx, o.hy); }

// Distance from point (px, py) to the obstacle surface (0 inside), periodic in x.
double distance_to(const Obstacle& o, double px, double py, double h) {
  const double dx = wrap_periodic(px - o.cx, h), dy = py - o.cy;
  if (o.kind == ObstacleKind::kSphere) return std::max(0.0, std::hypot(dx, dy) - o.hx);
  const double qx = std::max(std::abs(dx) - o.hx, 0.0), qy = std::max(std::abs(dy) - o.hy, 0.0);
  return std::hypot(qx, qy);
}

// Ray (ox, oy) + t (c, s) against the box [x0, x1]×[y0, y1]; returns the entry
// distance or +inf.
double ray_box(double ox, double oy, double c, double s, double x0, double x1, double y0,
               double y1) {
  double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
  auto slab = [&](double o, double dir, double lo, double hi) {
    if (std::abs(dir) < 1e-15) return o >= lo && o <= hi;
    double t0 = (lo - o) / dir, t1 = (hi - o) / dir;
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    return tmin <= tmax;
  };
  if (!slab(ox, c, x0, x1) || !slab(oy, s, y0, y1)) {
    return std::numeric_limits<double>::infinity();
  }
  return tmin;
}

double ray_circle(double ox, double oy, double c, double s, double cx, double cy, double r) {
  const double fx = ox - cx, fy = oy - cy;
  const double b = fx * c + fy * s;
  const double q = fx * fx + fy * fy - r * r;
  const double disc = b * b - q;
  if (disc < 0) return std::numeric_limits<double>::infinity();
  const double root = std::sqrt(disc);
  const double t0 = -b - root;
  if (t0 >= 0) return t0;
  const double t1 = -b + root;
  return t1 >= 0 ? 0.0 : std::numeric_limits<double>::infinity();
}

}  // namespace

const char* to_string(ObstacleKind kind) {
  return kind == ObstacleKind::kThin ? "thin" : "sphere";
}

const char* to_string(Terrain terrain) {
  return terrain == Terrain::kFlat ? "flat" : "rugged";
}

ObstacleKind parse_obstacle_kind(const std::string& s) {
  if (s == "thin") return ObstacleKind::kThin;
  if (s == "sphere") return ObstacleKind::kSphere;
  throw ConfigError("unknown obstacle kind '" + s + "' (expected thin|sphere)");
}

Terrain parse_terrain(const std::string& s) {
  if (s == "flat") return Terrain::kFlat;
  if (s == "rugged") return Terrain::kRugged;
  throw ConfigError("unknown terrain '" + s + "' (expected flat|rugged)");
}

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  double r = std::fmod(a + pi, 2.0 * pi);
  if (r <= 0) r += 2.0 * pi;
  return r - pi;
}

double HeightField::height_at(double x, double y) const {
  if (cells == 0) return 0.0;
  const double u = wrap_periodic(x, half_extent) + half_extent;
  const double v = std::clamp(y + half_extent, 0.0, 2.0 * half_extent - 1e-9);
  const std::size_t i = std::min(cells - 1, std::size_t(u / cell_size));
  const std::size_t j = std::min(cells - 1, std::size_t(v / cell_size));
  return height[j * cells + i];
}

double RewardTerms::total() const {
  return kForwardCoef * forward + kEnergyCoef * energy + kAliveCoef * alive + sphere;
}

Env::Env(WorldConfig config, PhysicsRanges ranges) : config_(config), ranges_(ranges) {
  if (config_.depth_resolution < 4 || config_.depth_resolution % 4 != 0) {
    throw ConfigError("world.depth_resolution must be a positive multiple of 4");
  }
  if (config_.dt <= 0 || config_.max_range <= 0 || config_.half_extent <= 0) {
    throw ConfigError("world.dt, world.max_range and world.half_extent must be positive");
  }
  if (config_.horizon == 0) throw ConfigError("world.horizon must be >= 1");
}

Observation Env::reset(double density, std::uint64_t seed) {
  if (!(density >= 0)) throw ConfigError("obstacle density must be >= 0");
  Rng rng(seed);
  const double H = config_.half_extent;
  state_ = EnvState{};

  PhysicsParams& xi = state_.physics;
  if (config_.randomize_physics) {
    xi.mass_scale = rng.uniform(ranges_.mass_lo, ranges_.mass_hi);
    xi.friction = rng.uniform(ranges_.friction_lo, ranges_.friction_hi);
    xi.motor_strength = rng.uniform(ranges_.motor_lo, ranges_.motor_hi);
    xi.latency = rng.uniform(ranges_.latency_lo, ranges_.latency_hi);
  }
  xi.latency_steps = std::size_t(std::lround(xi.latency / config_.dt));

  state_.x = rng.uniform(-H, H);
  state_.y = rng.uniform(-1.0, 1.0);
  state_.heading = wrap_angle(rng.uniform(-std::numbers::pi, std::numbers::pi));

  if (config_.terrain == Terrain::kRugged) {
    HeightField& hf = state_.terrain;
    hf.cell_size = config_.terrain_cell;
    hf.half_extent = H;
    hf.cells = std::size_t(std::ceil(2.0 * H / hf.cell_size));
    hf.height.resize(hf.cells * hf.cells);
    for (double& h : hf.height) h = rng.uniform(-config_.terrain_amplitude, config_.terrain_amplitude);
  }

  const double margin = 0.5;
  auto spawn_clear = [&](double cx, double cy, double radius) {
    const double dx = wrap_periodic(cx - state_.x, H), dy = cy - state_.y;
    return std::hypot(dx, dy) - radius >= config_.spawn_clearance;
  };
  const std::size_t n_obstacles = std::size_t(std::llround(density));
  for (std::size_t n = 0; n < n_obstacles; ++n) {
    Obstacle o;
    o.kind = config_.obstacle_kind;
    if (o.kind == ObstacleKind::kThin) {
      o.hx = config_.thin_half_x;
      o.hy = config_.thin_half_y;
    } else {
      o.hx = o.hy = config_.sphere_radius;
    }
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
      o.cx = rng.uniform(-H, H);
      o.cy = rng.uniform(-H + margin, H - margin);
      if (o.kind == ObstacleKind::kThin ? distance_to(o, state_.x, state_.y, H) <
                                              config_.spawn_clearance
                                        : !spawn_clear(o.cx, o.cy, o.hx)) {
        continue;
      }
      placed = std::all_of(state_.obstacles.begin(), state_.obstacles.end(), [&](const Obstacle& p) {
        return std::hypot(wrap_periodic(o.cx - p.cx, H), o.cy - p.cy) >=
               bounding_radius(o) + bounding_radius(p);
      });
    }
    if (!placed) {
      throw ArenaTooDenseError("could not place obstacle " + std::to_string(n + 1) + " of " +
                               std::to_string(n_obstacles) + " after " +
                               std::to_string(kMaxPlacementAttempts) + " attempts");
    }
    state_.obstacles.push_back(o);
  }
  for (std::size_t n = 0; n < config_.goal_count; ++n) {
    Goal g;
    g.radius = config_.goal_radius;
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
      g.cx = rng.uniform(-H, H);
      g.cy = rng.uniform(-H + margin, H - margin);
      if (!spawn_clear(g.cx, g.cy, g.radius)) continue;
      placed = std::all_of(state_.obstacles.begin(), state_.obstacles.end(),
                           [&](const Obstacle& p) {
                             return distance_to(p, g.cx, g.cy, H) >= g.radius;
                           }) &&
               std::all_of(state_.goals.begin(), state_.goals.end(), [&](const Goal& p) {
                 return std::hypot(wrap_periodic(g.cx - p.cx, H), g.cy - p.cy) >= g.radius + p.radius;
               });
    }
    if (!placed) {
      throw ArenaTooDenseError("could not place goal " + std::to_string(n + 1) + " after " +
                               std::to_string(kMaxPlacementAttempts) + " attempts");
    }
    state_.goals.push_back(g);
  }

  proprio_history_.clear();
  frame_history_.clear();
  record_history();
  return observe();
}

Observation Env::reset_to(const EnvState& state) {
  state_ = state;
  proprio_history_.clear();
  frame_history_.clear();
  record_history();
  return observe();
}

bool Env::resolve_collisions(double& x, double& y) const {
  const double H = config_.half_extent, r = config_.agent_radius;
  bool collided = false;
  // Two sweeps settle contacts with neighbouring obstacles.
  for (int sweep = 0; sweep < 2; ++sweep) {
    for (const Obstacle& o : state_.obstacles) {
      const double dx = wrap_periodic(x - o.cx, H), dy = y - o.cy;
      if (o.kind == ObstacleKind::kSphere) {
        const double d = std::hypot(dx, dy), reach = r + o.hx;
        if (d >= reach) continue;
        collided = true;
        if (d > 1e-12) {
          x += dx / d * (reach - d);
          y += dy / d * (reach - d);
        } else {
          x += reach;
        }
        continue;
      }
      const double qx = std::clamp(dx, -o.hx, o.hx), qy = std::clamp(dy, -o.hy, o.hy);
      const double ex = dx - qx, ey = dy - qy;
      const double d = std::hypot(ex, ey);
      if (d >= r) continue;
      collided = true;
      if (d > 1e-12) {
        x += ex / d * (r - d);
        y += ey / d * (r - d);
      } else {
        const double pen_x = o.hx + r - std::abs(dx), pen_y = o.hy + r - std::abs(dy);
        if (pen_x <= pen_y) {
          x += dx >= 0 ? pen_x : -pen_x;
        } else {
          y += dy >= 0 ? pen_y : -pen_y;
        }
      }
    }
  }
  return collided;
}

StepResult Env::step(std::span<const double> action) {
  if (action.size() != kActionDim) {
    throw ContractError("step: action must have 2 components, got " +
                        std::to_string(action.size()));
  }
  if (state_.done) throw ContractError("step: episode is over; call reset()");
  const double H = config_.half_extent, dt = config_.dt;
  const double a0 = std::clamp(action[0], -1.0, 1.0);
  const double a1 = std::clamp(action[1], -1.0, 1.0);
  const PhysicsParams& xi = state_.physics;
  EnvState& s = state_;

  const double drag = xi.friction * s.terrain.drag_at(s.x, s.y);
  s.lin_speed += dt * (xi.motor_strength * config_.accel_max * a0 -
                       config_.linear_damping * drag * s.lin_speed) / xi.mass_scale;
  s.ang_speed += dt * (xi.motor_strength * config_.ang_accel_max * a1 -
                       config_.angular_damping * drag * s.ang_speed) / xi.mass_scale;
  s.heading = wrap_angle(s.heading + dt * s.ang_speed);
  const double c = std::cos(s.heading), sn = std::sin(s.heading);
  double nx = s.x + dt * s.lin_speed * c;
  double ny = s.y + dt * s.lin_speed * sn;
  const bool collided = resolve_collisions(nx, ny);
  const double dx = nx - s.x, dy = ny - s.y;
  if (collided) s.lin_speed = (dx * c + dy * sn) / dt;
  s.x = wrap_periodic(nx, H);
  s.y = ny;

  StepResult out;
  StepInfo& info = out.info;
  info.collided = collided;
  info.displacement_x = dx;
  info.out_of_arena = std::abs(s.y) > H;
  for (Goal& g : s.goals) {
    if (g.collected) continue;
    if (std::hypot(wrap_periodic(s.x - g.cx, H), s.y - g.cy) < config_.agent_radius + g.radius) {
      g.collected = true;
      ++info.spheres_collected;
    }
  }
  info.terms.forward = dx / dt;
  info.terms.energy = -(a0 * a0 + a1 * a1);
  info.terms.alive = 1.0;
  info.terms.sphere = double(info.spheres_collected) * config_.sphere_reward;
  out.reward = info.terms.total();

  s.consecutive_collisions = collided ? s.consecutive_collisions + 1 : 0;
  s.collisions += collided ? 1 : 0;
  s.goals_collected += info.spheres_collected;
  std::copy_backward(s.last_actions.begin(), s.last_actions.end() - 2, s.last_actions.end());
  s.last_actions[0] = a0;
  s.last_actions[1] = a1;
  ++s.step;
  s.distance += dx;
  s.episode_return += out.reward;

  info.fell = info.out_of_arena || s.consecutive_collisions >= config_.fall_steps;
  info.truncated = !info.fell && s.step >= config_.horizon;
  s.done = info.fell || s.step >= config_.horizon;
  out.done = s.done;

  record_history();
  out.observation = observe();
  return out;
}

Tensor<float> Env::proprio() const {
  const EnvState& s = state_;
  Tensor<float> p(Shape{kProprioDim});
  p[0] = float(s.lin_speed);
  p[1] = float(s.ang_speed);
  p[2] = float(std::sin(s.heading));
  p[3] = float(std::cos(s.heading));
  for (std::size_t i = 0; i < 6; ++i) p[4 + i] = float(s.last_actions[i]);
  p[10] = float(s.terrain.drag_at(s.x, s.y));
  return p;
}

Tensor<float> Env::render() const { return render_depth(state_, config_); }

void Env::record_history() {
  const std::size_t capacity = state_.physics.latency_steps + kFrameStack;
  proprio_history_.push_back(proprio());
  frame_history_.push_back(render());
  while (frame_history_.size() > capacity) {
    frame_history_.pop_front();
    proprio_history_.pop_front();
  }
}

Observation Env::observe() const {
  const std::size_t lag = state_.physics.latency_steps;
  const std::size_t n = frame_history_.size();
  auto index = [&](std::size_t back) {
    // Entry `back` steps before the newest one, clamped to the oldest.
    return back >= n ? std::size_t(0) : n - 1 - back;
  };
  Observation obs;
  obs.proprio = proprio_history_[index(lag)];
  const std::size_t F = config_.depth_resolution;
  obs.depth = Tensor<float>(Shape{kFrameStack, F, F});
  for (std::size_t f = 0; f < kFrameStack; ++f) {
    const Tensor<float>& frame = frame_history_[index(lag + kFrameStack - 1 - f)];
    std::copy_n(frame.ptr(), F * F, obs.depth.ptr() + f * F * F);
  }
  return obs;
}

Tensor<float> render_depth(const EnvState& state, const WorldConfig& config) {
  const std::size_t F = config.depth_resolution;
  const double H = config.half_extent, R = config.max_range;
  const bool goals_visible = config.obstacle_kind == ObstacleKind::kSphere;
  Tensor<float> frame(Shape{F, F});
  std::vector<double> column(F);
  std::vector<double> dir_c(F), dir_s(F);
  for (std::size_t j = 0; j < F; ++j) {
    const double angle =
        state.heading + 0.5 * config.fov - (double(j) + 0.5) * config.fov / double(F);
    const double c = std::cos(angle), s = std::sin(angle);
    dir_c[j] = c;
    dir_s[j] = s;
    double t = R;
    if (s > 1e-12) t = std::min(t, (H - state.y) / s);
    if (s < -1e-12) t = std::min(t, (-H - state.y) / s);
    for (const Obstacle& o : state.obstacles) {
      for (int k = -1; k <= 1; ++k) {
        const double ox = o.cx + 2.0 * H * k;
        if (std::abs(ox - state.x) > R + o.hx + o.hy) continue;
        const double hit = o.kind == ObstacleKind::kSphere
                               ? ray_circle(state.x, state.y, c, s, ox, o.cy, o.hx)
                               : ray_box(state.x, state.y, c, s, ox - o.hx, ox + o.hx,
                                         o.cy - o.hy, o.cy + o.hy);
        t = std::min(t, hit);
      }
    }
    if (goals_visible) {
      for (const Goal& g : state.goals) {
        if (g.collected) continue;
        for (int k = -1; k <= 1; ++k) {
          const double gx = g.cx + 2.0 * H * k;
          if (std::abs(gx - state.x) > R + g.radius) continue;
          t = std::min(t, ray_circle(state.x, state.y, c, s, gx, g.cy, g.radius));
        }
      }
    }
    column[j] = std::clamp(t / R, 0.0, 1.0);
  }
  const std::size_t band = F / 4;
  const bool rugged = state.terrain.cells > 0;
  for (std::size_t r = 0; r < F; ++r) {
    const bool ground_row = rugged && r >= F - band;
    for (std::size_t j = 0; j < F; ++j) {
      double v = column[j];
      if (ground_row) {
        // Rows further down look at ground closer to the agent.
        const std::size_t q = r - (F - band);
        const double g = R * double(band - q) / double(band + 1);
        const double h = state.terrain.height_at(state.x + g * dir_c[j], state.y + g * dir_s[j]);
        v = std::min(v, std::clamp(g / R - h, 0.0, 1.0));
      }
      frame[r * F + j] = float(v);
    }
  }
  return frame;
}

std::size_t inject_salt_noise(std::span<float> frame, Rng& rng) {
  const std::size_t n = frame.size();
  const std::size_t k = std::min<std::size_t>(std::size_t(rng.uniform_int(3, 30)), n);
  // Partial Fisher-Yates over pixel indices picks k distinct locations.
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + std::size_t(rng.uniform_int(0, std::int64_t(n - i - 1)));
    std::swap(idx[i], idx[j]);
    frame[idx[i]] = 1.0f;
  }
  return k;
}

double curriculum_density(std::size_t iteration, const CurriculumSchedule& schedule) {
  if (schedule.ramp_iters == 0) return schedule.target;
  const double frac = std::min(1.0, double(iteration) / double(schedule.ramp_iters));
  return schedule.start + (schedule.target - schedule.start) * frac;
}

EvalMetrics compute_metrics(const std::vector<EpisodeRecord>& episodes, bool has_obstacles) {
  EvalMetrics m;
  m.episodes = episodes.size();
  if (episodes.empty()) return m;
  std::size_t collisions = 0;
  for (const EpisodeRecord& e : episodes) {
    m.mean_return += e.episode_return;
    m.distance_m += e.distance;
    collisions += e.collisions;
  }
  m.mean_return /= double(episodes.size());
  m.distance_m /= double(episodes.size());
  if (has_obstacles && collisions > 0) m.collisions = double(collisions);
  return m;
}

std::string Env::snapshot() const {
  const EnvState& s = state_;
  std::ostringstream os;
  os.precision(9);
  os << "world half_extent=" << config_.half_extent
     << " obstacle_kind=" << to_string(config_.obstacle_kind)
     << " terrain=" << to_string(config_.terrain) << " max_range=" << config_.max_range
     << " depth_resolution=" << config_.depth_resolution << "\n";
  os << "agent x=" << s.x << " y=" << s.y << " heading=" << s.heading << "\n";
  os << "physics mass_scale=" << s.physics.mass_scale << " friction=" << s.physics.friction
     << " motor_strength=" << s.physics.motor_strength << " latency=" << s.physics.latency
     << "\n";
  for (const Obstacle& o : s.obstacles) {
    os << "obstacle " << to_string(o.kind) << " center=" << o.cx << "," << o.cy
       << " extent=" << o.hx << "," << o.hy << "\n";
  }
  for (const Goal& g : s.goals) {
    os << "goal sphere center=" << g.cx << "," << g.cy << " extent=" << g.radius << ","
       << g.radius << " collected=" << (g.collected ? 1 : 0) << "\n";
  }
  return os.str();
}

}  // namespace ssdrl
