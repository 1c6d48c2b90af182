#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssdrl/rng.h"
#include "ssdrl/tensor.h"

// Planar obstacle course. A disc-shaped agent with unicycle dynamics moves on
// a treadmill arena: x is periodic with period 2·half_extent, y is bounded by
// walls at ±half_extent (leaving through them ends the episode). The task
// direction is +x.
//
// Observation: an 11-dim proprioceptive vector and a stack of 4 ray-cast
// depth frames (oldest first), both delayed by the episode's sensor latency.

namespace ssdrl {

enum class ObstacleKind { kThin, kSphere };
enum class Terrain { kFlat, kRugged };

const char* to_string(ObstacleKind kind);
const char* to_string(Terrain terrain);
ObstacleKind parse_obstacle_kind(const std::string& s);
Terrain parse_terrain(const std::string& s);

inline constexpr double kForwardCoef = 1.0;
inline constexpr double kEnergyCoef = 0.005;
inline constexpr double kAliveCoef = 0.1;
inline constexpr std::size_t kProprioDim = 11;
inline constexpr std::size_t kActionDim = 2;
inline constexpr std::size_t kFrameStack = 4;

struct WorldConfig {
  double half_extent = 6.0;      // m
  ObstacleKind obstacle_kind = ObstacleKind::kThin;
  Terrain terrain = Terrain::kFlat;
  std::size_t goal_count = 5;
  double max_range = 5.0;        // m
  std::size_t depth_resolution = 32;
  double dt = 0.05;              // s
  std::size_t horizon = 999;     // steps
  double sphere_reward = 5.0;
  std::size_t fall_steps = 50;   // consecutive colliding steps
  bool randomize_physics = true;

  // Geometry and actuation of the agent.
  double agent_radius = 0.2;
  double spawn_clearance = 0.5;
  double thin_half_x = 0.05, thin_half_y = 0.2;
  double sphere_radius = 0.3;
  double goal_radius = 0.3;
  double accel_max = 2.0;        // m/s² at full throttle
  double linear_damping = 2.0;   // 1/s
  double ang_accel_max = 8.0;    // rad/s²
  double angular_damping = 4.0;  // 1/s
  double fov = 1.5707963267948966;
  double terrain_cell = 0.5;     // m
  double terrain_amplitude = 0.25;
};

// Per-episode physics draw.
struct PhysicsParams {
  double mass_scale = 1.0;
  double friction = 1.0;
  double motor_strength = 1.0;
  double latency = 0.0;  // s
  std::size_t latency_steps = 0;

  friend bool operator==(const PhysicsParams&, const PhysicsParams&) = default;
};

struct PhysicsRanges {
  double mass_lo = 0.8, mass_hi = 1.2;
  double friction_lo = 0.5, friction_hi = 1.25;
  double motor_lo = 0.8, motor_hi = 1.2;
  double latency_lo = 0.0, latency_hi = 0.04;
};

struct Obstacle {
  ObstacleKind kind = ObstacleKind::kThin;
  double cx = 0, cy = 0;
  double hx = 0, hy = 0;  // half extents; spheres use hx = hy = radius

  friend bool operator==(const Obstacle&, const Obstacle&) = default;
};

struct Goal {
  double cx = 0, cy = 0, radius = 0;
  bool collected = false;

  friend bool operator==(const Goal&, const Goal&) = default;
};

// Per-cell height offsets h in [-amplitude, amplitude]; drag multiplier 1 + h.
struct HeightField {
  std::size_t cells = 0;
  double cell_size = 0.5;
  double half_extent = 6.0;
  std::vector<double> height;

  double height_at(double x, double y) const;
  double drag_at(double x, double y) const { return 1.0 + height_at(x, y); }

  friend bool operator==(const HeightField&, const HeightField&) = default;
};

struct EnvState {
  double x = 0, y = 0;
  double heading = 0;     // (-π, π]
  double lin_speed = 0;   // m/s along heading
  double ang_speed = 0;   // rad/s
  std::array<double, 6> last_actions{};  // newest first
  std::vector<Obstacle> obstacles;
  std::vector<Goal> goals;
  HeightField terrain;
  PhysicsParams physics;
  std::size_t step = 0;
  std::size_t collisions = 0;
  std::size_t consecutive_collisions = 0;
  std::size_t goals_collected = 0;
  double distance = 0;    // displacement along +x
  double episode_return = 0;
  bool done = false;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct Observation {
  Tensor<float> proprio;  // [11]
  Tensor<float> depth;    // [4×F×F], oldest frame first

  friend bool operator==(const Observation&, const Observation&) = default;
};

struct RewardTerms {
  double forward = 0;  // ⟨v, e_x⟩
  double energy = 0;   // -‖a‖²
  double alive = 1;
  double sphere = 0;   // K_t · R_sphere
  double total() const;
};

struct StepInfo {
  bool collided = false;
  std::size_t spheres_collected = 0;
  double displacement_x = 0;
  RewardTerms terms;
  bool fell = false;         // fall condition or left the arena
  bool out_of_arena = false;
  bool truncated = false;    // horizon reached
};

struct StepResult {
  Observation observation;
  double reward = 0;
  bool done = false;
  StepInfo info;
};

class Env {
 public:
  explicit Env(WorldConfig config, PhysicsRanges ranges = {});

  // Places obstacles and goals for `density` obstacles per arena and draws
  // physics parameters. Throws ArenaTooDenseError when placement fails.
  Observation reset(double density, std::uint64_t seed);

  // action: 2 values, clamped to [-1, 1] (throttle, steering). Throws
  // ContractError on a wrong size or when the episode is over.
  StepResult step(std::span<const double> action);

  // Starts an episode from an explicit state (scenario setup and replay).
  Observation reset_to(const EnvState& state);

  const EnvState& state() const { return state_; }
  const WorldConfig& config() const { return config_; }

  // Noiseless observation of the current state (no latency applied).
  Tensor<float> render() const;
  Tensor<float> proprio() const;

  // One record per line: world header, obstacles, goals.
  std::string snapshot() const;

 private:
  Observation observe() const;
  void record_history();
  bool resolve_collisions(double& x, double& y) const;

  WorldConfig config_;
  PhysicsRanges ranges_;
  EnvState state_;
  std::deque<Tensor<float>> proprio_history_;
  std::deque<Tensor<float>> frame_history_;
};

// F×F frame for the given state; column j is the normalized hit distance of
// ray j (left to right across the field of view). On rugged terrain the
// bottom F/4 rows also show the ground.
Tensor<float> render_depth(const EnvState& state, const WorldConfig& config);

// Sets K ~ U{3..30} distinct pixels to 1.0 and returns K.
std::size_t inject_salt_noise(std::span<float> frame, Rng& rng);

struct CurriculumSchedule {
  double start = 0;
  double target = 0;
  std::size_t ramp_iters = 0;
};

double curriculum_density(std::size_t iteration, const CurriculumSchedule& schedule);

struct EpisodeRecord {
  double episode_return = 0;
  double distance = 0;
  std::size_t collisions = 0;
  std::size_t steps = 0;
  bool fell = false;
};

struct EvalMetrics {
  double mean_return = 0;
  double distance_m = 0;
  // Total collisions over the protocol; empty when the world has no
  // obstacles or no collision occurred.
  std::optional<double> collisions;
  std::size_t episodes = 0;
};

EvalMetrics compute_metrics(const std::vector<EpisodeRecord>& episodes, bool has_obstacles);

// Wraps an angle to (-π, π].
double wrap_angle(double a);

}  // namespace ssdrl
