#pragma once

#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "tomfield/rng.hpp"

namespace tomfield::envs {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2& operator+=(Vec2 o) {
        x += o.x;
        y += o.y;
        return *this;
    }
    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double cross(Vec2 o) const { return x * o.y - y * o.x; }
    double norm() const { return std::hypot(x, y); }
    bool operator==(const Vec2&) const = default;
};

// Agent index 1 is the robot, 2 the human.
enum class Agent { robot = 1, human = 2 };

struct JointState {
    Vec2 robot;
    Vec2 human;
    bool operator==(const JointState&) const = default;
};

/// Per-agent velocities in units per timestep.
struct JointAction {
    Vec2 robot;
    Vec2 human;
    bool operator==(const JointAction&) const = default;
};

enum class EnvKind { highway, obstacle };

std::string_view to_string(EnvKind kind);
EnvKind env_kind_from_string(std::string_view s);

struct Disc {
    Vec2 center;
    double radius = 0.0;
    bool operator==(const Disc&) const = default;
};

/// Ground-truth behaviour. Highway: 0 merge_left, 1 stay_straight,
/// 2 merge_right (left is +y). Obstacle: goal id 0..3.
struct BehaviorLabel {
    int value = 0;
    bool operator==(const BehaviorLabel&) const = default;
};

namespace highway_label {
inline constexpr BehaviorLabel merge_left{0};
inline constexpr BehaviorLabel stay_straight{1};
inline constexpr BehaviorLabel merge_right{2};
}  // namespace highway_label

struct EnvConfig {
    EnvKind kind = EnvKind::highway;
    Vec2 world_min;
    Vec2 world_max;
    int horizon = 30;         // T
    double max_speed = 1.5;   // per-component action bound
    double noise = 0.0;       // uniform noise amplitude per action component

    // Highway.
    std::vector<double> lane_centers;
    int robot_lane = 1;
    int human_lane = 2;
    double forward_speed = 1.0;
    double lateral_gain = 0.5;
    double max_lateral_speed = 0.3;
    double start_x_spread = 10.0;  // robot x0 ~ U[world_min.x, world_min.x + spread]
    double human_x_offset = 1.5;   // human x0 = robot x0 + U[-offset, offset]
    double start_y_spread = 0.4;   // robot y0 = home lane centre + U[-spread, spread]

    // Obstacle.
    std::vector<Vec2> goals;
    std::vector<Disc> obstacles;
    double goal_speed = 0.05;
    double influence_radius = 0.2;
    double repulsion_gain = 0.005;
    double tie_break_offset = 0.025;
    double start_margin = 0.05;

    static EnvConfig highway_default();
    static EnvConfig obstacle_default();
    static EnvConfig defaults(EnvKind kind);

    void validate() const;
    int label_count() const;
    std::string label_name(BehaviorLabel label) const;
    double world_size() const;

    bool operator==(const EnvConfig&) const = default;
};

/// Euler step with unit dt, then clamp to world bounds.
JointState step(const JointState& state, const JointAction& action, const EnvConfig& cfg);

struct CollisionFlags {
    bool robot = false;
    bool human = false;
};

/// Strict disc membership per agent. Obstacle environments only.
CollisionFlags collision(const JointState& state, const EnvConfig& cfg);

Vec2 scripted_highway_policy(const JointState& state, BehaviorLabel label, Agent agent,
                             const EnvConfig& cfg, Rng& rng);

Vec2 scripted_obstacle_policy(const JointState& state, BehaviorLabel goal, Agent agent,
                              const EnvConfig& cfg, Rng& rng);

Vec2 scripted_policy(const JointState& state, BehaviorLabel label, Agent agent, const EnvConfig& cfg,
                     Rng& rng);

/// Target lane centre y for a highway label, starting from `lane`.
double highway_target_y(const EnvConfig& cfg, int lane, BehaviorLabel label);

/// Nearest lane index to a lateral position.
int nearest_lane(const EnvConfig& cfg, double y);

/// Random start state drawn from the configured start region.
JointState sample_initial_state(const EnvConfig& cfg, Rng& rng);

/// Fixed start used by noise-free property checks.
JointState default_initial_state(const EnvConfig& cfg);

bool in_any_obstacle(const EnvConfig& cfg, Vec2 p, double margin = 0.0);

}  // namespace tomfield::envs
