#include "tomfield/envs.hpp"

#include <algorithm>

#include "tomfield/errors.hpp"

namespace tomfield::envs {

std::string_view to_string(EnvKind kind) {
    return kind == EnvKind::highway ? "highway" : "obstacle";
}

EnvKind env_kind_from_string(std::string_view s) {
    if (s == "highway") return EnvKind::highway;
    if (s == "obstacle") return EnvKind::obstacle;
    throw ContractError("unknown environment kind '" + std::string(s) + "'");
}

EnvConfig EnvConfig::highway_default() {
    EnvConfig c;
    c.kind = EnvKind::highway;
    c.lane_centers = {0.0, 1.0, 2.0};
    c.robot_lane = 1;
    c.human_lane = 2;
    c.world_min = {0.0, -0.5};
    c.world_max = {60.0, 2.5};
    c.horizon = 30;
    c.max_speed = 1.5;
    c.noise = 0.05;
    c.forward_speed = 1.0;
    c.lateral_gain = 0.5;
    c.max_lateral_speed = 0.3;
    c.start_x_spread = 10.0;
    c.human_x_offset = 1.5;
    c.start_y_spread = 0.4;
    return c;
}

EnvConfig EnvConfig::obstacle_default() {
    EnvConfig c;
    c.kind = EnvKind::obstacle;
    c.world_min = {0.0, 0.0};
    c.world_max = {1.0, 1.0};
    c.horizon = 40;
    c.max_speed = 0.05;
    c.goal_speed = 0.05;
    c.noise = 0.01;
    c.goals = {{0.15, 0.15}, {0.85, 0.15}, {0.85, 0.85}, {0.15, 0.85}};
    c.obstacles = {{{0.5, 0.3}, 0.1}, {{0.5, 0.7}, 0.1}};
    c.influence_radius = 0.2;
    c.repulsion_gain = 0.005;
    c.tie_break_offset = 0.025;
    c.start_margin = 0.05;
    return c;
}

EnvConfig EnvConfig::defaults(EnvKind kind) {
    return kind == EnvKind::highway ? highway_default() : obstacle_default();
}

void EnvConfig::validate() const {
    if (!(world_max.x > world_min.x) || !(world_max.y > world_min.y)) {
        throw ContractError("env: empty world bounds");
    }
    if (horizon < 2) throw ContractError("env: horizon must be >= 2");
    if (!(max_speed > 0.0)) throw ContractError("env: max_speed must be positive");
    if (noise < 0.0) throw ContractError("env: noise must be non-negative");
    if (kind == EnvKind::highway) {
        if (lane_centers.size() < 2) throw ContractError("highway: need at least 2 lanes");
        const auto lanes = static_cast<int>(lane_centers.size());
        if (robot_lane < 0 || robot_lane >= lanes || human_lane < 0 || human_lane >= lanes) {
            throw ContractError("highway: start lane outside lane set");
        }
        if (!std::is_sorted(lane_centers.begin(), lane_centers.end())) {
            throw ContractError("highway: lane centers must be increasing");
        }
        if (forward_speed + noise > max_speed || max_lateral_speed > max_speed) {
            throw ContractError("highway: policy speeds exceed max_speed");
        }
        if (start_y_spread < 0.0 || start_x_spread < 0.0 || human_x_offset < 0.0) {
            throw ContractError("highway: start spreads must be non-negative");
        }
    } else {
        if (goals.size() != 4) throw ContractError("obstacle: exactly 4 goals required");
        for (const Vec2& g : goals) {
            if (in_any_obstacle(*this, g)) throw ContractError("obstacle: a disc covers a goal");
        }
        if (goal_speed > max_speed) throw ContractError("obstacle: goal_speed exceeds max_speed");
    }
}

int EnvConfig::label_count() const {
    return kind == EnvKind::highway ? 3 : static_cast<int>(goals.size());
}

std::string EnvConfig::label_name(BehaviorLabel label) const {
    if (kind == EnvKind::highway) {
        static constexpr const char* names[] = {"merge_left", "stay_straight", "merge_right"};
        if (label.value < 0 || label.value > 2) throw ContractError("bad highway label");
        return names[label.value];
    }
    return "goal_" + std::to_string(label.value);
}

double EnvConfig::world_size() const {
    return std::max(world_max.x - world_min.x, world_max.y - world_min.y);
}

namespace {

Vec2 clamp_to_world(Vec2 p, const EnvConfig& cfg) {
    return {std::clamp(p.x, cfg.world_min.x, cfg.world_max.x),
            std::clamp(p.y, cfg.world_min.y, cfg.world_max.y)};
}

void check_action(Vec2 a, const EnvConfig& cfg, const char* who) {
    if (!std::isfinite(a.x) || !std::isfinite(a.y) || std::abs(a.x) > cfg.max_speed ||
        std::abs(a.y) > cfg.max_speed) {
        throw ContractError(std::string("step: ") + who + " action (" + std::to_string(a.x) + ", " +
                            std::to_string(a.y) + ") exceeds max speed " + std::to_string(cfg.max_speed));
    }
}

Vec2 noise(const EnvConfig& cfg, Rng& rng) {
    // Draws happen even at zero amplitude so streams stay aligned.
    const double nx = rng.uniform(-1.0, 1.0);
    const double ny = rng.uniform(-1.0, 1.0);
    return {nx * cfg.noise, ny * cfg.noise};
}

}  // namespace

JointState step(const JointState& state, const JointAction& action, const EnvConfig& cfg) {
    check_action(action.robot, cfg, "robot");
    check_action(action.human, cfg, "human");
    return {clamp_to_world(state.robot + action.robot, cfg), clamp_to_world(state.human + action.human, cfg)};
}

bool in_any_obstacle(const EnvConfig& cfg, Vec2 p, double margin) {
    return std::any_of(cfg.obstacles.begin(), cfg.obstacles.end(),
                       [&](const Disc& d) { return (p - d.center).norm() < d.radius + margin; });
}

CollisionFlags collision(const JointState& state, const EnvConfig& cfg) {
    if (cfg.kind != EnvKind::obstacle) throw ContractError("collision: not an obstacle environment");
    return {in_any_obstacle(cfg, state.robot), in_any_obstacle(cfg, state.human)};
}

int nearest_lane(const EnvConfig& cfg, double y) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(cfg.lane_centers.size()); ++i) {
        if (std::abs(cfg.lane_centers[i] - y) < std::abs(cfg.lane_centers[best] - y)) best = i;
    }
    return best;
}

double highway_target_y(const EnvConfig& cfg, int lane, BehaviorLabel label) {
    const int shift = label == highway_label::merge_left ? 1 : label == highway_label::merge_right ? -1 : 0;
    const int target = std::clamp(lane + shift, 0, static_cast<int>(cfg.lane_centers.size()) - 1);
    return cfg.lane_centers[static_cast<std::size_t>(target)];
}

Vec2 scripted_highway_policy(const JointState& state, BehaviorLabel label, Agent agent,
                             const EnvConfig& cfg, Rng& rng) {
    const Vec2 self = agent == Agent::robot ? state.robot : state.human;
    const int home = agent == Agent::robot ? cfg.robot_lane : cfg.human_lane;
    const double target = highway_target_y(cfg, home, label);
    const Vec2 eps = noise(cfg, rng);
    const double lateral = cfg.lateral_gain * (target - self.y) + eps.y;
    return {cfg.forward_speed + eps.x, std::clamp(lateral, -cfg.max_lateral_speed, cfg.max_lateral_speed)};
}

Vec2 scripted_obstacle_policy(const JointState& state, BehaviorLabel goal, Agent agent,
                              const EnvConfig& cfg, Rng& rng) {
    if (goal.value < 0 || goal.value >= static_cast<int>(cfg.goals.size())) {
        throw ContractError("obstacle policy: goal id out of range");
    }
    const Vec2 self = agent == Agent::robot ? state.robot : state.human;
    const Vec2 to_goal = cfg.goals[static_cast<std::size_t>(goal.value)] - self;
    const double dist = to_goal.norm();

    // Attraction at goal speed, shortened on arrival so the goal is a fixed point.
    Vec2 attract;
    if (dist > 0.0) attract = to_goal * (std::min(cfg.goal_speed, dist) / dist);

    Vec2 repel;
    for (const Disc& d : cfg.obstacles) {
        const Vec2 away = self - d.center;
        const double centre_dist = away.norm();
        const double surface = std::max(centre_dist - d.radius, 1e-6);
        if (surface >= cfg.influence_radius || centre_dist == 0.0) continue;
        const double mag = cfg.repulsion_gain * (1.0 / surface - 1.0 / cfg.influence_radius);
        repel += away * (mag / centre_dist);
    }

    Vec2 action = attract + repel;
    // Exactly opposed attraction and repulsion: sidestep counter-clockwise.
    if (attract.norm() > 0.0 && repel.norm() > 0.0 && attract.cross(repel) == 0.0 && attract.dot(repel) < 0.0) {
        const Vec2 dir = attract * (1.0 / attract.norm());
        action += Vec2{-dir.y, dir.x} * cfg.tie_break_offset;
    }
    action += noise(cfg, rng);

    const double speed = action.norm();
    if (speed > cfg.goal_speed) action = action * (cfg.goal_speed / speed);
    return action;
}

Vec2 scripted_policy(const JointState& state, BehaviorLabel label, Agent agent, const EnvConfig& cfg,
                     Rng& rng) {
    return cfg.kind == EnvKind::highway ? scripted_highway_policy(state, label, agent, cfg, rng)
                                        : scripted_obstacle_policy(state, label, agent, cfg, rng);
}

JointState sample_initial_state(const EnvConfig& cfg, Rng& rng) {
    if (cfg.kind == EnvKind::highway) {
        const double x0 = cfg.world_min.x + rng.uniform(0.0, cfg.start_x_spread);
        const double hx = x0 + rng.uniform(-cfg.human_x_offset, cfg.human_x_offset);
        const double dy = rng.uniform(-cfg.start_y_spread, cfg.start_y_spread);
        return {clamp_to_world({x0, cfg.lane_centers[static_cast<std::size_t>(cfg.robot_lane)] + dy}, cfg),
                clamp_to_world({hx, cfg.lane_centers[static_cast<std::size_t>(cfg.human_lane)]}, cfg)};
    }
    auto draw = [&] {
        const double m = cfg.start_margin;
        for (;;) {
            const Vec2 p{rng.uniform(cfg.world_min.x + m, cfg.world_max.x - m),
                         rng.uniform(cfg.world_min.y + m, cfg.world_max.y - m)};
            if (!in_any_obstacle(cfg, p, m)) return p;
        }
    };
    const Vec2 robot = draw();
    const Vec2 human = draw();
    return {robot, human};
}

JointState default_initial_state(const EnvConfig& cfg) {
    if (cfg.kind == EnvKind::highway) {
        return {{cfg.world_min.x, cfg.lane_centers[static_cast<std::size_t>(cfg.robot_lane)]},
                {cfg.world_min.x, cfg.lane_centers[static_cast<std::size_t>(cfg.human_lane)]}};
    }
    const Vec2 mid = (cfg.world_min + cfg.world_max) * 0.5;
    return {{cfg.world_min.x + cfg.start_margin, mid.y}, {cfg.world_max.x - cfg.start_margin, mid.y}};
}

}  // namespace tomfield::envs
