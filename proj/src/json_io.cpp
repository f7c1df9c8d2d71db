#include "tomfield/json_io.hpp"

namespace tomfield {

using nlohmann::json;

namespace {

json vec(envs::Vec2 v) { return json::array({v.x, v.y}); }
envs::Vec2 vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

json to_json(const envs::EnvConfig& c) {
    json j;
    j["kind"] = std::string(envs::to_string(c.kind));
    j["world_min"] = vec(c.world_min);
    j["world_max"] = vec(c.world_max);
    j["horizon"] = c.horizon;
    j["max_speed"] = c.max_speed;
    j["noise"] = c.noise;
    j["lane_centers"] = c.lane_centers;
    j["robot_lane"] = c.robot_lane;
    j["human_lane"] = c.human_lane;
    j["forward_speed"] = c.forward_speed;
    j["lateral_gain"] = c.lateral_gain;
    j["max_lateral_speed"] = c.max_lateral_speed;
    j["start_x_spread"] = c.start_x_spread;
    j["human_x_offset"] = c.human_x_offset;
    j["start_y_spread"] = c.start_y_spread;
    j["goals"] = json::array();
    for (const auto& g : c.goals) j["goals"].push_back(vec(g));
    j["obstacles"] = json::array();
    for (const auto& d : c.obstacles) j["obstacles"].push_back({{"center", vec(d.center)}, {"radius", d.radius}});
    j["goal_speed"] = c.goal_speed;
    j["influence_radius"] = c.influence_radius;
    j["repulsion_gain"] = c.repulsion_gain;
    j["tie_break_offset"] = c.tie_break_offset;
    j["start_margin"] = c.start_margin;
    return j;
}

envs::EnvConfig env_config_from_json(const json& j) {
    envs::EnvConfig c;
    c.kind = envs::env_kind_from_string(j.at("kind").get<std::string>());
    c.world_min = vec(j.at("world_min"));
    c.world_max = vec(j.at("world_max"));
    c.horizon = j.at("horizon").get<int>();
    c.max_speed = j.at("max_speed").get<double>();
    c.noise = j.at("noise").get<double>();
    c.lane_centers = j.at("lane_centers").get<std::vector<double>>();
    c.robot_lane = j.at("robot_lane").get<int>();
    c.human_lane = j.at("human_lane").get<int>();
    c.forward_speed = j.at("forward_speed").get<double>();
    c.lateral_gain = j.at("lateral_gain").get<double>();
    c.max_lateral_speed = j.at("max_lateral_speed").get<double>();
    c.start_x_spread = j.at("start_x_spread").get<double>();
    c.human_x_offset = j.at("human_x_offset").get<double>();
    c.start_y_spread = j.at("start_y_spread").get<double>();
    for (const auto& g : j.at("goals")) c.goals.push_back(vec(g));
    for (const auto& d : j.at("obstacles")) {
        c.obstacles.push_back({vec(d.at("center")), d.at("radius").get<double>()});
    }
    c.goal_speed = j.at("goal_speed").get<double>();
    c.influence_radius = j.at("influence_radius").get<double>();
    c.repulsion_gain = j.at("repulsion_gain").get<double>();
    c.tie_break_offset = j.at("tie_break_offset").get<double>();
    c.start_margin = j.at("start_margin").get<double>();
    return c;
}

json to_json(const fsq::QuantizerConfig& cfg) { return {{"d", cfg.channels}, {"L", cfg.levels}}; }

fsq::QuantizerConfig quantizer_config_from_json(const json& j) {
    fsq::QuantizerConfig cfg{j.at("d").get<int>(), j.at("L").get<int>()};
    cfg.validate();
    return cfg;
}

}  // namespace tomfield
