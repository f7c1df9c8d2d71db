#include "tomfield/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tomfield/errors.hpp"
#include "tomfield/json_io.hpp"

namespace tomfield::data {

using nlohmann::json;

Trajectory rollout(const EnvConfig& cfg, BehaviorLabel robot, BehaviorLabel human, int horizon,
                   std::uint64_t seed) {
    cfg.validate();
    if (horizon < 1) throw ContractError("rollout: horizon must be positive");
    const int labels = cfg.label_count();
    if (robot.value < 0 || robot.value >= labels || human.value < 0 || human.value >= labels) {
        throw ContractError("rollout: label outside environment label set");
    }
    Rng rng(seed);
    Trajectory traj;
    traj.kind = cfg.kind;
    traj.robot_label = robot;
    traj.human_label = human;
    traj.seed = seed;
    traj.states.reserve(static_cast<std::size_t>(horizon));
    traj.actions.reserve(static_cast<std::size_t>(horizon));

    JointState s = envs::sample_initial_state(cfg, rng);
    for (int t = 0; t < horizon; ++t) {
        JointAction a;
        a.robot = envs::scripted_policy(s, robot, envs::Agent::robot, cfg, rng);
        a.human = envs::scripted_policy(s, human, envs::Agent::human, cfg, rng);
        traj.states.push_back(s);
        traj.actions.push_back(a);
        if (t + 1 < horizon) s = envs::step(s, a, cfg);
    }
    return traj;
}

namespace {

BehaviorLabel draw_label(const std::vector<double>& cumulative, Rng& rng) {
    const double u = rng.uniform() * cumulative.back();
    for (std::size_t i = 0; i < cumulative.size(); ++i) {
        if (u < cumulative[i]) return BehaviorLabel{static_cast<int>(i)};
    }
    return BehaviorLabel{static_cast<int>(cumulative.size()) - 1};
}

}  // namespace

Dataset generate_dataset(const EnvConfig& cfg, std::size_t count, std::uint64_t seed,
                         const std::vector<double>& label_weights) {
    cfg.validate();
    if (count < 1) throw ContractError("generate_dataset: N must be >= 1");
    const auto labels = static_cast<std::size_t>(cfg.label_count());
    std::vector<double> weights = label_weights.empty() ? std::vector<double>(labels, 1.0) : label_weights;
    if (weights.size() != labels) throw ContractError("generate_dataset: label weight count mismatch");
    std::vector<double> cumulative(labels);
    double acc = 0.0;
    for (std::size_t i = 0; i < labels; ++i) {
        if (!(weights[i] >= 0.0)) throw ContractError("generate_dataset: negative label weight");
        acc += weights[i];
        cumulative[i] = acc;
    }
    if (!(acc > 0.0)) throw ContractError("generate_dataset: label weights sum to zero");

    // Labels and seeds are drawn sequentially; rollouts are independent.
    Rng master(seed);
    std::vector<BehaviorLabel> robot(count), human(count);
    for (std::size_t i = 0; i < count; ++i) {
        robot[i] = draw_label(cumulative, master);
        human[i] = draw_label(cumulative, master);
    }

    Dataset ds;
    ds.env = cfg;
    ds.trajectories.resize(count);
    const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        ds.trajectories[k] = rollout(cfg, robot[k], human[k], cfg.horizon, child_seed(seed, k));
    }
    return ds;
}

std::vector<double> flatten_history(const Trajectory& traj, std::size_t tau, std::size_t history) {
    if (history == 0 || tau + 1 < history || tau >= traj.length()) {
        throw ContractError("flatten_history: window of " + std::to_string(history) + " ending at " +
                            std::to_string(tau) + " outside trajectory of length " +
                            std::to_string(traj.length()));
    }
    std::vector<double> out;
    out.reserve(history * kStepWidth);
    for (std::size_t t = tau + 1 - history; t <= tau; ++t) {
        const JointState& s = traj.states[t];
        const JointAction& a = traj.actions[t];
        out.insert(out.end(), {s.robot.x, s.robot.y, s.human.x, s.human.y, a.robot.x, a.robot.y, a.human.x,
                               a.human.y});
    }
    return out;
}

std::vector<double> future_robot_actions(const Trajectory& traj, std::size_t tau, std::size_t horizon) {
    if (tau + horizon >= traj.length()) {
        throw ContractError("future_robot_actions: tau + n beyond trajectory end");
    }
    std::vector<double> out;
    out.reserve(2 * horizon);
    for (std::size_t k = tau + 1; k <= tau + horizon; ++k) {
        out.push_back(traj.actions[k].robot.x);
        out.push_back(traj.actions[k].robot.y);
    }
    return out;
}

std::vector<WindowedSample> window_samples(const Trajectory& traj, std::size_t trajectory_id,
                                           std::size_t history, std::size_t horizon, std::size_t stride) {
    if (history < 1 || horizon < 1 || stride < 1) {
        throw ContractError("window_samples: H, n and stride must be >= 1");
    }
    std::vector<WindowedSample> out;
    const std::size_t length = traj.length();
    if (history + horizon > length) {
        std::clog << "window_samples: H + n = " << history + horizon << " exceeds T = " << length
                  << " for trajectory " << trajectory_id << "; no windows\n";
        return out;
    }
    for (std::size_t tau = history - 1; tau + horizon <= length - 1; tau += stride) {
        WindowedSample w;
        w.history = flatten_history(traj, tau, history);
        w.anchor = traj.states[tau];
        w.target = future_robot_actions(traj, tau, horizon);
        w.trajectory = trajectory_id;
        w.tau = tau;
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<WindowedSample> window_dataset(const Dataset& ds, const std::vector<std::size_t>& ids,
                                           std::size_t history, std::size_t horizon, std::size_t stride) {
    std::vector<WindowedSample> out;
    for (std::size_t id : ids) {
        auto w = window_samples(ds.trajectories.at(id), id, history, horizon, stride);
        out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    return out;
}

bool replays_exactly(const Trajectory& traj, const EnvConfig& cfg) {
    if (traj.states.size() != traj.actions.size() || traj.states.empty()) return false;
    JointState s = traj.states.front();
    for (std::size_t t = 0; t + 1 < traj.states.size(); ++t) {
        s = envs::step(s, traj.actions[t], cfg);
        if (!(s == traj.states[t + 1])) return false;
    }
    return true;
}

// ---- persistence ------------------------------------------------------------

namespace {

constexpr const char* kFormatTag = "tomfield-dataset";

json trajectory_to_json(const Trajectory& t, std::size_t id) {
    json states = json::array();
    for (const auto& s : t.states) states.push_back({s.robot.x, s.robot.y, s.human.x, s.human.y});
    json actions = json::array();
    for (const auto& a : t.actions) actions.push_back({a.robot.x, a.robot.y, a.human.x, a.human.y});
    json j;
    j["id"] = id;
    j["seed"] = t.seed;
    j["robot_label"] = t.robot_label.value;
    j["human_label"] = t.human_label.value;
    j["states"] = std::move(states);
    j["actions"] = std::move(actions);
    return j;
}

std::array<double, 4> quad(const json& j) {
    if (!j.is_array() || j.size() != 4) throw std::invalid_argument("expected 4 numbers");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

Trajectory trajectory_from_json(const json& j, envs::EnvKind kind) {
    Trajectory t;
    t.kind = kind;
    t.seed = j.at("seed").get<std::uint64_t>();
    t.robot_label = {j.at("robot_label").get<int>()};
    t.human_label = {j.at("human_label").get<int>()};
    for (const auto& s : j.at("states")) {
        const auto v = quad(s);
        t.states.push_back({{v[0], v[1]}, {v[2], v[3]}});
    }
    for (const auto& a : j.at("actions")) {
        const auto v = quad(a);
        t.actions.push_back({{v[0], v[1]}, {v[2], v[3]}});
    }
    if (t.states.size() != t.actions.size() || t.states.empty()) {
        throw std::invalid_argument("states/actions length mismatch");
    }
    return t;
}

}  // namespace

std::string serialize(const Dataset& ds) {
    std::string out;
    json header;
    header["format"] = kFormatTag;
    header["version"] = ds.version;
    header["count"] = ds.trajectories.size();
    header["env"] = to_json(ds.env);
    out += header.dump();
    out += '\n';
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
        out += trajectory_to_json(ds.trajectories[i], i).dump();
        out += '\n';
    }
    return out;
}

Dataset parse(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    Dataset ds;
    std::size_t expected = 0;

    if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
    ++lineno;
    try {
        const json header = json::parse(line);
        if (header.at("format").get<std::string>() != kFormatTag) {
            throw ParseError("not a dataset file", lineno);
        }
        ds.version = header.at("version").get<int>();
        if (ds.version != kDatasetFormatVersion) {
            throw VersionError("dataset format version " + std::to_string(ds.version) +
                               " unsupported (expected " + std::to_string(kDatasetFormatVersion) + ")");
        }
        expected = header.at("count").get<std::size_t>();
        ds.env = env_config_from_json(header.at("env"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad header: ") + e.what(), lineno);
    }

    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json rec = json::parse(line);
            if (rec.at("id").get<std::size_t>() != ds.trajectories.size()) {
                throw std::invalid_argument("record id out of sequence");
            }
            ds.trajectories.push_back(trajectory_from_json(rec, ds.env.kind));
        } catch (const std::exception& e) {
            throw ParseError(std::string("malformed trajectory record: ") + e.what(), lineno);
        }
    }
    if (ds.trajectories.size() != expected) {
        throw ParseError("expected " + std::to_string(expected) + " records, found " +
                             std::to_string(ds.trajectories.size()) + " (truncated file?)",
                         lineno + 1);
    }
    if (ds.trajectories.empty()) throw ParseError("dataset has no trajectories", lineno);
    return ds;
}

void save(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    const std::string text = serialize(ds);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Dataset load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string content_hash(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

}  // namespace tomfield::data
