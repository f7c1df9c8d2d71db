#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tomfield/envs.hpp"

namespace tomfield::data {

using envs::BehaviorLabel;
using envs::EnvConfig;
using envs::JointAction;
using envs::JointState;

/// One episode: states[t] and the joint action taken from it.
struct Trajectory {
    envs::EnvKind kind = envs::EnvKind::highway;
    std::vector<JointState> states;
    std::vector<JointAction> actions;
    BehaviorLabel robot_label;
    BehaviorLabel human_label;
    std::uint64_t seed = 0;

    std::size_t length() const { return states.size(); }
    bool operator==(const Trajectory&) const = default;
};

inline constexpr int kDatasetFormatVersion = 1;

struct Dataset {
    EnvConfig env;
    std::vector<Trajectory> trajectories;
    int version = kDatasetFormatVersion;

    bool operator==(const Dataset&) const = default;
};

// Width of one flattened time step: robot pos, human pos, robot action, human action.
inline constexpr std::size_t kStepWidth = 8;
inline constexpr std::size_t kJointStateWidth = 4;

struct WindowedSample {
    std::vector<double> history;  // H * kStepWidth
    JointState anchor;            // state at tau
    std::vector<double> target;   // robot actions tau+1 .. tau+n, flattened
    std::size_t trajectory = 0;
    std::size_t tau = 0;
};

Trajectory rollout(const EnvConfig& cfg, BehaviorLabel robot, BehaviorLabel human, int horizon,
                   std::uint64_t seed);

/// Labels drawn from `label_weights` (uniform when empty); rollouts use
/// child seeds split from `seed`.
Dataset generate_dataset(const EnvConfig& cfg, std::size_t count, std::uint64_t seed,
                         const std::vector<double>& label_weights = {});

/// Flattened history of H steps ending at tau (inclusive).
std::vector<double> flatten_history(const Trajectory& traj, std::size_t tau, std::size_t history);

/// Robot actions tau+1 .. tau+n flattened as (x, y) pairs.
std::vector<double> future_robot_actions(const Trajectory& traj, std::size_t tau, std::size_t horizon);

/// Windows at tau = H-1, H-1+stride, ... while tau + n <= T-1. Empty when H + n > T.
std::vector<WindowedSample> window_samples(const Trajectory& traj, std::size_t trajectory_id,
                                           std::size_t history, std::size_t horizon,
                                           std::size_t stride = 1);

std::vector<WindowedSample> window_dataset(const Dataset& ds, const std::vector<std::size_t>& ids,
                                           std::size_t history, std::size_t horizon,
                                           std::size_t stride = 1);

/// Replays recorded actions under step(); true when every state matches exactly.
bool replays_exactly(const Trajectory& traj, const EnvConfig& cfg);

void save(const Dataset& ds, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);

std::string serialize(const Dataset& ds);
Dataset parse(const std::string& text);

/// FNV-1a over the serialized form, hex encoded.
std::string content_hash(const std::string& bytes);

}  // namespace tomfield::data
