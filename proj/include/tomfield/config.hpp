#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "tomfield/analysis.hpp"
#include "tomfield/envs.hpp"
#include "tomfield/training.hpp"

namespace tomfield::config {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct FieldOptions {
    double usage_threshold = 0.05;  // default code selection: usage fraction >= threshold
    std::size_t nx = 0;             // 0 keeps the environment's default grid
    std::size_t ny = 0;
    bool operator==(const FieldOptions&) const = default;
};

struct Paths {
    std::string data;
    std::string out;
    std::string checkpoint;
    std::string fsq;
    std::string vae;
    bool operator==(const Paths&) const = default;
};

struct RunConfig {
    envs::EnvConfig env;
    std::size_t trajectories = 2000;
    training::TrainConfig train;
    double oracle_dead_band = 0.1;
    analysis::CompareConfig compare;
    FieldOptions field;
    Paths paths;
    std::uint64_t seed = 7;

    /// Built-in defaults; the quantizer default depends on the environment.
    static RunConfig defaults(envs::EnvKind kind);

    /// Copies the shared seed and window length into the per-module configs.
    void sync();
    void validate() const;
    analysis::OracleConfig oracle() const;

    bool operator==(const RunConfig&) const = default;
};

/// Flat INI: `[section]` headers and `key = value` lines; `;` starts a comment line.
/// Unknown sections or keys are rejected. Values not present keep `base`.
RunConfig apply_ini(RunConfig base, const std::string& text);

/// Environment kind named in an INI text's [run] section, if any.
std::optional<envs::EnvKind> ini_env_kind(const std::string& text);
bool ini_sets(const std::string& text, const std::string& section, const std::string& key);

std::string to_ini(const RunConfig& cfg);

/// Seed from TOMFIELD_SEED, if set; malformed values are a ConfigError.
std::optional<std::uint64_t> seed_from_environment();

void write_effective_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace tomfield::config
