#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tomfield/dataset.hpp"
#include "tomfield/errors.hpp"
#include "tomfield/models.hpp"

namespace tomfield::analysis {

using envs::BehaviorLabel;
using envs::JointState;
using envs::Vec2;

// ---- vector fields ----------------------------------------------------------

struct GridSpec {
    double x_min = 0.0;
    double x_max = 1.0;
    double y_min = 0.0;
    double y_max = 1.0;
    std::size_t nx = 20;
    std::size_t ny = 10;

    std::size_t cell_count() const { return nx * ny; }
    Vec2 cell_center(std::size_t ix, std::size_t iy) const;
    bool operator==(const GridSpec&) const = default;
};

/// Grid covering the region where robots operate in the default datasets.
GridSpec default_grid(const envs::EnvConfig& env);

struct VectorField {
    GridSpec grid;
    fsq::LatentCode code;
    Vec2 human;                   // fixed human position for every cell
    std::vector<Vec2> positions;  // cell centres, row-major over (iy, ix)
    std::vector<Vec2> actions;    // first decoded robot action per cell
};

VectorField extract_vector_field(const models::FsqModel& m, const fsq::LatentCode& code, const GridSpec& grid,
                                 Vec2 human);

/// Mean human position over every recorded state.
Vec2 mean_human_position(const data::Dataset& ds);

void export_field_csv(const VectorField& field, const std::filesystem::path& path);
void export_field_svg(const VectorField& field, const envs::EnvConfig& env, const std::filesystem::path& path);
std::string field_svg(const VectorField& field, const envs::EnvConfig& env);

struct FieldRow {
    Vec2 position;
    Vec2 action;
};
std::vector<FieldRow> read_field_csv(const std::filesystem::path& path);

// ---- alignment error --------------------------------------------------------

class UndefinedDirectionError : public NumericError {
public:
    using NumericError::NumericError;
};

inline constexpr double kMinDirectionNorm = 1e-12;

/// Cosine distance 1 - cos(pred, reference), in [0, 2].
double alignment_error(Vec2 pred, Vec2 reference);

/// Mean per-step alignment error over defined pairs.
double sequence_alignment_error(std::span<const Vec2> pred, std::span<const Vec2> reference);

// ---- clustering -------------------------------------------------------------

std::map<std::uint64_t, std::size_t> latent_histogram(const models::FsqModel& m, const data::Dataset& ds,
                                                      std::size_t history, std::size_t horizon);

/// Code of each trajectory's final window.
std::vector<std::uint64_t> final_window_codes(const models::FsqModel& m, const data::Dataset& ds,
                                              const std::vector<std::size_t>& ids);

/// (1/M) * sum over codes of the majority label count.
double cluster_purity(std::span<const std::uint64_t> codes, std::span<const int> labels);
double cluster_purity(const models::FsqModel& m, const data::Dataset& ds);

/// Most frequent code among windows whose trajectory carries `label`.
std::optional<std::uint64_t> dominant_code(const models::FsqModel& m, const data::Dataset& ds, BehaviorLabel label);

// ---- synthetic coarse-prediction oracle -------------------------------------

struct OracleConfig {
    envs::EnvKind kind = envs::EnvKind::highway;
    std::vector<double> lane_centers;
    std::vector<Vec2> goals;
    double lateral_dead_band = 0.1;
    double forward_speed = 1.0;  // highway nominal speed
    double goal_speed = 0.05;    // obstacle nominal speed
    std::size_t horizon = 3;     // n
    double noise = 0.0;

    static OracleConfig for_env(const envs::EnvConfig& env, std::size_t horizon);
};

/// Robot segment: consecutive robot positions the observer saw.
BehaviorLabel oracle_classify(const OracleConfig& cfg, std::span<const Vec2> robot_positions);

/// n constant actions toward the classified behaviour's target from `start`.
std::vector<Vec2> oracle_predict(const OracleConfig& cfg, std::span<const Vec2> robot_positions,
                                 const JointState& start);

// ---- model comparison -------------------------------------------------------

struct TrialInput {
    const data::Trajectory* trajectory = nullptr;
    std::size_t segment_begin = 0;  // inclusive
    std::size_t segment_end = 0;    // inclusive
    std::vector<double> history;    // H-step window ending at segment_end
    JointState start;
};

using Predictor = std::function<std::vector<Vec2>(const TrialInput&)>;

Predictor fsq_predictor(const models::FsqModel& m);
Predictor vae_predictor(const models::VaeModel& m);
Predictor oracle_predictor(const OracleConfig& cfg);

struct CompareConfig {
    std::size_t trials = 10;
    std::size_t starts = 5;
    std::size_t min_segment = 5;
    std::size_t max_segment = 7;
    std::size_t history = 7;
    std::uint64_t seed = 7;
    bool operator==(const CompareConfig&) const = default;
};

struct SampleRecord {
    std::size_t trial = 0;
    std::size_t trajectory = 0;
    std::size_t segment_length = 0;
    std::size_t start_index = 0;
    JointState start;
    std::optional<double> error_a;
    std::optional<double> error_b;
};

struct TTest {
    double t = 0.0;
    double p = 1.0;
};

struct ComparisonReport {
    std::string name_a;
    std::string name_b;
    std::vector<SampleRecord> samples;
    std::vector<double> trial_mean_a;
    std::vector<double> trial_mean_b;
    double mean_a = 0.0;
    double mean_b = 0.0;
    std::optional<TTest> test;  // empty when degenerate
    bool degenerate = false;
    std::size_t skipped_a = 0;
    std::size_t skipped_b = 0;
};

/// Start states for one trial: robot positions spread over the workspace,
/// human fixed at the segment's final state.
std::vector<JointState> sample_start_states(const envs::EnvConfig& env, const JointState& segment_end,
                                            std::size_t count, Rng& rng);

ComparisonReport compare(const Predictor& a, const Predictor& b, const data::Dataset& ds,
                         const std::vector<std::size_t>& held_out, const OracleConfig& oracle,
                         const CompareConfig& cfg, std::string name_a = "fsq", std::string name_b = "vae");

class DegenerateTestError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Paired two-tailed t-test on a - b.
TTest paired_t_test(std::span<const double> a, std::span<const double> b);

void write_comparison_csv(const ComparisonReport& report, const std::filesystem::path& path);

}  // namespace tomfield::analysis
