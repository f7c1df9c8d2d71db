#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tomfield/dataset.hpp"
#include "tomfield/models.hpp"

namespace tomfield::training {

enum class ModelKind { fsq, vae };

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view s);

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    double recon_weight = 1.0;  // lambda_recon
    double beta = 1.0;          // VAE KL weight
    std::size_t history = 7;    // H
    std::size_t horizon = 3;    // n
    std::size_t stride = 1;
    std::uint64_t seed = 7;
    double eval_fraction = 0.1;
    fsq::QuantizerConfig quantizer;  // VAE uses quantizer.channels as its latent width
    models::Architecture arch;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
    std::size_t epoch = 0;  // 0 is the untrained model
    double train_pred = 0.0;
    double train_recon = 0.0;
    double train_kl = 0.0;
    double eval_pred = 0.0;
    std::map<std::uint64_t, std::size_t> code_usage;  // FSQ only
    double wall_ms = 0.0;
};

struct TrainReport {
    ModelKind kind = ModelKind::fsq;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_eval_pred = 0.0;
    std::size_t trend_violations = 0;
};

struct TrainResult {
    models::Checkpoint checkpoint;
    TrainReport report;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Trajectory-level split: (train ids, eval ids), both sorted.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_ids(std::size_t count, double eval_fraction,
                                                                        std::uint64_t seed);

/// Component-mean squared error over n predicted 2-vectors.
double loss_pred(std::span<const envs::Vec2> predicted, std::span<const envs::Vec2> actual);

/// Uniform anchor in [0, T-1-n].
std::size_t sample_recon_anchor(const data::Trajectory& traj, std::size_t horizon, Rng& rng);

/// Decodes the window's code at the state at `anchor_tau` and scores the
/// next n recorded robot actions.
double loss_recon(const models::FsqModel& m, const data::Trajectory& traj, const data::WindowedSample& sample,
                  std::size_t anchor_tau);

/// One mini-batch with standardised inputs.
struct Batch {
    Matrix windows;        // B x 8H, standardised
    Matrix anchors;        // B x 4, standardised
    Matrix targets;        // B x 2n
    Matrix recon_anchors;  // B x 4, standardised
    Matrix recon_targets;  // B x 2n
};

Batch assemble_batch(const data::Dataset& ds, const std::vector<data::WindowedSample>& samples,
                     std::span<const std::size_t> order, const models::Standardizer& window_scaler,
                     const models::Standardizer& anchor_scaler, std::size_t horizon, Rng& rng);

struct StepResult {
    double pred = 0.0;
    double recon = 0.0;
    double kl = 0.0;
    double total = 0.0;
    GradMap grads;
};

StepResult fsq_step_gradients(const models::FsqModel& m, const Batch& b, double recon_weight);
StepResult vae_step_gradients(const models::VaeModel& m, const Batch& b, double recon_weight, double beta,
                              Rng& rng);

/// Fits input standardisers on the training trajectories.
void fit_scalers(const data::Dataset& ds, const std::vector<std::size_t>& train_ids,
                 const std::vector<data::WindowedSample>& train_windows, models::Standardizer& window_scaler,
                 models::Standardizer& anchor_scaler);

TrainResult train(ModelKind kind, const data::Dataset& ds, const TrainConfig& cfg);

/// Count of epochs where the trailing moving average of total train loss
/// rises by more than `rel_tol`.
std::size_t trend_violations(const TrainReport& report, std::size_t window, double rel_tol);

void write_report_csv(const TrainReport& report, const std::filesystem::path& path);

}  // namespace tomfield::training
