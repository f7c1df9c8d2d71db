#pragma once

#include <filesystem>
#include <optional>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tomfield/dataset.hpp"
#include "tomfield/diffcore.hpp"
#include "tomfield/fsq.hpp"

namespace tomfield::models {

using envs::JointState;
using envs::Vec2;

struct Architecture {
    std::vector<std::size_t> encoder_hidden{64, 64};
    std::vector<std::size_t> decoder_hidden{64, 64};
    bool operator==(const Architecture&) const = default;
};

/// Per-column affine normalisation fitted on training data.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer identity(std::size_t width);
    static Standardizer fit(const Matrix& rows);
    Matrix apply(const Matrix& rows) const;
    bool operator==(const Standardizer&) const = default;
};

struct FsqModel {
    fsq::QuantizerConfig quantizer;
    std::size_t history = 7;  // H
    std::size_t horizon = 3;  // n
    Architecture arch;
    ParamSet params;  // "enc.<i>.w|b", "dec.<i>.w|b"
    Standardizer window_scaler;
    Standardizer anchor_scaler;

    std::size_t input_width() const { return history * data::kStepWidth; }
    std::size_t latent_width() const { return static_cast<std::size_t>(quantizer.channels); }
    bool operator==(const FsqModel&) const = default;
};

struct VaeModel {
    std::size_t latent_dim = 3;
    std::size_t history = 7;
    std::size_t horizon = 3;
    double beta = 1.0;
    Architecture arch;
    ParamSet params;  // "enc.<i>.w|b", "enc.mean.w|b", "enc.logvar.w|b", "dec.<i>.w|b"
    Standardizer window_scaler;
    Standardizer anchor_scaler;

    std::size_t input_width() const { return history * data::kStepWidth; }
    std::size_t latent_width() const { return latent_dim; }
    bool operator==(const VaeModel&) const = default;
};

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

FsqModel make_fsq(const fsq::QuantizerConfig& q, std::size_t history, std::size_t horizon,
                  const Architecture& arch, std::uint64_t seed);
VaeModel make_vae(std::size_t latent_dim, std::size_t history, std::size_t horizon, double beta,
                  const Architecture& arch, std::uint64_t seed);

void zero_parameters(ParamSet& params);

// ---- graph builders (shared by training and inference) ----

/// Pre-latent rows for already-standardised windows.
NodeId fsq_encoder_graph(Tape& tape, const FsqModel& m, const Matrix& windows_std);

struct VaeHeads {
    NodeId mean;
    NodeId logvar;  // clamped
};
VaeHeads vae_encoder_graph(Tape& tape, const VaeModel& m, const Matrix& windows_std);

/// Decoder on [latent | anchor]; anchors already standardised.
NodeId decoder_graph(Tape& tape, const ParamSet& params, const Architecture& arch, NodeId latent,
                     const Matrix& anchors_std);

Matrix windows_matrix(const std::vector<std::vector<double>>& windows);
Matrix anchors_matrix(const std::vector<JointState>& anchors);

// ---- FSQ inference ----

struct Encoding {
    std::vector<double> pre_latent;
    fsq::LatentCode code;
};

Encoding encode(const FsqModel& m, std::span<const double> history);
/// Row-wise pre-latents for raw (unstandardised) windows.
Matrix encode_batch(const FsqModel& m, const Matrix& windows);
std::vector<std::uint64_t> code_indices(const FsqModel& m, const Matrix& windows);

std::vector<Vec2> decode(const FsqModel& m, const fsq::LatentCode& code, const JointState& anchor);
/// Rows of 2n actions for a batch of latents and raw anchors.
Matrix decode_batch(const ParamSet& params, const Architecture& arch, const Standardizer& anchor_scaler,
                    const Matrix& latents, const Matrix& anchors);

std::vector<Vec2> predict(const FsqModel& m, std::span<const double> history, const JointState& anchor);

// ---- VAE inference ----

struct VaeEncoding {
    std::vector<double> mean;
    std::vector<double> logvar;
    std::vector<double> sample;
};

/// With an rng, draws mean + exp(logvar/2) * N(0,1); without, returns the mean.
VaeEncoding vae_encode(const VaeModel& m, std::span<const double> history, Rng* rng = nullptr);
std::vector<Vec2> vae_decode(const VaeModel& m, std::span<const double> latent, const JointState& anchor);
std::vector<Vec2> vae_predict(const VaeModel& m, std::span<const double> history, const JointState& anchor);

/// 0.5 * sum(exp(logvar) + mean^2 - 1 - logvar)
double kl_term(std::span<const double> mean, std::span<const double> logvar);

/// Tape form averaged over batch rows.
NodeId kl_graph(Tape& tape, NodeId mean, NodeId logvar);

// ---- checkpoints ----

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
    std::variant<FsqModel, VaeModel> model;
    nlohmann::json meta = nlohmann::json::object();  // env, train config, eval split

    bool is_fsq() const { return std::holds_alternative<FsqModel>(model); }
    const FsqModel& fsq() const { return std::get<FsqModel>(model); }
    const VaeModel& vae() const { return std::get<VaeModel>(model); }
};

std::string serialize(const Checkpoint& ck);
Checkpoint parse_checkpoint(const std::string& text);
void save(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tomfield::models
