#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tomfield/diffcore.hpp"

namespace tomfield::fsq {

struct QuantizerConfig {
    int channels = 3;  // d
    int levels = 2;    // L, shared by every channel

    std::uint64_t codebook_size() const;
    void validate() const;
    bool operator==(const QuantizerConfig&) const = default;
};

/// One element of the implicit L^d codebook.
struct LatentCode {
    std::vector<double> q;
    std::uint64_t index = 0;

    bool operator==(const LatentCode&) const = default;
};

// Integer level in [0, L-1] for one channel: round(((L-1)/2) * (tanh(z) + 1)),
// ties rounded away from zero.
int channel_level(double pre_latent, int levels);

// Level back onto the grid {-1, -1 + 2/(L-1), ..., 1}.
double level_value(int level, int levels);

LatentCode quantize(std::span<const double> pre_latent, const QuantizerConfig& cfg);

/// Index uses base L with channel 0 least significant.
LatentCode code_from_index(std::uint64_t index, const QuantizerConfig& cfg);

std::vector<LatentCode> codebook(const QuantizerConfig& cfg);

/// Row-wise quantization of a batch of pre-latents (rows x d).
Matrix quantize_rows(const Matrix& pre_latent, const QuantizerConfig& cfg);
std::vector<std::uint64_t> code_indices(const Matrix& pre_latent, const QuantizerConfig& cfg);

/// Quantizes `pre_latent` on the tape with a straight-through adjoint.
NodeId quantize_pass_through(Tape& tape, NodeId pre_latent, const QuantizerConfig& cfg);

}  // namespace tomfield::fsq
