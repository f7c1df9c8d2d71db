#include "tomfield/fsq.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "tomfield/errors.hpp"

namespace tomfield::fsq {

std::uint64_t QuantizerConfig::codebook_size() const {
    validate();
    std::uint64_t n = 1;
    for (int i = 0; i < channels; ++i) n *= static_cast<std::uint64_t>(levels);
    return n;
}

void QuantizerConfig::validate() const {
    if (channels < 1) throw ContractError("quantizer: d must be >= 1, got " + std::to_string(channels));
    if (levels < 2) throw ContractError("quantizer: L must be >= 2, got " + std::to_string(levels));
    // L^d must fit in 64 bits.
    const double bits = static_cast<double>(channels) * std::log2(static_cast<double>(levels));
    if (bits >= 64.0) {
        throw ContractError("quantizer: L^d exceeds a 64-bit index (d=" + std::to_string(channels) +
                            ", L=" + std::to_string(levels) + ")");
    }
}

int channel_level(double pre_latent, int levels) {
    if (!std::isfinite(pre_latent)) throw NumericError("quantize: non-finite pre-latent");
    const double scaled = 0.5 * static_cast<double>(levels - 1) * (std::tanh(pre_latent) + 1.0);
    // std::round is half-away-from-zero; scaled >= 0 so ties go up.
    const auto level = static_cast<int>(std::round(scaled));
    return std::min(std::max(level, 0), levels - 1);
}

double level_value(int level, int levels) {
    return 2.0 / static_cast<double>(levels - 1) * static_cast<double>(level) - 1.0;
}

LatentCode quantize(std::span<const double> pre_latent, const QuantizerConfig& cfg) {
    cfg.validate();
    if (pre_latent.size() != static_cast<std::size_t>(cfg.channels)) {
        throw DimensionError("quantize: pre-latent of width " + std::to_string(pre_latent.size()) +
                             " for d=" + std::to_string(cfg.channels));
    }
    LatentCode code;
    code.q.resize(pre_latent.size());
    std::uint64_t place = 1;
    for (std::size_t i = 0; i < pre_latent.size(); ++i) {
        const int level = channel_level(pre_latent[i], cfg.levels);
        code.q[i] = level_value(level, cfg.levels);
        code.index += place * static_cast<std::uint64_t>(level);
        place *= static_cast<std::uint64_t>(cfg.levels);
    }
    return code;
}

LatentCode code_from_index(std::uint64_t index, const QuantizerConfig& cfg) {
    const std::uint64_t size = cfg.codebook_size();
    if (index >= size) {
        throw DimensionError("code index " + std::to_string(index) + " outside codebook of size " +
                             std::to_string(size));
    }
    LatentCode code;
    code.index = index;
    code.q.resize(static_cast<std::size_t>(cfg.channels));
    const auto base = static_cast<std::uint64_t>(cfg.levels);
    for (auto& v : code.q) {
        v = level_value(static_cast<int>(index % base), cfg.levels);
        index /= base;
    }
    return code;
}

std::vector<LatentCode> codebook(const QuantizerConfig& cfg) {
    const std::uint64_t size = cfg.codebook_size();
    std::vector<LatentCode> out;
    out.reserve(static_cast<std::size_t>(size));
    for (std::uint64_t i = 0; i < size; ++i) out.push_back(code_from_index(i, cfg));
    return out;
}

Matrix quantize_rows(const Matrix& pre_latent, const QuantizerConfig& cfg) {
    Matrix out(pre_latent.rows(), pre_latent.cols());
    for (std::size_t r = 0; r < pre_latent.rows(); ++r) {
        const LatentCode code = quantize(pre_latent.row_span(r), cfg);
        std::copy(code.q.begin(), code.q.end(), out.row_span(r).begin());
    }
    return out;
}

std::vector<std::uint64_t> code_indices(const Matrix& pre_latent, const QuantizerConfig& cfg) {
    std::vector<std::uint64_t> out(pre_latent.rows());
    for (std::size_t r = 0; r < pre_latent.rows(); ++r) out[r] = quantize(pre_latent.row_span(r), cfg).index;
    return out;
}

NodeId quantize_pass_through(Tape& tape, NodeId pre_latent, const QuantizerConfig& cfg) {
    return tape.pass_through(pre_latent, quantize_rows(tape.value(pre_latent), cfg));
}

}  // namespace tomfield::fsq
