#include "tomfield/models.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "tomfield/errors.hpp"
#include "tomfield/json_io.hpp"

namespace tomfield::models {

using nlohmann::json;

// ---- Standardizer -----------------------------------------------------------

Standardizer Standardizer::identity(std::size_t width) {
    return {std::vector<double>(width, 0.0), std::vector<double>(width, 1.0)};
}

Standardizer Standardizer::fit(const Matrix& rows) {
    const std::size_t w = rows.cols();
    Standardizer s = identity(w);
    if (rows.rows() == 0) return s;
    const auto n = static_cast<double>(rows.rows());
    for (std::size_t j = 0; j < w; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < rows.rows(); ++i) sum += rows(i, j);
        const double mean = sum / n;
        double var = 0.0;
        for (std::size_t i = 0; i < rows.rows(); ++i) var += (rows(i, j) - mean) * (rows(i, j) - mean);
        const double sd = std::sqrt(var / n);
        s.mean[j] = mean;
        s.scale[j] = sd > 1e-6 ? 1.0 / sd : 1.0;
    }
    return s;
}

Matrix Standardizer::apply(const Matrix& rows) const {
    if (rows.cols() != mean.size()) {
        throw DimensionError("standardizer of width " + std::to_string(mean.size()) + " given " +
                             rows.shape_string());
    }
    Matrix out(rows.rows(), rows.cols());
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        for (std::size_t j = 0; j < rows.cols(); ++j) out(i, j) = (rows(i, j) - mean[j]) * scale[j];
    }
    return out;
}

// ---- construction -----------------------------------------------------------

namespace {

void add_layer(ParamSet& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    Matrix w(in, out), b(1, out);
    init_uniform(w.values(), in, rng);
    init_uniform(b.values(), in, rng);
    ps.add(prefix + ".w", std::move(w));
    ps.add(prefix + ".b", std::move(b));
}

// Chain of affine layers "<prefix>.<i>"; tanh after every layer except the
// last unless `activate_last`.
void add_mlp(ParamSet& ps, const std::string& prefix, std::size_t in, const std::vector<std::size_t>& hidden,
             std::optional<std::size_t> out, Rng& rng) {
    std::size_t width = in;
    std::size_t i = 0;
    for (std::size_t h : hidden) {
        add_layer(ps, prefix + "." + std::to_string(i++), width, h, rng);
        width = h;
    }
    if (out) add_layer(ps, prefix + "." + std::to_string(i), width, *out, rng);
}

NodeId mlp_graph(Tape& tape, const ParamSet& ps, const std::string& prefix, std::size_t layers, NodeId x,
                 bool activate_last) {
    for (std::size_t i = 0; i < layers; ++i) {
        const std::string base = prefix + "." + std::to_string(i);
        x = tape.affine(x, tape.param(ps, base + ".w"), tape.param(ps, base + ".b"));
        if (i + 1 < layers || activate_last) x = tape.tanh(x);
    }
    return x;
}

void check_width(std::size_t got, std::size_t want, const char* what) {
    if (got != want) {
        throw DimensionError(std::string(what) + ": width " + std::to_string(got) + ", model expects " +
                             std::to_string(want));
    }
}

std::vector<Vec2> to_actions(std::span<const double> row) {
    std::vector<Vec2> out(row.size() / 2);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = {row[2 * k], row[2 * k + 1]};
    return out;
}

}  // namespace

FsqModel make_fsq(const fsq::QuantizerConfig& q, std::size_t history, std::size_t horizon,
                  const Architecture& arch, std::uint64_t seed) {
    q.validate();
    if (history < 1 || horizon < 1) throw ContractError("make_fsq: H and n must be >= 1");
    FsqModel m;
    m.quantizer = q;
    m.history = history;
    m.horizon = horizon;
    m.arch = arch;
    Rng rng(seed);
    add_mlp(m.params, "enc", m.input_width(), arch.encoder_hidden, m.latent_width(), rng);
    add_mlp(m.params, "dec", m.latent_width() + data::kJointStateWidth, arch.decoder_hidden, 2 * horizon, rng);
    m.window_scaler = Standardizer::identity(m.input_width());
    m.anchor_scaler = Standardizer::identity(data::kJointStateWidth);
    return m;
}

VaeModel make_vae(std::size_t latent_dim, std::size_t history, std::size_t horizon, double beta,
                  const Architecture& arch, std::uint64_t seed) {
    if (latent_dim < 1 || history < 1 || horizon < 1) throw ContractError("make_vae: sizes must be >= 1");
    if (arch.encoder_hidden.empty()) throw ContractError("make_vae: encoder needs a hidden layer");
    VaeModel m;
    m.latent_dim = latent_dim;
    m.history = history;
    m.horizon = horizon;
    m.beta = beta;
    m.arch = arch;
    Rng rng(seed);
    add_mlp(m.params, "enc", m.input_width(), arch.encoder_hidden, std::nullopt, rng);
    add_layer(m.params, "enc.mean", arch.encoder_hidden.back(), latent_dim, rng);
    add_layer(m.params, "enc.logvar", arch.encoder_hidden.back(), latent_dim, rng);
    add_mlp(m.params, "dec", latent_dim + data::kJointStateWidth, arch.decoder_hidden, 2 * horizon, rng);
    m.window_scaler = Standardizer::identity(m.input_width());
    m.anchor_scaler = Standardizer::identity(data::kJointStateWidth);
    return m;
}

void zero_parameters(ParamSet& params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (double& v : params.values(i)) v = 0.0;
    }
}

// ---- graphs -----------------------------------------------------------------

NodeId fsq_encoder_graph(Tape& tape, const FsqModel& m, const Matrix& windows_std) {
    check_width(windows_std.cols(), m.input_width(), "encoder input");
    // Bounded output: with an identity straight-through adjoint an unbounded
    // pre-latent drifts outward and codes freeze early in training.
    const NodeId out = mlp_graph(tape, m.params, "enc", m.arch.encoder_hidden.size() + 1, tape.constant(windows_std), false);
    return tape.tanh(out);
}

VaeHeads vae_encoder_graph(Tape& tape, const VaeModel& m, const Matrix& windows_std) {
    check_width(windows_std.cols(), m.input_width(), "encoder input");
    const NodeId h = mlp_graph(tape, m.params, "enc", m.arch.encoder_hidden.size(), tape.constant(windows_std), true);
    const NodeId mean = tape.affine(h, tape.param(m.params, "enc.mean.w"), tape.param(m.params, "enc.mean.b"));
    const NodeId raw = tape.affine(h, tape.param(m.params, "enc.logvar.w"), tape.param(m.params, "enc.logvar.b"));
    return {mean, tape.clamp(raw, kLogVarMin, kLogVarMax)};
}

NodeId decoder_graph(Tape& tape, const ParamSet& params, const Architecture& arch, NodeId latent,
                     const Matrix& anchors_std) {
    check_width(anchors_std.cols(), data::kJointStateWidth, "decoder anchor");
    const NodeId input = tape.concat_cols(latent, tape.constant(anchors_std));
    return mlp_graph(tape, params, "dec", arch.decoder_hidden.size() + 1, input, false);
}

Matrix windows_matrix(const std::vector<std::vector<double>>& windows) {
    if (windows.empty()) return {};
    Matrix out(windows.size(), windows.front().size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        check_width(windows[i].size(), out.cols(), "window");
        std::copy(windows[i].begin(), windows[i].end(), out.row_span(i).begin());
    }
    return out;
}

Matrix anchors_matrix(const std::vector<JointState>& anchors) {
    Matrix out(anchors.size(), data::kJointStateWidth);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const JointState& s = anchors[i];
        out(i, 0) = s.robot.x;
        out(i, 1) = s.robot.y;
        out(i, 2) = s.human.x;
        out(i, 3) = s.human.y;
    }
    return out;
}

// ---- FSQ inference ----------------------------------------------------------

Matrix encode_batch(const FsqModel& m, const Matrix& windows) {
    Tape tape;
    return tape.value(fsq_encoder_graph(tape, m, m.window_scaler.apply(windows)));
}

std::vector<std::uint64_t> code_indices(const FsqModel& m, const Matrix& windows) {
    if (windows.rows() == 0) return {};
    return fsq::code_indices(encode_batch(m, windows), m.quantizer);
}

Encoding encode(const FsqModel& m, std::span<const double> history) {
    check_width(history.size(), m.input_width(), "history");
    const Matrix pre = encode_batch(m, Matrix::row(history));
    Encoding e;
    e.pre_latent.assign(pre.values().begin(), pre.values().end());
    e.code = fsq::quantize(e.pre_latent, m.quantizer);
    return e;
}

Matrix decode_batch(const ParamSet& params, const Architecture& arch, const Standardizer& anchor_scaler,
                    const Matrix& latents, const Matrix& anchors) {
    Tape tape;
    const NodeId z = tape.constant(latents);
    return tape.value(decoder_graph(tape, params, arch, z, anchor_scaler.apply(anchors)));
}

std::vector<Vec2> decode(const FsqModel& m, const fsq::LatentCode& code, const JointState& anchor) {
    check_width(code.q.size(), m.latent_width(), "latent code");
    const Matrix out = decode_batch(m.params, m.arch, m.anchor_scaler, Matrix::row(code.q), anchors_matrix({anchor}));
    return to_actions(out.row_span(0));
}

std::vector<Vec2> predict(const FsqModel& m, std::span<const double> history, const JointState& anchor) {
    return decode(m, encode(m, history).code, anchor);
}

// ---- VAE inference ----------------------------------------------------------

VaeEncoding vae_encode(const VaeModel& m, std::span<const double> history, Rng* rng) {
    check_width(history.size(), m.input_width(), "history");
    Tape tape;
    const VaeHeads heads = vae_encoder_graph(tape, m, m.window_scaler.apply(Matrix::row(history)));
    VaeEncoding e;
    const auto mean = tape.value(heads.mean).values();
    const auto logvar = tape.value(heads.logvar).values();
    e.mean.assign(mean.begin(), mean.end());
    e.logvar.assign(logvar.begin(), logvar.end());
    e.sample = e.mean;
    if (rng != nullptr) {
        for (std::size_t i = 0; i < e.sample.size(); ++i) e.sample[i] += std::exp(0.5 * e.logvar[i]) * rng->normal();
    }
    return e;
}

std::vector<Vec2> vae_decode(const VaeModel& m, std::span<const double> latent, const JointState& anchor) {
    check_width(latent.size(), m.latent_width(), "latent");
    const Matrix out = decode_batch(m.params, m.arch, m.anchor_scaler, Matrix::row(latent), anchors_matrix({anchor}));
    return to_actions(out.row_span(0));
}

std::vector<Vec2> vae_predict(const VaeModel& m, std::span<const double> history, const JointState& anchor) {
    return vae_decode(m, vae_encode(m, history).mean, anchor);
}

double kl_term(std::span<const double> mean, std::span<const double> logvar) {
    if (mean.size() != logvar.size()) {
        throw DimensionError("kl_term: mean width " + std::to_string(mean.size()) + ", logvar width " +
                             std::to_string(logvar.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) s += std::exp(logvar[i]) + mean[i] * mean[i] - 1.0 - logvar[i];
    return 0.5 * s;
}

NodeId kl_graph(Tape& tape, NodeId mean, NodeId logvar) {
    const auto rows = static_cast<double>(tape.value(mean).rows());
    const NodeId terms = tape.sub(tape.add(tape.exp(logvar), tape.mul(mean, mean)), tape.add_scalar(logvar, 1.0));
    return tape.scale(tape.sum(terms), 0.5 / rows);
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr const char* kCheckpointTag = "tomfield-checkpoint";

json params_to_json(const ParamSet& ps) {
    json arr = json::array();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const Matrix& m = ps.matrix(i);
        arr.push_back({{"name", ps.name(i)},
                       {"rows", m.rows()},
                       {"cols", m.cols()},
                       {"values", std::vector<double>(m.values().begin(), m.values().end())}});
    }
    return arr;
}

void params_from_json(const json& arr, ParamSet& ps) {
    for (const auto& p : arr) {
        const auto name = p.at("name").get<std::string>();
        const auto idx = ps.find(name);
        if (!idx) throw ParseError("checkpoint parameter '" + name + "' not in architecture", 1);
        const Matrix& shape = ps.matrix(*idx);
        const auto rows = p.at("rows").get<std::size_t>();
        const auto cols = p.at("cols").get<std::size_t>();
        auto values = p.at("values").get<std::vector<double>>();
        if (rows != shape.rows() || cols != shape.cols() || values.size() != rows * cols) {
            throw DimensionError("checkpoint parameter '" + name + "' has shape " + std::to_string(rows) + "x" +
                                 std::to_string(cols) + ", architecture expects " + shape.shape_string());
        }
        std::copy(values.begin(), values.end(), ps.values(*idx).begin());
    }
    if (arr.size() != ps.size()) throw ParseError("checkpoint parameter count mismatch", 1);
}

json scaler_to_json(const Standardizer& s) { return {{"mean", s.mean}, {"scale", s.scale}}; }
Standardizer scaler_from_json(const json& j) {
    return {j.at("mean").get<std::vector<double>>(), j.at("scale").get<std::vector<double>>()};
}

json arch_to_json(const Architecture& a) { return {{"encoder_hidden", a.encoder_hidden}, {"decoder_hidden", a.decoder_hidden}}; }
Architecture arch_from_json(const json& j) {
    return {j.at("encoder_hidden").get<std::vector<std::size_t>>(), j.at("decoder_hidden").get<std::vector<std::size_t>>()};
}

}  // namespace

std::string serialize(const Checkpoint& ck) {
    json j;
    j["format"] = kCheckpointTag;
    j["version"] = kCheckpointFormatVersion;
    j["meta"] = ck.meta;
    if (ck.is_fsq()) {
        const FsqModel& m = ck.fsq();
        j["model"] = "fsq";
        j["quantizer"] = to_json(m.quantizer);
        j["history"] = m.history;
        j["horizon"] = m.horizon;
        j["architecture"] = arch_to_json(m.arch);
        j["window_scaler"] = scaler_to_json(m.window_scaler);
        j["anchor_scaler"] = scaler_to_json(m.anchor_scaler);
        j["params"] = params_to_json(m.params);
    } else {
        const VaeModel& m = ck.vae();
        j["model"] = "vae";
        j["latent_dim"] = m.latent_dim;
        j["beta"] = m.beta;
        j["history"] = m.history;
        j["horizon"] = m.horizon;
        j["architecture"] = arch_to_json(m.arch);
        j["window_scaler"] = scaler_to_json(m.window_scaler);
        j["anchor_scaler"] = scaler_to_json(m.anchor_scaler);
        j["params"] = params_to_json(m.params);
    }
    return j.dump() + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what(), 1);
    }
    try {
        if (j.at("format").get<std::string>() != kCheckpointTag) throw ParseError("not a checkpoint file", 1);
        const int version = j.at("version").get<int>();
        if (version != kCheckpointFormatVersion) {
            throw VersionError("checkpoint format version " + std::to_string(version) + " unsupported");
        }
        Checkpoint ck;
        ck.meta = j.at("meta");
        const auto kind = j.at("model").get<std::string>();
        const auto history = j.at("history").get<std::size_t>();
        const auto horizon = j.at("horizon").get<std::size_t>();
        const Architecture arch = arch_from_json(j.at("architecture"));
        if (kind == "fsq") {
            FsqModel m = make_fsq(quantizer_config_from_json(j.at("quantizer")), history, horizon, arch, 0);
            params_from_json(j.at("params"), m.params);
            m.window_scaler = scaler_from_json(j.at("window_scaler"));
            m.anchor_scaler = scaler_from_json(j.at("anchor_scaler"));
            ck.model = std::move(m);
        } else if (kind == "vae") {
            VaeModel m = make_vae(j.at("latent_dim").get<std::size_t>(), history, horizon,
                                  j.at("beta").get<double>(), arch, 0);
            params_from_json(j.at("params"), m.params);
            m.window_scaler = scaler_from_json(j.at("window_scaler"));
            m.anchor_scaler = scaler_from_json(j.at("anchor_scaler"));
            ck.model = std::move(m);
        } else {
            throw ParseError("unknown model kind '" + kind + "'", 1);
        }
        return ck;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed checkpoint: ") + e.what(), 1);
    }
}

void save(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << serialize(ck);
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_checkpoint(buf.str());
}

}  // namespace tomfield::models
