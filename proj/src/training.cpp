#include "tomfield/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "tomfield/errors.hpp"
#include "tomfield/json_io.hpp"

namespace tomfield::training {

using nlohmann::json;

std::string_view to_string(ModelKind kind) { return kind == ModelKind::fsq ? "fsq" : "vae"; }

ModelKind model_kind_from_string(std::string_view s) {
    if (s == "fsq") return ModelKind::fsq;
    if (s == "vae") return ModelKind::vae;
    throw ContractError("unknown model kind '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1 || history < 1 || horizon < 1 || stride < 1) {
        throw ContractError("train config: epochs, batch size, H, n and stride must be positive");
    }
    if (!(learning_rate > 0.0)) throw ContractError("train config: learning rate must be positive");
    if (recon_weight < 0.0 || beta < 0.0) throw ContractError("train config: loss weights must be non-negative");
    if (!(eval_fraction > 0.0 && eval_fraction <= 0.5)) {
        throw ContractError("train config: eval fraction must lie in (0, 0.5]");
    }
    quantizer.validate();
}

json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"recon_weight", c.recon_weight},
            {"beta", c.beta},
            {"history", c.history},
            {"horizon", c.horizon},
            {"stride", c.stride},
            {"seed", c.seed},
            {"eval_fraction", c.eval_fraction},
            {"quantizer", tomfield::to_json(c.quantizer)},
            {"encoder_hidden", c.arch.encoder_hidden},
            {"decoder_hidden", c.arch.decoder_hidden}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.recon_weight = j.at("recon_weight").get<double>();
    c.beta = j.at("beta").get<double>();
    c.history = j.at("history").get<std::size_t>();
    c.horizon = j.at("horizon").get<std::size_t>();
    c.stride = j.at("stride").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.eval_fraction = j.at("eval_fraction").get<double>();
    c.quantizer = quantizer_config_from_json(j.at("quantizer"));
    c.arch.encoder_hidden = j.at("encoder_hidden").get<std::vector<std::size_t>>();
    c.arch.decoder_hidden = j.at("decoder_hidden").get<std::vector<std::size_t>>();
    return c;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_ids(std::size_t count, double eval_fraction,
                                                                        std::uint64_t seed) {
    if (count < 2) throw ContractError("split: need at least 2 trajectories for a train/eval split");
    std::vector<std::size_t> ids(count);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Rng rng(child_seed(seed, 0x5eed5911ULL));
    rng.shuffle(ids);
    auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(count)));
    n_eval = std::clamp<std::size_t>(n_eval, 1, count - 1);
    std::vector<std::size_t> eval(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_eval));
    std::vector<std::size_t> train(ids.begin() + static_cast<std::ptrdiff_t>(n_eval), ids.end());
    std::sort(eval.begin(), eval.end());
    std::sort(train.begin(), train.end());
    return {train, eval};
}

double loss_pred(std::span<const envs::Vec2> predicted, std::span<const envs::Vec2> actual) {
    if (predicted.size() != actual.size() || predicted.empty()) {
        throw DimensionError("loss_pred: " + std::to_string(predicted.size()) + " predicted vs " +
                             std::to_string(actual.size()) + " actual actions");
    }
    double s = 0.0;
    for (std::size_t k = 0; k < predicted.size(); ++k) {
        const envs::Vec2 d = actual[k] - predicted[k];
        s += d.x * d.x + d.y * d.y;
    }
    return s / static_cast<double>(2 * predicted.size());
}

std::size_t sample_recon_anchor(const data::Trajectory& traj, std::size_t horizon, Rng& rng) {
    if (traj.length() < horizon + 1) throw ContractError("recon anchor: trajectory shorter than n + 1");
    return static_cast<std::size_t>(rng.below(traj.length() - horizon));
}

double loss_recon(const models::FsqModel& m, const data::Trajectory& traj, const data::WindowedSample& sample,
                  std::size_t anchor_tau) {
    if (anchor_tau + m.horizon > traj.length() - 1) {
        throw ContractError("loss_recon: anchor " + std::to_string(anchor_tau) + " + n exceeds T-1");
    }
    const auto code = models::encode(m, sample.history).code;
    const auto predicted = models::decode(m, code, traj.states[anchor_tau]);
    const auto flat = data::future_robot_actions(traj, anchor_tau, m.horizon);
    std::vector<envs::Vec2> actual(m.horizon);
    for (std::size_t k = 0; k < m.horizon; ++k) actual[k] = {flat[2 * k], flat[2 * k + 1]};
    return loss_pred(predicted, actual);
}

Batch assemble_batch(const data::Dataset& ds, const std::vector<data::WindowedSample>& samples,
                     std::span<const std::size_t> order, const models::Standardizer& window_scaler,
                     const models::Standardizer& anchor_scaler, std::size_t horizon, Rng& rng) {
    const std::size_t b = order.size();
    const std::size_t width = samples.at(order[0]).history.size();
    Matrix windows(b, width), anchors(b, data::kJointStateWidth), targets(b, 2 * horizon);
    Matrix recon_anchors(b, data::kJointStateWidth), recon_targets(b, 2 * horizon);
    std::vector<envs::JointState> a(b), ra(b);
    for (std::size_t i = 0; i < b; ++i) {
        const data::WindowedSample& s = samples[order[i]];
        std::copy(s.history.begin(), s.history.end(), windows.row_span(i).begin());
        std::copy(s.target.begin(), s.target.end(), targets.row_span(i).begin());
        a[i] = s.anchor;
        const data::Trajectory& traj = ds.trajectories[s.trajectory];
        const std::size_t tau = sample_recon_anchor(traj, horizon, rng);
        ra[i] = traj.states[tau];
        const auto rt = data::future_robot_actions(traj, tau, horizon);
        std::copy(rt.begin(), rt.end(), recon_targets.row_span(i).begin());
    }
    return {window_scaler.apply(windows), anchor_scaler.apply(models::anchors_matrix(a)), std::move(targets),
            anchor_scaler.apply(models::anchors_matrix(ra)), std::move(recon_targets)};
}

StepResult fsq_step_gradients(const models::FsqModel& m, const Batch& b, double recon_weight) {
    Tape tape;
    const NodeId pre = models::fsq_encoder_graph(tape, m, b.windows);
    const NodeId q = fsq::quantize_pass_through(tape, pre, m.quantizer);
    const NodeId pred = models::decoder_graph(tape, m.params, m.arch, q, b.anchors);
    const NodeId lp = tape.mse(pred, tape.constant(b.targets));
    const NodeId rec = models::decoder_graph(tape, m.params, m.arch, q, b.recon_anchors);
    const NodeId lr = tape.mse(rec, tape.constant(b.recon_targets));
    // With zero weight the reconstruction branch stays off the loss path.
    const NodeId total = recon_weight > 0.0 ? tape.add(lp, tape.scale(lr, recon_weight)) : lp;
    StepResult r;
    r.pred = tape.value(lp)[0];
    r.recon = tape.value(lr)[0];
    r.total = tape.value(total)[0];
    r.grads = tape.backward(total, m.params);
    return r;
}

StepResult vae_step_gradients(const models::VaeModel& m, const Batch& b, double recon_weight, double beta,
                              Rng& rng) {
    Tape tape;
    const models::VaeHeads heads = models::vae_encoder_graph(tape, m, b.windows);
    Matrix eps(b.windows.rows(), m.latent_dim);
    for (double& v : eps.values()) v = rng.normal();
    const NodeId sd = tape.exp(tape.scale(heads.logvar, 0.5));
    const NodeId z = tape.add(heads.mean, tape.mul(sd, tape.constant(std::move(eps))));
    const NodeId pred = models::decoder_graph(tape, m.params, m.arch, z, b.anchors);
    const NodeId lp = tape.mse(pred, tape.constant(b.targets));
    const NodeId rec = models::decoder_graph(tape, m.params, m.arch, z, b.recon_anchors);
    const NodeId lr = tape.mse(rec, tape.constant(b.recon_targets));
    const NodeId kl = models::kl_graph(tape, heads.mean, heads.logvar);
    NodeId total = recon_weight > 0.0 ? tape.add(lp, tape.scale(lr, recon_weight)) : lp;
    if (beta > 0.0) total = tape.add(total, tape.scale(kl, beta));
    StepResult r;
    r.pred = tape.value(lp)[0];
    r.recon = tape.value(lr)[0];
    r.kl = tape.value(kl)[0];
    r.total = tape.value(total)[0];
    r.grads = tape.backward(total, m.params);
    return r;
}

void fit_scalers(const data::Dataset& ds, const std::vector<std::size_t>& train_ids,
                 const std::vector<data::WindowedSample>& train_windows, models::Standardizer& window_scaler,
                 models::Standardizer& anchor_scaler) {
    std::vector<std::vector<double>> rows;
    rows.reserve(train_windows.size());
    for (const auto& w : train_windows) rows.push_back(w.history);
    window_scaler = models::Standardizer::fit(models::windows_matrix(rows));
    std::vector<envs::JointState> states;
    for (std::size_t id : train_ids) {
        const auto& s = ds.trajectories[id].states;
        states.insert(states.end(), s.begin(), s.end());
    }
    anchor_scaler = models::Standardizer::fit(models::anchors_matrix(states));
}

namespace {

using Clock = std::chrono::steady_clock;

struct Split {
    std::vector<data::WindowedSample> train;
    std::vector<data::WindowedSample> eval;
    std::vector<std::size_t> train_ids;
    std::vector<std::size_t> eval_ids;
};

double mse(const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return a.size() == 0 ? 0.0 : s / static_cast<double>(a.size());
}

Matrix stack_targets(const std::vector<data::WindowedSample>& ws, std::size_t horizon) {
    Matrix t(ws.size(), 2 * horizon);
    for (std::size_t i = 0; i < ws.size(); ++i) std::copy(ws[i].target.begin(), ws[i].target.end(), t.row_span(i).begin());
    return t;
}

Matrix stack_windows(const std::vector<data::WindowedSample>& ws) {
    std::vector<std::vector<double>> rows;
    rows.reserve(ws.size());
    for (const auto& w : ws) rows.push_back(w.history);
    return models::windows_matrix(rows);
}

std::vector<envs::JointState> stack_anchors(const std::vector<data::WindowedSample>& ws) {
    std::vector<envs::JointState> a;
    a.reserve(ws.size());
    for (const auto& w : ws) a.push_back(w.anchor);
    return a;
}

// Prediction loss with the deterministic encoder path (codes / VAE means).
struct EvalBatch {
    Matrix windows;
    Matrix anchors;
    Matrix targets;
};

EvalBatch make_eval_batch(const std::vector<data::WindowedSample>& ws, std::size_t horizon) {
    return {stack_windows(ws), models::anchors_matrix(stack_anchors(ws)), stack_targets(ws, horizon)};
}

double eval_pred(const models::FsqModel& m, const EvalBatch& e) {
    if (e.windows.rows() == 0) return 0.0;
    const Matrix q = fsq::quantize_rows(models::encode_batch(m, e.windows), m.quantizer);
    return mse(models::decode_batch(m.params, m.arch, m.anchor_scaler, q, e.anchors), e.targets);
}

double eval_pred(const models::VaeModel& m, const EvalBatch& e) {
    if (e.windows.rows() == 0) return 0.0;
    Tape tape;
    const auto heads = models::vae_encoder_graph(tape, m, m.window_scaler.apply(e.windows));
    return mse(models::decode_batch(m.params, m.arch, m.anchor_scaler, tape.value(heads.mean), e.anchors), e.targets);
}

std::map<std::uint64_t, std::size_t> usage(const models::FsqModel& m, const EvalBatch& e) {
    std::map<std::uint64_t, std::size_t> h;
    for (std::uint64_t c : models::code_indices(m, e.windows)) ++h[c];
    return h;
}

double param_norm(const ParamSet& ps) {
    double s = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) s += ps.matrix(i).squared_norm();
    return std::sqrt(s);
}

[[noreturn]] void abort_non_finite(std::size_t epoch, std::size_t batch, const ParamSet& ps, const StepResult& r) {
    std::ostringstream msg;
    msg << "non-finite loss at epoch " << epoch << ", batch " << batch << " (pred=" << r.pred
        << ", recon=" << r.recon << ", kl=" << r.kl << "); parameter norms:";
    for (std::size_t i = 0; i < ps.size(); ++i) msg << ' ' << ps.name(i) << '=' << std::sqrt(ps.matrix(i).squared_norm());
    msg << " total=" << param_norm(ps);
    throw TrainingError(msg.str());
}

bool grads_finite(const GradMap& g) {
    return std::all_of(g.begin(), g.end(), [](const auto& kv) { return kv.second.all_finite(); });
}

template <typename Model>
TrainResult run(ModelKind kind, Model model, const data::Dataset& ds, const TrainConfig& cfg) {
    const auto start = Clock::now();
    auto [train_ids, eval_ids] = split_ids(ds.trajectories.size(), cfg.eval_fraction, cfg.seed);
    const auto train_windows = data::window_dataset(ds, train_ids, cfg.history, cfg.horizon, cfg.stride);
    const auto eval_windows = data::window_dataset(ds, eval_ids, cfg.history, cfg.horizon, cfg.stride);
    if (train_windows.empty()) {
        throw ContractError("train: no windows (H + n exceeds trajectory length?)");
    }
    fit_scalers(ds, train_ids, train_windows, model.window_scaler, model.anchor_scaler);

    const EvalBatch train_eval = make_eval_batch(train_windows, cfg.horizon);
    const EvalBatch held_out = make_eval_batch(eval_windows, cfg.horizon);

    AdamConfig adam;
    adam.learning_rate = cfg.learning_rate;
    AdamState state = AdamState::init(model.params, adam);
    Rng rng(child_seed(cfg.seed, 0x7a41ULL));

    TrainReport report;
    report.kind = kind;

    auto record = [&](std::size_t epoch, double pred, double recon, double kl) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_pred = pred;
        rec.train_recon = recon;
        rec.train_kl = kl;
        rec.eval_pred = eval_pred(model, held_out);
        if constexpr (std::is_same_v<Model, models::FsqModel>) rec.code_usage = usage(model, train_eval);
        rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
        report.epochs.push_back(std::move(rec));
    };

    // Epoch 0: untrained model, prediction loss only.
    record(0, eval_pred(model, train_eval), 0.0, 0.0);
    ParamSet best = model.params;
    report.best_epoch = 0;
    report.best_eval_pred = report.epochs.back().eval_pred;

    std::vector<std::size_t> order(train_windows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double sum_pred = 0.0, sum_recon = 0.0, sum_kl = 0.0;
        std::size_t batch = 0;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch_size, ++batch) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - at);
            const std::span<const std::size_t> idx(order.data() + at, len);
            const Batch b = assemble_batch(ds, train_windows, idx, model.window_scaler, model.anchor_scaler,
                                           cfg.horizon, rng);
            StepResult r;
            if constexpr (std::is_same_v<Model, models::FsqModel>) {
                r = fsq_step_gradients(model, b, cfg.recon_weight);
            } else {
                r = vae_step_gradients(model, b, cfg.recon_weight, cfg.beta, rng);
            }
            if (!std::isfinite(r.total) || !grads_finite(r.grads)) abort_non_finite(epoch, batch, model.params, r);
            adam_step(model.params, r.grads, state);
            const auto w = static_cast<double>(len);
            sum_pred += r.pred * w;
            sum_recon += r.recon * w;
            sum_kl += r.kl * w;
        }
        const auto n = static_cast<double>(order.size());
        record(epoch, sum_pred / n, sum_recon / n, sum_kl / n);
        if (report.epochs.back().eval_pred < report.best_eval_pred) {
            report.best_eval_pred = report.epochs.back().eval_pred;
            report.best_epoch = epoch;
            best = model.params;
        }
    }
    report.trend_violations = trend_violations(report, 10, 0.0);
    if (report.trend_violations > 1) {
        std::clog << "train: moving-average loss rose in " << report.trend_violations << " epochs\n";
    }

    model.params = std::move(best);
    TrainResult out;
    out.report = std::move(report);
    out.checkpoint.model = std::move(model);
    out.checkpoint.meta = {{"env", tomfield::to_json(ds.env)},
                           {"train", to_json(cfg)},
                           {"model_kind", std::string(to_string(kind))},
                           {"eval_ids", eval_ids},
                           {"best_epoch", out.report.best_epoch},
                           {"best_eval_pred", out.report.best_eval_pred},
                           {"dataset_hash", data::content_hash(data::serialize(ds))}};
    return out;
}

}  // namespace

TrainResult train(ModelKind kind, const data::Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.history + cfg.horizon > static_cast<std::size_t>(ds.env.horizon)) {
        throw ContractError("train: H + n = " + std::to_string(cfg.history + cfg.horizon) +
                            " exceeds trajectory length " + std::to_string(ds.env.horizon));
    }
    const std::uint64_t init_seed = child_seed(cfg.seed, 0x1417ULL);
    if (kind == ModelKind::fsq) {
        return run(kind, models::make_fsq(cfg.quantizer, cfg.history, cfg.horizon, cfg.arch, init_seed), ds, cfg);
    }
    return run(kind,
               models::make_vae(static_cast<std::size_t>(cfg.quantizer.channels), cfg.history, cfg.horizon, cfg.beta,
                                cfg.arch, init_seed),
               ds, cfg);
}

std::size_t trend_violations(const TrainReport& report, std::size_t window, double rel_tol) {
    std::vector<double> total;
    for (const auto& e : report.epochs) {
        if (e.epoch == 0) continue;
        total.push_back(e.train_pred + e.train_recon + e.train_kl);
    }
    if (total.size() <= window) return 0;
    std::size_t violations = 0;
    double prev = std::accumulate(total.begin(), total.begin() + static_cast<std::ptrdiff_t>(window), 0.0) /
                  static_cast<double>(window);
    for (std::size_t i = window; i < total.size(); ++i) {
        const double cur = prev + (total[i] - total[i - window]) / static_cast<double>(window);
        if (cur > prev * (1.0 + rel_tol)) ++violations;
        prev = cur;
    }
    return violations;
}

void write_report_csv(const TrainReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.precision(17);
    out << "epoch,train_pred,train_recon,train_kl,eval_pred,codes_used,code_usage,wall_ms\n";
    for (const auto& e : report.epochs) {
        out << e.epoch << ',' << e.train_pred << ',' << e.train_recon << ',' << e.train_kl << ',' << e.eval_pred
            << ',' << e.code_usage.size() << ',';
        bool first = true;
        for (const auto& [code, count] : e.code_usage) {
            out << (first ? "" : ";") << code << ':' << count;
            first = false;
        }
        out << ',' << e.wall_ms << '\n';
    }
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace tomfield::training
