// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Expect several minutes of training on one core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <algorithm>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>

#include "tomfield/analysis.hpp"
#include "tomfield/errors.hpp"
#include "tomfield/training.hpp"

using namespace tomfield;
using envs::Vec2;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool ok = false;
    std::string detail;
};

int failures = 0;

void run(int id, double limit_s, const std::function<Outcome()>& body) {
    const auto start = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    const bool in_time = secs < limit_s;
    const bool pass = o.ok && in_time;
    if (!pass) ++failures;
    std::printf("%s criterion %d: %s [%.1fs, limit %.0fs%s]\n", pass ? "PASS" : "FAIL", id, o.detail.c_str(), secs,
                limit_s, in_time ? "" : ", too slow");
    std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

data::Dataset make_dataset(envs::EnvKind kind) {
    return data::generate_dataset(envs::EnvConfig::defaults(kind), kind == envs::EnvKind::highway ? 300 : 400, 7);
}

training::TrainConfig train_config(envs::EnvKind kind) {
    training::TrainConfig c;
    c.epochs = 200;
    c.seed = 7;
    c.quantizer = kind == envs::EnvKind::highway ? fsq::QuantizerConfig{3, 2} : fsq::QuantizerConfig{2, 3};
    return c;
}

struct Trained {
    data::Dataset ds;
    models::Checkpoint fsq;
    std::optional<models::Checkpoint> vae;
};

Trained train_fsq(envs::EnvKind kind) {
    Trained t{make_dataset(kind), {}, std::nullopt};
    t.fsq = training::train(training::ModelKind::fsq, t.ds, train_config(kind)).checkpoint;
    return t;
}

std::map<std::uint64_t, double> usage(const models::FsqModel& m, const data::Dataset& ds) {
    const auto hist = analysis::latent_histogram(m, ds, m.history, m.horizon);
    double total = 0.0;
    for (const auto& [c, n] : hist) total += static_cast<double>(n);
    std::map<std::uint64_t, double> out;
    for (const auto& [c, n] : hist) out[c] = static_cast<double>(n) / total;
    return out;
}

std::string usage_text(const std::map<std::uint64_t, double>& u) {
    std::ostringstream s;
    for (const auto& [c, f] : u) s << " " << c << ":" << fmt("%.3f", f);
    return s.str();
}

Outcome codebook_closure() {
    const fsq::QuantizerConfig cfg{3, 2};
    if (fsq::codebook(cfg).size() != 8) return {false, "codebook size for d=3 L=2 is not 8"};
    Rng rng(101);
    for (int d : {2, 3}) {
        for (int L : {2, 3, 5}) {
            const fsq::QuantizerConfig q{d, L};
            const auto book = fsq::codebook(q);
            std::set<std::vector<double>> members;
            for (const auto& c : book) members.insert(c.q);
            for (int i = 0; i < 1000; ++i) {
                std::vector<double> z(static_cast<std::size_t>(d));
                for (double& v : z) v = rng.normal() * 3.0;
                const fsq::LatentCode c = fsq::quantize(z, q);
                if (!members.count(c.q)) return {false, "quantized code outside the codebook"};
                if (fsq::code_from_index(c.index, q) != c) return {false, "index round-trip failed"};
            }
        }
    }
    return {true, "codebook size 8, 6000 quantizations closed and round-tripped"};
}

Outcome straight_through() {
    const fsq::QuantizerConfig q{3, 3};
    Rng rng(102);
    for (int probe = 0; probe < 100; ++probe) {
        ParamSet ps;
        Matrix z(4, 3);
        for (double& v : z.values()) v = rng.normal() * 2.0;
        ps.add("z", z);
        Matrix up(4, 3);
        for (double& v : up.values()) v = rng.normal();
        Tape tape;
        const NodeId q_node = fsq::quantize_pass_through(tape, tape.param(ps, "z"), q);
        const NodeId loss = tape.sum(tape.mul(q_node, tape.constant(up)));
        const GradMap g = tape.backward(loss, ps);
        if (!(g.at("z") == up)) return {false, "pass-through gradient differs from upstream"};
    }

    const data::Dataset ds = data::generate_dataset(envs::EnvConfig::highway_default(), 40, 3);
    training::TrainConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 3;
    models::FsqModel m = models::make_fsq(cfg.quantizer, cfg.history, cfg.horizon, cfg.arch, cfg.seed);
    const auto [train_ids, eval_ids] = training::split_ids(ds.trajectories.size(), cfg.eval_fraction, cfg.seed);
    const auto windows = data::window_dataset(ds, train_ids, cfg.history, cfg.horizon);
    training::fit_scalers(ds, train_ids, windows, m.window_scaler, m.anchor_scaler);
    std::vector<std::size_t> order(std::min<std::size_t>(cfg.batch_size, windows.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng batch_rng(4);
    const training::Batch b =
        training::assemble_batch(ds, windows, order, m.window_scaler, m.anchor_scaler, cfg.horizon, batch_rng);
    const training::StepResult r = training::fsq_step_gradients(m, b, cfg.recon_weight);
    std::size_t enc = 0;
    for (const auto& [name, g] : r.grads) {
        if (name.rfind("enc.", 0) != 0) continue;
        ++enc;
        if (!(g.squared_norm() > 0.0)) return {false, "zero encoder gradient for " + name};
    }
    if (enc == 0) return {false, "no encoder parameters found"};
    return {true, "100 probes bitwise identity, first-step encoder gradients nonzero"};
}

Outcome gradient_checks() {
    const models::Architecture arch{{32, 32}, {32, 32}};
    Rng rng(103);
    auto random = [&](std::size_t r, std::size_t c) {
        Matrix m(r, c);
        for (double& v : m.values()) v = rng.normal();
        return m;
    };
    const models::FsqModel f = models::make_fsq({3, 2}, 7, 3, arch, 11);
    const models::VaeModel v = models::make_vae(3, 7, 3, 1.0, arch, 12);
    const Matrix windows = random(6, f.input_width());
    const Matrix anchors = random(6, data::kJointStateWidth);
    const Matrix latent = random(6, 3);
    const Matrix enc_target = random(6, 3);
    const Matrix dec_target = random(6, 6);

    const LossBuilder encoder = [&](Tape& t, const ParamSet& p) {
        models::FsqModel m = f;
        m.params = p;
        return t.mse(models::fsq_encoder_graph(t, m, windows), t.constant(enc_target));
    };
    const LossBuilder decoder = [&](Tape& t, const ParamSet& p) {
        return t.mse(models::decoder_graph(t, p, f.arch, t.constant(latent), anchors), t.constant(dec_target));
    };
    const LossBuilder heads = [&](Tape& t, const ParamSet& p) {
        models::VaeModel m = v;
        m.params = p;
        const models::VaeHeads h = models::vae_encoder_graph(t, m, windows);
        return t.add(t.add(t.mse(h.mean, t.constant(enc_target)), t.mse(h.logvar, t.constant(enc_target))),
                     models::kl_graph(t, h.mean, h.logvar));
    };

    const double e1 = grad_check(encoder, f.params, 200, 1e-5, 1);
    const double e2 = grad_check(decoder, f.params, 200, 1e-5, 2);
    const double e3 = grad_check(heads, v.params, 200, 1e-5, 3);
    const double worst = std::max({e1, e2, e3});
    return {worst <= 1e-4, fmt("max relative error encoder %.2e decoder %.2e vae heads %.2e", e1, e2, e3)};
}

Outcome highway_codes(const Trained& hw) {
    const models::FsqModel& m = hw.fsq.fsq();
    const auto u = usage(m, hw.ds);
    std::size_t used = 0;
    for (const auto& [c, f] : u) used += f >= 0.05;
    const double purity = analysis::cluster_purity(m, hw.ds);
    return {used >= 3 && purity >= 0.90,
            fmt("%.0f codes at >= 5%% usage, purity %.3f;", static_cast<double>(used), purity) + usage_text(u)};
}

Outcome highway_fields(const Trained& hw) {
    const models::FsqModel& m = hw.fsq.fsq();
    const auto& env = hw.ds.env;
    const double lane = env.lane_centers.at(static_cast<std::size_t>(env.robot_lane));
    const auto grid = analysis::default_grid(env);
    const Vec2 human = analysis::mean_human_position(hw.ds);
    std::string detail;
    bool ok = true;
    for (const envs::BehaviorLabel label : {envs::highway_label::merge_left, envs::highway_label::merge_right}) {
        const auto code = analysis::dominant_code(m, hw.ds, label);
        if (!code) return {false, "no dominant code for label " + std::to_string(label.value)};
        const auto field = analysis::extract_vector_field(m, fsq::code_from_index(*code, m.quantizer), grid, human);
        std::size_t cells = 0, good = 0;
        for (std::size_t i = 0; i < field.positions.size(); ++i) {
            if (std::abs(field.positions[i].y - lane) >= 0.5) continue;
            ++cells;
            const double ay = field.actions[i].y;
            good += label == envs::highway_label::merge_left ? ay > 0.0 : ay < 0.0;
        }
        const double frac = cells ? static_cast<double>(good) / static_cast<double>(cells) : 0.0;
        ok = ok && cells > 0 && frac >= 0.80;
        detail += fmt("label %.0f code %.0f correct sign %.3f; ", label.value, static_cast<double>(*code), frac);
    }
    return {ok, detail};
}

Outcome obstacle_fields(const Trained& ob) {
    const models::FsqModel& m = ob.fsq.fsq();
    const auto& env = ob.ds.env;
    const auto u = usage(m, ob.ds);
    std::size_t used = 0;
    for (const auto& [c, f] : u) used += f >= 0.05;
    std::string detail = fmt("%.0f codes at >= 5%% usage;", static_cast<double>(used)) + usage_text(u) + "; cosines";
    bool ok = used >= 4;
    const auto grid = analysis::default_grid(env);
    const Vec2 human = analysis::mean_human_position(ob.ds);
    for (int label = 0; label < env.label_count(); ++label) {
        const auto code = analysis::dominant_code(m, ob.ds, {label});
        if (!code) return {false, detail + " missing dominant code for label " + std::to_string(label)};
        const auto field = analysis::extract_vector_field(m, fsq::code_from_index(*code, m.quantizer), grid, human);
        double sum = 0.0;
        std::size_t cells = 0;
        for (std::size_t i = 0; i < field.positions.size(); ++i) {
            if (envs::in_any_obstacle(env, field.positions[i])) continue;
            const Vec2 to = env.goals.at(static_cast<std::size_t>(label)) - field.positions[i];
            const Vec2 a = field.actions[i];
            if (to.norm() < 1e-9 || a.norm() < 1e-12) {
                ++cells;
                continue;
            }
            sum += a.dot(to) / (a.norm() * to.norm());
            ++cells;
        }
        const double mean = cells ? sum / static_cast<double>(cells) : 0.0;
        ok = ok && mean >= 0.7;
        detail += fmt(" %.3f", mean);
    }
    return {ok, detail};
}

Outcome comparison(const std::vector<Trained*>& envs_in) {
    bool ok = true;
    std::string detail;
    for (const Trained* t : envs_in) {
        const models::FsqModel& f = t->fsq.fsq();
        const models::VaeModel& v = t->vae->vae();
        const auto fe = t->fsq.meta.at("eval_ids").get<std::vector<std::size_t>>();
        const auto ve = t->vae->meta.at("eval_ids").get<std::vector<std::size_t>>();
        std::vector<std::size_t> held;
        std::set_intersection(fe.begin(), fe.end(), ve.begin(), ve.end(), std::back_inserter(held));
        analysis::CompareConfig cc;
        cc.trials = 10;
        cc.starts = 5;
        cc.seed = 7;
        cc.history = f.history;
        const auto oc = analysis::OracleConfig::for_env(t->ds.env, f.horizon);
        const auto r = analysis::compare(analysis::fsq_predictor(f), analysis::vae_predictor(v), t->ds, held, oc, cc);
        const double p = r.test ? r.test->p : 1.0;
        const bool env_ok = r.test && r.mean_a < r.mean_b && p < 0.05;
        ok = ok && env_ok;
        detail += std::string(envs::to_string(t->ds.env.kind)) + fmt(": fsq %.4f vae %.4f p %.4g; ", r.mean_a, r.mean_b, p);
    }
    return {ok, detail};
}

Outcome determinism() {
    for (auto kind : {envs::EnvKind::highway, envs::EnvKind::obstacle}) {
        const data::Dataset a = make_dataset(kind);
        const data::Dataset b = make_dataset(kind);
        const std::string bytes = data::serialize(a);
        if (bytes != data::serialize(b)) return {false, "dataset bytes differ between runs"};
        if (data::serialize(data::parse(bytes)) != bytes) return {false, "dataset round-trip not exact"};
        for (const auto& traj : a.trajectories) {
            if (!data::replays_exactly(traj, a.env)) return {false, "trajectory failed replay"};
        }
        training::TrainConfig cfg = train_config(kind);
        cfg.epochs = 3;
        for (auto model : {training::ModelKind::fsq, training::ModelKind::vae}) {
            const std::string c1 = models::serialize(training::train(model, a, cfg).checkpoint);
            const std::string c2 = models::serialize(training::train(model, b, cfg).checkpoint);
            if (c1 != c2) return {false, "checkpoints differ between runs"};
            if (models::serialize(models::parse_checkpoint(c1)) != c1) return {false, "checkpoint round-trip not exact"};
        }
    }
    return {true, "datasets, checkpoints and round-trips identical; all trajectories replay"};
}

}  // namespace

int main() {
    run(1, 5, codebook_closure);
    run(2, 5, straight_through);
    run(3, 30, gradient_checks);

    Trained hw, ob;
    run(4, 600, [&] {
        hw = train_fsq(envs::EnvKind::highway);
        return highway_codes(hw);
    });
    run(5, 60, [&] { return highway_fields(hw); });
    run(6, 900, [&] {
        ob = train_fsq(envs::EnvKind::obstacle);
        return obstacle_fields(ob);
    });

    // Baseline training is not counted against the comparison budget.
    const auto vae_start = Clock::now();
    for (Trained* t : {&hw, &ob}) {
        try {
            t->vae = training::train(training::ModelKind::vae, t->ds, train_config(t->ds.env.kind)).checkpoint;
        } catch (const std::exception& e) {
            std::printf("baseline training failed: %s\n", e.what());
        }
    }
    std::printf("baseline training took %.1fs\n",
                std::chrono::duration<double>(Clock::now() - vae_start).count());
    run(7, 300, [&] {
        if (!hw.vae || !ob.vae) return Outcome{false, "baseline checkpoints missing"};
        return comparison({&hw, &ob});
    });
    run(8, 120, determinism);

    std::printf("%d of 8 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
