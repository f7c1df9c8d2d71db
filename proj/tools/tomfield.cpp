// tomfield command-line entry point.
//
// Exit codes: 0 ok, 1 I/O or unreadable input, 2 usage or configuration error,
// 3 comparison ran but fsq was not better, 4 degenerate statistics.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tomfield/analysis.hpp"
#include "tomfield/config.hpp"
#include "tomfield/dataset.hpp"
#include "tomfield/json_io.hpp"
#include "tomfield/models.hpp"
#include "tomfield/training.hpp"

namespace fs = std::filesystem;
using namespace tomfield;
using config::ConfigError;
using config::RunConfig;

namespace {

enum Exit : int { kOk = 0, kIo = 1, kUsage = 2, kGate = 3, kDegenerate = 4 };

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Flags recorded at setup and applied after the config file, only when given.
class Overrides {
public:
    template <class T>
    CLI::Option* add(CLI::App* app, const std::string& name, T fallback, const std::string& help,
                     std::function<void(RunConfig&, const T&)> set) {
        auto value = std::make_shared<T>(fallback);
        CLI::Option* opt = app->add_option(name, *value, help)->capture_default_str();
        appliers_.push_back([opt, value, set](RunConfig& c) {
            if (opt->count() > 0) set(c, *value);
        });
        return opt;
    }

    void apply(RunConfig& c) const {
        for (const auto& f : appliers_) f(c);
        c.sync();
    }

private:
    std::vector<std::function<void(RunConfig&)>> appliers_;
};

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

struct Common {
    std::string config_path;
    Overrides flags;
};

void add_common(CLI::App* app, Common& c, const RunConfig& d) {
    app->add_option("--config", c.config_path, "INI config file (defaults < file < flags)");
    c.flags.add<std::uint64_t>(app, "--seed", d.seed, "Seed (falls back to $TOMFIELD_SEED)",
                               [](RunConfig& r, const std::uint64_t& v) { r.seed = v; });
}

/// Defaults for `kind`, then $TOMFIELD_SEED, then the config file, then flags.
RunConfig resolve(envs::EnvKind kind, const Common& c) {
    std::string text;
    if (!c.config_path.empty()) text = read_text(c.config_path);
    if (auto file_kind = config::ini_env_kind(text); file_kind && *file_kind != kind) {
        throw ConfigError("config: file names environment '" + std::string(envs::to_string(*file_kind)) +
                          "' but the run uses '" + std::string(envs::to_string(kind)) + "'");
    }
    RunConfig cfg = RunConfig::defaults(kind);
    if (auto seed = config::seed_from_environment()) cfg.seed = *seed;
    cfg.sync();
    cfg = config::apply_ini(cfg, text);
    c.flags.apply(cfg);
    cfg.validate();
    return cfg;
}

envs::EnvKind kind_for_file(const std::string& config_path, std::optional<envs::EnvKind> flag) {
    if (flag) return *flag;
    if (!config_path.empty()) {
        if (auto k = config::ini_env_kind(read_text(config_path))) return *k;
    }
    return envs::EnvKind::highway;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

data::Dataset load_dataset(const std::string& path) {
    if (path.empty()) throw UsageError("--data is required");
    if (!fs::exists(path)) throw IoError("dataset not found: '" + path + "'");
    return data::load(path);
}

models::Checkpoint load_model(const std::string& path, const char* flag) {
    if (path.empty()) throw UsageError(std::string(flag) + " is required");
    if (!fs::exists(path)) throw IoError("checkpoint not found: '" + path + "'");
    return models::load_checkpoint(path);
}

envs::EnvKind checkpoint_env(const models::Checkpoint& ck) {
    if (!ck.meta.contains("env")) throw ConfigError("checkpoint has no environment metadata");
    return env_config_from_json(ck.meta.at("env")).kind;
}

void check_same_env(const models::Checkpoint& ck, const data::Dataset& ds, const std::string& what) {
    const auto k = checkpoint_env(ck);
    if (k != ds.env.kind) {
        throw ConfigError(what + " was trained on '" + std::string(envs::to_string(k)) + "' but the dataset is '" +
                          std::string(envs::to_string(ds.env.kind)) + "'");
    }
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
}

// ---- gen-data -----------------------------------------------------------------

struct GenArgs {
    Common common;
    std::string env;
    std::string out = "data.jsonl";
};

int cmd_gen_data(const GenArgs& a) {
    std::optional<envs::EnvKind> flag_kind;
    if (!a.env.empty()) flag_kind = envs::env_kind_from_string(a.env);
    RunConfig cfg = resolve(kind_for_file(a.common.config_path, flag_kind), a.common);
    cfg.paths.out = a.out;

    const data::Dataset ds = data::generate_dataset(cfg.env, cfg.trajectories, cfg.seed);
    const std::string bytes = data::serialize(ds);
    const fs::path out(a.out);
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    {
        std::ofstream f(out, std::ios::binary);
        if (!f) throw IoError("cannot open '" + out.string() + "' for writing");
        f << bytes;
        if (!f) throw IoError("write failed for '" + out.string() + "'");
    }
    config::write_effective_config(cfg, fs::path(out).concat(".config.ini"));

    std::vector<std::size_t> counts(static_cast<std::size_t>(ds.env.label_count()), 0);
    for (const auto& t : ds.trajectories) ++counts.at(static_cast<std::size_t>(t.robot_label.value));
    std::cout << "N=" << ds.trajectories.size() << " labels:";
    for (std::size_t i = 0; i < counts.size(); ++i) {
        std::cout << ' ' << ds.env.label_name({static_cast<int>(i)}) << '=' << counts[i];
    }
    std::cout << " hash=" << data::content_hash(bytes) << " out=" << out.string() << '\n';
    return kOk;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
    Common common;
    std::string model;
    std::string data;
    std::string out = "run";
    bool progress = false;
};

int cmd_train(const TrainArgs& a) {
    const auto kind = training::model_kind_from_string(a.model);
    const data::Dataset ds = load_dataset(a.data);
    RunConfig cfg = resolve(ds.env.kind, a.common);
    cfg.env = ds.env;
    cfg.paths.data = a.data;
    cfg.paths.out = a.out;
    if (cfg.train.history + cfg.train.horizon > static_cast<std::size_t>(ds.env.horizon)) {
        throw ConfigError("windowing impossible: H + n = " + std::to_string(cfg.train.history + cfg.train.horizon) +
                          " exceeds trajectory length T = " + std::to_string(ds.env.horizon));
    }

    const auto result = training::train(kind, ds, cfg.train);
    const std::string name(training::to_string(kind));
    const fs::path dir(a.out);
    ensure_dir(dir);
    const fs::path ck = dir / (name + ".ckpt");
    models::save(result.checkpoint, ck);
    training::write_report_csv(result.report, dir / (name + "_report.csv"));
    config::write_effective_config(cfg, dir / (name + ".config.ini"));

    if (a.progress) {
        for (const auto& e : result.report.epochs) {
            std::cerr << "epoch " << e.epoch << " train_pred " << fmt(e.train_pred) << " eval_pred "
                      << fmt(e.eval_pred) << '\n';
        }
    }
    if (result.report.trend_violations > 0) {
        std::cerr << "note: 10-epoch moving average of the training loss rose in " << result.report.trend_violations
                  << " epochs\n";
    }
    std::cout << "best epoch " << result.report.best_epoch << " eval prediction loss "
              << fmt(result.report.best_eval_pred) << '\n';
    std::cout << "checkpoint " << ck.string() << '\n';
    return kOk;
}

// ---- field --------------------------------------------------------------------

struct FieldArgs {
    Common common;
    std::string checkpoint;
    std::string data;
    std::string out = "fields";
    std::vector<std::uint64_t> codes;
};

int cmd_field(const FieldArgs& a) {
    const models::Checkpoint ck = load_model(a.checkpoint, "--checkpoint");
    if (!ck.is_fsq()) throw UsageError("field export needs an fsq checkpoint");
    const data::Dataset ds = load_dataset(a.data);
    check_same_env(ck, ds, "checkpoint");
    RunConfig cfg = resolve(ds.env.kind, a.common);
    cfg.env = ds.env;
    cfg.paths.checkpoint = a.checkpoint;
    cfg.paths.data = a.data;
    cfg.paths.out = a.out;

    const models::FsqModel& m = ck.fsq();
    const std::uint64_t size = m.quantizer.codebook_size();
    std::vector<std::uint64_t> codes = a.codes;
    for (std::uint64_t c : codes) {
        if (c >= size) {
            throw UsageError("code " + std::to_string(c) + " out of range: codebook has " + std::to_string(size) +
                             " codes");
        }
    }
    if (codes.empty()) {
        const auto hist = analysis::latent_histogram(m, ds, m.history, m.horizon);
        std::size_t total = 0;
        for (const auto& [c, n] : hist) total += n;
        for (const auto& [c, n] : hist) {
            if (total > 0 && static_cast<double>(n) >= cfg.field.usage_threshold * static_cast<double>(total)) {
                codes.push_back(c);
            }
        }
    }

    analysis::GridSpec grid = analysis::default_grid(ds.env);
    if (cfg.field.nx > 0) {
        grid.nx = cfg.field.nx;
        grid.ny = cfg.field.ny;
    }
    const envs::Vec2 human = analysis::mean_human_position(ds);
    const fs::path dir(a.out);
    ensure_dir(dir);
    for (std::uint64_t c : codes) {
        const auto field = analysis::extract_vector_field(m, fsq::code_from_index(c, m.quantizer), grid, human);
        const std::string stem = "field_code" + std::to_string(c);
        analysis::export_field_csv(field, dir / (stem + ".csv"));
        analysis::export_field_svg(field, ds.env, dir / (stem + ".svg"));
        std::cout << "code " << c << " -> " << (dir / (stem + ".csv")).string() << ", "
                  << (dir / (stem + ".svg")).string() << '\n';
    }
    config::write_effective_config(cfg, dir / "field.config.ini");
    std::cout << codes.size() << " field(s) exported\n";
    return kOk;
}

// ---- compare ------------------------------------------------------------------

struct CompareArgs {
    Common common;
    std::string fsq;
    std::string vae;
    std::string data;
    std::string out = "compare";
    double alpha = 0.05;
};

int cmd_compare(const CompareArgs& a) {
    const models::Checkpoint fk = load_model(a.fsq, "--fsq");
    const models::Checkpoint vk = load_model(a.vae, "--vae");
    if (!fk.is_fsq()) throw UsageError("--fsq must name an fsq checkpoint");
    if (vk.is_fsq()) throw UsageError("--vae must name a vae checkpoint");
    if (checkpoint_env(fk) != checkpoint_env(vk)) throw ConfigError("checkpoints come from different environments");
    const data::Dataset ds = load_dataset(a.data);
    check_same_env(fk, ds, "fsq checkpoint");
    check_same_env(vk, ds, "vae checkpoint");
    const std::string hash = data::content_hash(data::serialize(ds));
    for (const auto* ck : {&fk, &vk}) {
        if (ck->meta.value("dataset_hash", hash) != hash) {
            throw ConfigError("a checkpoint was trained on a different dataset; held-out ids would not apply");
        }
    }

    RunConfig cfg = resolve(ds.env.kind, a.common);
    cfg.env = ds.env;
    cfg.paths.data = a.data;
    cfg.paths.fsq = a.fsq;
    cfg.paths.vae = a.vae;
    cfg.paths.out = a.out;
    const auto& fm = fk.fsq();
    const auto& vm = vk.vae();
    if (fm.history != vm.history || fm.horizon != vm.horizon) throw ConfigError("models differ in H or n");
    cfg.train.history = fm.history;
    cfg.train.horizon = fm.horizon;
    cfg.sync();
    cfg.validate();
    if (cfg.compare.max_segment > fm.history) {
        throw ConfigError("compare: max_segment " + std::to_string(cfg.compare.max_segment) +
                          " exceeds the models' window length H = " + std::to_string(fm.history));
    }

    auto ids = [](const models::Checkpoint& ck) {
        return ck.meta.contains("eval_ids") ? ck.meta.at("eval_ids").get<std::vector<std::size_t>>()
                                            : std::vector<std::size_t>{};
    };
    const auto fa = ids(fk);
    const auto va = ids(vk);
    std::vector<std::size_t> held;
    std::set_intersection(fa.begin(), fa.end(), va.begin(), va.end(), std::back_inserter(held));
    if (held.empty()) throw ConfigError("no trajectory is held out from both models");

    const auto report = analysis::compare(analysis::fsq_predictor(fm), analysis::vae_predictor(vm), ds, held,
                                          cfg.oracle(), cfg.compare);
    const fs::path dir(a.out);
    ensure_dir(dir);
    analysis::write_comparison_csv(report, dir / "comparison.csv");
    config::write_effective_config(cfg, dir / "compare.config.ini");

    std::size_t per_method = 0;
    for (const auto& s : report.samples) per_method += s.error_a.has_value();
    std::cout << "trials " << report.trial_mean_a.size() << ", samples per method " << per_method << '\n';
    std::cout << "mean alignment error fsq " << fmt(report.mean_a) << '\n';
    std::cout << "mean alignment error vae " << fmt(report.mean_b) << '\n';
    if (report.degenerate || !report.test) {
        std::cout << "degenerate test: per-trial differences have zero variance, t and p are undefined\n";
        return kDegenerate;
    }
    std::cout << "paired t-test t " << fmt(report.test->t) << " p " << fmt(report.test->p) << '\n';
    const bool better = report.mean_a < report.mean_b && report.test->p < a.alpha;
    std::cout << (better ? "fsq better" : "fsq not better") << " (alpha " << fmt(a.alpha) << ")\n";
    return better ? kOk : kGate;
}

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (const VersionError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trajectory latent-behaviour models: data generation, training, vector fields, comparison"};
    app.require_subcommand(1);
    app.footer("Exit codes: 0 ok, 1 I/O, 2 usage/config, 3 fsq not better, 4 degenerate statistics.");
    const RunConfig hw = RunConfig::defaults(envs::EnvKind::highway);

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "Generate a dataset of scripted rollouts");
    g->add_option("--env", gen.env, "Environment: highway or obstacle (default highway)")
        ->check(CLI::IsMember({"highway", "obstacle"}));
    gen.common.flags.add<std::size_t>(g, "--n", hw.trajectories, "Number of trajectories",
                                      [](RunConfig& c, const std::size_t& v) {
                                          if (v < 1) throw UsageError("--n must be at least 1");
                                          c.trajectories = v;
                                      });
    g->add_option("--out", gen.out, "Output dataset path")->capture_default_str();
    add_common(g, gen.common, hw);

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train an fsq or vae model on a dataset");
    t->add_option("--model", tr.model, "Model kind")->required()->check(CLI::IsMember({"fsq", "vae"}));
    t->add_option("--data", tr.data, "Dataset path")->required();
    t->add_option("--out", tr.out, "Output directory")->capture_default_str();
    t->add_flag("--progress", tr.progress, "Print per-epoch losses to stderr");
    auto& tf = tr.common.flags;
    tf.add<std::size_t>(t, "--epochs", hw.train.epochs, "Epochs", [](RunConfig& c, const std::size_t& v) { c.train.epochs = v; });
    tf.add<std::size_t>(t, "--batch-size", hw.train.batch_size, "Mini-batch size",
                        [](RunConfig& c, const std::size_t& v) { c.train.batch_size = v; });
    tf.add<double>(t, "--lr", hw.train.learning_rate, "Adam learning rate",
                   [](RunConfig& c, const double& v) { c.train.learning_rate = v; });
    tf.add<double>(t, "--recon-weight", hw.train.recon_weight, "Weight on the reconstruction loss",
                   [](RunConfig& c, const double& v) { c.train.recon_weight = v; });
    tf.add<double>(t, "--beta", hw.train.beta, "VAE KL weight", [](RunConfig& c, const double& v) { c.train.beta = v; });
    tf.add<std::size_t>(t, "--history", hw.train.history, "Window length H",
                        [](RunConfig& c, const std::size_t& v) { c.train.history = v; });
    tf.add<std::size_t>(t, "--horizon", hw.train.horizon, "Prediction horizon n",
                        [](RunConfig& c, const std::size_t& v) { c.train.horizon = v; });
    tf.add<double>(t, "--eval-fraction", hw.train.eval_fraction, "Held-out trajectory fraction",
                   [](RunConfig& c, const double& v) { c.train.eval_fraction = v; });
    tf.add<int>(t, "--d", hw.train.quantizer.channels, "Latent channels (obstacle default 2)",
                [](RunConfig& c, const int& v) { c.train.quantizer.channels = v; });
    tf.add<int>(t, "--L", hw.train.quantizer.levels, "Levels per channel (obstacle default 3)",
                [](RunConfig& c, const int& v) { c.train.quantizer.levels = v; });
    add_common(t, tr.common, hw);

    FieldArgs fa;
    auto* f = app.add_subcommand("field", "Export per-code vector fields as CSV and SVG");
    f->add_option("--checkpoint", fa.checkpoint, "fsq checkpoint")->required();
    f->add_option("--data", fa.data, "Dataset the model was trained on")->required();
    f->add_option("--out", fa.out, "Output directory")->capture_default_str();
    f->add_option("--codes", fa.codes, "Code indices (default: codes with usage >= threshold)");
    fa.common.flags.add<double>(f, "--threshold", hw.field.usage_threshold, "Usage fraction for default codes",
                                [](RunConfig& c, const double& v) { c.field.usage_threshold = v; });
    fa.common.flags.add<std::size_t>(f, "--nx", hw.field.nx, "Grid columns (0 = environment default)",
                                     [](RunConfig& c, const std::size_t& v) { c.field.nx = v; });
    fa.common.flags.add<std::size_t>(f, "--ny", hw.field.ny, "Grid rows (0 = environment default)",
                                     [](RunConfig& c, const std::size_t& v) { c.field.ny = v; });
    add_common(f, fa.common, hw);

    CompareArgs ca;
    auto* c = app.add_subcommand("compare", "Compare fsq and vae against the coarse-prediction oracle");
    c->add_option("--fsq", ca.fsq, "fsq checkpoint")->required();
    c->add_option("--vae", ca.vae, "vae checkpoint")->required();
    c->add_option("--data", ca.data, "Dataset both models were trained on")->required();
    c->add_option("--out", ca.out, "Output directory")->capture_default_str();
    c->add_option("--alpha", ca.alpha, "Significance level for the exit-code gate")->capture_default_str();
    auto& cf = ca.common.flags;
    cf.add<std::size_t>(c, "--trials", hw.compare.trials, "Trials", [](RunConfig& r, const std::size_t& v) { r.compare.trials = v; });
    cf.add<std::size_t>(c, "--starts", hw.compare.starts, "Start states per trial",
                        [](RunConfig& r, const std::size_t& v) { r.compare.starts = v; });
    cf.add<std::size_t>(c, "--min-segment", hw.compare.min_segment, "Shortest observed segment",
                        [](RunConfig& r, const std::size_t& v) { r.compare.min_segment = v; });
    cf.add<std::size_t>(c, "--max-segment", hw.compare.max_segment, "Longest observed segment",
                        [](RunConfig& r, const std::size_t& v) { r.compare.max_segment = v; });
    cf.add<double>(c, "--dead-band", hw.oracle_dead_band, "Oracle lateral dead band (highway)",
                   [](RunConfig& r, const double& v) { r.oracle_dead_band = v; });
    add_common(c, ca.common, hw);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    if (g->parsed()) return guarded([&] { return cmd_gen_data(gen); });
    if (t->parsed()) return guarded([&] { return cmd_train(tr); });
    if (f->parsed()) return guarded([&] { return cmd_field(fa); });
    return guarded([&] { return cmd_compare(ca); });
}
