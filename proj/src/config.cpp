#include "tomfield/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "tomfield/errors.hpp"

namespace tomfield::config {

namespace {

namespace pt = boost::property_tree;
using envs::Vec2;

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& raw) {
    const std::string s = trim(raw);
    T v{};
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || s.empty()) {
        throw ConfigError("config: bad value '" + raw + "' for " + key);
    }
    return v;
}

std::vector<double> parse_doubles(const std::string& key, const std::string& raw) {
    std::vector<double> out;
    std::istringstream in(raw);
    std::string tok;
    while (in >> tok) out.push_back(parse_number<double>(key, tok));
    return out;
}

std::vector<std::vector<double>> parse_groups(const std::string& key, const std::string& raw, std::size_t width) {
    std::vector<std::vector<double>> out;
    std::istringstream in(raw);
    std::string group;
    while (std::getline(in, group, ',')) {
        if (trim(group).empty()) continue;
        auto v = parse_doubles(key, group);
        if (v.size() != width) {
            throw ConfigError("config: " + key + " expects groups of " + std::to_string(width) + " numbers");
        }
        out.push_back(std::move(v));
    }
    return out;
}

std::string join(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v[i]);
    return s;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
    return s;
}

struct Entry {
    std::string section;
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

std::vector<Entry> entries(RunConfig& c) {
    std::vector<Entry> e;
    auto real = [&e](std::string sec, std::string key, double& ref) {
        const std::string name = sec + "." + key;
        e.push_back({sec, key, [&ref] { return fmt(ref); }, [&ref, name](const std::string& v) { ref = parse_number<double>(name, v); }});
    };
    auto integer = [&e](std::string sec, std::string key, auto& ref) {
        using T = std::remove_reference_t<decltype(ref)>;
        const std::string name = sec + "." + key;
        e.push_back({sec, key, [&ref] { return std::to_string(ref); }, [&ref, name](const std::string& v) { ref = parse_number<T>(name, v); }});
    };
    auto text = [&e](std::string sec, std::string key, std::string& ref) {
        e.push_back({sec, key, [&ref] { return ref; }, [&ref](const std::string& v) { ref = trim(v); }});
    };
    auto point = [&e](std::string sec, std::string key, Vec2& ref) {
        const std::string name = sec + "." + key;
        e.push_back({sec, key, [&ref] { return fmt(ref.x) + " " + fmt(ref.y); },
                     [&ref, name](const std::string& v) {
                         const auto g = parse_doubles(name, v);
                         if (g.size() != 2) throw ConfigError("config: " + name + " expects 2 numbers");
                         ref = {g[0], g[1]};
                     }});
    };
    auto sizes = [&e](std::string sec, std::string key, std::vector<std::size_t>& ref) {
        const std::string name = sec + "." + key;
        e.push_back({sec, key, [&ref] { return join_sizes(ref); },
                     [&ref, name](const std::string& v) {
                         ref.clear();
                         std::istringstream in(v);
                         std::string tok;
                         while (in >> tok) ref.push_back(parse_number<std::size_t>(name, tok));
                     }});
    };

    e.push_back({"run", "env", [&c] { return std::string(envs::to_string(c.env.kind)); },
                 [&c](const std::string& v) {
                     try {
                         c.env.kind = envs::env_kind_from_string(trim(v));
                     } catch (const std::exception&) {
                         throw ConfigError("config: unknown environment '" + trim(v) + "'");
                     }
                 }});
    integer("run", "seed", c.seed);

    point("env", "world_min", c.env.world_min);
    point("env", "world_max", c.env.world_max);
    integer("env", "horizon", c.env.horizon);
    real("env", "max_speed", c.env.max_speed);
    real("env", "noise", c.env.noise);
    e.push_back({"env", "lane_centers", [&c] { return join(c.env.lane_centers); },
                 [&c](const std::string& v) { c.env.lane_centers = parse_doubles("env.lane_centers", v); }});
    integer("env", "robot_lane", c.env.robot_lane);
    integer("env", "human_lane", c.env.human_lane);
    real("env", "forward_speed", c.env.forward_speed);
    real("env", "lateral_gain", c.env.lateral_gain);
    real("env", "max_lateral_speed", c.env.max_lateral_speed);
    real("env", "start_x_spread", c.env.start_x_spread);
    real("env", "start_y_spread", c.env.start_y_spread);
    real("env", "human_x_offset", c.env.human_x_offset);
    e.push_back({"env", "goals",
                 [&c] {
                     std::string s;
                     for (std::size_t i = 0; i < c.env.goals.size(); ++i) {
                         s += (i ? ", " : "") + fmt(c.env.goals[i].x) + " " + fmt(c.env.goals[i].y);
                     }
                     return s;
                 },
                 [&c](const std::string& v) {
                     c.env.goals.clear();
                     for (const auto& g : parse_groups("env.goals", v, 2)) c.env.goals.push_back({g[0], g[1]});
                 }});
    e.push_back({"env", "obstacles",
                 [&c] {
                     std::string s;
                     for (std::size_t i = 0; i < c.env.obstacles.size(); ++i) {
                         const auto& d = c.env.obstacles[i];
                         s += (i ? ", " : "") + fmt(d.center.x) + " " + fmt(d.center.y) + " " + fmt(d.radius);
                     }
                     return s;
                 },
                 [&c](const std::string& v) {
                     c.env.obstacles.clear();
                     for (const auto& g : parse_groups("env.obstacles", v, 3)) c.env.obstacles.push_back({{g[0], g[1]}, g[2]});
                 }});
    real("env", "goal_speed", c.env.goal_speed);
    real("env", "influence_radius", c.env.influence_radius);
    real("env", "repulsion_gain", c.env.repulsion_gain);
    real("env", "tie_break_offset", c.env.tie_break_offset);
    real("env", "start_margin", c.env.start_margin);

    integer("data", "trajectories", c.trajectories);

    integer("train", "epochs", c.train.epochs);
    integer("train", "batch_size", c.train.batch_size);
    real("train", "learning_rate", c.train.learning_rate);
    real("train", "recon_weight", c.train.recon_weight);
    real("train", "beta", c.train.beta);
    integer("train", "history", c.train.history);
    integer("train", "horizon", c.train.horizon);
    integer("train", "stride", c.train.stride);
    real("train", "eval_fraction", c.train.eval_fraction);
    sizes("train", "encoder_hidden", c.train.arch.encoder_hidden);
    sizes("train", "decoder_hidden", c.train.arch.decoder_hidden);

    integer("quantizer", "d", c.train.quantizer.channels);
    integer("quantizer", "L", c.train.quantizer.levels);

    real("oracle", "dead_band", c.oracle_dead_band);

    integer("compare", "trials", c.compare.trials);
    integer("compare", "starts", c.compare.starts);
    integer("compare", "min_segment", c.compare.min_segment);
    integer("compare", "max_segment", c.compare.max_segment);

    real("field", "threshold", c.field.usage_threshold);
    integer("field", "nx", c.field.nx);
    integer("field", "ny", c.field.ny);

    text("paths", "data", c.paths.data);
    text("paths", "out", c.paths.out);
    text("paths", "checkpoint", c.paths.checkpoint);
    text("paths", "fsq", c.paths.fsq);
    text("paths", "vae", c.paths.vae);
    return e;
}

pt::ptree read_tree(const std::string& text) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("config: line " + std::to_string(e.line()) + ": " + e.message());
    }
    return tree;
}

}  // namespace

RunConfig RunConfig::defaults(envs::EnvKind kind) {
    RunConfig c;
    c.env = envs::EnvConfig::defaults(kind);
    c.train.quantizer = kind == envs::EnvKind::highway ? fsq::QuantizerConfig{3, 2} : fsq::QuantizerConfig{2, 3};
    c.oracle_dead_band = analysis::OracleConfig::for_env(c.env, c.train.horizon).lateral_dead_band;
    c.sync();
    return c;
}

void RunConfig::sync() {
    train.seed = seed;
    compare.seed = seed;
    compare.history = train.history;
}

void RunConfig::validate() const {
    try {
        env.validate();
        train.validate();
        train.quantizer.validate();
    } catch (const std::logic_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (trajectories < 1) throw ConfigError("config: data.trajectories must be >= 1");
    if (compare.trials < 1 || compare.starts < 1) throw ConfigError("config: compare.trials and starts must be >= 1");
    if (compare.min_segment < 2 || compare.min_segment > compare.max_segment) {
        throw ConfigError("config: compare segments must satisfy 2 <= min_segment <= max_segment");
    }
    if (!(field.usage_threshold >= 0.0 && field.usage_threshold <= 1.0)) {
        throw ConfigError("config: field.threshold must lie in [0, 1]");
    }
    if ((field.nx == 0) != (field.ny == 0)) throw ConfigError("config: field.nx and field.ny must be set together");
    if (oracle_dead_band < 0.0) throw ConfigError("config: oracle.dead_band must be non-negative");
}

analysis::OracleConfig RunConfig::oracle() const {
    auto o = analysis::OracleConfig::for_env(env, train.horizon);
    o.lateral_dead_band = oracle_dead_band;
    return o;
}

RunConfig apply_ini(RunConfig base, const std::string& text) {
    const pt::ptree tree = read_tree(text);
    auto table = entries(base);
    std::set<std::string> sections;
    for (const auto& e : table) sections.insert(e.section);
    for (const auto& [section, body] : tree) {
        if (!body.data().empty()) throw ConfigError("config: key '" + section + "' outside any section");
        if (!sections.count(section)) throw ConfigError("config: unknown section [" + section + "]");
        for (const auto& [key, value] : body) {
            auto it = std::find_if(table.begin(), table.end(),
                                   [&](const Entry& e) { return e.section == section && e.key == key; });
            if (it == table.end()) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
            it->set(value.data());
        }
    }
    base.sync();
    return base;
}

std::optional<envs::EnvKind> ini_env_kind(const std::string& text) {
    const auto v = read_tree(text).get_optional<std::string>("run.env");
    if (!v) return std::nullopt;
    try {
        return envs::env_kind_from_string(trim(*v));
    } catch (const std::exception&) {
        throw ConfigError("config: unknown environment '" + trim(*v) + "'");
    }
}

bool ini_sets(const std::string& text, const std::string& section, const std::string& key) {
    return read_tree(text).get_child_optional(section + "." + key).has_value();
}

std::string to_ini(const RunConfig& cfg) {
    RunConfig copy = cfg;
    std::ostringstream out;
    std::string section;
    for (const auto& e : entries(copy)) {
        if (e.section != section) {
            out << (section.empty() ? "" : "\n") << '[' << e.section << "]\n";
            section = e.section;
        }
        out << e.key << " = " << e.get() << '\n';
    }
    return out.str();
}

std::optional<std::uint64_t> seed_from_environment() {
    const char* v = std::getenv("TOMFIELD_SEED");
    if (v == nullptr || *v == '\0') return std::nullopt;
    return parse_number<std::uint64_t>("TOMFIELD_SEED", v);
}

void write_effective_config(const RunConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "; effective configuration\n" << to_ini(cfg);
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace tomfield::config
