#include "doctest.h"
#include "support.hpp"

#include <cstdlib>
#include <fstream>

#include "tomfield/config.hpp"

using namespace tomfield;
using namespace tomfield::config;

namespace {

// Sets an environment variable for the lifetime of the guard.
class EnvGuard {
public:
    EnvGuard(const char* name, const char* value) : name_(name) {
        if (const char* old = std::getenv(name)) old_ = old;
        if (value) ::setenv(name, value, 1);
        else ::unsetenv(name);
    }
    ~EnvGuard() {
        if (old_) ::setenv(name_, old_->c_str(), 1);
        else ::unsetenv(name_);
    }

private:
    const char* name_;
    std::optional<std::string> old_;
};

}  // namespace

TEST_CASE("defaults per environment") {
    const RunConfig h = RunConfig::defaults(envs::EnvKind::highway);
    CHECK(h.train.quantizer == fsq::QuantizerConfig{3, 2});
    CHECK(h.trajectories == 2000);
    CHECK(h.train.history == 7);
    CHECK(h.train.horizon == 3);
    CHECK(h.train.batch_size == 64);
    CHECK(h.train.epochs == 200);
    CHECK(h.train.recon_weight == 1.0);
    CHECK(h.compare.trials == 10);
    CHECK(h.compare.starts == 5);
    CHECK_NOTHROW(h.validate());
    const RunConfig o = RunConfig::defaults(envs::EnvKind::obstacle);
    CHECK(o.train.quantizer == fsq::QuantizerConfig{2, 3});
    CHECK(o.env.kind == envs::EnvKind::obstacle);
    CHECK_NOTHROW(o.validate());
}

TEST_CASE("ini values override defaults") {
    const std::string text =
        "; comment line\n"
        "[run]\n"
        "seed = 42\n"
        "\n"
        "[env]\n"
        "lane_centers = 0 1\n"
        "robot_lane = 0\n"
        "human_lane = 1\n"
        "world_max = 50 1.5\n"
        "\n"
        "[train]\n"
        "epochs = 12\n"
        "learning_rate = 2.5e-4\n"
        "encoder_hidden = 32 16\n"
        "\n"
        "[quantizer]\n"
        "d = 4\n"
        "L = 5\n";
    const RunConfig c = apply_ini(RunConfig::defaults(envs::EnvKind::highway), text);
    CHECK(c.seed == 42);
    CHECK(c.train.seed == 42);
    CHECK(c.compare.seed == 42);
    CHECK(c.env.lane_centers == std::vector<double>{0.0, 1.0});
    CHECK(c.env.world_max == envs::Vec2{50.0, 1.5});
    CHECK(c.train.epochs == 12);
    CHECK(c.train.learning_rate == 2.5e-4);
    CHECK(c.train.arch.encoder_hidden == std::vector<std::size_t>{32, 16});
    CHECK(c.train.quantizer == fsq::QuantizerConfig{4, 5});
    CHECK(c.train.batch_size == 64);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("obstacle geometry parses") {
    const std::string text =
        "[env]\n"
        "goals = 0.1 0.1, 0.9 0.1, 0.9 0.9, 0.1 0.9\n"
        "obstacles = 0.5 0.5 0.2\n";
    const RunConfig c = apply_ini(RunConfig::defaults(envs::EnvKind::obstacle), text);
    REQUIRE(c.env.goals.size() == 4);
    CHECK(c.env.goals[1] == envs::Vec2{0.9, 0.1});
    REQUIRE(c.env.obstacles.size() == 1);
    CHECK(c.env.obstacles[0].radius == 0.2);
    CHECK_THROWS_AS(apply_ini(c, "[env]\ngoals = 0.1 0.1 0.3\n"), ConfigError);
}

TEST_CASE("unknown or malformed entries are rejected") {
    const RunConfig base = RunConfig::defaults(envs::EnvKind::highway);
    CHECK_THROWS_AS(apply_ini(base, "[train]\nepoch = 3\n"), ConfigError);
    CHECK_THROWS_AS(apply_ini(base, "[trainer]\nepochs = 3\n"), ConfigError);
    CHECK_THROWS_AS(apply_ini(base, "epochs = 3\n"), ConfigError);
    CHECK_THROWS_AS(apply_ini(base, "[train]\nepochs = three\n"), ConfigError);
    CHECK_THROWS_AS(apply_ini(base, "[run]\nenv = desert\n"), ConfigError);
    CHECK_THROWS_AS(apply_ini(base, "[train\n"), ConfigError);
    CHECK_NOTHROW(apply_ini(base, "[paths]\n"));
}

TEST_CASE("validation") {
    RunConfig c = RunConfig::defaults(envs::EnvKind::highway);
    c.compare.min_segment = 8;
    c.compare.max_segment = 6;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = RunConfig::defaults(envs::EnvKind::highway);
    c.field.nx = 10;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = RunConfig::defaults(envs::EnvKind::highway);
    c.train.eval_fraction = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = RunConfig::defaults(envs::EnvKind::highway);
    c.trajectories = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = RunConfig::defaults(envs::EnvKind::highway);
    c.env.lane_centers = {1.0};
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("ini round-trip") {
    for (auto kind : {envs::EnvKind::highway, envs::EnvKind::obstacle}) {
        RunConfig c = RunConfig::defaults(kind);
        c.seed = 1234567890123ULL;
        c.train.learning_rate = 0.1 + 0.2;
        c.env.noise = 1.0 / 3.0;
        c.paths.data = "some/where.jsonl";
        c.sync();
        const std::string text = to_ini(c);
        CHECK(ini_env_kind(text) == kind);
        const RunConfig other_base = RunConfig::defaults(kind == envs::EnvKind::highway ? envs::EnvKind::obstacle
                                                                                          : envs::EnvKind::highway);
        CHECK(apply_ini(RunConfig::defaults(kind), text) == c);
        CHECK(apply_ini(other_base, text) == c);
    }
    CHECK(ini_sets("[run]\nseed = 3\n", "run", "seed"));
    CHECK_FALSE(ini_sets("[run]\nseed = 3\n", "train", "seed"));
    CHECK_FALSE(ini_env_kind("[run]\nseed = 3\n").has_value());
}

TEST_CASE("seed from the environment") {
    {
        EnvGuard g("TOMFIELD_SEED", "99");
        CHECK(seed_from_environment() == std::optional<std::uint64_t>{99});
    }
    {
        EnvGuard g("TOMFIELD_SEED", nullptr);
        CHECK_FALSE(seed_from_environment().has_value());
    }
    {
        EnvGuard g("TOMFIELD_SEED", "abc");
        CHECK_THROWS_AS(seed_from_environment(), ConfigError);
    }
}

TEST_CASE("effective config file") {
    test_support::TempDir dir("config");
    RunConfig c = RunConfig::defaults(envs::EnvKind::obstacle);
    c.train.epochs = 3;
    write_effective_config(c, dir / "e.ini");
    std::ifstream in(dir / "e.ini");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.rfind("; effective configuration", 0) == 0);
    CHECK(apply_ini(RunConfig::defaults(envs::EnvKind::obstacle), text) == c);
}

TEST_CASE("oracle config follows the environment") {
    RunConfig c = RunConfig::defaults(envs::EnvKind::highway);
    c.oracle_dead_band = 0.25;
    const analysis::OracleConfig o = c.oracle();
    CHECK(o.lateral_dead_band == 0.25);
    CHECK(o.horizon == c.train.horizon);
    CHECK(o.lane_centers == c.env.lane_centers);
}
