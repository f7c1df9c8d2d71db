#include "doctest.h"
#include "support.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "tomfield/errors.hpp"
#include "tomfield/models.hpp"

using namespace tomfield;
using namespace tomfield::models;

namespace {

const std::filesystem::path kGoldenCkpt = std::filesystem::path(TOMFIELD_FIXTURES) / "golden_fsq.ckpt";

const Architecture kSmall{{16, 16}, {16, 16}};

std::vector<double> random_history(std::size_t width, Rng& rng, double scale = 1.0) {
    std::vector<double> h(width);
    for (double& v : h) v = rng.uniform(-scale, scale);
    return h;
}

// Distance in pre-latent space to the nearest rounding boundary of one channel.
double boundary_margin(double z, int L) {
    double best = 1e300;
    for (int k = 0; k + 1 < L; ++k) {
        const double t = 2.0 * (k + 0.5) / (L - 1) - 1.0;
        best = std::min(best, std::abs(z - std::atanh(t)));
    }
    return best;
}

}  // namespace

TEST_CASE("zero network maps every window to the tie code") {
    FsqModel m = make_fsq({3, 2}, 7, 3, kSmall, 1);
    zero_parameters(m.params);
    Rng rng(2);
    for (int i = 0; i < 20; ++i) {
        const Encoding e = encode(m, random_history(m.input_width(), rng, 5.0));
        CHECK(e.pre_latent == std::vector<double>{0, 0, 0});
        CHECK(e.code.q == std::vector<double>{1, 1, 1});
    }
    FsqModel m3 = make_fsq({2, 3}, 7, 3, kSmall, 1);
    zero_parameters(m3.params);
    CHECK(encode(m3, random_history(m3.input_width(), rng)).code.q == std::vector<double>{0, 0});
}

TEST_CASE("shapes and the latent bottleneck") {
    const FsqModel m = make_fsq({3, 2}, 7, 3, {{64, 64}, {64, 64}}, 4);
    CHECK(m.params.at("enc.0.w").rows() == 7 * data::kStepWidth);
    CHECK(m.params.at("enc.2.w").cols() == 3);
    CHECK(m.params.at("dec.0.w").rows() == 3 + data::kJointStateWidth);
    CHECK(m.params.at("dec.2.w").cols() == 6);

    Rng rng(3);
    const auto h = random_history(m.input_width(), rng);
    const JointState anchor{{3.0, 1.0}, {4.0, 2.0}};
    const auto out = predict(m, h, anchor);
    CHECK(out.size() == 3);
    CHECK(out == decode(m, encode(m, h).code, anchor));
    CHECK(out == predict(m, h, anchor));

    const auto other = predict(m, h, JointState{{9.0, 0.0}, {4.0, 2.0}});
    CHECK_FALSE(other == out);

    CHECK_THROWS_AS(encode(m, std::vector<double>(m.input_width() - 1)), DimensionError);
    CHECK_THROWS_AS(decode(m, fsq::code_from_index(0, {2, 2}), anchor), DimensionError);

    const VaeModel v = make_vae(3, 7, 3, 1.0, kSmall, 5);
    CHECK(v.params.at("enc.mean.w").cols() == 3);
    CHECK(v.params.at("enc.logvar.w").cols() == 3);
    CHECK(v.params.at("dec.0.w").rows() == 3 + data::kJointStateWidth);
    CHECK_THROWS_AS(vae_encode(v, std::vector<double>(3)), DimensionError);
    CHECK_THROWS_AS(vae_decode(v, std::vector<double>(2), anchor), DimensionError);
}

TEST_CASE("codes stay fixed under perturbations smaller than the boundary margin") {
    const FsqModel m = make_fsq({3, 3}, 7, 3, kSmall, 8);
    Rng rng(9);
    int informative = 0;
    for (int probe = 0; probe < 300; ++probe) {
        auto h = random_history(m.input_width(), rng, 2.0);
        const Encoding base = encode(m, h);
        for (double& v : h) v += rng.uniform(-1e-6, 1e-6);
        const Encoding moved = encode(m, h);
        bool inside = true;
        for (std::size_t c = 0; c < 3; ++c) {
            if (std::abs(moved.pre_latent[c] - base.pre_latent[c]) >= boundary_margin(base.pre_latent[c], 3)) {
                inside = false;
            }
        }
        if (!inside) continue;
        ++informative;
        CHECK(moved.code == base.code);
    }
    CHECK(informative > 250);
}

TEST_CASE("vae encoding modes") {
    VaeModel v = make_vae(2, 7, 3, 1.0, kSmall, 6);
    Rng rng(1);
    const auto h = random_history(v.input_width(), rng);

    const VaeEncoding eval = vae_encode(v, h);
    CHECK(eval.sample == eval.mean);
    CHECK(vae_encode(v, h).mean == eval.mean);
    const JointState anchor{{1.0, 1.0}, {2.0, 2.0}};
    CHECK(vae_predict(v, h, anchor) == vae_predict(v, h, anchor));
    CHECK(vae_predict(v, h, anchor) == vae_decode(v, eval.mean, anchor));

    Rng a(44), b(44);
    CHECK(vae_encode(v, h, &a).sample == vae_encode(v, h, &b).sample);

    // Push the log-variance head far below the clamp floor.
    auto w = v.params.values("enc.logvar.w");
    std::fill(w.begin(), w.end(), 0.0);
    auto bias = v.params.values("enc.logvar.b");
    std::fill(bias.begin(), bias.end(), -500.0);
    Rng c(3);
    const VaeEncoding floor = vae_encode(v, h, &c);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(floor.logvar[i] == kLogVarMin);
        CHECK(std::abs(floor.sample[i] - floor.mean[i]) < 0.05);
    }
}

TEST_CASE("kl term") {
    CHECK(kl_term(std::vector<double>{0.0}, std::vector<double>{0.0}) == 0.0);
    CHECK(kl_term(std::vector<double>{1.0}, std::vector<double>{0.0}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(kl_term(std::vector<double>{1.0}, std::vector<double>{}), DimensionError);
    Rng rng(7);
    for (int i = 0; i < 500; ++i) {
        std::vector<double> mu(3), lv(3);
        for (double& x : mu) x = rng.uniform(-3, 3);
        for (double& x : lv) x = rng.uniform(-10, 10);
        CHECK(kl_term(mu, lv) >= 0.0);
    }

    const Matrix mu = test_support::random_matrix(4, 3, rng, 2.0);
    const Matrix lv = test_support::random_matrix(4, 3, rng, 2.0);
    Tape t;
    const double graph = t.value(kl_graph(t, t.constant(mu), t.constant(lv)))[0];
    double manual = 0.0;
    for (std::size_t r = 0; r < 4; ++r) manual += kl_term(mu.row_span(r), lv.row_span(r));
    CHECK(graph == doctest::Approx(manual / 4.0));
}

TEST_CASE("standardizer") {
    const Matrix rows{{1.0, 5.0}, {3.0, 5.0}};
    const Standardizer s = Standardizer::fit(rows);
    const Matrix z = s.apply(rows);
    CHECK(z(0, 0) == doctest::Approx(-1.0));
    CHECK(z(1, 0) == doctest::Approx(1.0));
    // Constant columns are centred but not scaled.
    CHECK(z(0, 1) == 0.0);
    CHECK(Standardizer::identity(2).apply(rows) == rows);
    CHECK_THROWS_AS(s.apply(Matrix(1, 3)), DimensionError);
}

TEST_CASE("checkpoint round-trip is exact") {
    test_support::TempDir dir("ckpt");
    Checkpoint f{make_fsq({2, 3}, 5, 2, kSmall, 11)};
    f.meta["note"] = "x";
    save(f, dir / "f.ckpt");
    const Checkpoint fb = load_checkpoint(dir / "f.ckpt");
    REQUIRE(fb.is_fsq());
    CHECK(fb.fsq() == f.fsq());
    CHECK(fb.meta == f.meta);
    CHECK(serialize(fb) == serialize(f));

    Checkpoint v{make_vae(3, 7, 3, 0.5, kSmall, 12)};
    const Checkpoint vb = parse_checkpoint(serialize(v));
    REQUIRE_FALSE(vb.is_fsq());
    CHECK(vb.vae() == v.vae());

    CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), IoError);
    CHECK_THROWS_AS(parse_checkpoint("{}"), ParseError);
    CHECK_THROWS_AS(parse_checkpoint("not json"), ParseError);
    std::string future = serialize(f);
    const auto at = future.find("\"version\":1");
    REQUIRE(at != std::string::npos);
    future.replace(at, 11, "\"version\":9");
    CHECK_THROWS_AS(parse_checkpoint(future), VersionError);
}

TEST_CASE("golden checkpoint decodes to recorded actions") {
    std::ifstream in(kGoldenCkpt, std::ios::binary);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    const Checkpoint ck = parse_checkpoint(bytes.str());
    REQUIRE(ck.is_fsq());
    CHECK(serialize(ck) == bytes.str());
    const FsqModel& m = ck.fsq();
    CHECK(m.quantizer == fsq::QuantizerConfig{2, 3});
    CHECK(m.history == 4);
    CHECK(m.horizon == 2);

    const JointState anchor{{12.0, 1.2}, {11.0, 2.0}};
    const std::vector<std::pair<std::uint64_t, std::array<double, 4>>> expected = {
        {0, {-0.5864386946813267, 0.059439571786107342, -0.66267398427539193, -0.2766047763525013}},
        {4, {-0.44749015523632818, 0.0355642437182455, -0.53275973501707841, -0.27499687108423554}},
        {8, {-0.33091887871464687, -0.0012218688112362736, -0.42566953652350981, -0.24132059418108026}},
    };
    for (const auto& [index, want] : expected) {
        const auto got = decode(m, fsq::code_from_index(index, m.quantizer), anchor);
        REQUIRE(got.size() == 2);
        CHECK(got[0].x == doctest::Approx(want[0]).epsilon(1e-12));
        CHECK(got[0].y == doctest::Approx(want[1]).epsilon(1e-12));
        CHECK(got[1].x == doctest::Approx(want[2]).epsilon(1e-12));
        CHECK(got[1].y == doctest::Approx(want[3]).epsilon(1e-12));
    }
}
