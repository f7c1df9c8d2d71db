#include "doctest.h"
#include "support.hpp"

#include <cmath>
#include <set>

#include "tomfield/errors.hpp"
#include "tomfield/fsq.hpp"

using namespace tomfield;
using fsq::QuantizerConfig;

namespace {

// Nearest grid point to tanh(z) in [-1, 1], by exhaustive search over the L
// level values. Ties go to the larger level (away from zero in level space).
std::vector<double> brute_force_q(std::span<const double> z, int L) {
    std::vector<double> q;
    for (double zi : z) {
        const double t = std::tanh(zi);
        double best = 0.0, best_d = 1e300;
        for (int k = 0; k < L; ++k) {
            const double v = -1.0 + 2.0 * k / (L - 1);
            const double d = std::abs(v - t);
            if (d <= best_d) {
                best_d = d;
                best = v;
            }
        }
        q.push_back(best);
    }
    return q;
}

std::uint64_t brute_force_index(const std::vector<double>& q, int L) {
    std::uint64_t idx = 0, base = 1;
    for (double v : q) {
        idx += static_cast<std::uint64_t>(std::lround((v + 1.0) * (L - 1) / 2.0)) * base;
        base *= static_cast<std::uint64_t>(L);
    }
    return idx;
}

}  // namespace

TEST_CASE("quantize examples") {
    const QuantizerConfig c{3, 2};
    const std::vector<double> z{0.5, -0.3, 2.0};
    const auto code = fsq::quantize(z, c);
    CHECK(code.q == std::vector<double>{1, -1, 1});
    CHECK(code.index == 5);

    const std::vector<double> zero{0, 0, 0};
    const auto tie = fsq::quantize(zero, c);
    CHECK(tie.q == std::vector<double>{1, 1, 1});
    CHECK(tie.index == 7);

    const QuantizerConfig c13{1, 3};
    CHECK(fsq::quantize(std::vector<double>{1e6}, c13).q == std::vector<double>{1.0});
    CHECK(fsq::quantize(std::vector<double>{-1e6}, c13).q == std::vector<double>{-1.0});
    CHECK(fsq::channel_level(1e6, 3) == 2);
    CHECK(fsq::channel_level(-1e6, 3) == 0);
    CHECK(fsq::channel_level(0.0, 3) == 1);
}

TEST_CASE("quantize rejects bad input") {
    const QuantizerConfig c{2, 3};
    CHECK_THROWS_AS(fsq::quantize(std::vector<double>{0.0, std::nan("")}, c), NumericError);
    CHECK_THROWS_AS(fsq::quantize(std::vector<double>{0.0}, c), DimensionError);
    CHECK_THROWS_AS((QuantizerConfig{0, 2}.validate()), ContractError);
    CHECK_THROWS_AS((QuantizerConfig{2, 1}.validate()), ContractError);
    CHECK_THROWS_AS(fsq::code_from_index(9, c), DimensionError);
}

TEST_CASE("codebook enumeration") {
    const auto b32 = fsq::codebook({3, 2});
    REQUIRE(b32.size() == 8);
    CHECK(b32.front().q == std::vector<double>{-1, -1, -1});
    CHECK(b32[1].q == std::vector<double>{1, -1, -1});
    CHECK(b32.back().q == std::vector<double>{1, 1, 1});

    const auto b13 = fsq::codebook({1, 3});
    REQUIRE(b13.size() == 3);
    CHECK(b13[0].q[0] == -1.0);
    CHECK(b13[1].q[0] == 0.0);
    CHECK(b13[2].q[0] == 1.0);

    const auto b22 = fsq::codebook({2, 2});
    REQUIRE(b22.size() == 4);
    for (std::uint64_t i = 0; i < 4; ++i) CHECK(b22[i].index == i);

    for (int d : {1, 2, 3}) {
        for (int L : {2, 3, 5}) {
            const QuantizerConfig c{d, L};
            const auto book = fsq::codebook(c);
            CHECK(book.size() == c.codebook_size());
            std::set<std::vector<double>> distinct;
            for (std::size_t i = 0; i < book.size(); ++i) {
                CHECK(book[i].index == i);
                CHECK(fsq::code_from_index(i, c) == book[i]);
                distinct.insert(book[i].q);
            }
            CHECK(distinct.size() == book.size());
        }
    }
}

TEST_CASE("closure and index round-trip on random pre-latents") {
    Rng rng(99);
    for (int d : {2, 3}) {
        for (int L : {2, 3, 5}) {
            const QuantizerConfig c{d, L};
            const auto book = fsq::codebook(c);
            for (int trial = 0; trial < 1000; ++trial) {
                std::vector<double> z(static_cast<std::size_t>(d));
                for (double& v : z) v = rng.normal() * 2.0;
                const auto code = fsq::quantize(z, c);
                REQUIRE(code.index < book.size());
                CHECK(book[code.index] == code);
                CHECK(code.q == brute_force_q(z, L));
                CHECK(code.index == brute_force_index(code.q, L));
                for (double v : code.q) {
                    CHECK(v >= -1.0);
                    CHECK(v <= 1.0);
                }
            }
        }
    }
}

TEST_CASE("idempotent at interior level preimages") {
    for (int L : {3, 5}) {
        const QuantizerConfig c{2, L};
        for (const auto& code : fsq::codebook(c)) {
            std::vector<double> z;
            bool interior = true;
            for (double q : code.q) {
                if (std::abs(q) >= 1.0) interior = false;
                z.push_back(std::atanh(q));
            }
            if (!interior) continue;
            CHECK(fsq::quantize(z, c) == code);
        }
    }
}

TEST_CASE("level helpers") {
    CHECK(fsq::level_value(0, 2) == -1.0);
    CHECK(fsq::level_value(1, 2) == 1.0);
    CHECK(fsq::level_value(2, 5) == 0.0);
    CHECK(fsq::level_value(3, 5) == 0.5);
    // Scaled value exactly 0.5 for L = 2 rounds up.
    CHECK(fsq::channel_level(0.0, 2) == 1);
}

TEST_CASE("row-wise helpers agree with quantize") {
    Rng rng(4);
    const QuantizerConfig c{3, 3};
    const Matrix z = test_support::random_matrix(20, 3, rng, 1.5);
    const Matrix q = fsq::quantize_rows(z, c);
    const auto idx = fsq::code_indices(z, c);
    for (std::size_t r = 0; r < 20; ++r) {
        const std::vector<double> row{z(r, 0), z(r, 1), z(r, 2)};
        const auto code = fsq::quantize(row, c);
        CHECK(idx[r] == code.index);
        for (std::size_t k = 0; k < 3; ++k) CHECK(q(r, k) == code.q[k]);
    }
    CHECK_THROWS_AS(fsq::quantize_rows(Matrix(2, 2), c), DimensionError);
}

TEST_CASE("straight-through passes upstream gradients unchanged") {
    Rng rng(17);
    const QuantizerConfig c{3, 2};
    for (int probe = 0; probe < 100; ++probe) {
        ParamSet p;
        p.add("z", test_support::random_matrix(4, 3, rng, 2.0));
        const Matrix upstream = test_support::random_matrix(4, 3, rng, 3.0);
        Tape t;
        const NodeId q = fsq::quantize_pass_through(t, t.param(p, "z"), c);
        CHECK(t.value(q) == fsq::quantize_rows(p.at("z"), c));
        // sum(q * g) has adjoint g at q.
        const NodeId loss = t.sum(t.mul(q, t.constant(upstream)));
        CHECK(t.backward(loss, p).at("z") == upstream);
    }
}

TEST_CASE("straight-through under a downstream affine layer") {
    Rng rng(8);
    const QuantizerConfig c{2, 3};
    ParamSet p;
    p.add("z", test_support::random_matrix(5, 2, rng, 1.0));
    p.add("w", test_support::random_matrix(2, 4, rng, 1.0));
    p.add("b", test_support::random_matrix(1, 4, rng, 1.0));
    const Matrix target = test_support::random_matrix(5, 4, rng, 1.0);

    Tape a;
    const NodeId q = fsq::quantize_pass_through(a, a.param(p, "z"), c);
    const GradMap ga = a.backward(a.mse(a.affine(q, a.param(p, "w"), a.param(p, "b")), a.constant(target)), p);

    // Same graph with the quantizer replaced by z + (q - z) as a constant offset.
    const Matrix qz = fsq::quantize_rows(p.at("z"), c);
    Matrix offset(5, 2);
    for (std::size_t k = 0; k < offset.size(); ++k) offset[k] = qz[k] - p.at("z")[k];
    Tape b;
    const NodeId shifted = b.add(b.param(p, "z"), b.constant(offset));
    const GradMap gb = b.backward(b.mse(b.affine(shifted, b.param(p, "w"), b.param(p, "b")), b.constant(target)), p);

    for (const char* name : {"z", "w", "b"}) {
        const Matrix& x = ga.at(name);
        const Matrix& y = gb.at(name);
        for (std::size_t k = 0; k < x.size(); ++k) CHECK(x[k] == doctest::Approx(y[k]).epsilon(1e-12));
    }

    Tape s;
    const NodeId qs = fsq::quantize_pass_through(s, s.param(p, "z"), c);
    CHECK(s.backward(s.sum(qs), p).at("z") == Matrix(5, 2, 1.0));
}
