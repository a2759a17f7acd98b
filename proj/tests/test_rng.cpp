#include "medimux/parallel.hpp"
#include "medimux/rng.hpp"

#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <set>

using namespace medimux;

TEST_CASE("counter streams are reproducible and independent", "[rng]") {
    CounterStream a(42, StreamDomain::Test, 3);
    CounterStream b(42, StreamDomain::Test, 3);
    CounterStream c(42, StreamDomain::Test, 4);
    CounterStream d(43, StreamDomain::Test, 3);
    int same_c = 0, same_d = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto va = a();
        REQUIRE(va == b());
        same_c += va == c();
        same_d += va == d();
    }
    CHECK(same_c == 0);
    CHECK(same_d == 0);
}

TEST_CASE("uniform and normal moments", "[rng]") {
    CounterStream rng(7, StreamDomain::Test, 0);
    std::vector<double> u, z;
    for (int i = 0; i < 200000; ++i) {
        const double x = rng.uniform();
        REQUIRE(x > 0.0);
        REQUIRE(x < 1.0);
        u.push_back(x);
    }
    for (int i = 0; i < 200000; ++i) z.push_back(rng.normal());
    CHECK(test::sample_mean(u) == Catch::Approx(0.5).margin(0.003));
    CHECK(test::sample_mean(z) == Catch::Approx(0.0).margin(0.01));
    CHECK(test::sample_sd(z) == Catch::Approx(1.0).margin(0.01));
}

TEST_CASE("below stays in range and is roughly uniform", "[rng]") {
    CounterStream rng(1, StreamDomain::Test, 1);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const auto v = rng.below(7);
        REQUIRE(v < 7);
        ++counts[v];
    }
    for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("derived seeds do not collide on a study grid", "[rng]") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t cell = 0; cell < 20; ++cell) {
        for (std::uint64_t run = 0; run < 500; ++run) seen.insert(derive_seed(1, cell, run));
    }
    CHECK(seen.size() == 20 * 500);
    CHECK(derive_seed(1, 0, 1) != derive_seed(1, 1, 0));
}

TEST_CASE("parallel_for visits every index once and rethrows", "[parallel]") {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(100, 3,
                                 [](std::size_t i) {
                                     if (i == 57) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
}
