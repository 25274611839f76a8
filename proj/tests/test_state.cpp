#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "jumpdiff/rng.hpp"
#include "jumpdiff/state.hpp"

using namespace jumpdiff;

TEST_CASE("insert prepend and append") {
    TransState X(2, {1.0, 2.0}, 1, 8);
    const double c = 7.0;
    auto Y = insert(X, std::span<const double>(&c, 1), 1);
    CHECK(Y.n == 3);
    CHECK(Y.x == std::vector<double>({7.0, 1.0, 2.0}));

    TransState Z(1, {1.0}, 1, 8);
    auto W = insert(Z, std::span<const double>(&c, 1), 2);
    CHECK(W.n == 2);
    CHECK(W.x == std::vector<double>({1.0, 7.0}));
}

TEST_CASE("insert errors") {
    TransState full(2, {1.0, 2.0}, 1, 2);
    const double y = 0.0;
    CHECK_THROWS(insert(full, std::span<const double>(&y, 1), 1));
    TransState X(1, {1.0}, 1, 4);
    CHECK_THROWS(insert(X, std::span<const double>(&y, 1), 0));
    CHECK_THROWS(insert(X, std::span<const double>(&y, 1), 3));
}

TEST_CASE("delete basics and underflow") {
    TransState X(3, {7.0, 1.0, 2.0}, 1, 8);
    auto Y = delete_component(X, 1);
    CHECK(Y.x == std::vector<double>({1.0, 2.0}));
    TransState Z(2, {1.0, 2.0}, 1, 8);
    CHECK(delete_component(Z, 2).x == std::vector<double>({1.0}));
    TransState one(1, {1.0}, 1, 8);
    CHECK_THROWS(delete_component(one, 1));
}

TEST_CASE("round trip delete(insert(X,y,i), i) == X over random cases") {
    Rng rng(42);
    for (int trial = 0; trial < 1000; ++trial) {
        const int d = 1 + rng.below(3);
        const int N = 2 + rng.below(6);
        const int n = 1 + rng.below(N - 1);
        TransState X(n, rng.normal_vec(static_cast<size_t>(n) * d), d, N);
        const auto y = rng.normal_vec(static_cast<size_t>(d));
        const int i = 1 + rng.below(n + 1);
        const TransState back = delete_component(insert(X, y, i), i);
        REQUIRE(back.n == X.n);
        REQUIRE(back.x == X.x);  // bit-exact
    }
}

TEST_CASE("insert/delete preserve untouched component order (sentinels)") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + rng.below(5);
        std::vector<double> vals(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) vals[static_cast<size_t>(i)] = 1000.0 * trial + i;  // unique sentinels
        TransState X(n, vals, 1, 16);
        const double y = -1.0;
        const int i = 1 + rng.below(n + 1);
        const auto Y = insert(X, std::span<const double>(&y, 1), i);
        // untouched components keep relative order
        std::vector<double> rest;
        for (int k = 1; k <= Y.n; ++k)
            if (k != i) rest.push_back(Y.x[static_cast<size_t>(k) - 1]);
        CHECK(rest == vals);
        const int j = 1 + rng.below(n);
        const auto Z = delete_component(X, j);
        std::vector<double> expect;
        for (int k = 0; k < n; ++k)
            if (k != j - 1) expect.push_back(vals[static_cast<size_t>(k)]);
        CHECK(Z.x == expect);
    }
}

TEST_CASE("apply_mask basics") {
    DeletionMask all{{1, 1, 1}, 3};
    std::vector<double> x = {1.0, 2.0, 3.0};
    CHECK(apply_mask(x, all, 1) == x);
    DeletionMask some{{1, 0, 1}, 3};
    CHECK(apply_mask(x, some, 1) == std::vector<double>({1.0, 3.0}));
    DeletionMask bad{{0, 0, 0}, 3};
    CHECK_THROWS(apply_mask(x, bad, 1));
    CHECK_THROWS(apply_mask(std::vector<double>{1.0}, some, 1));
}

TEST_CASE("apply_mask popcount property and idempotent composition") {
    Rng rng(3);
    for (int trial = 0; trial < 300; ++trial) {
        const int d = 1 + rng.below(3);
        const int n0 = 1 + rng.below(6);
        DeletionMask m;
        m.n0 = n0;
        m.bits.assign(static_cast<size_t>(n0), 0);
        m.bits[static_cast<size_t>(rng.below(n0))] = 1;  // ensure popcount >= 1
        for (auto& b : m.bits)
            if (rng.uniform() < 0.5) b = 1;
        const auto x0 = rng.normal_vec(static_cast<size_t>(n0) * d);
        const auto masked = apply_mask(x0, m, d);
        CHECK(static_cast<int>(masked.size()) == m.popcount() * d);
        DeletionMask ones;
        ones.n0 = m.popcount();
        ones.bits.assign(static_cast<size_t>(m.popcount()), 1);
        CHECK(apply_mask(masked, ones, d) == masked);
    }
}

TEST_CASE("state invariants rejected") {
    CHECK_THROWS(TransState(0, {}, 1, 4));
    CHECK_THROWS(TransState(2, {1.0}, 1, 4));
    CHECK_THROWS(TransState(5, std::vector<double>(5, 0.0), 1, 4));
    std::vector<double> nan = {std::nan("")};
    CHECK_THROWS(TransState(1, nan, 1, 4));
}
