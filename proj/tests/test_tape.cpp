#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "jumpdiff/oracle.hpp"
#include "jumpdiff/rng.hpp"
#include "jumpdiff/tape.hpp"

using namespace jumpdiff;

TEST_CASE("elementwise ops forward values") {
    Tape t;
    std::vector<double> av = {1.0, -2.0, 0.5};
    std::vector<double> bv = {3.0, 4.0, -1.0};
    auto a = t.leaf(av), b = t.leaf(bv);
    CHECK(t.values(t.add(a, b))[1] == 2.0);
    CHECK(t.values(t.sub(a, b))[0] == -2.0);
    CHECK(t.values(t.mul(a, b))[2] == -0.5);
    CHECK(t.values(t.scale(a, 2.0))[1] == -4.0);
    CHECK(t.values(t.shift(a, 1.0))[1] == -1.0);
    CHECK(t.value(t.dot(a, b)) == doctest::Approx(1.0 * 3.0 - 2.0 * 4.0 - 0.5));
    CHECK(t.value(t.sum(a)) == doctest::Approx(-0.5));
    CHECK(t.values(t.clamp(a, -1.0, 0.75))[1] == -1.0);
    CHECK(t.values(t.slice(a, 1, 2))[0] == -2.0);
    CHECK(t.values(t.concat2(a, b)).size() == 6);
    CHECK(t.value(t.pick(a, 2)) == 0.5);
}

TEST_CASE("softmax and logsumexp") {
    Tape t;
    std::vector<double> lv = {1.0, 2.0, 3.0};
    auto l = t.leaf(lv);
    const auto s = t.values(t.softmax(l));
    double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(s[0] == doctest::Approx(std::exp(1.0) / z));
    CHECK(s[2] == doctest::Approx(std::exp(3.0) / z));
    CHECK(t.value(t.logsumexp(l)) == doctest::Approx(std::log(z)));
    // shifted stability
    std::vector<double> big = {1000.0, 1001.0};
    auto lb = t.leaf(big);
    CHECK(t.value(t.logsumexp(lb)) == doctest::Approx(1001.0 + std::log(1.0 + std::exp(-1.0))));
}

TEST_CASE("grad of sum of squares is 2x") {
    Tape t;
    std::vector<double> x = {1.0, -0.5, 3.0};
    auto p = t.param(x, 0);
    auto loss = t.dot(p, p);
    std::vector<double> g(3, 0.0);
    t.backward(loss, &g);
    for (int i = 0; i < 3; ++i) CHECK(g[static_cast<size_t>(i)] == doctest::Approx(2.0 * x[static_cast<size_t>(i)]));
}

TEST_CASE("matvec gradient vs finite differences") {
    Rng rng(1);
    const int rows = 4, cols = 3;
    std::vector<double> W = rng.normal_vec(rows * cols);
    std::vector<double> x = rng.normal_vec(cols);
    std::vector<double> flat;
    flat.insert(flat.end(), W.begin(), W.end());
    flat.insert(flat.end(), x.begin(), x.end());
    auto f = [&](const std::vector<double>& v) {
        Tape t;
        auto Wn = t.param(std::span<const double>(v.data(), rows * cols), 0);
        auto xn = t.param(std::span<const double>(v.data() + rows * cols, cols), rows * cols);
        auto y = t.tanh_(t.matvec(Wn, xn, rows, cols));
        return t.value(t.dot(y, y));
    };
    const auto fd = finite_diff(f, flat, 1e-5);
    Tape t;
    auto Wn = t.param(std::span<const double>(flat.data(), rows * cols), 0);
    auto xn = t.param(std::span<const double>(flat.data() + rows * cols, cols), rows * cols);
    auto y = t.tanh_(t.matvec(Wn, xn, rows, cols));
    auto loss = t.dot(y, y);
    std::vector<double> g(flat.size(), 0.0);
    t.backward(loss, &g);
    for (size_t i = 0; i < flat.size(); ++i)
        CHECK(std::abs(g[i] - fd[i]) <= 1e-7 * std::max(1.0, std::abs(fd[i])));
}

TEST_CASE("composite expression gradient vs finite differences") {
    Rng rng(2);
    std::vector<double> x = rng.normal_vec(6);
    auto build = [&](Tape& t, const std::vector<double>& v) {
        auto a = t.param(std::span<const double>(v.data(), 3), 0);
        auto b = t.param(std::span<const double>(v.data() + 3, 3), 3);
        auto sm = t.softmax(a);
        auto e = t.exp_(t.scale(b, 0.3));
        auto lg = t.log_(t.shift(t.mul(e, e), 1.0));
        auto c = t.concat2(t.softplus(sm), t.clamp(lg, -0.4, 0.9));
        auto lse = t.logsumexp(c);
        auto pk = t.pick(c, 4);
        return t.add(t.add(lse, pk), t.sum(t.tanh_(c)));
    };
    auto f = [&](const std::vector<double>& v) {
        Tape t;
        return t.value(build(t, v));
    };
    const auto fd = finite_diff(f, x, 1e-5);
    Tape t;
    auto root = build(t, x);
    std::vector<double> g(x.size(), 0.0);
    t.backward(root, &g);
    for (size_t i = 0; i < x.size(); ++i)
        CHECK(std::abs(g[i] - fd[i]) <= 1e-6 * std::max(1.0, std::abs(fd[i])));
}

TEST_CASE("gradient of a loss that ignores a parameter block is zero") {
    Tape t;
    std::vector<double> a = {1.0, 2.0};
    std::vector<double> b = {3.0, 4.0};
    auto pa = t.param(a, 0);
    t.param(b, 2);  // never used downstream
    auto loss = t.dot(pa, pa);
    std::vector<double> g(4, 0.0);
    t.backward(loss, &g);
    CHECK(g[2] == 0.0);
    CHECK(g[3] == 0.0);
}

TEST_CASE("backward rejects non-scalar and non-finite roots") {
    Tape t;
    std::vector<double> a = {1.0, 2.0};
    auto n = t.leaf(a);
    std::vector<double> g;
    CHECK_THROWS(t.backward(n, nullptr));
    auto bad = t.log_(t.leaf1(-1.0));
    CHECK_THROWS(t.backward(bad, nullptr));
}

TEST_CASE("input gradients are queryable (leaf adjoints)") {
    Tape t;
    std::vector<double> xv = {0.3, -0.7};
    auto x = t.leaf(xv);
    auto loss = t.dot(x, x);
    t.backward(loss, nullptr);
    const auto gx = t.grad(x);
    CHECK(gx[0] == doctest::Approx(0.6));
    CHECK(gx[1] == doctest::Approx(-1.4));
}

TEST_CASE("reset reuses storage") {
    Tape t;
    for (int k = 0; k < 3; ++k) {
        t.reset();
        std::vector<double> v = {1.0, 2.0, 3.0};
        auto a = t.leaf(v);
        auto r = t.sum(t.mul(a, a));
        CHECK(t.value(r) == doctest::Approx(14.0));
    }
}
