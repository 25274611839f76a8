#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "jumpdiff/dataset.hpp"

using namespace jumpdiff;

TEST_CASE("toy2 with w1=1 only makes n=1 records") {
    DatasetSpec spec;
    spec.kind = "toy2";
    spec.size = 200;
    spec.toy2_w1 = 1.0;
    const auto ds = gen_dataset(spec);
    for (const auto& r : ds.records) CHECK(r.n == 1);
}

TEST_CASE("size 0 round-trips as a header-only file") {
    DatasetSpec spec;
    spec.kind = "toy2";
    spec.size = 0;
    const auto ds = gen_dataset(spec);
    const auto text = dataset_to_jsonl(ds);
    const auto back = dataset_from_jsonl(text);
    CHECK(back.records.empty());
    CHECK(back.d == ds.d);
    CHECK(back.kind == "toy2");
}

TEST_CASE("same seed gives byte-identical dataset files") {
    DatasetSpec spec;
    spec.kind = "clusters";
    spec.size = 500;
    spec.seed = 77;
    spec.max_components = 6;
    const auto a = dataset_to_jsonl(gen_dataset(spec));
    const auto b = dataset_to_jsonl(gen_dataset(spec));
    CHECK(a == b);
    spec.seed = 78;
    CHECK(dataset_to_jsonl(gen_dataset(spec)) != a);
}

TEST_CASE("jsonl round trip preserves values exactly") {
    DatasetSpec spec;
    spec.kind = "sequences";
    spec.size = 64;
    spec.max_components = 5;
    spec.seed = 3;
    const auto ds = gen_dataset(spec);
    const auto back = dataset_from_jsonl(dataset_to_jsonl(ds));
    REQUIRE(back.records.size() == ds.records.size());
    for (size_t i = 0; i < ds.records.size(); ++i) {
        CHECK(back.records[i].n == ds.records[i].n);
        CHECK(back.records[i].x == ds.records[i].x);
    }
}

TEST_CASE("clusters means correlate with count") {
    DatasetSpec spec;
    spec.kind = "clusters";
    spec.size = 4000;
    spec.max_components = 6;
    spec.cluster_sigma = 0.4;
    const auto ds = gen_dataset(spec);
    // empirical mean of components at count k tracks cluster_mean(k)
    std::vector<double> sum(7, 0.0);
    std::vector<long> cnt(7, 0);
    for (const auto& r : ds.records) {
        for (double v : r.x) sum[static_cast<size_t>(r.n)] += v;
        cnt[static_cast<size_t>(r.n)] += r.n;
    }
    for (int k = 1; k <= 6; ++k) {
        if (cnt[static_cast<size_t>(k)] < 50) continue;
        const double mean = sum[static_cast<size_t>(k)] / cnt[static_cast<size_t>(k)];
        CHECK(std::abs(mean - spec.cluster_mean(k)) < 0.15);
    }
}

TEST_CASE("hellinger closed forms") {
    std::vector<double> p = {0.5, 0.5}, q = {0.5, 0.5};
    CHECK(hellinger(p, q) == doctest::Approx(0.0));
    std::vector<double> r = {1.0, 0.0};
    CHECK(hellinger(p, r) == doctest::Approx(std::sqrt(1.0 - std::sqrt(0.5))).epsilon(1e-9));
    CHECK(hellinger(p, r) == doctest::Approx(0.541196).epsilon(1e-5));
    std::vector<double> s = {0.0, 1.0};
    CHECK(hellinger(r, s) == doctest::Approx(1.0));
    CHECK(total_variation(r, s) == doctest::Approx(1.0));
}

TEST_CASE("eval of dataset against itself is a zero-distance report") {
    DatasetSpec spec;
    spec.kind = "toy2";
    spec.size = 400;
    spec.seed = 5;
    const auto ds = gen_dataset(spec);
    const auto text = eval_samples_json(ds.records, ds);
    CHECK(text.find("\"hellinger_dimension\": 0.0") != std::string::npos);
    CHECK(text.find("\"tv_dimension\": 0.0") != std::string::npos);
}

TEST_CASE("eval hellinger shrinks roughly like 1/sqrt(count) on self-samples") {
    DatasetSpec spec;
    spec.kind = "clusters";
    spec.size = 20000;
    spec.max_components = 4;
    spec.seed = 11;
    const auto ds = gen_dataset(spec);
    Rng rng(12);
    auto subsample = [&](size_t k) {
        std::vector<TransState> out;
        for (size_t i = 0; i < k; ++i)
            out.push_back(ds.records[static_cast<size_t>(rng.below(static_cast<int>(ds.records.size())))]);
        return dimension_law(out, 4);
    };
    const auto q = dimension_law(ds.records, 4);
    double h_small = 0.0, h_big = 0.0;
    const int reps = 10;
    for (int r = 0; r < reps; ++r) {
        h_small += hellinger(subsample(200), q);
        h_big += hellinger(subsample(12800), q);
    }
    // 64x the samples should shrink the distance by roughly 8; allow 2x slack
    CHECK(h_big < h_small / 3.0);
}

TEST_CASE("wasserstein1 basics") {
    std::vector<double> a = {0.0, 1.0, 2.0};
    std::vector<double> b = {1.0, 2.0, 3.0};
    CHECK(wasserstein1(a, b) == doctest::Approx(1.0));
    CHECK(wasserstein1(a, a) == doctest::Approx(0.0));
}
