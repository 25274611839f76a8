#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "jumpdiff/rng.hpp"
#include "jumpdiff/sampler.hpp"
#include "jumpdiff/state.hpp"

namespace jumpdiff {

// Desk-scale stand-in datasets. Values correlate with the component count in
// `clusters` so conditioning on a value is informative about the count.
struct DatasetSpec {
    std::string kind = "toy2";  // toy2 | clusters | sequences
    long size = 1000;
    std::uint64_t seed = 0;
    int max_components = 2;
    int component_dim = 1;

    // toy2: level-1 values ~ N(mean1, std1^2)^d, level-2 coords ~ N(mean2, std2^2)
    double toy2_w1 = 0.5;
    double toy2_mean1 = -1.0, toy2_std1 = 0.1;
    double toy2_mean2 = 1.0, toy2_std2 = 0.1;

    // clusters: count k ~ weights, component coords ~ N(mu_k, sigma^2) with
    // mu_k = mean_slope * (k - (N+1)/2)
    std::vector<double> cluster_count_weights;  // empty: N, N-1, ..., 1
    double cluster_mean_slope = 1.0;
    double cluster_sigma = 0.4;

    // sequences: ordered linear ramps of random length n ~ U{2..N}
    double seq_noise_std = 0.05;

    void validate() const;
    double cluster_mean(int count) const;
    std::vector<double> cluster_weights() const;  // normalized
};

struct Dataset {
    int d = 1;
    int N = 1;
    std::string kind;
    std::uint64_t seed = 0;
    int version = 1;
    std::vector<TransState> records;
};

Dataset gen_dataset(const DatasetSpec& spec);

// Line-delimited records {"n":..,"x":[..]} after a {"d","N","kind","seed","version"}
// header line.
std::string dataset_to_jsonl(const Dataset& ds);
Dataset dataset_from_jsonl(const std::string& text);
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// ---- metrics ----

// (1/sqrt(2)) || sqrt(p) - sqrt(q) ||_2 for discrete laws.
double hellinger(std::span<const double> p, std::span<const double> q);
double total_variation(std::span<const double> p, std::span<const double> q);
std::vector<double> dimension_law(const std::vector<TransState>& states, int N);
// 1-Wasserstein between two equal-size empirical samples (sorted mean abs diff;
// sizes may differ, quantiles are matched by linear interpolation).
double wasserstein1(std::vector<double> a, std::vector<double> b);

struct EvalOptions {
    const GuidanceSpec* observe = nullptr;  // guided runs: conditional dimension law
    double bandwidth = 0.25;                // kernel width for the data conditional
};

// Metrics JSON: dimension histogram/law, Hellinger and TV to the data
// dimension law, per-coordinate moment errors per level, and for guided runs
// the Hellinger to the kernel-estimated conditional dimension law.
std::string eval_samples_json(const std::vector<TransState>& samples, const Dataset& data,
                              const EvalOptions& opts = {});

// Observation file: one JSON array per line (slots 1, 2, ... in order), or
// {"slot": i, "value": [...]} objects for explicit placement.
GuidanceSpec load_observations(const std::string& path, int d, double weight);

}  // namespace jumpdiff
