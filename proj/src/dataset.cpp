#include "jumpdiff/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace jumpdiff {

using nlohmann::json;

void DatasetSpec::validate() const {
    if (kind != "toy2" && kind != "clusters" && kind != "sequences")
        throw std::invalid_argument("dataset: unknown kind '" + kind + "'");
    if (size < 0) throw std::invalid_argument("dataset: size must be >= 0");
    if (max_components < 1 || component_dim < 1)
        throw std::invalid_argument("dataset: bad dimensions");
    if (kind == "toy2") {
        if (max_components < 2) throw std::invalid_argument("toy2: needs max_components >= 2");
        if (!(toy2_w1 >= 0.0 && toy2_w1 <= 1.0))
            throw std::invalid_argument("toy2: w1 outside [0,1]");
        if (toy2_std1 < 0.0 || toy2_std2 < 0.0) throw std::invalid_argument("toy2: negative std");
    }
    if (kind == "clusters") {
        if (!cluster_count_weights.empty() &&
            cluster_count_weights.size() != static_cast<size_t>(max_components))
            throw std::invalid_argument("clusters: count weights must have N entries");
        for (double w : cluster_count_weights)
            if (w < 0.0) throw std::invalid_argument("clusters: negative count weight");
        if (cluster_sigma <= 0.0) throw std::invalid_argument("clusters: sigma must be positive");
    }
    if (kind == "sequences" && max_components < 2)
        throw std::invalid_argument("sequences: needs max_components >= 2");
}

double DatasetSpec::cluster_mean(int count) const {
    return cluster_mean_slope * (count - 0.5 * (max_components + 1));
}

std::vector<double> DatasetSpec::cluster_weights() const {
    std::vector<double> w = cluster_count_weights;
    if (w.empty()) {
        w.resize(static_cast<size_t>(max_components));
        for (int k = 1; k <= max_components; ++k)
            w[static_cast<size_t>(k) - 1] = static_cast<double>(max_components - k + 1);
    }
    double z = 0.0;
    for (double v : w) z += v;
    if (z <= 0.0) throw std::invalid_argument("clusters: zero total count weight");
    for (auto& v : w) v /= z;
    return w;
}

Dataset gen_dataset(const DatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.d = spec.component_dim;
    ds.N = spec.max_components;
    ds.kind = spec.kind;
    ds.seed = spec.seed;
    Rng rng(spec.seed);
    ds.records.reserve(static_cast<size_t>(spec.size));
    const int d = spec.component_dim, N = spec.max_components;

    for (long r = 0; r < spec.size; ++r) {
        if (spec.kind == "toy2") {
            if (rng.uniform() < spec.toy2_w1) {
                std::vector<double> x(static_cast<size_t>(d));
                for (auto& v : x) v = spec.toy2_mean1 + spec.toy2_std1 * rng.normal();
                ds.records.emplace_back(1, std::move(x), d, N);
            } else {
                std::vector<double> x(static_cast<size_t>(2) * d);
                for (auto& v : x) v = spec.toy2_mean2 + spec.toy2_std2 * rng.normal();
                ds.records.emplace_back(2, std::move(x), d, N);
            }
        } else if (spec.kind == "clusters") {
            const auto w = spec.cluster_weights();
            const int k = rng.categorical(w) + 1;
            const double mu = spec.cluster_mean(k);
            std::vector<double> x(static_cast<size_t>(k) * d);
            for (auto& v : x) v = mu + spec.cluster_sigma * rng.normal();
            ds.records.emplace_back(k, std::move(x), d, N);
        } else {  // sequences
            const int n = 2 + rng.below(N - 1);
            std::vector<double> x(static_cast<size_t>(n) * d);
            for (int j = 0; j < d; ++j) {
                const double a = rng.normal(), b = rng.normal();
                for (int i = 0; i < n; ++i)
                    x[static_cast<size_t>(i) * d + j] =
                        a + (b - a) * (static_cast<double>(i) / (n - 1)) +
                        spec.seq_noise_std * rng.normal();
            }
            ds.records.emplace_back(n, std::move(x), d, N);
        }
    }
    return ds;
}

std::string dataset_to_jsonl(const Dataset& ds) {
    std::string out;
    json header = {{"d", ds.d}, {"N", ds.N}, {"kind", ds.kind}, {"seed", ds.seed},
                   {"version", ds.version}};
    out += header.dump();
    out += "\n";
    for (const auto& rec : ds.records) {
        json j = {{"n", rec.n}, {"x", rec.x}};
        out += j.dump();
        out += "\n";
    }
    return out;
}

Dataset dataset_from_jsonl(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("dataset: missing header line");
    const json header = json::parse(line);
    Dataset ds;
    ds.d = header.at("d").get<int>();
    ds.N = header.at("N").get<int>();
    ds.kind = header.at("kind").get<std::string>();
    ds.seed = header.at("seed").get<std::uint64_t>();
    ds.version = header.at("version").get<int>();
    if (ds.version != 1) throw std::invalid_argument("dataset: unsupported version");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        const int n = j.at("n").get<int>();
        auto x = j.at("x").get<std::vector<double>>();
        ds.records.emplace_back(n, std::move(x), ds.d, ds.N);
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::ios_base::failure("cannot open for writing: " + path);
    out << dataset_to_jsonl(ds);
    if (!out) throw std::ios_base::failure("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::ios_base::failure("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return dataset_from_jsonl(ss.str());
}

double hellinger(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("hellinger: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double d = std::sqrt(p[i]) - std::sqrt(q[i]);
        acc += d * d;
    }
    return std::sqrt(0.5 * acc);
}

double total_variation(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("total_variation: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
    return 0.5 * acc;
}

std::vector<double> dimension_law(const std::vector<TransState>& states, int N) {
    std::vector<double> law(static_cast<size_t>(N), 0.0);
    for (const auto& s : states) {
        if (s.n < 1 || s.n > N) throw std::invalid_argument("dimension_law: n outside [1, N]");
        law[static_cast<size_t>(s.n) - 1] += 1.0;
    }
    if (!states.empty())
        for (auto& v : law) v /= static_cast<double>(states.size());
    return law;
}

double wasserstein1(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    // Quantile coupling on a common refinement.
    const size_t n = std::max(a.size(), b.size());
    auto quant = [](const std::vector<double>& v, double u) {
        const double pos = u * (static_cast<double>(v.size()) - 1.0);
        const size_t i = static_cast<size_t>(pos);
        if (i + 1 >= v.size()) return v.back();
        const double f = pos - static_cast<double>(i);
        return (1.0 - f) * v[i] + f * v[i + 1];
    };
    double acc = 0.0;
    for (size_t k = 0; k < n; ++k) {
        const double u = (static_cast<double>(k) + 0.5) / static_cast<double>(n);
        acc += std::abs(quant(a, u) - quant(b, u));
    }
    return acc / static_cast<double>(n);
}

namespace {
// Data-side conditional dimension law given observed component values, by
// Gaussian-kernel weighting of each record's components.
std::vector<double> kernel_conditional_law(const std::vector<TransState>& records, int N, int d,
                                           const GuidanceSpec& obs, double bandwidth) {
    std::vector<double> law(static_cast<size_t>(N), 0.0);
    double total = 0.0;
    for (const auto& rec : records) {
        double w = 1.0;
        for (const auto& ob : obs.observed) {
            double lik = 0.0;
            for (int i = 1; i <= rec.n; ++i) {
                const auto comp = rec.component(i);
                double q = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double z = (comp[static_cast<size_t>(j)] - ob.value[static_cast<size_t>(j)]) / bandwidth;
                    q += z * z;
                }
                lik += std::exp(-0.5 * q);
            }
            w *= lik / rec.n;
        }
        law[static_cast<size_t>(rec.n) - 1] += w;
        total += w;
    }
    if (total > 0.0)
        for (auto& v : law) v /= total;
    return law;
}
}  // namespace

std::string eval_samples_json(const std::vector<TransState>& samples, const Dataset& data,
                              const EvalOptions& opts) {
    if (samples.empty()) throw std::invalid_argument("eval: no samples");
    for (const auto& s : samples)
        if (s.d != data.d || s.n > data.N)
            throw std::invalid_argument("eval: samples incompatible with dataset (d or N)");

    const auto p = dimension_law(samples, data.N);
    const auto q = dimension_law(data.records, data.N);

    json j;
    j["count"] = samples.size();
    std::vector<long> hist(static_cast<size_t>(data.N), 0);
    for (const auto& s : samples) hist[static_cast<size_t>(s.n) - 1] += 1;
    j["dimension_histogram"] = hist;
    j["dimension_law"] = p;
    j["data_dimension_law"] = q;
    j["hellinger_dimension"] = hellinger(p, q);
    j["tv_dimension"] = total_variation(p, q);

    // Per-coordinate moments within each level present in both collections.
    json moments = json::array();
    for (int n = 1; n <= data.N; ++n) {
        auto collect = [&](const std::vector<TransState>& set) {
            std::vector<std::vector<double>> per_coord(static_cast<size_t>(data.d));
            for (const auto& s : set) {
                if (s.n != n) continue;
                for (int i = 1; i <= s.n; ++i) {
                    const auto comp = s.component(i);
                    for (int c = 0; c < data.d; ++c)
                        per_coord[static_cast<size_t>(c)].push_back(comp[static_cast<size_t>(c)]);
                }
            }
            return per_coord;
        };
        const auto a = collect(samples), b = collect(data.records);
        if (a[0].empty() || b[0].empty()) continue;
        auto stats = [](const std::vector<double>& v) {
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            var /= std::max<size_t>(1, v.size() - 1);
            return std::pair<double, double>(mean, var);
        };
        json entry;
        entry["n"] = n;
        std::vector<double> mean_err(static_cast<size_t>(data.d)), var_err(static_cast<size_t>(data.d));
        for (int c = 0; c < data.d; ++c) {
            const auto [ma, va] = stats(a[static_cast<size_t>(c)]);
            const auto [mb, vb] = stats(b[static_cast<size_t>(c)]);
            mean_err[static_cast<size_t>(c)] = std::abs(ma - mb);
            var_err[static_cast<size_t>(c)] = std::abs(va - vb);
        }
        entry["mean_abs_err"] = mean_err;
        entry["var_abs_err"] = var_err;
        moments.push_back(entry);
    }
    j["moment_errors"] = moments;

    if (opts.observe && !opts.observe->observed.empty()) {
        const auto cond = kernel_conditional_law(data.records, data.N, data.d, *opts.observe,
                                                 opts.bandwidth);
        j["conditional"] = {{"data_conditional_law", cond},
                            {"hellinger_dimension", hellinger(p, cond)},
                            {"tv_dimension", total_variation(p, cond)}};
    }
    return j.dump(2);
}

GuidanceSpec load_observations(const std::string& path, int d, double weight) {
    std::ifstream in(path);
    if (!in) throw std::ios_base::failure("cannot open observations: " + path);
    GuidanceSpec spec;
    spec.weight = weight;
    std::string line;
    int auto_slot = 1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        GuidanceSpec::Observed ob;
        if (j.is_array()) {
            ob.slot = auto_slot++;
            ob.value = j.get<std::vector<double>>();
        } else {
            ob.slot = j.at("slot").get<int>();
            ob.value = j.at("value").get<std::vector<double>>();
            auto_slot = std::max(auto_slot, ob.slot + 1);
        }
        if (static_cast<int>(ob.value.size()) != d)
            throw std::invalid_argument("observations: value width != d");
        spec.observed.push_back(std::move(ob));
    }
    return spec;
}

}  // namespace jumpdiff
