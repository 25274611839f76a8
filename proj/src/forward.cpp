#include "jumpdiff/forward.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace jumpdiff {

void SampleTrace::append(double t, const TransState& X, std::string event) {
    records.push_back(TraceRecord{t, X.n, X.x, std::move(event)});
}

std::string SampleTrace::to_csv() const {
    std::string out;
    char buf[64];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof(buf), "%.9g,%d", r.t, r.n);
        out += buf;
        for (double v : r.x) {
            std::snprintf(buf, sizeof(buf), ",%.9g", v);
            out += buf;
        }
        out += ",";
        out += r.event;
        out += "\n";
    }
    return out;
}

std::pair<int, DeletionMask> sample_count_and_mask(Rng& rng, double t, const TransState& X0,
                                                   const ScheduleConfig& sc) {
    const auto law = sc.dim_marginal(t, X0.n);
    const int n_t = rng.categorical(law) + 1;
    std::vector<int> order(static_cast<size_t>(X0.n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    DeletionMask mask;
    mask.n0 = X0.n;
    mask.bits.assign(static_cast<size_t>(X0.n), 0);
    for (int i = 0; i < n_t; ++i) mask.bits[static_cast<size_t>(order[i])] = 1;
    mask.check();
    return {n_t, mask};
}

std::pair<std::vector<double>, std::vector<double>> sample_noisy_values(
    Rng& rng, double t, const TransState& X0, const DeletionMask& mask, const ScheduleConfig& sc) {
    const double a = sc.alpha(t);
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    auto masked = apply_mask(X0.x, mask, X0.d);
    std::vector<double> eps = rng.normal_vec(masked.size());
    std::vector<double> xt(masked.size());
    for (size_t i = 0; i < masked.size(); ++i) xt[i] = sa * masked[i] + sn * eps[i];
    return {std::move(xt), std::move(eps)};
}

NoisedSample sample_forward(Rng& rng, double t, const TransState& X0, const ScheduleConfig& sc) {
    NoisedSample s;
    s.t = t;
    s.X0 = X0;
    auto [n_t, mask] = sample_count_and_mask(rng, t, X0, sc);
    s.mask = std::move(mask);
    auto [xt, eps] = sample_noisy_values(rng, t, X0, s.mask, sc);
    s.Xt = TransState(n_t, std::move(xt), X0.d, X0.max_components);
    s.eps = std::move(eps);
    return s;
}

std::vector<double> score_target(double t, std::span<const double> x_t,
                                 std::span<const double> masked_x0, const ScheduleConfig& sc) {
    if (x_t.size() != masked_x0.size())
        throw std::invalid_argument("score_target: shape mismatch");
    const double a = sc.alpha(t);
    if (a >= 1.0)
        throw std::invalid_argument("score_target: alpha(t) == 1 is singular; need t > 0");
    const double sa = std::sqrt(a), om = 1.0 - a;
    std::vector<double> g(x_t.size());
    for (size_t i = 0; i < g.size(); ++i) g[i] = (sa * masked_x0[i] - x_t[i]) / om;
    return g;
}

ForwardPathResult simulate_forward_path(Rng& rng, const TransState& X0, double dt,
                                        const ScheduleConfig& sc, bool record_steps) {
    if (!(dt > 0.0)) throw std::invalid_argument("simulate_forward_path: dt must be positive");
    if (sc.rate_const * dt >= 0.1)
        throw std::invalid_argument(
            "simulate_forward_path: need rate_const*dt < 0.1 for thinning validity");

    ForwardPathResult out;
    out.Xt = X0;
    out.trace.append(0.0, out.Xt, "init");
    double t = 0.0;
    while (t < sc.T - 1e-12) {
        const double h = std::min(dt, sc.T - t);
        // Jump part first, then diffusion on the post-jump state.
        const double lam = sc.forward_rate(t, out.Xt.n);
        if (lam > 0.0 && rng.uniform() < lam * h) {
            const auto kdel = sc.deletion_index_dist(out.Xt.n);
            const int i = rng.categorical(kdel) + 1;
            out.Xt = delete_component(out.Xt, i);
            out.trace.append(t, out.Xt, "del@" + std::to_string(i));
        }
        const double b = sc.beta(t);
        const double g = std::sqrt(b), sh = std::sqrt(h);
        for (auto& v : out.Xt.x) v += -0.5 * b * v * h + g * sh * rng.normal();
        t += h;
        if (record_steps) out.trace.append(t, out.Xt, "step");
    }
    out.trace.append(sc.T, out.Xt, "final");
    return out;
}

}  // namespace jumpdiff
