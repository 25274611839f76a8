#include "jumpdiff/schedule.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace jumpdiff {

void ScheduleConfig::check_time(double t) const {
    if (!(t >= 0.0 && t <= T * (1.0 + 1e-12)))
        throw std::invalid_argument("schedule: t=" + std::to_string(t) + " outside [0, T]");
}

void ScheduleConfig::validate() const {
    if (!(T > 0.0)) throw std::invalid_argument("schedule: T must be positive");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max))
        throw std::invalid_argument("schedule: need 0 < beta_min <= beta_max");
    if (!(rate_const >= 0.0)) throw std::invalid_argument("schedule: rate_const must be >= 0");
    if (!(rate_zero_until_frac >= 0.0 && rate_zero_until_frac < 1.0))
        throw std::invalid_argument("schedule: rate_zero_until_frac must be in [0, 1)");
    if (max_components < 1 || component_dim < 1)
        throw std::invalid_argument("schedule: max_components and component_dim must be >= 1");
    const double p_terminal = dim_marginal(T, max_components)[0];
    if (p_terminal < 0.999)
        throw std::invalid_argument(
            "schedule: P(n_T=1 | n_0=N) = " + std::to_string(p_terminal) +
            " < 0.999; increase rate_const or the active rate window");
}

double ScheduleConfig::beta(double t) const {
    check_time(t);
    return beta_min + (beta_max - beta_min) * (t / T);
}

double ScheduleConfig::alpha(double t) const {
    check_time(t);
    // int_0^t beta = beta_min*t + (beta_max-beta_min)*t^2/(2T), closed form.
    const double ib = beta_min * t + 0.5 * (beta_max - beta_min) * t * t / T;
    return std::exp(-ib);
}

double ScheduleConfig::forward_rate(double t, int n) const {
    check_time(t);
    if (n < 1 || n > max_components)
        throw std::invalid_argument("forward_rate: n outside [1, N]");
    if (n == 1) return 0.0;
    if (t < rate_zero_until_frac * T) return 0.0;
    return rate_const;
}

double ScheduleConfig::integrated_rate(double t) const {
    check_time(t);
    return std::max(0.0, t - rate_zero_until_frac * T) * rate_const;
}

std::vector<double> ScheduleConfig::deletion_index_dist(int n) const {
    if (n < 2) throw std::invalid_argument("deletion_index_dist: n must be >= 2");
    return std::vector<double>(static_cast<size_t>(n), 1.0 / n);
}

std::vector<double> ScheduleConfig::dim_marginal(double t, int n0) const {
    check_time(t);
    if (n0 < 1 || n0 > max_components)
        throw std::invalid_argument("dim_marginal: n0 outside [1, N]");
    std::vector<double> p(static_cast<size_t>(n0), 0.0);
    if (n0 == 1) {
        p[0] = 1.0;
        return p;
    }
    const double lam = integrated_rate(t);
    // Poisson(k deletions; lam) for k = 0 .. n0-2 lands at n = n0-k; the
    // remainder P(k >= n0-1) is absorbed at n = 1. Summing the tail directly
    // avoids the cancellation of 1 - head for small lam.
    double term = std::exp(-lam);  // k = 0
    for (int k = 0; k <= n0 - 2; ++k) {
        p[static_cast<size_t>(n0 - k) - 1] = term;
        term *= lam / (k + 1);
    }
    double tail = 0.0;
    for (int k = n0 - 1; k < n0 + 400; ++k) {
        tail += term;
        term *= lam / (k + 1);
        if (term < 1e-18 * (tail + 1e-300)) break;
    }
    p[0] = tail;
    return p;
}

double ScheduleConfig::dim_transition_ratio(double t, int n, int n0) const {
    check_time(t);
    if (n0 < 1 || n0 > max_components || n < 1)
        throw std::invalid_argument("dim_transition_ratio: bad (n, n0)");
    if (n >= n0) return 0.0;  // ascending past n0 is impossible
    const double lam = integrated_rate(t);
    if (lam <= 0.0) return std::numeric_limits<double>::infinity();
    if (n > 1) return static_cast<double>(n0 - n) / lam;  // Poisson term ratio
    // n == 1: denominator is the remainder mass.
    const auto p = dim_marginal(t, n0);
    if (p[0] <= 0.0) return std::numeric_limits<double>::infinity();
    return p[1] / p[0];
}

ScheduleConfig make_schedule(double T, double beta_min, double beta_max, double rate_const,
                             double rate_zero_until_frac, int max_components, int component_dim) {
    ScheduleConfig sc{T, beta_min, beta_max, rate_const, rate_zero_until_frac,
                      max_components, component_dim};
    sc.validate();
    return sc;
}

std::vector<double> backward_rate_weights(const ScheduleConfig& sc, double t, int n,
                                          double ratio_cap, long* cap_events) {
    std::vector<double> w(static_cast<size_t>(sc.max_components), 0.0);
    if (n >= sc.max_components) return w;  // no lambda->(N+1)
    const double rate_up = sc.forward_rate(t, n + 1);
    if (rate_up <= 0.0) return w;  // zero window: infinity sentinel never surfaces
    for (int n0 = n + 1; n0 <= sc.max_components; ++n0) {
        double r = sc.dim_transition_ratio(t, n, n0);
        if (r > ratio_cap) {
            r = ratio_cap;
            if (cap_events) ++(*cap_events);
        }
        w[static_cast<size_t>(n0) - 1] = rate_up * r;
    }
    return w;
}

}  // namespace jumpdiff
