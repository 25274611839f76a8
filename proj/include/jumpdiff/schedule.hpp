#pragma once

#include <vector>

namespace jumpdiff {

// Closed-form schedule quantities: linear beta(t) diffusion schedule, the
// constant-with-zero-window deletion rate, its integral, the uniform deletion
// index distribution and the analytic dimension marginal p_{t|0}(n | n0).
//
// Aggregate on purpose: tests build degenerate toys (beta == 0, rate == 0)
// directly, while production paths go through make_schedule()/validate().
struct ScheduleConfig {
    double T = 1.0;         // horizon
    double beta_min = 0.1;  // linear beta schedule endpoints
    double beta_max = 20.0;
    double rate_const = 0.0;            // lambda0, deletions per unit time
    double rate_zero_until_frac = 0.0;  // c: rate is 0 for t < c*T
    int max_components = 1;             // N
    int component_dim = 1;              // d

    // Throws std::invalid_argument on violated invariants, including the
    // terminal condition P(n_T = 1 | n_0 = N) >= 0.999.
    void validate() const;

    double beta(double t) const;             // requires 0 <= t <= T
    double alpha(double t) const;            // exp(-int_0^t beta), in (0, 1]
    double forward_rate(double t, int n) const;  // lambda->_t(n); 0 for n == 1 or t < c*T
    double integrated_rate(double t) const;      // Lambda(t) = max(0, t - c*T) * lambda0

    // K^del(i | n) = 1/n over i in {1..n}; requires n >= 2.
    std::vector<double> deletion_index_dist(int n) const;

    // p_{t|0}(n | n0) over n in {1..n0}, as a vector indexed by n-1.
    // Truncated Poisson in the number of deletions with remainder mass at n=1.
    std::vector<double> dim_marginal(double t, int n0) const;

    // p_{t|0}(n+1 | n0) / p_{t|0}(n | n0). Zero when n >= n0. +infinity
    // sentinel when Lambda(t) == 0 with n < n0; callers multiply by
    // forward_rate(t, n+1) which is zero exactly then (product defined as 0).
    double dim_transition_ratio(double t, int n, int n0) const;

  private:
    void check_time(double t) const;
};

// Validating factory for production use.
ScheduleConfig make_schedule(double T, double beta_min, double beta_max, double rate_const,
                             double rate_zero_until_frac, int max_components, int component_dim);

// Weight vector w over n0 = 1..N with w[n0-1] = forward_rate(t, n+1) *
// dim_transition_ratio(t, n, n0), entries capped at ratio_cap (counted in
// *cap_events when given). The count-posterior backward rate is then
// dot(w, p_theta(n0 | X)). All-zero when forward_rate(t, n+1) == 0 or n == N.
std::vector<double> backward_rate_weights(const ScheduleConfig& sc, double t, int n,
                                          double ratio_cap, long* cap_events = nullptr);

}  // namespace jumpdiff
