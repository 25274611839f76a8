#pragma once

#include <string>
#include <vector>

#include "jumpdiff/rng.hpp"
#include "jumpdiff/schedule.hpp"
#include "jumpdiff/state.hpp"

namespace jumpdiff {

// One draw from the analytic forward process at time t.
// Invariant: Xt.x = sqrt(alpha_t) * apply_mask(X0.x, mask) + sqrt(1-alpha_t) * eps.
struct NoisedSample {
    double t = 0.0;
    TransState X0;
    DeletionMask mask;
    TransState Xt;
    std::vector<double> eps;  // length Xt.n * d
};

// Time-ordered record of a simulated path (forward or backward).
struct TraceRecord {
    double t = 0.0;
    int n = 0;
    std::vector<double> x;
    std::string event;  // "init", "del@i", "ins@i", "corr-ins@i", "corr-del@i", "final"
};

struct SampleTrace {
    std::vector<TraceRecord> records;
    long thinning_violations = 0;  // steps where lambda*dt >= 1 had to be clamped

    void append(double t, const TransState& X, std::string event);
    // Line-delimited CSV rows: t,n,x...,event
    std::string to_csv() const;
};

// n_t ~ p_{t|0}(. | n0), survivors a uniform size-n_t subset (permute then
// truncate; valid because K^del is uniform).
std::pair<int, DeletionMask> sample_count_and_mask(Rng& rng, double t, const TransState& X0,
                                                   const ScheduleConfig& sc);

// Gaussian values for the surviving components; returns (x_t, eps).
std::pair<std::vector<double>, std::vector<double>> sample_noisy_values(
    Rng& rng, double t, const TransState& X0, const DeletionMask& mask, const ScheduleConfig& sc);

NoisedSample sample_forward(Rng& rng, double t, const TransState& X0, const ScheduleConfig& sc);

// grad_{x_t} log p_{t|0}(x_t | X0, n_t, M_t) = (sqrt(alpha_t) M_t(x0) - x_t) / (1 - alpha_t).
// Rejects t where alpha_t == 1 (singular; training never samples t=0 exactly).
std::vector<double> score_target(double t, std::span<const double> x_t,
                                 std::span<const double> masked_x0, const ScheduleConfig& sc);

// Euler-Maruyama diffusion + Bernoulli(lambda dt) deletion thinning.
// Verification oracle only; training uses the analytic sampler above.
// Requires rate_const * dt < 0.1.
struct ForwardPathResult {
    TransState Xt;
    SampleTrace trace;
};
ForwardPathResult simulate_forward_path(Rng& rng, const TransState& X0, double dt,
                                        const ScheduleConfig& sc, bool record_steps = false);

}  // namespace jumpdiff
