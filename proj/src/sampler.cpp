#include "jumpdiff/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>

namespace jumpdiff {

namespace {
constexpr double kRatioCap = 1e6;

int resolve_threads(int requested, int jobs) {
    int t = requested;
    if (t <= 0) {
        if (const char* env = std::getenv("JUMPDIFF_THREADS")) t = std::atoi(env);
    }
    if (t <= 0) t = static_cast<int>(std::thread::hardware_concurrency());
    if (t <= 0) t = 1;
    return std::min(t, std::max(1, jobs));
}

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}
}  // namespace

double backward_rate(const ModelParams& params, const TransState& Xt, double t,
                     const ScheduleConfig& sc, const std::string& rate_mode) {
    if (Xt.n >= sc.max_components) return 0.0;
    if (rate_mode == "direct-head") {
        return forward_heads(params, Xt, t, sc.T).direct_rate;
    }
    const auto w = backward_rate_weights(sc, t, Xt.n, kRatioCap);
    bool any = false;
    for (double v : w) any = any || v != 0.0;
    if (!any) return 0.0;
    const auto h = forward_heads(params, Xt, t, sc.T);
    const auto p = softmax_values(h.n0_logits);
    double lam = 0.0;
    for (size_t i = 0; i < w.size(); ++i) lam += w[i] * p[i];
    return lam;
}

InsertionEvent sample_insertion(Rng& rng, const ModelParams& params, const TransState& Xt,
                                double t, const ScheduleConfig& sc) {
    if (Xt.n >= Xt.max_components)
        throw std::invalid_argument("sample_insertion: state at capacity");
    const auto h = forward_heads(params, Xt, t, sc.T);
    InsertionEvent ev;
    ev.y_add.resize(static_cast<size_t>(Xt.d));
    for (int j = 0; j < Xt.d; ++j)
        ev.y_add[static_cast<size_t>(j)] =
            h.ins_mean[static_cast<size_t>(j)] +
            std::exp(h.ins_logstd[static_cast<size_t>(j)]) * rng.normal();
    if (params.arch.ordered()) {
        const auto p = softmax_values(h.ins_index_logits);
        ev.index = rng.categorical(p) + 1;
    } else {
        ev.index = Xt.n + 1;  // set semantics: append
    }
    return ev;
}

std::vector<double> model_score(const ModelParams& params, const TransState& Xt, double t,
                                const ScheduleConfig& sc) {
    const double a = sc.alpha(t);
    if (a >= 1.0) throw std::invalid_argument("model_score: alpha(t) == 1 is singular");
    const auto h = forward_heads(params, Xt, t, sc.T);
    std::vector<double> s(h.eps_pred.size());
    const double c = -1.0 / std::sqrt(1.0 - a);
    for (size_t i = 0; i < s.size(); ++i) s[i] = c * h.eps_pred[i];
    return s;
}

std::vector<double> guided_score(const ModelParams& params, const TransState& Xt, double t,
                                 const ScheduleConfig& sc, const GuidanceSpec& guidance) {
    if (guidance.empty()) return model_score(params, Xt, t, sc);
    const double a = sc.alpha(t);
    if (a >= 1.0) throw std::invalid_argument("guided_score: alpha(t) == 1 is singular");
    const double sqrt_a = std::sqrt(a), om = 1.0 - a;
    const int d = Xt.d;

    // Observed slots currently present in the state.
    std::vector<const GuidanceSpec::Observed*> active;
    for (const auto& ob : guidance.observed) {
        if (ob.slot < 1) throw std::invalid_argument("guidance: slots are 1-based");
        if (static_cast<int>(ob.value.size()) != d)
            throw std::invalid_argument("guidance: observed value has wrong width");
        if (ob.slot <= Xt.n) active.push_back(&ob);
    }
    if (active.empty()) return model_score(params, Xt, t, sc);

    thread_local Tape tape;
    tape.reset();
    const HeadsNodes h = build_heads(tape, params, Xt, t, sc.T);
    const Tape::Id s_node = tape.scale(h.eps_pred, -1.0 / std::sqrt(om));

    // R = alpha/(2(1-alpha)) * sum_a ||x0^a - xhat0^a||^2 with
    // xhat0^a = (x_t^a + (1-alpha) s^a) / sqrt(alpha).
    Tape::Id quad = -1;
    for (const auto* ob : active) {
        const int off = (ob->slot - 1) * d;
        Tape::Id xa = tape.slice(h.x_in, off, d);
        Tape::Id sa = tape.slice(s_node, off, d);
        Tape::Id xhat = tape.scale(tape.add(xa, tape.scale(sa, om)), 1.0 / sqrt_a);
        Tape::Id diff = tape.sub(tape.leaf(ob->value), xhat);
        Tape::Id q = tape.dot(diff, diff);
        quad = quad < 0 ? q : tape.add(quad, q);
    }
    Tape::Id recon = tape.scale(quad, a / (2.0 * om));
    tape.backward(recon, nullptr);
    const auto grad_x = tape.grad(h.x_in);
    const auto s_vals = tape.values(s_node);

    std::vector<double> out(s_vals.begin(), s_vals.end());
    for (size_t i = 0; i < out.size(); ++i) out[i] -= guidance.weight * grad_x[i];
    // Observed dims use the analytic forward conditional score.
    for (const auto* ob : active) {
        const int off = (ob->slot - 1) * d;
        for (int j = 0; j < d; ++j)
            out[static_cast<size_t>(off + j)] =
                (sqrt_a * ob->value[static_cast<size_t>(j)] - Xt.x[static_cast<size_t>(off + j)]) /
                om;
    }
    return out;
}

namespace {
bool jump_check(Rng& rng, double lambda, double dt, bool strict, StepStats* stats) {
    if (lambda < 0.0 || !std::isfinite(lambda))
        throw std::runtime_error("sampler: bad backward rate value");
    double p = lambda * dt;
    if (p >= 1.0) {
        if (strict)
            throw std::runtime_error("sampler: thinning violated (lambda*dt >= 1); use smaller dt");
        if (stats) ++stats->thinning_violations;
        p = 1.0;
    }
    return rng.uniform() < p;
}
}  // namespace

TransState predictor_step_core(Rng& rng, const TransState& X, double t, double dt,
                               const ScheduleConfig& sc, const ScoreFn& score, const RateFn& rate,
                               const InsertFn& insert, bool unscaled_score_drift, bool strict,
                               StepStats* stats) {
    if (!(dt > 0.0) || dt > t * (1.0 + 1e-9))
        throw std::invalid_argument("predictor_step: need 0 < dt <= t");
    TransState cur = X;
    if (cur.n < cur.max_components && jump_check(rng, rate(cur, t), dt, strict, stats)) {
        const InsertionEvent ev = insert(rng, cur, t);
        cur = jumpdiff::insert(cur, ev.y_add, ev.index);
        if (stats) ++stats->insertions;
    }
    const double b = sc.beta(t);
    const double g2 = unscaled_score_drift ? 1.0 : b;
    const auto s = score(cur, t);
    if (s.size() != cur.x.size()) throw std::runtime_error("predictor_step: score shape mismatch");
    const double sq = std::sqrt(b) * std::sqrt(dt);
    for (size_t i = 0; i < cur.x.size(); ++i) {
        const double drift = -0.5 * b * cur.x[i] - g2 * s[i];
        cur.x[i] = cur.x[i] - drift * dt + sq * rng.normal();
    }
    return cur;
}

TransState corrector_step_core(Rng& rng, const TransState& X, double t, double dt_dim,
                               const ScheduleConfig& sc, const ScoreFn& score, const RateFn& rate,
                               const InsertFn& insert, double snr, bool dim_corrector, bool strict,
                               StepStats* stats) {
    TransState cur = X;
    const auto s = score(cur, t);
    const double sn = norm2(s);
    if (sn > 0.0) {
        std::vector<double> eps = rng.normal_vec(cur.x.size());
        const double en = norm2(eps);
        double zeta = 2.0 * (snr * en / sn) * (snr * en / sn);
        // At desk scale ||s|| is a low-dimensional norm that can pass near 0
        // at density modes, where the snr rule diverges; 1 - alpha_t is below
        // the Langevin stability threshold 2*Var of the noised target.
        zeta = std::min(zeta, 1.0 - sc.alpha(t));
        const double sz = std::sqrt(2.0 * zeta);
        for (size_t i = 0; i < cur.x.size(); ++i) cur.x[i] += zeta * s[i] + sz * eps[i];
    }
    if (dim_corrector) {
        if (cur.n < cur.max_components && jump_check(rng, rate(cur, t), dt_dim, strict, stats)) {
            const InsertionEvent ev = insert(rng, cur, t);
            cur = jumpdiff::insert(cur, ev.y_add, ev.index);
            if (stats) ++stats->insertions;
        }
        const double fr = sc.forward_rate(t, cur.n);
        if (fr > 0.0 && cur.n >= 2 && jump_check(rng, fr, dt_dim, strict, stats)) {
            const auto kdel = sc.deletion_index_dist(cur.n);
            cur = delete_component(cur, rng.categorical(kdel) + 1);
            if (stats) ++stats->deletions;
        }
    }
    return cur;
}

namespace {
ScoreFn model_score_fn(const ModelParams& params, const ScheduleConfig& sc,
                       const GuidanceSpec* guidance) {
    if (guidance && !guidance->empty()) {
        const GuidanceSpec g = *guidance;
        return [&params, &sc, g](const TransState& X, double t) {
            return guided_score(params, X, t, sc, g);
        };
    }
    return [&params, &sc](const TransState& X, double t) { return model_score(params, X, t, sc); };
}
}  // namespace

TransState predictor_step(Rng& rng, const ModelParams& params, const TransState& X, double t,
                          double dt, const ScheduleConfig& sc, const SamplerConfig& cfg,
                          const GuidanceSpec* guidance, StepStats* stats) {
    return predictor_step_core(
        rng, X, t, dt, sc, model_score_fn(params, sc, guidance),
        [&](const TransState& S, double tt) { return backward_rate(params, S, tt, sc, cfg.rate_mode); },
        [&](Rng& r, const TransState& S, double tt) { return sample_insertion(r, params, S, tt, sc); },
        cfg.unscaled_score_drift, cfg.strict_thinning, stats);
}

TransState corrector_step(Rng& rng, const ModelParams& params, const TransState& X, double t,
                          double dt_dim, const ScheduleConfig& sc, const SamplerConfig& cfg,
                          const GuidanceSpec* guidance, StepStats* stats) {
    return corrector_step_core(
        rng, X, t, dt_dim, sc, model_score_fn(params, sc, guidance),
        [&](const TransState& S, double tt) { return backward_rate(params, S, tt, sc, cfg.rate_mode); },
        [&](Rng& r, const TransState& S, double tt) { return sample_insertion(r, params, S, tt, sc); },
        cfg.corrector_snr, cfg.use_dim_corrector, cfg.strict_thinning, stats);
}

SampleResult sample(const ModelParams& params, const ScheduleConfig& sc, const SamplerConfig& cfg,
                    int n_samples, const GuidanceSpec* guidance, bool record_traces) {
    if (n_samples < 1) throw std::invalid_argument("sample: n_samples must be >= 1");
    if (!(cfg.dt > 0.0)) throw std::invalid_argument("sample: dt must be positive");

    SampleResult res;
    res.states.resize(static_cast<size_t>(n_samples));
    if (record_traces) res.traces.resize(static_cast<size_t>(n_samples));
    std::atomic<long> violations{0}, insertions{0}, deletions{0};

    auto run_chain = [&](int c) {
        Rng rng = Rng::forked(cfg.seed, static_cast<std::uint64_t>(c));
        StepStats st;
        TransState X(1, rng.normal_vec(static_cast<size_t>(sc.component_dim)), sc.component_dim,
                     sc.max_components);
        SampleTrace trace;
        if (record_traces) trace.append(sc.T, X, "init");
        double t = sc.T;
        while (t > 1e-12 * sc.T) {
            double h = (cfg.dt_coarse > 0.0 && t > 0.5 * sc.T) ? cfg.dt_coarse : cfg.dt;
            h = std::min(h, t);
            const int n_before = X.n;
            X = predictor_step(rng, params, X, t, h, sc, cfg, guidance, &st);
            const double t2 = t - h;
            if (record_traces && X.n != n_before)
                trace.append(t2, X, "ins@" + std::to_string(X.n));
            if (cfg.corrector_steps > 0 && t2 > 1e-12 * sc.T &&
                t2 < cfg.corrector_start_frac * sc.T) {
                for (int k = 0; k < cfg.corrector_steps; ++k)
                    X = corrector_step(rng, params, X, t2, h, sc, cfg, guidance, &st);
            }
            t = t2;
        }
        if (record_traces) {
            trace.append(0.0, X, "final");
            trace.thinning_violations = st.thinning_violations;
            res.traces[static_cast<size_t>(c)] = std::move(trace);
        }
        res.states[static_cast<size_t>(c)] = std::move(X);
        violations += st.thinning_violations;
        insertions += st.insertions;
        deletions += st.deletions;
    };

    const int nthreads = resolve_threads(cfg.threads, n_samples);
    if (nthreads <= 1) {
        for (int c = 0; c < n_samples; ++c) run_chain(c);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(nthreads));
        for (int w = 0; w < nthreads; ++w)
            pool.emplace_back([&] {
                for (int c = next++; c < n_samples; c = next++) run_chain(c);
            });
        for (auto& th : pool) th.join();
    }
    res.stats.thinning_violations = violations.load();
    res.stats.insertions = insertions.load();
    res.stats.deletions = deletions.load();
    return res;
}

}  // namespace jumpdiff
