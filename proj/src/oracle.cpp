#include "jumpdiff/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace jumpdiff {

namespace {
constexpr double kTwoPi = 6.2831853071795864769;

double gauss1_pdf(const Gauss1& g, double x) {
    const double z = (x - g.mean) / g.std;
    return std::exp(-0.5 * z * z) / (g.std * std::sqrt(kTwoPi));
}

double gauss2_pdf(const Gauss2& g, double x1, double x2) {
    const double z1 = (x1 - g.mean1) / g.std1;
    const double z2 = (x2 - g.mean2) / g.std2;
    const double r = g.rho;
    const double det = 1.0 - r * r;
    const double q = (z1 * z1 - 2.0 * r * z1 * z2 + z2 * z2) / det;
    return std::exp(-0.5 * q) / (kTwoPi * g.std1 * g.std2 * std::sqrt(det));
}
}  // namespace

std::vector<double> GridToy::grid() const {
    std::vector<double> xs(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) xs[static_cast<size_t>(i)] = -L + dx() * i;
    return xs;
}

double GridToy::q1_density(double x) const {
    double wsum = 0.0, acc = 0.0;
    for (const auto& g : q1) {
        acc += g.weight * gauss1_pdf(g, x);
        wsum += g.weight;
    }
    return acc / wsum;
}

double GridToy::q2_density(double x1, double x2) const {
    double wsum = 0.0, acc = 0.0;
    for (const auto& g : q2) {
        acc += g.weight * gauss2_pdf(g, x1, x2);
        wsum += g.weight;
    }
    return acc / wsum;
}

TransState GridToy::sample_datapoint(Rng& rng) const {
    if (rng.uniform() < w1) {
        double wsum = 0.0;
        for (const auto& g : q1) wsum += g.weight;
        double u = rng.uniform() * wsum;
        for (const auto& g : q1) {
            u -= g.weight;
            if (u < 0.0) return TransState(1, {g.mean + g.std * rng.normal()}, 1, 2);
        }
        const auto& g = q1.back();
        return TransState(1, {g.mean + g.std * rng.normal()}, 1, 2);
    }
    double wsum = 0.0;
    for (const auto& g : q2) wsum += g.weight;
    double u = rng.uniform() * wsum;
    const Gauss2* pick = &q2.back();
    for (const auto& g : q2) {
        u -= g.weight;
        if (u < 0.0) {
            pick = &g;
            break;
        }
    }
    const double z1 = rng.normal(), z2 = rng.normal();
    const double x1 = pick->mean1 + pick->std1 * z1;
    const double x2 = pick->mean2 + pick->std2 * (pick->rho * z1 + std::sqrt(1.0 - pick->rho * pick->rho) * z2);
    return TransState(2, {x1, x2}, 1, 2);
}

void GridToy::check(double tol) const {
    if (q1.empty() || q2.empty()) throw std::invalid_argument("GridToy: empty mixtures");
    if (!(w1 >= 0.0 && w1 <= 1.0)) throw std::invalid_argument("GridToy: w1 outside [0,1]");
    const auto xs = grid();
    const double h = dx();
    double m1 = 0.0;
    for (double x : xs) m1 += q1_density(x) * h;
    double m2 = 0.0;
    for (double a : xs) {
        double row = 0.0;
        for (double b : xs) row += q2_density(a, b);
        m2 += row * h * h;
    }
    if (std::abs(m1 - 1.0) > tol || std::abs(m2 - 1.0) > tol)
        throw std::invalid_argument("GridToy: densities not normalized on the grid (|" +
                                    std::to_string(m1 - 1.0) + "|, |" + std::to_string(m2 - 1.0) +
                                    "|)");
}

GridEvolver::GridEvolver(double L, int m, const ScheduleConfig& sc, std::vector<double> p1_0,
                         std::vector<double> p2_0, double dt)
    : L_(L), m_(m), sc_(sc), p1_(std::move(p1_0)), p2_(std::move(p2_0)) {
    if (m_ < 3) throw std::invalid_argument("GridEvolver: m too small");
    if (p1_.size() != static_cast<size_t>(m_) || p2_.size() != static_cast<size_t>(m_) * m_)
        throw std::invalid_argument("GridEvolver: initial densities have wrong size");
    dx_ = 2.0 * L_ / (m_ - 1);
    const double g2max = std::max(sc_.beta(0.0), sc_.beta(sc_.T));
    const double cfl = 0.5 * dx_ * dx_ / std::max(g2max, 1e-300);
    dt_ = dt;
    if (dt_ <= 0.0) {
        dt_ = 0.8 * cfl;
        if (sc_.rate_const > 0.0) dt_ = std::min(dt_, 0.05 / sc_.rate_const);
        dt_ = std::min(dt_, sc_.T / 100.0);
    }
    if (g2max > 0.0 && dt_ > cfl)
        throw std::invalid_argument("GridEvolver: dt violates the stability bound 0.5*dx^2/g^2");
    if (sc_.rate_const * dt_ >= 0.1)
        throw std::invalid_argument("GridEvolver: dt too large for the exchange rate");
    scratch1_.assign(p1_.size(), 0.0);
    scratch2_.assign(p2_.size(), 0.0);
    rowsum_.assign(static_cast<size_t>(m_), 0.0);
    colsum_.assign(static_cast<size_t>(m_), 0.0);
}

void GridEvolver::step(double h) {
    const double b = sc_.beta(t_);
    const double g2 = b;
    const double inv2dx = 1.0 / (2.0 * dx_);
    const double invdx2 = 1.0 / (dx_ * dx_);
    const int m = m_;
    auto xat = [&](int i) { return -L_ + dx_ * i; };

    // Level 1: dp/dt = -d/dx(b(x) p) + g2/2 d2p/dx2, b(x) = -beta x / 2,
    // density treated as 0 outside the grid.
    {
        const double* p = p1_.data();
        double* np = scratch1_.data();
        for (int i = 0; i < m; ++i) {
            const double pm = i > 0 ? p[i - 1] : 0.0;
            const double pp = i < m - 1 ? p[i + 1] : 0.0;
            const double adv = (-0.5 * b * xat(i + 1) * pp - (-0.5 * b * xat(i - 1) * pm)) * inv2dx;
            const double dif = (pp - 2.0 * p[i] + pm) * invdx2;
            np[i] = p[i] + h * (-adv + 0.5 * g2 * dif);
        }
        p1_.swap(scratch1_);
    }

    // Level 2: both axes.
    {
        const double* p = p2_.data();
        double* np = scratch2_.data();
        for (int i = 0; i < m; ++i) {
            const double bi_p = -0.5 * b * xat(i + 1);
            const double bi_m = -0.5 * b * xat(i - 1);
            const double* row = p + static_cast<size_t>(i) * m;
            const double* rowm = i > 0 ? p + static_cast<size_t>(i - 1) * m : nullptr;
            const double* rowp = i < m - 1 ? p + static_cast<size_t>(i + 1) * m : nullptr;
            double* nrow = np + static_cast<size_t>(i) * m;
            for (int j = 0; j < m; ++j) {
                const double pc = row[j];
                const double pim = rowm ? rowm[j] : 0.0;
                const double pip = rowp ? rowp[j] : 0.0;
                const double pjm = j > 0 ? row[j - 1] : 0.0;
                const double pjp = j < m - 1 ? row[j + 1] : 0.0;
                const double adv1 = (bi_p * pip - bi_m * pim) * inv2dx;
                const double adv2 =
                    (-0.5 * b * xat(j + 1) * pjp - (-0.5 * b * xat(j - 1) * pjm)) * inv2dx;
                const double dif = (pip + pim + pjp + pjm - 4.0 * pc) * invdx2;
                nrow[j] = pc + h * (-(adv1 + adv2) + 0.5 * g2 * dif);
            }
        }
        p2_.swap(scratch2_);
    }

    // Exchange: level 2 loses mass at rate lambda, level 1 gains the
    // K^del-averaged single-coordinate marginals.
    const double lam = sc_.forward_rate(t_, 2);
    if (lam > 0.0) {
        const double* p = p2_.data();
        for (int i = 0; i < m; ++i) {
            double rs = 0.0;
            const double* row = p + static_cast<size_t>(i) * m;
            for (int j = 0; j < m; ++j) rs += row[j];
            rowsum_[static_cast<size_t>(i)] = rs;
        }
        std::fill(colsum_.begin(), colsum_.end(), 0.0);
        for (int i = 0; i < m; ++i) {
            const double* row = p + static_cast<size_t>(i) * m;
            for (int j = 0; j < m; ++j) colsum_[static_cast<size_t>(j)] += row[j];
        }
        const double f = lam * h;
        for (int i = 0; i < m; ++i)
            p1_[static_cast<size_t>(i)] +=
                f * 0.5 * (rowsum_[static_cast<size_t>(i)] + colsum_[static_cast<size_t>(i)]) * dx_;
        for (auto& v : p2_) v *= (1.0 - f);
    }
    t_ += h;
}

void GridEvolver::advance_to(double t_target) {
    if (t_target < t_ - 1e-12) throw std::invalid_argument("GridEvolver: cannot evolve backwards");
    while (t_ < t_target - 1e-12) step(std::min(dt_, t_target - t_));
}

double GridEvolver::total_mass() const {
    double m1 = 0.0;
    for (double v : p1_) m1 += v;
    double m2 = 0.0;
    for (double v : p2_) m2 += v;
    return m1 * dx_ + m2 * dx_ * dx_;
}

GridSlice GridEvolver::slice() const {
    GridSlice s;
    s.t = t_;
    s.p1 = p1_;
    s.p2 = p2_;
    return s;
}

void GridEvolver::restore(const GridSlice& s) {
    if (s.p1.size() != p1_.size() || s.p2.size() != p2_.size())
        throw std::invalid_argument("GridEvolver::restore: size mismatch");
    p1_ = s.p1;
    p2_ = s.p2;
    t_ = s.t;
}

namespace {
GridMarginals run_evolution(double L, int m, const ScheduleConfig& sc, std::vector<double> p1_0,
                            std::vector<double> p2_0, std::span<const double> ts, double dt,
                            double mass_tol) {
    GridMarginals out;
    out.dx = 2.0 * L / (m - 1);
    out.xs.resize(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) out.xs[static_cast<size_t>(i)] = -L + out.dx * i;
    GridEvolver ev(L, m, sc, std::move(p1_0), std::move(p2_0), dt);
    const double mass0 = ev.total_mass();
    double prev = -1.0;
    for (double t : ts) {
        if (t < prev) throw std::invalid_argument("evolve_grid: query times must be ascending");
        prev = t;
        ev.advance_to(t);
        if (std::abs(ev.total_mass() - mass0) > mass_tol)
            throw std::runtime_error("evolve_grid: mass leak beyond 1e-4 at t=" + std::to_string(t));
        out.slices.push_back(ev.slice());
    }
    return out;
}
}  // namespace

GridMarginals evolve_grid(const GridToy& toy, const ScheduleConfig& sc,
                          std::span<const double> query_times, double dt) {
    if (toy.m < 512) throw std::invalid_argument("evolve_grid: m must be >= 512");
    toy.check();
    const auto xs = toy.grid();
    std::vector<double> p1_0(static_cast<size_t>(toy.m));
    for (int i = 0; i < toy.m; ++i) p1_0[static_cast<size_t>(i)] = toy.w1 * toy.q1_density(xs[static_cast<size_t>(i)]);
    std::vector<double> p2_0(static_cast<size_t>(toy.m) * toy.m);
    for (int i = 0; i < toy.m; ++i)
        for (int j = 0; j < toy.m; ++j)
            p2_0[static_cast<size_t>(i) * toy.m + j] =
                toy.w2() * toy.q2_density(xs[static_cast<size_t>(i)], xs[static_cast<size_t>(j)]);
    return run_evolution(toy.L, toy.m, sc, std::move(p1_0), std::move(p2_0), query_times, dt, 1e-4);
}

GridMarginals evolve_grid_from(double L, int m, const ScheduleConfig& sc, std::vector<double> p1_0,
                               std::vector<double> p2_0, std::span<const double> query_times,
                               double dt) {
    if (m < 512) throw std::invalid_argument("evolve_grid_from: m must be >= 512");
    return run_evolution(L, m, sc, std::move(p1_0), std::move(p2_0), query_times, dt, 1e-4);
}

namespace {
// K^del-averaged single-coordinate marginal of p2 at grid index i:
// 0.5 * (int p2(x_i, y) dy + int p2(y, x_i) dy).
double avg_insertion_integral(const GridSlice& s, double dx, int m, int i) {
    double rs = 0.0, cs = 0.0;
    const double* p = s.p2.data();
    const double* row = p + static_cast<size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
        rs += row[j];
        cs += p[static_cast<size_t>(j) * m + i];
    }
    return 0.5 * (rs + cs) * dx;
}
}  // namespace

double exact_backward_rate(const GridSlice& s, double dx, const ScheduleConfig& sc, int x_index,
                           double density_floor) {
    const int m = static_cast<int>(s.p1.size());
    if (x_index < 0 || x_index >= m) throw std::out_of_range("exact_backward_rate: index");
    const double lam = sc.forward_rate(s.t, 2);
    if (lam <= 0.0) return 0.0;
    const double px = s.p1[static_cast<size_t>(x_index)];
    if (px < density_floor)
        throw std::domain_error("exact_backward_rate: density below floor at query point");
    return lam * avg_insertion_integral(s, dx, m, x_index) / px;
}

RateTable exact_backward_rate_table(const GridSlice& s, double dx, const ScheduleConfig& sc,
                                    double density_floor) {
    const int m = static_cast<int>(s.p1.size());
    RateTable rt;
    rt.lambda.assign(static_cast<size_t>(m), 0.0);
    rt.valid.assign(static_cast<size_t>(m), 0);
    const double lam = sc.forward_rate(s.t, 2);
    for (int i = 0; i < m; ++i) {
        const double px = s.p1[static_cast<size_t>(i)];
        if (px < density_floor) continue;
        rt.valid[static_cast<size_t>(i)] = 1;
        if (lam > 0.0)
            rt.lambda[static_cast<size_t>(i)] = lam * avg_insertion_integral(s, dx, m, i) / px;
    }
    return rt;
}

InsertionKernel exact_insertion_kernel(const GridSlice& s, double dx, int x_index,
                                       double density_floor) {
    const int m = static_cast<int>(s.p1.size());
    if (x_index < 0 || x_index >= m) throw std::out_of_range("exact_insertion_kernel: index");
    InsertionKernel k;
    k.cond_y[0].assign(static_cast<size_t>(m), 0.0);  // i=1: new component before -> p2(y, x)
    k.cond_y[1].assign(static_cast<size_t>(m), 0.0);  // i=2: new component after  -> p2(x, y)
    const double* p = s.p2.data();
    double s1 = 0.0, s2 = 0.0;
    for (int j = 0; j < m; ++j) {
        k.cond_y[0][static_cast<size_t>(j)] = p[static_cast<size_t>(j) * m + x_index];
        k.cond_y[1][static_cast<size_t>(j)] = p[static_cast<size_t>(x_index) * m + j];
        s1 += k.cond_y[0][static_cast<size_t>(j)];
        s2 += k.cond_y[1][static_cast<size_t>(j)];
    }
    const double z = 0.5 * (s1 + s2) * dx;
    if (z < density_floor)
        throw std::domain_error("exact_insertion_kernel: no insertion mass at query point");
    k.index_prob[0] = 0.5 * s1 * dx / z;
    k.index_prob[1] = 0.5 * s2 * dx / z;
    for (int j = 0; j < m; ++j) {
        if (s1 > 0.0) k.cond_y[0][static_cast<size_t>(j)] /= s1 * dx;
        if (s2 > 0.0) k.cond_y[1][static_cast<size_t>(j)] /= s2 * dx;
    }
    return k;
}

std::string ReversalCheckResult::csv() const {
    std::string out = "t,x,lam_prop1,lam_prop3,rel_err\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.12g,%.12g,%.6g\n", r.t, r.x, r.lam_prop1,
                      r.lam_prop3, r.rel_err);
        out += buf;
    }
    return out;
}

ReversalCheckResult reversal_identity_check(const GridToy& toy, const ScheduleConfig& sc,
                                            std::span<const double> times, double density_floor) {
    toy.check();
    const auto xs = toy.grid();
    const int m = toy.m;
    // Two n0-conditioned systems: n0=1 starts as (q1, 0), n0=2 as (0, q2).
    std::vector<double> a1(static_cast<size_t>(m)), zero1(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) a1[static_cast<size_t>(i)] = toy.q1_density(xs[static_cast<size_t>(i)]);
    std::vector<double> b2(static_cast<size_t>(m) * m), zero2(static_cast<size_t>(m) * m, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            b2[static_cast<size_t>(i) * m + j] =
                toy.q2_density(xs[static_cast<size_t>(i)], xs[static_cast<size_t>(j)]);

    const auto sys1 = evolve_grid_from(toy.L, m, sc, std::move(a1), std::move(zero2), times);
    const auto sys2 = evolve_grid_from(toy.L, m, sc, std::move(zero1), std::move(b2), times);

    ReversalCheckResult res;
    for (size_t q = 0; q < times.size(); ++q) {
        const double t = times[q];
        const auto& s1 = sys1.slices[q];
        const auto& s2 = sys2.slices[q];
        const double lam_up = sc.forward_rate(t, 2);
        const double ratio12 = sc.dim_transition_ratio(t, 1, 2);

        GridSlice comb;
        comb.t = t;
        comb.p1.resize(static_cast<size_t>(m));
        comb.p2.resize(static_cast<size_t>(m) * m);
        for (int i = 0; i < m; ++i)
            comb.p1[static_cast<size_t>(i)] = toy.w1 * s1.p1[static_cast<size_t>(i)] +
                                              toy.w2() * s2.p1[static_cast<size_t>(i)];
        for (size_t i = 0; i < comb.p2.size(); ++i) comb.p2[i] = toy.w2() * s2.p2[i];

        for (int i = 0; i < m; ++i) {
            const double px = comb.p1[static_cast<size_t>(i)];
            if (px < density_floor) continue;
            const double lam1 =
                lam_up <= 0.0 ? 0.0
                              : lam_up * avg_insertion_integral(comb, sys2.dx, m, i) / px;
            // count-posterior route with the grid-exact posterior; only n0=2 contributes
            const double post2 = toy.w2() * s2.p1[static_cast<size_t>(i)] / px;
            const double lam3 =
                (lam_up <= 0.0 || !std::isfinite(ratio12)) ? 0.0 : lam_up * ratio12 * post2;
            double rel = 0.0;
            const double denom = std::max(std::abs(lam1), std::abs(lam3));
            if (denom > 1e-300) rel = std::abs(lam1 - lam3) / denom;
            res.rows.push_back({t, xs[static_cast<size_t>(i)], lam1, lam3, rel});
            res.max_rel_err = std::max(res.max_rel_err, rel);
        }
    }
    return res;
}

namespace {
struct PathState {
    int level = 1;  // 1 or 2
    double x1 = 0.0, x2 = 0.0;
};

double interp_linear(std::span<const double> tab, double u /* fractional index */) {
    const int n = static_cast<int>(tab.size());
    if (u <= 0.0) return tab[0];
    if (u >= n - 1) return tab[static_cast<size_t>(n) - 1];
    const int i = static_cast<int>(u);
    const double f = u - i;
    return (1.0 - f) * tab[static_cast<size_t>(i)] + f * tab[static_cast<size_t>(i) + 1];
}

// d/dx log p at fractional grid position via central differences of log.
double grid_log_deriv(std::span<const double> logp, double dx, double u, int m) {
    const int i = std::min(std::max(static_cast<int>(u), 1), m - 3);
    const double f = std::min(std::max(u - i, 0.0), 1.0);
    const double d0 = (logp[static_cast<size_t>(i) + 1] - logp[static_cast<size_t>(i) - 1]) / (2.0 * dx);
    const double d1 = (logp[static_cast<size_t>(i) + 2] - logp[static_cast<size_t>(i)]) / (2.0 * dx);
    return (1.0 - f) * d0 + f * d1;
}
}  // namespace

std::vector<TransState> oracle_backward_simulate(Rng& rng, const GridToy& toy,
                                                 const ScheduleConfig& sc, int n_paths,
                                                 int n_steps, int segments) {
    toy.check();
    const int m = toy.m;
    const double dx = toy.dx();
    const double T = sc.T;
    const double dtp = T / n_steps;
    segments = std::min(std::max(segments, 1), n_steps);

    // Path times t_j = T - j*dtp; a backward step from t_j uses quantities at t_j.
    auto path_time = [&](int j) { return T - dtp * j; };

    const auto xs = toy.grid();
    std::vector<double> p1_0(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) p1_0[static_cast<size_t>(i)] = toy.w1 * toy.q1_density(xs[static_cast<size_t>(i)]);
    std::vector<double> p2_0(static_cast<size_t>(m) * m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            p2_0[static_cast<size_t>(i) * m + j] =
                toy.w2() * toy.q2_density(xs[static_cast<size_t>(i)], xs[static_cast<size_t>(j)]);
    GridEvolver ev(toy.L, m, sc, std::move(p1_0), std::move(p2_0));

    // Forward pass: checkpoint the state at each segment's lowest time
    // (path_time(seg_lo[k]) decreases with k, so iterate k descending to
    // visit times in ascending order).
    std::vector<int> seg_lo(static_cast<size_t>(segments) + 1);
    for (int k = 0; k <= segments; ++k)
        seg_lo[static_cast<size_t>(k)] = (n_steps * k) / segments;  // segment k covers j in [seg_lo[k], seg_lo[k+1])
    std::vector<GridSlice> checkpoints(static_cast<size_t>(segments) + 1);
    for (int k = segments; k >= 1; --k) {
        ev.advance_to(path_time(seg_lo[static_cast<size_t>(k)]));
        checkpoints[static_cast<size_t>(k)] = ev.slice();
    }

    std::vector<PathState> paths(static_cast<size_t>(n_paths));
    for (auto& p : paths) p.x1 = rng.normal();  // p_ref = I{n=1} N(0, 1)

    const double x0 = -toy.L;
    auto frac_index = [&](double x) { return (x - x0) / dx; };

    std::vector<GridSlice> seg_slices;
    std::vector<std::vector<double>> seg_logp1, seg_lam, seg_rowsum, seg_colsum;
    std::vector<std::vector<double>> seg_logp2;  // m*m, reused per slice

    for (int k = 0; k < segments; ++k) {
        const int j_lo = seg_lo[static_cast<size_t>(k)], j_hi = seg_lo[static_cast<size_t>(k) + 1];
        const int count = j_hi - j_lo;
        if (count <= 0) continue;
        // Replay from the checkpoint at the segment's lowest time, collecting
        // slices at the path times (descending j = ascending time).
        ev.restore(checkpoints[static_cast<size_t>(k) + 1]);
        seg_slices.assign(static_cast<size_t>(count), {});
        seg_logp1.assign(static_cast<size_t>(count), {});
        seg_lam.assign(static_cast<size_t>(count), {});
        seg_logp2.assign(static_cast<size_t>(count), {});
        seg_rowsum.assign(static_cast<size_t>(count), {});
        seg_colsum.assign(static_cast<size_t>(count), {});
        for (int j = j_hi - 1; j >= j_lo; --j) {
            ev.advance_to(path_time(j));
            const int idx = j - j_lo;
            seg_slices[static_cast<size_t>(idx)] = ev.slice();
            const auto& s = seg_slices[static_cast<size_t>(idx)];
            auto& lp1 = seg_logp1[static_cast<size_t>(idx)];
            lp1.resize(static_cast<size_t>(m));
            for (int i = 0; i < m; ++i) lp1[static_cast<size_t>(i)] = std::log(s.p1[static_cast<size_t>(i)] + 1e-300);
            auto& lp2 = seg_logp2[static_cast<size_t>(idx)];
            lp2.resize(static_cast<size_t>(m) * m);
            for (size_t c = 0; c < lp2.size(); ++c) lp2[c] = std::log(s.p2[c] + 1e-300);
            auto& rs = seg_rowsum[static_cast<size_t>(idx)];
            auto& cs = seg_colsum[static_cast<size_t>(idx)];
            rs.assign(static_cast<size_t>(m), 0.0);
            cs.assign(static_cast<size_t>(m), 0.0);
            for (int a = 0; a < m; ++a) {
                const double* row = s.p2.data() + static_cast<size_t>(a) * m;
                double acc = 0.0;
                for (int bcol = 0; bcol < m; ++bcol) {
                    acc += row[bcol];
                    cs[static_cast<size_t>(bcol)] += row[bcol];
                }
                rs[static_cast<size_t>(a)] = acc;
            }
            const auto rt = exact_backward_rate_table(s, dx, sc);
            seg_lam[static_cast<size_t>(idx)] = rt.lambda;
        }

        // Step all paths through this segment, j ascending = time descending.
        for (int j = j_lo; j < j_hi; ++j) {
            const int idx = j - j_lo;
            const double t = path_time(j);
            const auto& s = seg_slices[static_cast<size_t>(idx)];
            const auto& lp1 = seg_logp1[static_cast<size_t>(idx)];
            const auto& lp2 = seg_logp2[static_cast<size_t>(idx)];
            const double b = sc.beta(t);
            const double noise = std::sqrt(b) * std::sqrt(dtp);
            for (auto& p : paths) {
                if (p.level == 1) {
                    // Jump check (exact reversal rate), then a draw from the insertion kernel.
                    const double u = frac_index(p.x1);
                    const double lam = interp_linear(seg_lam[static_cast<size_t>(idx)], u);
                    if (lam > 0.0 && rng.uniform() < std::min(1.0, lam * dtp)) {
                        const int xi = std::min(std::max(static_cast<int>(u + 0.5), 0), m - 1);
                        const auto& rs = seg_rowsum[static_cast<size_t>(idx)];
                        const auto& cs = seg_colsum[static_cast<size_t>(idx)];
                        const double wcol = cs[static_cast<size_t>(xi)], wrow = rs[static_cast<size_t>(xi)];
                        if (wcol + wrow > 0.0) {
                            const bool before = rng.uniform() * (wcol + wrow) < wcol;
                            // draw y from the corresponding 1-d conditional slice
                            const double* col;
                            std::vector<double> tmp(static_cast<size_t>(m));
                            if (before) {
                                for (int a = 0; a < m; ++a)
                                    tmp[static_cast<size_t>(a)] = s.p2[static_cast<size_t>(a) * m + xi];
                                col = tmp.data();
                            } else {
                                col = s.p2.data() + static_cast<size_t>(xi) * m;
                            }
                            const int yi =
                                rng.categorical(std::span<const double>(col, static_cast<size_t>(m)));
                            const double y = xs[static_cast<size_t>(yi)] + rng.uniform(-0.5, 0.5) * dx;
                            if (before) {
                                p.x2 = p.x1;
                                p.x1 = y;
                            } else {
                                p.x2 = y;
                            }
                            p.level = 2;
                        }
                    }
                }
                if (p.level == 1) {
                    const double u = frac_index(p.x1);
                    const double sc1 = grid_log_deriv(lp1, dx, u, m);
                    const double drift = -0.5 * b * p.x1 - b * sc1;
                    p.x1 += -drift * dtp + noise * rng.normal();
                } else {
                    const double u1 = frac_index(p.x1), u2 = frac_index(p.x2);
                    const int i1 = std::min(std::max(static_cast<int>(u1 + 0.5), 1), m - 2);
                    const int i2 = std::min(std::max(static_cast<int>(u2 + 0.5), 1), m - 2);
                    const double s1 =
                        (lp2[static_cast<size_t>(i1 + 1) * m + i2] - lp2[static_cast<size_t>(i1 - 1) * m + i2]) /
                        (2.0 * dx);
                    const double s2 =
                        (lp2[static_cast<size_t>(i1) * m + i2 + 1] - lp2[static_cast<size_t>(i1) * m + i2 - 1]) /
                        (2.0 * dx);
                    const double d1 = -0.5 * b * p.x1 - b * s1;
                    const double d2 = -0.5 * b * p.x2 - b * s2;
                    p.x1 += -d1 * dtp + noise * rng.normal();
                    p.x2 += -d2 * dtp + noise * rng.normal();
                }
            }
        }
        // free segment storage before the next replay
        seg_slices.clear();
        seg_logp1.clear();
        seg_logp2.clear();
        seg_lam.clear();
        seg_rowsum.clear();
        seg_colsum.clear();
    }

    std::vector<TransState> out;
    out.reserve(static_cast<size_t>(n_paths));
    for (const auto& p : paths) {
        if (p.level == 1)
            out.emplace_back(1, std::vector<double>{p.x1}, 1, 2);
        else
            out.emplace_back(2, std::vector<double>{p.x1, p.x2}, 1, 2);
    }
    return out;
}

double analytic_gaussian_score(std::span<const Gauss1> mix, const ScheduleConfig& sc, double t,
                               double x) {
    const double a = sc.alpha(t);
    double wsum = 0.0, dens = 0.0, grad = 0.0;
    for (const auto& g : mix) wsum += g.weight;
    for (const auto& g : mix) {
        const double mean = std::sqrt(a) * g.mean;
        const double var = a * g.std * g.std + (1.0 - a);
        const double z = (x - mean);
        const double pdf = std::exp(-0.5 * z * z / var) / std::sqrt(kTwoPi * var) * (g.weight / wsum);
        dens += pdf;
        grad += pdf * (-z / var);
    }
    if (dens <= 0.0) return 0.0;
    return grad / dens;
}

std::vector<std::vector<double>> mc_dim_marginal(Rng& rng, const ScheduleConfig& sc, int n0,
                                                 std::span<const double> ts, long trials) {
    if (n0 < 1 || n0 > sc.max_components)
        throw std::invalid_argument("mc_dim_marginal: n0 outside [1, N]");
    std::vector<std::vector<double>> hist(ts.size(),
                                          std::vector<double>(static_cast<size_t>(n0), 0.0));
    const double t_on = sc.rate_zero_until_frac * sc.T;
    std::vector<double> arrivals;
    for (long trial = 0; trial < trials; ++trial) {
        arrivals.clear();
        if (sc.rate_const > 0.0 && n0 > 1) {
            double tt = t_on;
            while (true) {
                tt += rng.exponential(sc.rate_const);
                if (tt > sc.T) break;
                arrivals.push_back(tt);
                if (arrivals.size() >= static_cast<size_t>(n0) - 1) break;  // chain stops at n=1
            }
        }
        for (size_t q = 0; q < ts.size(); ++q) {
            int deleted = 0;
            for (double a : arrivals) deleted += (a <= ts[q]);
            const int n = std::max(1, n0 - deleted);
            hist[q][static_cast<size_t>(n) - 1] += 1.0;
        }
    }
    for (auto& h : hist)
        for (auto& v : h) v /= static_cast<double>(trials);
    return hist;
}

std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x, double h) {
    if (h < 1e-7)
        throw std::invalid_argument("finite_diff: h below 1e-7 loses too much to cancellation");
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace jumpdiff
