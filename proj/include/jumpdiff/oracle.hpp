#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "jumpdiff/rng.hpp"
#include "jumpdiff/schedule.hpp"
#include "jumpdiff/state.hpp"

namespace jumpdiff {

// Gaussian mixture pieces for the canonical d=1, N=2 oracle toy.
struct Gauss1 {
    double mean = 0.0, std = 1.0, weight = 1.0;
};
struct Gauss2 {
    double mean1 = 0.0, mean2 = 0.0, std1 = 1.0, std2 = 1.0, rho = 0.0, weight = 1.0;
};

// Data law: weight w1 on one-component states with density q1, weight 1-w1 on
// two-component states with density q2, discretized on [-L, L] with m points
// per axis.
struct GridToy {
    double w1 = 0.4;
    std::vector<Gauss1> q1;
    std::vector<Gauss2> q2;
    double L = 6.5;
    int m = 512;

    double w2() const { return 1.0 - w1; }
    double dx() const { return 2.0 * L / (m - 1); }
    std::vector<double> grid() const;
    double q1_density(double x) const;
    double q2_density(double x1, double x2) const;
    TransState sample_datapoint(Rng& rng) const;
    void check(double tol = 1e-6) const;  // grid normalization of q1, q2
};

struct GridSlice {
    double t = 0.0;
    std::vector<double> p1;  // m
    std::vector<double> p2;  // m*m row-major, p2[i*m+j] = density at (x_i, x_j)
};

struct GridMarginals {
    std::vector<double> xs;
    double dx = 0.0;
    std::vector<GridSlice> slices;
};

// Explicit finite-difference Fokker-Planck step on each level plus the
// deletion exchange (level 2 loses mass at rate lambda->_t(2); level 1 gains
// the K^del-averaged marginals). Operator split, first order.
class GridEvolver {
  public:
    GridEvolver(double L, int m, const ScheduleConfig& sc, std::vector<double> p1_0,
                std::vector<double> p2_0, double dt = 0.0);  // dt == 0: auto from CFL

    void advance_to(double t_target);
    double t() const { return t_; }
    double dx() const { return dx_; }
    double dt() const { return dt_; }
    std::span<const double> p1() const { return p1_; }
    std::span<const double> p2() const { return p2_; }
    double total_mass() const;
    GridSlice slice() const;
    void restore(const GridSlice& s);

  private:
    void step(double h);
    double L_;
    int m_;
    ScheduleConfig sc_;
    double dx_, dt_, t_ = 0.0;
    std::vector<double> p1_, p2_, scratch1_, scratch2_, rowsum_, colsum_;
};

// Evolve the toy data law; slices at the requested times (ascending). Mass
// conservation is checked to 1e-4 at every query. Requires m >= 512.
GridMarginals evolve_grid(const GridToy& toy, const ScheduleConfig& sc,
                          std::span<const double> query_times, double dt = 0.0);
// Same machinery from an arbitrary initial condition (used for the
// n0-conditioned systems of the count-posterior cross-check).
GridMarginals evolve_grid_from(double L, int m, const ScheduleConfig& sc,
                               std::vector<double> p1_0, std::vector<double> p2_0,
                               std::span<const double> query_times, double dt = 0.0);

// Exact reversal rate (insertion-density ratio) at level-1 grid point x_i:
//   lambda<-*(t, x) = lambda->_t(2) * [sum_i K^del(i|2) int p_t(ins(x,y,i)) dy] / p_t(1, x).
// Throws std::domain_error below the density floor.
double exact_backward_rate(const GridSlice& s, double dx, const ScheduleConfig& sc, int x_index,
                           double density_floor = 1e-9);
// Full table; entries below the floor are marked invalid and set to 0.
struct RateTable {
    std::vector<double> lambda;
    std::vector<std::uint8_t> valid;
};
RateTable exact_backward_rate_table(const GridSlice& s, double dx, const ScheduleConfig& sc,
                                    double density_floor = 1e-9);

// A*(y, i | (1, x)) on the grid: index marginal over i in {1, 2} and the
// normalized conditional density over y for each index.
struct InsertionKernel {
    double index_prob[2] = {0.0, 0.0};
    std::vector<double> cond_y[2];  // densities over the grid, each sums*dx to 1
};
InsertionKernel exact_insertion_kernel(const GridSlice& s, double dx, int x_index,
                                       double density_floor = 1e-9);

// Density-ratio vs count-posterior backward-rate identity on the grid toy.
struct ReversalCheckRow {
    double t, x, lam_prop1, lam_prop3, rel_err;
};
struct ReversalCheckResult {
    std::vector<ReversalCheckRow> rows;
    double max_rel_err = 0.0;
    std::string csv() const;  // t,x,lam_prop1,lam_prop3,rel_err
};
ReversalCheckResult reversal_identity_check(const GridToy& toy, const ScheduleConfig& sc,
                                            std::span<const double> times,
                                            double density_floor = 1e-9);

// Backward jump-diffusion simulation driven entirely by grid-exact
// quantities (score, rate, insertion kernel), from p_ref at t = T to t = 0.
// n_steps is the number of uniform backward steps (dt = T / n_steps).
std::vector<TransState> oracle_backward_simulate(Rng& rng, const GridToy& toy,
                                                 const ScheduleConfig& sc, int n_paths,
                                                 int n_steps, int segments = 50);

// Score of the VP-evolved 1-d Gaussian mixture (fixed single component).
double analytic_gaussian_score(std::span<const Gauss1> mix, const ScheduleConfig& sc, double t,
                               double x);

// Law of n_t from exact simulation of the deletion chain (inhomogeneous
// Poisson clocks, no thinning bias); one histogram per query time.
std::vector<std::vector<double>> mc_dim_marginal(Rng& rng, const ScheduleConfig& sc, int n0,
                                                 std::span<const double> ts, long trials);

// Central finite differences; throws when h < 1e-7 (cancellation).
std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x, double h);

}  // namespace jumpdiff
