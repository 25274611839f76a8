#pragma once

#include <string>
#include <vector>

#include "jumpdiff/forward.hpp"
#include "jumpdiff/net.hpp"
#include "jumpdiff/rng.hpp"
#include "jumpdiff/schedule.hpp"
#include "jumpdiff/state.hpp"

namespace jumpdiff {

// One draw from the objective expectation
//   U(t) p_{0,t}(X0, Xt, M_t) K^del(i | n_t) delta_del(Xt,i)(Y).
// Items with n_t == 1 carry no jump-log terms (valid_jump_terms == false).
struct MinibatchItem {
    double t = 0.0;
    TransState X0;
    DeletionMask mask;
    TransState Xt;
    std::vector<double> eps;
    bool valid_jump_terms = false;
    int del_index = 0;            // i ~ K^del(i | n_t), 1-based
    TransState Y;                 // delete(Xt, i)
    std::vector<double> x_add;    // the d values removed from Xt
};

// Loss-side breakdown (all addends of the minimized total):
//   score_term      = (T/2) * mean ||eps_pred - eps||^2
//   rate_neg_term   =  T * mean lambda<-(Xt)
//   rate_log_term   = -T * mean lambda->(n_t) log lambda<-(Y)
//   ins_loglik_term = -T * mean lambda->(n_t) log A(x_add, i | Y)
//   ce_term         = gamma * T * mean -log p(n0 | Xt)
struct LossBreakdown {
    double score_term = 0.0;
    double rate_neg_term = 0.0;
    double rate_log_term = 0.0;
    double ins_loglik_term = 0.0;
    double ce_term = 0.0;
    double total = 0.0;
    long clamp_count = 0;  // rate clamps (log floor) plus ratio-cap events
};

struct TrainConfig {
    long steps = 1000;
    int batch_size = 64;
    double lr = 1e-3;
    double ema_decay = 0.999;
    double gamma = 1.0;        // cross-entropy weight
    double t_min_frac = 1e-3;  // t ~ U(t_min_frac*T, T)
    std::uint64_t seed = 0;
    std::string rate_mode = "prop3";  // "prop3" | "direct-head"
};

std::vector<MinibatchItem> build_minibatch(Rng& rng, const std::vector<TransState>& dataset,
                                           int batch_size, const ScheduleConfig& sc,
                                           double t_min_frac);

// Builds the full minimized objective on the tape and returns the scalar root.
// Fills *out (term values) and counts clamp events when given.
Tape::Id build_total_loss(Tape& tape, const ModelParams& params,
                          const std::vector<MinibatchItem>& batch, const ScheduleConfig& sc,
                          double gamma, const std::string& rate_mode, LossBreakdown* out);

// Plain-value pieces (evaluated on a scratch tape).
double score_loss(const std::vector<MinibatchItem>& batch, const ModelParams& params,
                  const ScheduleConfig& sc);  // mean ||eps_pred - eps||^2, no weights
double jump_loss(const std::vector<MinibatchItem>& batch, const ModelParams& params,
                 const ScheduleConfig& sc, const std::string& rate_mode = "prop3");
double ce_loss(const std::vector<MinibatchItem>& batch, const ModelParams& params,
               const ScheduleConfig& sc);
LossBreakdown total_loss(const std::vector<MinibatchItem>& batch, const ModelParams& params,
                         const ScheduleConfig& sc, double gamma,
                         const std::string& rate_mode = "prop3");

// Mean squared residual against injected predictions (test oracle hook for
// the loss formula itself).
double score_loss_given(const std::vector<MinibatchItem>& batch,
                        const std::vector<std::vector<double>>& eps_pred);

class AdamOptimizer {
  public:
    AdamOptimizer(size_t dim, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);
    void step(std::vector<double>& params, const std::vector<double>& grad);
    const std::vector<double>& m() const { return m_; }
    const std::vector<double>& v() const { return v_; }
    void restore(std::vector<double> m, std::vector<double> v, long t);
    long t() const { return t_; }

  private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<double> m_, v_;
};

struct Checkpoint {
    int version = 1;
    ArchConfig arch;
    ScheduleConfig schedule;
    long step = 0;
    std::vector<double> params;
    std::vector<double> ema_params;
    std::vector<double> adam_m;
    std::vector<double> adam_v;

    ModelParams model(bool ema = true) const;
    std::string to_json() const;                      // exact round-trip
    static Checkpoint from_json(const std::string&);  //
};

struct TrainResult {
    Checkpoint checkpoint;
    std::string metrics_csv;  // step,score_term,...,total,clamp_count
};

// Adam + EMA training loop; aborts with std::runtime_error if the total loss
// goes non-finite.
TrainResult train(const std::vector<TransState>& dataset, const ScheduleConfig& sc,
                  const ArchConfig& arch, const TrainConfig& tc);

}  // namespace jumpdiff
