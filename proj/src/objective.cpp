#include "jumpdiff/objective.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace jumpdiff {

namespace {
constexpr double kRateFloor = 1e-12;  // clamp inside log, counted
constexpr double kRatioCap = 1e6;     // guards t ~ c*T where Lambda -> 0
constexpr double kLog2Pi = 1.8378770664093454836;

struct Accum {
    Tape& tape;
    Tape::Id id = -1;
    void add(Tape::Id x) { id = (id < 0) ? x : tape.add(id, x); }
    double value() const { return id < 0 ? 0.0 : tape.value(id); }
};
}  // namespace

std::vector<MinibatchItem> build_minibatch(Rng& rng, const std::vector<TransState>& dataset,
                                           int batch_size, const ScheduleConfig& sc,
                                           double t_min_frac) {
    if (dataset.empty()) throw std::invalid_argument("build_minibatch: empty dataset");
    if (batch_size < 1) throw std::invalid_argument("build_minibatch: batch_size must be >= 1");
    std::vector<MinibatchItem> batch;
    batch.reserve(static_cast<size_t>(batch_size));
    for (int b = 0; b < batch_size; ++b) {
        MinibatchItem it;
        it.t = rng.uniform(t_min_frac * sc.T, sc.T);
        it.X0 = dataset[static_cast<size_t>(rng.below(static_cast<int>(dataset.size())))];
        auto ns = sample_forward(rng, it.t, it.X0, sc);
        it.mask = std::move(ns.mask);
        it.Xt = std::move(ns.Xt);
        it.eps = std::move(ns.eps);
        if (it.Xt.n >= 2) {
            it.del_index = rng.below(it.Xt.n) + 1;  // K^del uniform
            it.Y = delete_component(it.Xt, it.del_index);
            auto comp = it.Xt.component(it.del_index);
            it.x_add.assign(comp.begin(), comp.end());
            it.valid_jump_terms = true;
        }
        batch.push_back(std::move(it));
    }
    return batch;
}

// lambda<- as a tape expression at state S; -1 when structurally zero.
static Tape::Id rate_on_tape(Tape& tape, const HeadsNodes& heads, const ScheduleConfig& sc,
                             double t, int n, const std::string& rate_mode, long* cap_events) {
    if (rate_mode == "direct-head") {
        if (heads.direct_rate < 0)
            throw std::invalid_argument("objective: direct-head rate_mode needs direct_rate_head arch");
        if (n >= sc.max_components) return -1;  // no capacity to ascend
        return heads.direct_rate;
    }
    const auto w = backward_rate_weights(sc, t, n, kRatioCap, cap_events);
    bool any = false;
    for (double v : w) any = any || v != 0.0;
    if (!any) return -1;
    return tape.dot(tape.softmax(heads.n0_logits), tape.leaf(w));
}

Tape::Id build_total_loss(Tape& tape, const ModelParams& params,
                          const std::vector<MinibatchItem>& batch, const ScheduleConfig& sc,
                          double gamma, const std::string& rate_mode, LossBreakdown* out) {
    if (batch.empty()) throw std::invalid_argument("build_total_loss: empty batch");
    const double B = static_cast<double>(batch.size());
    long clamps = 0;

    Accum score{tape}, rate_neg{tape}, rate_log{tape}, ins_ll{tape}, ce{tape};
    for (const auto& it : batch) {
        const HeadsNodes h = build_heads(tape, params, it.Xt, it.t, sc.T);

        // score: ||eps_pred - eps||^2
        Tape::Id r = tape.sub(h.eps_pred, tape.leaf(it.eps));
        score.add(tape.dot(r, r));

        // cross entropy: lse(logits) - logits[n0-1]
        ce.add(tape.sub(tape.logsumexp(h.n0_logits), tape.pick(h.n0_logits, it.X0.n - 1)));

        // -lambda<-(Xt) term (weight 1, always included when structurally nonzero)
        Tape::Id lam_x = rate_on_tape(tape, h, sc, it.t, it.Xt.n, rate_mode, &clamps);
        if (lam_x >= 0) rate_neg.add(lam_x);

        // lambda->(n_t) (log lambda<-(Y) + log A(x_add, i | Y))
        const double fr = it.valid_jump_terms ? sc.forward_rate(it.t, it.Xt.n) : 0.0;
        if (fr > 0.0) {
            const HeadsNodes hy = build_heads(tape, params, it.Y, it.t, sc.T);
            Tape::Id lam_y = rate_on_tape(tape, hy, sc, it.t, it.Y.n, rate_mode, &clamps);
            if (lam_y < 0) lam_y = tape.leaf1(0.0);
            if (tape.value(lam_y) < kRateFloor) ++clamps;
            Tape::Id loglam = tape.log_(tape.clamp(lam_y, kRateFloor, 1e300));
            rate_log.add(tape.scale(loglam, fr));

            // Gaussian log-likelihood of the deleted values under the insertion head
            Tape::Id diff = tape.sub(tape.leaf(it.x_add), hy.ins_mean);
            Tape::Id inv_var = tape.exp_(tape.scale(hy.ins_logstd, -2.0));
            Tape::Id quad = tape.dot(tape.mul(diff, diff), inv_var);
            Tape::Id ll = tape.shift(
                tape.sub(tape.scale(quad, -0.5), tape.sum(hy.ins_logstd)),
                -0.5 * kLog2Pi * params.arch.d);
            if (hy.ins_index_logits >= 0)
                ll = tape.add(ll, tape.sub(tape.pick(hy.ins_index_logits, it.del_index - 1),
                                           tape.logsumexp(hy.ins_index_logits)));
            ins_ll.add(tape.scale(ll, fr));
        }
    }

    const double T = sc.T;
    auto weighted = [&](Accum& a, double w) {
        return a.id < 0 ? tape.leaf1(0.0) : tape.scale(a.id, w / B);
    };
    Tape::Id score_w = weighted(score, 0.5 * T);
    Tape::Id rneg_w = weighted(rate_neg, T);
    Tape::Id rlog_w = weighted(rate_log, -T);
    Tape::Id ins_w = weighted(ins_ll, -T);
    Tape::Id ce_w = weighted(ce, gamma * T);
    Tape::Id total =
        tape.add(tape.add(tape.add(score_w, rneg_w), tape.add(rlog_w, ins_w)), ce_w);

    if (out) {
        out->score_term = tape.value(score_w);
        out->rate_neg_term = tape.value(rneg_w);
        out->rate_log_term = tape.value(rlog_w);
        out->ins_loglik_term = tape.value(ins_w);
        out->ce_term = tape.value(ce_w);
        out->total = tape.value(total);
        out->clamp_count = clamps;
    }
    return total;
}

double score_loss(const std::vector<MinibatchItem>& batch, const ModelParams& params,
                  const ScheduleConfig& sc) {
    for (const auto& it : batch)
        if (sc.alpha(it.t) >= 1.0)
            throw std::invalid_argument("score_loss: alpha(t) == 1 item in batch");
    Tape tape;
    double acc = 0.0;
    for (const auto& it : batch) {
        const HeadsNodes h = build_heads(tape, params, it.Xt, it.t, sc.T);
        Tape::Id r = tape.sub(h.eps_pred, tape.leaf(it.eps));
        acc += tape.value(tape.dot(r, r));
    }
    const double v = acc / static_cast<double>(batch.size());
    if (!std::isfinite(v)) throw std::runtime_error("score_loss: non-finite value");
    return v;
}

double jump_loss(const std::vector<MinibatchItem>& batch, const ModelParams& params,
                 const ScheduleConfig& sc, const std::string& rate_mode) {
    Tape tape;
    LossBreakdown bd;
    build_total_loss(tape, params, batch, sc, 0.0, rate_mode, &bd);
    return bd.rate_neg_term + bd.rate_log_term + bd.ins_loglik_term;
}

double ce_loss(const std::vector<MinibatchItem>& batch, const ModelParams& params,
               const ScheduleConfig& sc) {
    Tape tape;
    double acc = 0.0;
    for (const auto& it : batch) {
        const HeadsNodes h = build_heads(tape, params, it.Xt, it.t, sc.T);
        acc += tape.value(tape.sub(tape.logsumexp(h.n0_logits), tape.pick(h.n0_logits, it.X0.n - 1)));
    }
    return acc / static_cast<double>(batch.size());
}

LossBreakdown total_loss(const std::vector<MinibatchItem>& batch, const ModelParams& params,
                         const ScheduleConfig& sc, double gamma, const std::string& rate_mode) {
    Tape tape;
    LossBreakdown bd;
    build_total_loss(tape, params, batch, sc, gamma, rate_mode, &bd);
    return bd;
}

double score_loss_given(const std::vector<MinibatchItem>& batch,
                        const std::vector<std::vector<double>>& eps_pred) {
    if (batch.size() != eps_pred.size())
        throw std::invalid_argument("score_loss_given: size mismatch");
    double acc = 0.0;
    for (size_t k = 0; k < batch.size(); ++k) {
        if (batch[k].eps.size() != eps_pred[k].size())
            throw std::invalid_argument("score_loss_given: shape mismatch");
        for (size_t j = 0; j < eps_pred[k].size(); ++j) {
            const double d = eps_pred[k][j] - batch[k].eps[j];
            acc += d * d;
        }
    }
    return acc / static_cast<double>(batch.size());
}

AdamOptimizer::AdamOptimizer(size_t dim, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(dim, 0.0), v_(dim, 0.0) {}

void AdamOptimizer::step(std::vector<double>& params, const std::vector<double>& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
        throw std::invalid_argument("adam: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
        v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
        params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

void AdamOptimizer::restore(std::vector<double> m, std::vector<double> v, long t) {
    if (m.size() != m_.size() || v.size() != v_.size())
        throw std::invalid_argument("adam restore: size mismatch");
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
}

ModelParams Checkpoint::model(bool ema) const {
    Rng tmp(0);
    ModelParams p = init_params(arch, tmp);  // rebuilds the layout
    const auto& src = ema ? ema_params : params;
    if (src.size() != p.flat.size())
        throw std::invalid_argument("checkpoint: parameter vector does not match arch layout");
    p.flat = src;
    return p;
}

std::string Checkpoint::to_json() const {
    nlohmann::json j;
    j["version"] = version;
    j["arch"] = {{"mode", arch.mode},
                 {"hidden", arch.hidden},
                 {"depth", arch.depth},
                 {"time_feats", arch.time_feats},
                 {"d", arch.d},
                 {"max_components", arch.max_components},
                 {"direct_rate_head", arch.direct_rate_head}};
    j["schedule"] = {{"T", schedule.T},
                     {"beta_min", schedule.beta_min},
                     {"beta_max", schedule.beta_max},
                     {"rate_const", schedule.rate_const},
                     {"rate_zero_until_frac", schedule.rate_zero_until_frac},
                     {"max_components", schedule.max_components},
                     {"component_dim", schedule.component_dim}};
    j["step"] = step;
    j["params"] = params;
    j["ema_params"] = ema_params;
    j["adam_m"] = adam_m;
    j["adam_v"] = adam_v;
    return j.dump();
}

Checkpoint Checkpoint::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    Checkpoint c;
    c.version = j.at("version").get<int>();
    if (c.version != 1) throw std::invalid_argument("checkpoint: unsupported version");
    const auto& a = j.at("arch");
    c.arch.mode = a.at("mode").get<std::string>();
    c.arch.hidden = a.at("hidden").get<int>();
    c.arch.depth = a.at("depth").get<int>();
    c.arch.time_feats = a.at("time_feats").get<int>();
    c.arch.d = a.at("d").get<int>();
    c.arch.max_components = a.at("max_components").get<int>();
    c.arch.direct_rate_head = a.at("direct_rate_head").get<bool>();
    const auto& s = j.at("schedule");
    c.schedule.T = s.at("T").get<double>();
    c.schedule.beta_min = s.at("beta_min").get<double>();
    c.schedule.beta_max = s.at("beta_max").get<double>();
    c.schedule.rate_const = s.at("rate_const").get<double>();
    c.schedule.rate_zero_until_frac = s.at("rate_zero_until_frac").get<double>();
    c.schedule.max_components = s.at("max_components").get<int>();
    c.schedule.component_dim = s.at("component_dim").get<int>();
    c.step = j.at("step").get<long>();
    c.params = j.at("params").get<std::vector<double>>();
    c.ema_params = j.at("ema_params").get<std::vector<double>>();
    c.adam_m = j.at("adam_m").get<std::vector<double>>();
    c.adam_v = j.at("adam_v").get<std::vector<double>>();
    return c;
}

TrainResult train(const std::vector<TransState>& dataset, const ScheduleConfig& sc,
                  const ArchConfig& arch, const TrainConfig& tc) {
    if (tc.rate_mode == "direct-head" && !arch.direct_rate_head)
        throw std::invalid_argument("train: rate_mode=direct-head needs arch.direct_rate_head");
    Rng rng(tc.seed);
    ModelParams params = init_params(arch, rng);
    std::vector<double> ema = params.flat;
    AdamOptimizer opt(params.flat.size(), tc.lr);

    std::string csv =
        "step,score_term,rate_neg_term,rate_log_term,ins_loglik_term,ce_term,total,clamp_count\n";
    char row[320];
    Tape tape;
    std::vector<double> g(params.flat.size());
    for (long step = 1; step <= tc.steps; ++step) {
        auto batch = build_minibatch(rng, dataset, tc.batch_size, sc, tc.t_min_frac);
        tape.reset();
        LossBreakdown bd;
        Tape::Id root = build_total_loss(tape, params, batch, sc, tc.gamma, tc.rate_mode, &bd);
        if (!std::isfinite(bd.total))
            throw std::runtime_error("train: loss diverged at step " + std::to_string(step));
        std::fill(g.begin(), g.end(), 0.0);
        tape.backward(root, &g);
        opt.step(params.flat, g);
        for (size_t i = 0; i < ema.size(); ++i)
            ema[i] = tc.ema_decay * ema[i] + (1.0 - tc.ema_decay) * params.flat[i];
        std::snprintf(row, sizeof(row), "%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%ld\n", step,
                      bd.score_term, bd.rate_neg_term, bd.rate_log_term, bd.ins_loglik_term,
                      bd.ce_term, bd.total, bd.clamp_count);
        csv += row;
    }

    TrainResult out;
    out.checkpoint.version = 1;
    out.checkpoint.arch = arch;
    out.checkpoint.schedule = sc;
    out.checkpoint.step = tc.steps;
    out.checkpoint.params = params.flat;
    out.checkpoint.ema_params = std::move(ema);
    out.checkpoint.adam_m = opt.m();
    out.checkpoint.adam_v = opt.v();
    out.metrics_csv = std::move(csv);
    return out;
}

}  // namespace jumpdiff
