#include "jumpdiff/net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace jumpdiff {

namespace {

constexpr double kLogStdLo = -5.0;
constexpr double kLogStdHi = 2.0;

int input_dim(const ArchConfig& a) {
    // [component values, time features, n/N] (+ normalized position if ordered)
    return a.d + a.time_feats + 1 + (a.ordered() ? 1 : 0);
}

struct LayoutBuilder {
    std::vector<LayerSpec> layout;
    int off = 0;
    void mat(const std::string& name, int rows, int cols) {
        layout.push_back({name, off, rows * cols, rows, cols});
        off += rows * cols;
    }
    void vec(const std::string& name, int len) {
        layout.push_back({name, off, len, len, 0});
        off += len;
    }
};

std::vector<LayerSpec> make_layout(const ArchConfig& a) {
    LayoutBuilder b;
    const int in = input_dim(a), H = a.hidden, N = a.max_components, d = a.d;
    b.mat("enc0.W", H, in);
    b.vec("enc0.b", H);
    for (int k = 1; k < a.depth; ++k) {
        b.mat("enc" + std::to_string(k) + ".W", H, H);
        b.vec("enc" + std::to_string(k) + ".b", H);
    }
    b.mat("dec0.W", H, 2 * H);
    b.vec("dec0.b", H);
    for (int k = 1; k < a.depth; ++k) {
        b.mat("dec" + std::to_string(k) + ".W", H, H);
        b.vec("dec" + std::to_string(k) + ".b", H);
    }
    b.mat("eps.W", d, H);
    b.vec("eps.b", d);
    b.mat("n0.W", N, H);
    b.vec("n0.b", N);
    b.mat("ins_mean.W", d, H);
    b.vec("ins_mean.b", d);
    b.mat("ins_logstd.W", d, H);
    b.vec("ins_logstd.b", d);
    if (a.ordered()) {
        b.vec("idx.left", H);
        b.vec("idx.right", H);
        b.mat("idx.W", 1, 2 * H);
        b.vec("idx.b", 1);
    }
    if (a.direct_rate_head) {
        b.mat("rate.W", 1, H);
        b.vec("rate.b", 1);
    }
    return b.layout;
}

// Per-evaluation cache of tape param nodes, one per layout entry.
struct Binder {
    Tape& tape;
    const ModelParams& p;
    std::vector<Tape::Id> ids;
    Binder(Tape& t, const ModelParams& mp)
        : tape(t), p(mp), ids(mp.layout.size(), Tape::Id{-1}) {}
    Tape::Id operator()(const std::string& name) {
        for (size_t i = 0; i < p.layout.size(); ++i) {
            if (p.layout[i].name != name) continue;
            if (ids[i] < 0) ids[i] = tape.param(p.block(p.layout[i]), p.layout[i].off);
            return ids[i];
        }
        throw std::invalid_argument("net: unknown layer " + name);
    }
};

Tape::Id mlp(Tape& t, Binder& bind, const std::string& prefix, int depth, int H, int in_dim,
             Tape::Id x) {
    Tape::Id h = t.tanh_(t.add(t.matvec(bind(prefix + "0.W"), x, H, in_dim), bind(prefix + "0.b")));
    for (int k = 1; k < depth; ++k) {
        const std::string s = prefix + std::to_string(k);
        h = t.tanh_(t.add(t.matvec(bind(s + ".W"), h, H, H), bind(s + ".b")));
    }
    return h;
}

}  // namespace

void ArchConfig::validate() const {
    if (mode != "set" && mode != "ordered")
        throw std::invalid_argument("arch: mode must be 'set' or 'ordered'");
    if (hidden < 1) throw std::invalid_argument("arch: hidden must be >= 1");
    if (depth < 1) throw std::invalid_argument("arch: depth must be >= 1");
    if (time_feats < 2 || time_feats % 2 != 0)
        throw std::invalid_argument("arch: time_feats must be a positive even number");
    if (d < 1 || max_components < 1)
        throw std::invalid_argument("arch: d and max_components must be >= 1");
}

const LayerSpec& ModelParams::find(const std::string& name) const {
    for (const auto& l : layout)
        if (l.name == name) return l;
    throw std::invalid_argument("params: unknown layer " + name);
}

ModelParams init_params(const ArchConfig& arch, Rng& rng) {
    arch.validate();
    ModelParams p;
    p.arch = arch;
    p.layout = make_layout(arch);
    int total = 0;
    for (const auto& l : p.layout) total = std::max(total, l.off + l.len);
    p.flat.assign(static_cast<size_t>(total), 0.0);
    for (const auto& l : p.layout) {
        if (l.cols > 0) {
            const double bound = std::sqrt(6.0 / (l.rows + l.cols));
            for (int i = 0; i < l.len; ++i) p.flat[static_cast<size_t>(l.off + i)] = rng.uniform(-bound, bound);
        } else if (l.name == "ins_logstd.b") {
            for (int i = 0; i < l.len; ++i)
                p.flat[static_cast<size_t>(l.off + i)] = std::log(0.5);
        } else if (l.name == "idx.left" || l.name == "idx.right") {
            for (int i = 0; i < l.len; ++i)
                p.flat[static_cast<size_t>(l.off + i)] = rng.uniform(-0.1, 0.1);
        }
    }
    return p;
}

std::vector<double> time_features(double u, int count) {
    std::vector<double> f(static_cast<size_t>(count));
    double w = 3.14159265358979323846;
    for (int k = 0; k + 1 < count; k += 2) {
        f[static_cast<size_t>(k)] = std::sin(w * u);
        f[static_cast<size_t>(k) + 1] = std::cos(w * u);
        w *= 2.0;
    }
    return f;
}

HeadsNodes build_heads(Tape& tape, const ModelParams& params, const TransState& Xt, double t,
                       double horizon_T) {
    const ArchConfig& a = params.arch;
    if (Xt.d != a.d || Xt.n < 1 || Xt.n > a.max_components)
        throw std::invalid_argument("build_heads: state incompatible with arch");
    Binder bind(tape, params);
    const int n = Xt.n, d = a.d, H = a.hidden;

    HeadsNodes out;
    out.x_in = tape.leaf(Xt.x);

    const auto tf = time_features(t / horizon_T, a.time_feats);
    const Tape::Id tf_node = tape.leaf(tf);
    const double nfrac = static_cast<double>(n) / a.max_components;

    std::vector<Tape::Id> h(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Tape::Id xi = tape.slice(out.x_in, i * d, d);
        std::vector<double> extra;
        extra.push_back(nfrac);
        if (a.ordered()) extra.push_back(n > 1 ? static_cast<double>(i) / (n - 1) : 0.0);
        Tape::Id feat = tape.concat2(tape.concat2(xi, tf_node), tape.leaf(extra));
        h[static_cast<size_t>(i)] = mlp(tape, bind, "enc", a.depth, H, input_dim(a), feat);
    }

    // Pooled context. In set mode the summation order is canonicalized by the
    // raw component values so that pooling is exactly permutation-invariant.
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    if (!a.ordered()) {
        std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
            return std::lexicographical_compare(
                Xt.x.begin() + static_cast<size_t>(i) * d, Xt.x.begin() + static_cast<size_t>(i + 1) * d,
                Xt.x.begin() + static_cast<size_t>(j) * d, Xt.x.begin() + static_cast<size_t>(j + 1) * d);
        });
    }
    Tape::Id acc = h[static_cast<size_t>(order[0])];
    for (int i = 1; i < n; ++i) acc = tape.add(acc, h[static_cast<size_t>(order[i])]);
    Tape::Id ctx = tape.scale(acc, 1.0 / n);

    std::vector<Tape::Id> u(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        u[static_cast<size_t>(i)] =
            mlp(tape, bind, "dec", a.depth, H, 2 * H, tape.concat2(h[static_cast<size_t>(i)], ctx));

    Tape::Id eps = tape.add(tape.matvec(bind("eps.W"), u[0], d, H), bind("eps.b"));
    for (int i = 1; i < n; ++i)
        eps = tape.concat2(
            eps, tape.add(tape.matvec(bind("eps.W"), u[static_cast<size_t>(i)], d, H), bind("eps.b")));
    out.eps_pred = eps;

    out.n0_logits = tape.add(tape.matvec(bind("n0.W"), ctx, a.max_components, H), bind("n0.b"));
    out.ins_mean = tape.add(tape.matvec(bind("ins_mean.W"), ctx, d, H), bind("ins_mean.b"));
    out.ins_logstd = tape.clamp(
        tape.add(tape.matvec(bind("ins_logstd.W"), ctx, d, H), bind("ins_logstd.b")), kLogStdLo,
        kLogStdHi);

    if (a.ordered()) {
        Tape::Id left = bind("idx.left"), right = bind("idx.right");
        Tape::Id logits = -1;
        for (int gap = 0; gap <= n; ++gap) {
            Tape::Id lo = gap == 0 ? left : u[static_cast<size_t>(gap) - 1];
            Tape::Id hi = gap == n ? right : u[static_cast<size_t>(gap)];
            Tape::Id lg = tape.add(tape.matvec(bind("idx.W"), tape.concat2(lo, hi), 1, 2 * H),
                                   bind("idx.b"));
            logits = gap == 0 ? lg : tape.concat2(logits, lg);
        }
        out.ins_index_logits = logits;
    }
    if (a.direct_rate_head)
        out.direct_rate = tape.softplus(
            tape.add(tape.matvec(bind("rate.W"), ctx, 1, H), bind("rate.b")));
    return out;
}

HeadsOutput forward_heads(const ModelParams& params, const TransState& Xt, double t,
                          double horizon_T) {
    thread_local Tape tape;
    tape.reset();
    const HeadsNodes h = build_heads(tape, params, Xt, t, horizon_T);
    HeadsOutput o;
    auto take = [&](Tape::Id id) {
        auto s = tape.values(id);
        return std::vector<double>(s.begin(), s.end());
    };
    o.eps_pred = take(h.eps_pred);
    o.n0_logits = take(h.n0_logits);
    if (h.ins_index_logits >= 0) o.ins_index_logits = take(h.ins_index_logits);
    o.ins_mean = take(h.ins_mean);
    o.ins_logstd = take(h.ins_logstd);
    if (h.direct_rate >= 0) o.direct_rate = tape.value(h.direct_rate);
    return o;
}

std::vector<double> grad(const ModelParams& params,
                         const std::function<Tape::Id(Tape&, const ModelParams&)>& build_loss) {
    Tape tape;
    const Tape::Id root = build_loss(tape, params);
    std::vector<double> g(params.flat.size(), 0.0);
    tape.backward(root, &g);
    return g;
}

std::vector<double> softmax_values(std::span<const double> logits) {
    std::vector<double> s(logits.begin(), logits.end());
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (auto& v : s) {
        v = std::exp(v - mx);
        z += v;
    }
    for (auto& v : s) v /= z;
    return s;
}

}  // namespace jumpdiff
