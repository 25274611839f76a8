#include "jumpdiff/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace jumpdiff {

void Tape::reset() {
    nodes_.clear();
    val_.clear();
    grad_.clear();
    params_.clear();
}

Tape::Id Tape::push(Op op, int len, Id a, Id b) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.off = static_cast<int>(val_.size());
    n.len = len;
    val_.resize(val_.size() + static_cast<size_t>(len), 0.0);
    nodes_.push_back(n);
    return static_cast<Id>(nodes_.size()) - 1;
}

Tape::Id Tape::leaf(std::span<const double> v) {
    Id id = push(Op::Leaf, static_cast<int>(v.size()));
    std::copy(v.begin(), v.end(), vptr(id));
    return id;
}

Tape::Id Tape::leaf1(double v) { return leaf(std::span<const double>(&v, 1)); }

Tape::Id Tape::param(std::span<const double> v, int flat_offset) {
    Id id = push(Op::Param, static_cast<int>(v.size()));
    std::copy(v.begin(), v.end(), vptr(id));
    nodes_[static_cast<size_t>(id)].poff = flat_offset;
    params_.push_back(id);
    return id;
}

Tape::Id Tape::matvec(Id W, Id x, int rows, int cols) {
    if (size(W) != rows * cols || size(x) != cols)
        throw std::invalid_argument("tape matvec: shape mismatch");
    Id id = push(Op::MatVec, rows, W, x);
    nodes_[static_cast<size_t>(id)].rows = rows;
    nodes_[static_cast<size_t>(id)].cols = cols;
    const double* w = vptr(W);
    const double* xv = vptr(x);
    double* y = vptr(id);
    for (int i = 0; i < rows; ++i) {
        double acc = 0.0;
        const double* wr = w + static_cast<size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) acc += wr[j] * xv[j];
        y[i] = acc;
    }
    return id;
}

Tape::Id Tape::add(Id a, Id b) {
    if (size(a) != size(b)) throw std::invalid_argument("tape add: length mismatch");
    Id id = push(Op::Add, size(a), a, b);
    const double* av = vptr(a);
    const double* bv = vptr(b);
    double* y = vptr(id);
    for (int i = 0; i < size(id); ++i) y[i] = av[i] + bv[i];
    return id;
}

Tape::Id Tape::sub(Id a, Id b) {
    if (size(a) != size(b)) throw std::invalid_argument("tape sub: length mismatch");
    Id id = push(Op::Sub, size(a), a, b);
    const double* av = vptr(a);
    const double* bv = vptr(b);
    double* y = vptr(id);
    for (int i = 0; i < size(id); ++i) y[i] = av[i] - bv[i];
    return id;
}

Tape::Id Tape::mul(Id a, Id b) {
    if (size(a) != size(b)) throw std::invalid_argument("tape mul: length mismatch");
    Id id = push(Op::Mul, size(a), a, b);
    const double* av = vptr(a);
    const double* bv = vptr(b);
    double* y = vptr(id);
    for (int i = 0; i < size(id); ++i) y[i] = av[i] * bv[i];
    return id;
}

Tape::Id Tape::scale(Id a, double k) {
    Id id = push(Op::Scale, size(a), a);
    nodes_[static_cast<size_t>(id)].k = k;
    const double* av = vptr(a);
    double* y = vptr(id);
    for (int i = 0; i < size(id); ++i) y[i] = k * av[i];
    return id;
}

Tape::Id Tape::shift(Id a, double m) {
    Id id = push(Op::Shift, size(a), a);
    nodes_[static_cast<size_t>(id)].m = m;
    const double* av = vptr(a);
    double* y = vptr(id);
    for (int i = 0; i < size(id); ++i) y[i] = av[i] + m;
    return id;
}

Tape::Id Tape::tanh_(Id a) {
    Id id = push(Op::Tanh, size(a), a);
    const double* av = vptr(a);
    double* y = vptr(id);
    for (int i = 0; i < size(id); ++i) y[i] = std::tanh(av[i]);
    return id;
}

Tape::Id Tape::exp_(Id a) {
    Id id = push(Op::Exp, size(a), a);
    const double* av = vptr(a);
    double* y = vptr(id);
    for (int i = 0; i < size(id); ++i) y[i] = std::exp(av[i]);
    return id;
}

Tape::Id Tape::log_(Id a) {
    Id id = push(Op::Log, size(a), a);
    const double* av = vptr(a);
    double* y = vptr(id);
    for (int i = 0; i < size(id); ++i) y[i] = std::log(av[i]);
    return id;
}

Tape::Id Tape::softplus(Id a) {
    Id id = push(Op::Softplus, size(a), a);
    const double* av = vptr(a);
    double* y = vptr(id);
    for (int i = 0; i < size(id); ++i) {
        const double x = av[i];
        y[i] = x > 30.0 ? x : (x < -30.0 ? std::exp(x) : std::log1p(std::exp(x)));
    }
    return id;
}

Tape::Id Tape::clamp(Id a, double lo, double hi) {
    Id id = push(Op::Clamp, size(a), a);
    nodes_[static_cast<size_t>(id)].k = lo;
    nodes_[static_cast<size_t>(id)].m = hi;
    const double* av = vptr(a);
    double* y = vptr(id);
    for (int i = 0; i < size(id); ++i) y[i] = std::min(hi, std::max(lo, av[i]));
    return id;
}

Tape::Id Tape::slice(Id a, int off, int len) {
    if (off < 0 || len < 0 || off + len > size(a))
        throw std::invalid_argument("tape slice: out of range");
    Id id = push(Op::Slice, len, a);
    nodes_[static_cast<size_t>(id)].rows = off;
    std::memcpy(vptr(id), vptr(a) + off, static_cast<size_t>(len) * sizeof(double));
    return id;
}

Tape::Id Tape::sum(Id a) {
    Id id = push(Op::Sum, 1, a);
    const double* av = vptr(a);
    double acc = 0.0;
    for (int i = 0; i < size(a); ++i) acc += av[i];
    *vptr(id) = acc;
    return id;
}

Tape::Id Tape::dot(Id a, Id b) {
    if (size(a) != size(b)) throw std::invalid_argument("tape dot: length mismatch");
    Id id = push(Op::Dot, 1, a, b);
    const double* av = vptr(a);
    const double* bv = vptr(b);
    double acc = 0.0;
    for (int i = 0; i < size(a); ++i) acc += av[i] * bv[i];
    *vptr(id) = acc;
    return id;
}

Tape::Id Tape::softmax(Id a) {
    Id id = push(Op::Softmax, size(a), a);
    const double* av = vptr(a);
    double* y = vptr(id);
    double mx = av[0];
    for (int i = 1; i < size(a); ++i) mx = std::max(mx, av[i]);
    double z = 0.0;
    for (int i = 0; i < size(a); ++i) {
        y[i] = std::exp(av[i] - mx);
        z += y[i];
    }
    for (int i = 0; i < size(a); ++i) y[i] /= z;
    return id;
}

Tape::Id Tape::logsumexp(Id a) {
    Id id = push(Op::LogSumExp, 1, a);
    const double* av = vptr(a);
    double mx = av[0];
    for (int i = 1; i < size(a); ++i) mx = std::max(mx, av[i]);
    double z = 0.0;
    for (int i = 0; i < size(a); ++i) z += std::exp(av[i] - mx);
    *vptr(id) = mx + std::log(z);
    return id;
}

Tape::Id Tape::pick(Id a, int idx) {
    if (idx < 0 || idx >= size(a)) throw std::invalid_argument("tape pick: index out of range");
    Id id = push(Op::Pick, 1, a);
    nodes_[static_cast<size_t>(id)].rows = idx;
    *vptr(id) = vptr(a)[idx];
    return id;
}

Tape::Id Tape::concat2(Id a, Id b) {
    Id id = push(Op::Concat2, size(a) + size(b), a, b);
    std::memcpy(vptr(id), vptr(a), static_cast<size_t>(size(a)) * sizeof(double));
    std::memcpy(vptr(id) + size(a), vptr(b), static_cast<size_t>(size(b)) * sizeof(double));
    return id;
}

double Tape::value(Id id) const {
    if (size(id) != 1) throw std::invalid_argument("tape value: node is not scalar");
    return *vptr(id);
}

std::span<const double> Tape::values(Id id) const {
    return {vptr(id), static_cast<size_t>(size(id))};
}

std::span<const double> Tape::grad(Id id) const {
    return {grad_.data() + nodes_[static_cast<size_t>(id)].off, static_cast<size_t>(size(id))};
}

void Tape::backward(Id root, std::vector<double>* flat_param_grad) {
    if (size(root) != 1) throw std::invalid_argument("tape backward: root must be scalar");
    if (!std::isfinite(*vptr(root)))
        throw std::runtime_error("tape backward: non-finite loss value");
    grad_.assign(val_.size(), 0.0);
    gptr(root)[0] = 1.0;

    for (Id id = static_cast<Id>(nodes_.size()) - 1; id >= 0; --id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        const double* g = grad_.data() + n.off;
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Param:
                if (flat_param_grad) {
                    double* dst = flat_param_grad->data() + n.poff;
                    for (int i = 0; i < n.len; ++i) dst[i] += g[i];
                }
                break;
            case Op::MatVec: {
                double* dW = gptr(n.a);
                double* dx = gptr(n.b);
                const double* w = vptr(n.a);
                const double* xv = vptr(n.b);
                for (int i = 0; i < n.rows; ++i) {
                    const double gi = g[i];
                    if (gi == 0.0) continue;
                    double* dwr = dW + static_cast<size_t>(i) * n.cols;
                    const double* wr = w + static_cast<size_t>(i) * n.cols;
                    for (int j = 0; j < n.cols; ++j) {
                        dwr[j] += gi * xv[j];
                        dx[j] += gi * wr[j];
                    }
                }
                break;
            }
            case Op::Add: {
                double* da = gptr(n.a);
                double* db = gptr(n.b);
                for (int i = 0; i < n.len; ++i) {
                    da[i] += g[i];
                    db[i] += g[i];
                }
                break;
            }
            case Op::Sub: {
                double* da = gptr(n.a);
                double* db = gptr(n.b);
                for (int i = 0; i < n.len; ++i) {
                    da[i] += g[i];
                    db[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                double* da = gptr(n.a);
                double* db = gptr(n.b);
                const double* av = vptr(n.a);
                const double* bv = vptr(n.b);
                for (int i = 0; i < n.len; ++i) {
                    da[i] += g[i] * bv[i];
                    db[i] += g[i] * av[i];
                }
                break;
            }
            case Op::Scale: {
                double* da = gptr(n.a);
                for (int i = 0; i < n.len; ++i) da[i] += n.k * g[i];
                break;
            }
            case Op::Shift: {
                double* da = gptr(n.a);
                for (int i = 0; i < n.len; ++i) da[i] += g[i];
                break;
            }
            case Op::Tanh: {
                double* da = gptr(n.a);
                const double* y = vptr(id);
                for (int i = 0; i < n.len; ++i) da[i] += g[i] * (1.0 - y[i] * y[i]);
                break;
            }
            case Op::Exp: {
                double* da = gptr(n.a);
                const double* y = vptr(id);
                for (int i = 0; i < n.len; ++i) da[i] += g[i] * y[i];
                break;
            }
            case Op::Log: {
                double* da = gptr(n.a);
                const double* av = vptr(n.a);
                for (int i = 0; i < n.len; ++i) da[i] += g[i] / av[i];
                break;
            }
            case Op::Softplus: {
                double* da = gptr(n.a);
                const double* av = vptr(n.a);
                for (int i = 0; i < n.len; ++i) da[i] += g[i] / (1.0 + std::exp(-av[i]));
                break;
            }
            case Op::Clamp: {
                double* da = gptr(n.a);
                const double* av = vptr(n.a);
                for (int i = 0; i < n.len; ++i)
                    if (av[i] > n.k && av[i] < n.m) da[i] += g[i];
                break;
            }
            case Op::Slice: {
                double* da = gptr(n.a) + n.rows;
                for (int i = 0; i < n.len; ++i) da[i] += g[i];
                break;
            }
            case Op::Sum: {
                double* da = gptr(n.a);
                const int alen = nodes_[static_cast<size_t>(n.a)].len;
                for (int i = 0; i < alen; ++i) da[i] += g[0];
                break;
            }
            case Op::Dot: {
                double* da = gptr(n.a);
                double* db = gptr(n.b);
                const double* av = vptr(n.a);
                const double* bv = vptr(n.b);
                const int alen = nodes_[static_cast<size_t>(n.a)].len;
                for (int i = 0; i < alen; ++i) {
                    da[i] += g[0] * bv[i];
                    db[i] += g[0] * av[i];
                }
                break;
            }
            case Op::Softmax: {
                double* da = gptr(n.a);
                const double* s = vptr(id);
                double gs = 0.0;
                for (int i = 0; i < n.len; ++i) gs += g[i] * s[i];
                for (int i = 0; i < n.len; ++i) da[i] += s[i] * (g[i] - gs);
                break;
            }
            case Op::LogSumExp: {
                double* da = gptr(n.a);
                const double* av = vptr(n.a);
                const int alen = nodes_[static_cast<size_t>(n.a)].len;
                const double lse = *vptr(id);
                for (int i = 0; i < alen; ++i) da[i] += g[0] * std::exp(av[i] - lse);
                break;
            }
            case Op::Pick: {
                gptr(n.a)[n.rows] += g[0];
                break;
            }
            case Op::Concat2: {
                double* da = gptr(n.a);
                double* db = gptr(n.b);
                const int alen = nodes_[static_cast<size_t>(n.a)].len;
                for (int i = 0; i < alen; ++i) da[i] += g[i];
                const int blen = nodes_[static_cast<size_t>(n.b)].len;
                for (int i = 0; i < blen; ++i) db[i] += g[alen + i];
                break;
            }
        }
    }
}

}  // namespace jumpdiff
