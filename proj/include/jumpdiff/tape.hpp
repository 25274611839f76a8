#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace jumpdiff {

// Minimal reverse-mode tape over vector-valued nodes. Nodes are appended in
// topological order (operands must already exist), values live in one flat
// arena so a reset keeps capacity across training steps. backward() visits
// nodes in reverse creation order exactly once.
class Tape {
  public:
    using Id = std::int32_t;

    enum class Op : std::uint8_t {
        Leaf, Param, MatVec, Add, Sub, Mul, Scale, Shift, Tanh, Exp, Log,
        Softplus, Clamp, Slice, Sum, Dot, Softmax, LogSumExp, Pick, Concat2,
    };

    void reset();

    // Constant / differentiable input (grads of any node can be queried after
    // backward; leaves bound to parameters additionally scatter into the flat
    // parameter gradient).
    Id leaf(std::span<const double> v);
    Id leaf1(double v);
    Id param(std::span<const double> v, int flat_offset);

    Id matvec(Id W, Id x, int rows, int cols);  // y = W x, W row-major
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);                 // elementwise
    Id scale(Id a, double k);           // k * a
    Id shift(Id a, double m);           // a + m
    Id tanh_(Id a);
    Id exp_(Id a);
    Id log_(Id a);
    Id softplus(Id a);
    Id clamp(Id a, double lo, double hi);  // zero gradient outside (lo, hi)
    Id slice(Id a, int off, int len);
    Id sum(Id a);                       // scalar
    Id dot(Id a, Id b);                 // scalar
    Id softmax(Id a);
    Id logsumexp(Id a);                 // scalar, max-shifted
    Id pick(Id a, int idx);             // scalar a[idx]
    Id concat2(Id a, Id b);

    int size(Id id) const { return nodes_[static_cast<size_t>(id)].len; }
    double value(Id id) const;                    // requires scalar node
    std::span<const double> values(Id id) const;
    std::span<const double> grad(Id id) const;    // valid after backward()

    // Seeds d(root)/d(root) = 1 and accumulates adjoints. root must be scalar
    // and finite. If flat_param_grad is non-null it must already have the
    // full parameter length; Param node adjoints are added into it.
    void backward(Id root, std::vector<double>* flat_param_grad);

  private:
    struct Node {
        Op op;
        Id a = -1, b = -1;
        int off = 0, len = 0;
        int rows = 0, cols = 0;  // MatVec; also Slice offset in rows
        double k = 0.0, m = 0.0; // Scale/Shift/Clamp params
        int poff = -1;           // Param flat offset
    };

    Id push(Op op, int len, Id a = -1, Id b = -1);
    double* vptr(Id id) { return val_.data() + nodes_[static_cast<size_t>(id)].off; }
    const double* vptr(Id id) const { return val_.data() + nodes_[static_cast<size_t>(id)].off; }
    double* gptr(Id id) { return grad_.data() + nodes_[static_cast<size_t>(id)].off; }

    std::vector<Node> nodes_;
    std::vector<double> val_;
    std::vector<double> grad_;
    std::vector<Id> params_;
};

}  // namespace jumpdiff
