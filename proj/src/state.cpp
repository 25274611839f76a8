#include "jumpdiff/state.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace jumpdiff {

TransState::TransState(int n_, std::vector<double> x_, int d_, int max_components_)
    : n(n_), x(std::move(x_)), d(d_), max_components(max_components_) {
    check();
}

void TransState::check() const {
    if (d < 1) throw std::invalid_argument("TransState: component width d must be >= 1");
    if (max_components < 1) throw std::invalid_argument("TransState: max_components must be >= 1");
    if (n < 1 || n > max_components)
        throw std::invalid_argument("TransState: n=" + std::to_string(n) + " outside [1, " +
                                    std::to_string(max_components) + "]");
    if (x.size() != static_cast<size_t>(n) * d)
        throw std::invalid_argument("TransState: x has length " + std::to_string(x.size()) +
                                    ", expected " + std::to_string(static_cast<size_t>(n) * d));
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument("TransState: non-finite entry in x");
}

std::span<const double> TransState::component(int i) const {
    if (i < 1 || i > n) throw std::out_of_range("TransState::component: index out of range");
    return {x.data() + static_cast<size_t>(i - 1) * d, static_cast<size_t>(d)};
}

int DeletionMask::popcount() const {
    int c = 0;
    for (auto b : bits) c += (b != 0);
    return c;
}

void DeletionMask::check() const {
    if (bits.size() != static_cast<size_t>(n0))
        throw std::invalid_argument("DeletionMask: bits length does not match n0");
    if (popcount() < 1)
        throw std::invalid_argument("DeletionMask: at least one component must survive");
}

TransState insert(const TransState& X, std::span<const double> y_add, int i) {
    if (X.n >= X.max_components)
        throw std::invalid_argument("insert: state already at max_components capacity");
    if (i < 1 || i > X.n + 1)
        throw std::out_of_range("insert: index " + std::to_string(i) + " outside [1, " +
                                std::to_string(X.n + 1) + "]");
    if (y_add.size() != static_cast<size_t>(X.d))
        throw std::invalid_argument("insert: y_add has wrong width");

    std::vector<double> out;
    out.reserve(X.x.size() + X.d);
    const size_t cut = static_cast<size_t>(i - 1) * X.d;
    out.insert(out.end(), X.x.begin(), X.x.begin() + cut);
    out.insert(out.end(), y_add.begin(), y_add.end());
    out.insert(out.end(), X.x.begin() + cut, X.x.end());
    return TransState(X.n + 1, std::move(out), X.d, X.max_components);
}

TransState delete_component(const TransState& X, int i) {
    if (X.n <= 1)
        throw std::invalid_argument("delete: cannot delete the last remaining component");
    if (i < 1 || i > X.n) throw std::out_of_range("delete: index out of range");

    std::vector<double> out;
    out.reserve(X.x.size() - X.d);
    const size_t cut = static_cast<size_t>(i - 1) * X.d;
    out.insert(out.end(), X.x.begin(), X.x.begin() + cut);
    out.insert(out.end(), X.x.begin() + cut + X.d, X.x.end());
    return TransState(X.n - 1, std::move(out), X.d, X.max_components);
}

std::vector<double> apply_mask(std::span<const double> x0, const DeletionMask& mask, int d) {
    mask.check();
    if (x0.size() != static_cast<size_t>(mask.n0) * d)
        throw std::invalid_argument("apply_mask: x0 length does not match n0*d");
    std::vector<double> out;
    out.reserve(static_cast<size_t>(mask.popcount()) * d);
    for (int i = 0; i < mask.n0; ++i)
        if (mask.bits[i])
            out.insert(out.end(), x0.begin() + static_cast<size_t>(i) * d,
                       x0.begin() + static_cast<size_t>(i + 1) * d);
    return out;
}

TransState masked_state(const TransState& X0, const DeletionMask& mask) {
    if (mask.n0 != X0.n) throw std::invalid_argument("masked_state: mask n0 does not match state");
    return TransState(mask.popcount(), apply_mask(X0.x, mask, X0.d), X0.d, X0.max_components);
}

}  // namespace jumpdiff
