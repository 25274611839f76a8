#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace jumpdiff {

// A point X = (n, x) in the union space  U_n {n} x R^{n*d}.
// Component i (1-based) occupies x[(i-1)*d .. i*d). States are immutable
// values; insert/delete return new states.
struct TransState {
    int n = 0;                  // current component count, 1 <= n <= max_components
    std::vector<double> x;      // flattened values, length n*d
    int d = 0;                  // component width
    int max_components = 0;     // N

    TransState() = default;
    TransState(int n_, std::vector<double> x_, int d_, int max_components_);

    std::span<const double> component(int i) const;  // 1-based
    void check() const;                              // throws on invariant violation
};

// Which of the n0 clean components survive at time t (the noisy state keeps
// the survivors in their original relative order).
struct DeletionMask {
    std::vector<std::uint8_t> bits;  // length n0, entries 0/1
    int n0 = 0;

    int popcount() const;
    void check() const;  // popcount >= 1, size matches n0
};

struct InsertionEvent {
    std::vector<double> y_add;  // length d
    int index = 0;              // 1-based, in [1, n+1] for the state being extended
};

// ins(X, y, i): result has n+1 components, component i equals y, relative
// order of existing components preserved. Throws on capacity or index errors.
TransState insert(const TransState& X, std::span<const double> y_add, int i);

// del(X, i): removes component i. Throws if X.n == 1 (the forward process
// never deletes the last component) or i out of range.
TransState delete_component(const TransState& X, int i);

// M_t(x0): concatenation of surviving components, length popcount(bits)*d.
std::vector<double> apply_mask(std::span<const double> x0, const DeletionMask& mask, int d);

// Convenience: masked clean state as a TransState.
TransState masked_state(const TransState& X0, const DeletionMask& mask);

}  // namespace jumpdiff
