// Copyright (c) 2026, gradleak contributors
// SPDX-License-Identifier: Apache-2.0
//
// First-order dual numbers. Running the backward pass over Dual scalars
// yields exact directional derivatives of gradients (forward-over-reverse),
// which is how the engine computes gradients-of-gradients and input-gradient
// Jacobians without a second tape.

#pragma once

#include <cmath>

namespace gradleak {

struct Dual {
    double v = 0.0;  // primal value
    double d = 0.0;  // tangent

    Dual() = default;
    Dual(double value) : v(value) {}  // NOLINT: implicit by design
    Dual(double value, double tangent) : v(value), d(tangent) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) {
    return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
}

inline Dual& operator+=(Dual& a, Dual b) { a = a + b; return a; }
inline Dual& operator-=(Dual& a, Dual b) { a = a - b; return a; }
inline Dual& operator*=(Dual& a, Dual b) { a = a * b; return a; }
inline Dual& operator/=(Dual& a, Dual b) { a = a / b; return a; }

// Comparisons act on the primal part so control flow (ReLU gates, pooling
// argmax) matches the plain-double execution bit for bit.
inline bool operator<(Dual a, Dual b) { return a.v < b.v; }
inline bool operator>(Dual a, Dual b) { return a.v > b.v; }
inline bool operator<=(Dual a, Dual b) { return a.v <= b.v; }
inline bool operator>=(Dual a, Dual b) { return a.v >= b.v; }

inline Dual exp(Dual a) {
    const double e = std::exp(a.v);
    return {e, e * a.d};
}
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual sqrt(Dual a) {
    const double r = std::sqrt(a.v);
    return {r, a.d / (2.0 * r)};
}

inline double primal(double x) { return x; }
inline double primal(Dual x) { return x.v; }
inline double tangent(double) { return 0.0; }
inline double tangent(Dual x) { return x.d; }

}  // namespace gradleak
