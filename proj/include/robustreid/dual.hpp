#pragma once

#include <cmath>

namespace robustreid {

// First-order dual number a + b*eps with eps^2 = 0. Running the analytic
// gradient routines on Dual inputs seeded with a direction vector yields
// exact Hessian-vector products (forward-over-reverse differentiation).
struct Dual {
    double v = 0.0;  // value
    double d = 0.0;  // directional derivative

    Dual() = default;
    Dual(double value) : v(value) {}
    Dual(double value, double deriv) : v(value), d(deriv) {}

    Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
    Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
    Dual& operator/=(const Dual& o) { d = (d * o.v - v * o.d) / (o.v * o.v); v /= o.v; return *this; }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator/(Dual a, const Dual& b) { return a /= b; }
inline Dual operator-(const Dual& a) { return Dual(-a.v, -a.d); }

inline bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
inline bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
inline bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
inline bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }

inline Dual exp(const Dual& a) { double e = std::exp(a.v); return Dual(e, a.d * e); }
inline Dual log(const Dual& a) { return Dual(std::log(a.v), a.d / a.v); }
inline Dual sqrt(const Dual& a) { double s = std::sqrt(a.v); return Dual(s, s > 0.0 ? a.d / (2.0 * s) : 0.0); }
inline Dual tanh(const Dual& a) { double t = std::tanh(a.v); return Dual(t, a.d * (1.0 - t * t)); }

// Plain value of a (possibly dual) scalar; branch decisions compare values.
inline double value(double x) { return x; }
inline double value(const Dual& x) { return x.v; }

inline double deriv(double) { return 0.0; }
inline double deriv(const Dual& x) { return x.d; }

}  // namespace robustreid
