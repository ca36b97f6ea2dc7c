#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace superproc {

struct IntegrationResult {
    double value = 0.0;
    double error_estimate = 0.0;
    bool converged = true;
};

namespace detail {

// Nodes/weights of N-point Gauss-Legendre on [-1,1], Newton iteration on P_N.
// Computed once; cheaper to maintain than 30 hex literals and just as exact.
template <std::size_t N>
struct GaussLegendreTable {
    std::array<double, N> node{};
    std::array<double, N> weight{};

    GaussLegendreTable() {
        constexpr double pi = 3.141592653589793238462643383279502884;
        for (std::size_t i = 0; i < N; ++i) {
            double x = std::cos(pi * (static_cast<double>(i) + 0.75) /
                                (static_cast<double>(N) + 0.5));
            double dp = 0.0;
            for (int iter = 0; iter < 100; ++iter) {
                double p0 = 1.0, p1 = x;
                for (std::size_t k = 2; k <= N; ++k) {
                    double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = pk;
                }
                dp = N * (x * p1 - p0) / (x * x - 1.0);
                double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-16) break;
            }
            node[i] = x;
            weight[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
    }
};

template <std::size_t N>
inline const GaussLegendreTable<N>& gl_table() {
    static const GaussLegendreTable<N> table;
    return table;
}

} // namespace detail

template <typename F>
double integrate_gl15(F&& f, double a, double b) {
    const auto& t = detail::gl_table<15>();
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double acc = 0.0;
    for (std::size_t i = 0; i < 15; ++i)
        acc += t.weight[i] * f(mid + half * t.node[i]);
    return acc * half;
}

namespace detail {

template <typename F>
void adaptive_rec(F& f, double a, double b, double whole, double tol, int depth,
                  double noise_rel, IntegrationResult& out) {
    const double mid = 0.5 * (a + b);
    const double left = integrate_gl15(f, a, mid);
    const double right = integrate_gl15(f, mid, b);
    const double err = std::abs(left + right - whole);
    // The relative floor keeps evaluation noise (integrands that are themselves
    // quadratures, or that switch methods) from forcing refinement all the way
    // to the depth cap; the accumulated slack is at most noise_rel * int |f|.
    const double accept = tol + noise_rel * (std::abs(left) + std::abs(right));
    if (err < accept || depth <= 0) {
        out.value += left + right;
        out.error_estimate += err;
        if (depth <= 0 && err >= accept) out.converged = false;
        return;
    }
    adaptive_rec(f, a, mid, left, 0.5 * tol, depth - 1, noise_rel, out);
    adaptive_rec(f, mid, b, right, 0.5 * tol, depth - 1, noise_rel, out);
}

} // namespace detail

// Adaptive bisection with a GL15 panel per interval. abs_tol is the target for
// the whole interval; the estimate is the usual |panel - split panels| proxy.
// noise_rel should be raised toward the integrand's own relative accuracy when
// f is itself computed numerically.
template <typename F>
IntegrationResult integrate_adaptive(F&& f, double a, double b,
                                     double abs_tol = 1e-10, int max_depth = 22,
                                     double noise_rel = 1e-12) {
    IntegrationResult out;
    if (a == b) return out;
    const double whole = integrate_gl15(f, a, b);
    detail::adaptive_rec(f, a, b, whole, abs_tol, max_depth, noise_rel, out);
    return out;
}

} // namespace superproc
