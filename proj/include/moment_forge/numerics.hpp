#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <queue>
#include <vector>

#include "error.hpp"

namespace moment_forge {

/** @brief Nodes and weights of the N-point Gauss-Legendre rule on [-1, 1]. */
template <int N>
struct GaussLegendre {
    static_assert(N >= 2);
    std::array<double, N> x{};
    std::array<double, N> w{};

    GaussLegendre() {
        for (int i = 0; i < (N + 1) / 2; ++i) {
            double z = std::cos(std::numbers::pi * (i + 0.75) / (N + 0.5));
            double dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = z;
                for (int k = 2; k <= N; ++k) {
                    double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = N * (z * p1 - p0) / (z * z - 1.0);
                double dz = p1 / dp;
                z -= dz;
                if (std::abs(dz) < 1e-16) break;
            }
            // recompute derivative at the converged node
            double p0 = 1.0, p1 = z;
            for (int k = 2; k <= N; ++k) {
                double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = N * (z * p1 - p0) / (z * z - 1.0);
            double wi = 2.0 / ((1.0 - z * z) * dp * dp);
            x[i] = -z;
            x[N - 1 - i] = z;
            w[i] = w[N - 1 - i] = wi;
        }
        if (N % 2 == 1) x[N / 2] = 0.0;
    }
};

template <int N>
const GaussLegendre<N>& gauss_legendre() {
    static const GaussLegendre<N> rule;
    return rule;
}

/// Integral over [a, b] with the N-point Gauss-Legendre rule.
template <int N, class F>
double gl_integrate(F&& f, double a, double b) {
    const auto& r = gauss_legendre<N>();
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double s = 0.0;
    for (int i = 0; i < N; ++i) s += r.w[i] * f(mid + half * r.x[i]);
    return s * half;
}

struct IntegrationResult {
    double value = 0.0;
    double error = 0.0;
    bool converged = false;
    int intervals = 0;
};

namespace detail {

inline constexpr std::array<double, 8> gk15_x{
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0};
inline constexpr std::array<double, 8> gk15_wk{
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> gk15_wg{
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
    double a, b, value, error;
    bool operator<(const Segment& o) const { return error < o.error; }
};

template <class F>
Segment gk15(F& f, double a, double b) {
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    const double fc = f(c);
    double k = fc * gk15_wk[7];
    double g = fc * gk15_wg[3];
    for (int j = 0; j < 7; ++j) {
        const double dx = h * gk15_x[j];
        const double s = f(c - dx) + f(c + dx);
        k += gk15_wk[j] * s;
        if (j % 2 == 1) g += gk15_wg[j / 2] * s;
    }
    return {a, b, k * h, std::abs((k - g) * h)};
}

}  // namespace detail

/**
 * @brief Globally adaptive Gauss-Kronrod (7/15) integration over finite pieces.
 *
 * `breaks` must be sorted and finite; the integrand is sampled only in the
 * interior of each piece, so kinks at break points cost nothing.
 */
template <class F>
IntegrationResult integrate_adaptive(F&& f, const std::vector<double>& breaks, double abs_tol,
                                     double rel_tol, int max_intervals = 4000) {
    detail::require(breaks.size() >= 2, "integrate_adaptive needs at least two break points");
    std::priority_queue<detail::Segment> heap;
    double total = 0.0, err = 0.0;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        if (!(breaks[i] < breaks[i + 1])) continue;
        auto s = detail::gk15(f, breaks[i], breaks[i + 1]);
        total += s.value;
        err += s.error;
        heap.push(s);
    }
    IntegrationResult out;
    while (!heap.empty()) {
        if (err <= std::max(abs_tol, rel_tol * std::abs(total))) {
            out.converged = true;
            break;
        }
        if (static_cast<int>(heap.size()) >= max_intervals) break;
        auto s = heap.top();
        heap.pop();
        const double mid = 0.5 * (s.a + s.b);
        if (!(s.a < mid && mid < s.b)) {  // cannot bisect further
            heap.push({s.a, s.b, s.value, 0.0});
            err -= s.error;
            continue;
        }
        auto l = detail::gk15(f, s.a, mid);
        auto r = detail::gk15(f, mid, s.b);
        total += l.value + r.value - s.value;
        err += l.error + r.error - s.error;
        heap.push(l);
        heap.push(r);
    }
    if (heap.empty()) out.converged = true;
    // re-sum to shed accumulated update error
    double v = 0.0, e = 0.0;
    out.intervals = static_cast<int>(heap.size());
    while (!heap.empty()) {
        v += heap.top().value;
        e += heap.top().error;
        heap.pop();
    }
    out.value = v;
    out.error = e;
    return out;
}

template <class F>
IntegrationResult integrate_adaptive(F&& f, double a, double b, double abs_tol, double rel_tol,
                                     int max_intervals = 4000) {
    return integrate_adaptive(std::forward<F>(f), std::vector<double>{a, b}, abs_tol, rel_tol,
                              max_intervals);
}

/// Sorted, de-duplicated copy of `pts` clipped to [lo, hi] with lo/hi included.
inline std::vector<double> make_breaks(std::vector<double> pts, double lo, double hi) {
    pts.push_back(lo);
    pts.push_back(hi);
    std::vector<double> out;
    for (double p : pts)
        if (p >= lo && p <= hi) out.push_back(p);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace moment_forge
