#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "error.hpp"
#include "numerics.hpp"

namespace moment_forge {

inline constexpr double inv_sqrt_2pi = 0.398942280401432677939946059934381868;

/// Standard normal density without argument checks (hot paths).
inline double std_normal_pdf(double x) { return inv_sqrt_2pi * std::exp(-0.5 * x * x); }

inline double gaussian_density(double x, double variance) {
    detail::require_finite(x, "x");
    detail::require_finite(variance, "variance");
    detail::require(variance > 0.0, "variance must be positive");
    const double s = std::sqrt(variance);
    return std_normal_pdf(x / s) / s;
}

inline double gaussian_cdf(double x) {
    if (std::isnan(x)) throw ValidationError("gaussian_cdf: NaN input");
    return 0.5 * std::erfc(-x * std::numbers::sqrt2 * 0.5);
}

/// Upper tail 1 - Phi(x), accurate for large positive x.
inline double gaussian_ccdf(double x) {
    if (std::isnan(x)) throw ValidationError("gaussian_ccdf: NaN input");
    return 0.5 * std::erfc(x * std::numbers::sqrt2 * 0.5);
}

/// Gaussian probability of [a, b]; mass(-b, -a) == mass(a, b) bitwise.
inline double gaussian_mass(double a, double b) {
    if (!(a <= b)) {
        if (std::isnan(a) || std::isnan(b)) throw ValidationError("gaussian_mass: NaN bound");
        return 0.0;
    }
    if (b - a <= 0.5) {
        // narrow interval: direct quadrature avoids the cancellation in a cdf difference
        if (a + b < 0.0) {
            const double t = a;
            a = -b;
            b = -t;
        }
        const auto& gl = gauss_legendre<16>();
        const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
        double s = 0.0;
        for (int q = 0; q < 8; ++q) s += gl.w[q] * (std_normal_pdf(mid - half * gl.x[q]) + std_normal_pdf(mid + half * gl.x[q]));
        return half * s;
    }
    if (a >= 0.0) return gaussian_ccdf(a) - gaussian_ccdf(b);
    if (b <= 0.0) return gaussian_cdf(b) - gaussian_cdf(a);
    return 1.0 - (gaussian_cdf(a) + gaussian_ccdf(b));
}

namespace detail {

// Acklam's rational approximation, valid for p in (0, 0.5].
inline double acklam_lower(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00, 2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    if (p < 0.02425) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5, r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// Lower-tail quantile for p <= 0.5 with one Newton polish on Phi.
inline double quantile_lower(double p) {
    if (p == 0.5) return 0.0;
    double x = acklam_lower(p);
    x -= (gaussian_cdf(x) - p) / std_normal_pdf(x);
    return x;
}

}  // namespace detail

inline double gaussian_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ValidationError("gaussian_quantile: p must lie in (0,1)");
    if (p <= 0.5) return detail::quantile_lower(p);
    return -detail::quantile_lower(1.0 - p);  // 1 - p is exact here
}

/// x with gaussian_ccdf(x) == q; keeps full precision for tiny q.
inline double gaussian_quantile_upper(double q) {
    if (!(q > 0.0 && q < 1.0)) throw ValidationError("gaussian_quantile_upper: q must lie in (0,1)");
    if (q <= 0.5) return -detail::quantile_lower(q);
    return detail::quantile_lower(1.0 - q);
}

/// m (m-2) ... (m-2i+2), with the empty product 1 for i = 0.
inline std::uint64_t double_fact_falling(std::int64_t m, std::int64_t i) {
    detail::require(m >= 0 && i >= 0, "double_fact_falling: arguments must be nonnegative");
    detail::require(i == 0 || m - 2 * i + 2 >= 0, "double_fact_falling: m - 2i + 2 must be >= 0");
    std::uint64_t out = 1;
    for (std::int64_t j = 0; j < i; ++j) {
        const auto f = static_cast<std::uint64_t>(m - 2 * j);
        if (__builtin_mul_overflow(out, f, &out))
            throw NumericGuardError("double_fact_falling: 64-bit overflow");
    }
    return out;
}

/// (n)!! as a double, with (-1)!! = 0!! = 1.
inline double double_factorial(int n) {
    detail::require(n >= -1, "double_factorial: n must be >= -1");
    double out = 1.0;
    for (int j = n; j > 1; j -= 2) out *= j;
    return out;
}

/// E[g^k] for g ~ N(0,1).
inline double gaussian_moment(int k) {
    detail::require(k >= 0, "gaussian_moment: k must be nonnegative");
    return k % 2 ? 0.0 : double_factorial(k - 1);
}

inline double p_poly(int k, double x) {
    detail::require(k >= 1, "p_poly: k must be >= 1");
    detail::require_finite(x, "x");
    const int n = (k - 1) / 2;
    const double x2 = x * x;
    double acc = 1.0, coef = 1.0;
    for (int i = 1; i <= n; ++i) {
        coef *= (k + 1 - 2 * i);
        acc = acc * x2 + coef;
    }
    return (k - 1) % 2 ? acc * x : acc;
}

namespace detail {

inline double p_gamma(int k, double x) {
    if (std::isinf(x)) return 0.0;
    return p_poly(k, x) * std_normal_pdf(x);
}

inline double truncated_moment_quadrature(int k, double a, double b) {
    const double cut = 10.0 + 3.0 * std::sqrt(static_cast<double>(k));
    const double lo = std::max(a, -cut), hi = std::min(b, cut);
    if (!(lo < hi)) return 0.0;
    const double peak = std::sqrt(static_cast<double>(k));
    auto f = [k](double x) { return std::pow(x, k) * std_normal_pdf(x); };
    auto r = integrate_adaptive(f, make_breaks({-peak, 0.0, peak}, lo, hi), 0.0, 1e-14, 4000);
    return r.value;
}

}  // namespace detail

/// E[g^k 1{a <= g <= b}] for g ~ N(0,1); a, b may be infinite.
inline double truncated_moment(int k, double a, double b) {
    detail::require(k >= 0, "truncated_moment: k must be nonnegative");
    if (std::isnan(a) || std::isnan(b)) throw ValidationError("truncated_moment: NaN bound");
    detail::require(a <= b, "truncated_moment: requires a <= b");
    if (a == b) return 0.0;
    if (k == 0) return gaussian_mass(a, b);
    if (k % 2 == 1 && a == -b) return 0.0;
    const double pa = detail::p_gamma(k, a), pb = detail::p_gamma(k, b);
    double value, scale;
    if (k % 2 == 0) {
        const double base = double_factorial(k - 1) * gaussian_mass(a, b);
        value = base - (pb - pa);
        scale = base + std::abs(pa) + std::abs(pb);
    } else {
        value = pa - pb;
        scale = std::abs(pa) + std::abs(pb);
    }
    // closed form loses about log10(scale/|value|) digits
    if (k <= 20 && scale <= 1e5 * std::abs(value)) return value;
    return detail::truncated_moment_quadrature(k, a, b);
}

/// E[(c g + d)^k 1{a <= g <= b}], k even.
inline double shifted_truncated_moment(double c, double dshift, int k, double a, double b) {
    detail::require(k >= 0 && k % 2 == 0, "shifted_truncated_moment: k must be even");
    detail::require(a <= b, "shifted_truncated_moment: requires a <= b");
    double sum = 0.0, binom = 1.0;
    for (int i = 0; i <= k; ++i) {
        if (i > 0) binom = binom * (k - i + 1) / i;
        const double ci = std::pow(c, i), di = std::pow(dshift, k - i);
        if (ci == 0.0 || di == 0.0) continue;
        sum += binom * ci * di * truncated_moment(i, a, b);
    }
    return sum;
}

namespace detail {

inline double symmetric_moment(const std::vector<double>& h, const std::vector<double>& w, int k) {
    const std::size_t n = h.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n / 2; ++i) {
        const double a = std::pow(std::abs(h[i]), k), b = std::pow(std::abs(h[n - 1 - i]), k);
        s += w[i] * (h[i] < 0 && k % 2 ? -a : a) + w[n - 1 - i] * (h[n - 1 - i] < 0 && k % 2 ? -b : b);
    }
    if (n % 2) s += w[n / 2] * std::pow(h[n / 2], k);
    return s;
}

}  // namespace detail

struct QuadratureRule {
    int m = 0;
    std::vector<double> nodes;
    std::vector<double> weights;

    /// sum lambda_i h_i^k over mirrored pairs, so odd orders cancel exactly
    double moment(int k) const { return detail::symmetric_moment(nodes, weights, k); }
    double min_weight() const { return *std::min_element(weights.begin(), weights.end()); }
    /// zeta: smallest gap between consecutive nodes.
    double separation() const {
        double z = INFINITY;
        for (std::size_t i = 1; i < nodes.size(); ++i) z = std::min(z, nodes[i] - nodes[i - 1]);
        return z;
    }
    /// c with all nodes in [-c sqrt(m), c sqrt(m)].
    double radius_constant() const { return std::abs(nodes.front()) / std::sqrt(double(m)); }
    /// c' with separation >= c' / sqrt(m).
    double separation_constant() const { return separation() * std::sqrt(double(m)); }
};

struct ReducedRule {
    int m = 0;
    std::vector<double> nodes;
    std::vector<double> weights;
    double gap_mass = 0.0;

    /// sum lambda_i h_i^k over mirrored pairs, so odd orders cancel exactly
    double moment(int k) const { return detail::symmetric_moment(nodes, weights, k); }
};

/**
 * @brief n-point Gauss rule for N(0,1) (probabilists' Hermite), weights sum to 1.
 *
 * Golub-Welsch for the starting nodes, then Newton on the orthonormal
 * recurrence and Christoffel weights. The result is symmetrized.
 */
inline QuadratureRule gauss_hermite(int n) {
    detail::require(n >= 1 && n <= 200, "gauss_hermite: n must lie in [1, 200]");
    QuadratureRule r;
    r.m = n;
    if (n == 1) {
        r.nodes = {0.0};
        r.weights = {1.0};
        return r;
    }
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n), sub(n - 1);
    for (int j = 1; j < n; ++j) sub[j - 1] = std::sqrt(double(j));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    std::vector<double> x(es.eigenvalues().data(), es.eigenvalues().data() + n), w(n);

    // orthonormal q_0..q_n at x; returns q_n, q_{n-1} and sum_{j<n} q_j^2
    auto recur = [n](double t, double& qn, double& qn1, double& ss) {
        double q0 = 1.0, q1 = t;
        ss = 1.0 + t * t;
        for (int j = 1; j < n; ++j) {
            const double q2 = (t * q1 - std::sqrt(double(j)) * q0) / std::sqrt(double(j + 1));
            q0 = q1;
            q1 = q2;
            if (j + 1 < n) ss += q1 * q1;
        }
        qn = q1;
        qn1 = q0;
    };
    for (int i = 0; i < n; ++i) {
        double qn, qn1, ss;
        for (int it = 0; it < 3; ++it) {
            recur(x[i], qn, qn1, ss);
            x[i] -= qn / (std::sqrt(double(n)) * qn1);
        }
    }
    std::sort(x.begin(), x.end());
    for (int i = 0; i < n; ++i) {
        double qn, qn1, ss;
        recur(x[i], qn, qn1, ss);
        w[i] = 1.0 / ss;
    }
    r.nodes.resize(n);
    r.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        r.nodes[i] = 0.5 * (x[i] - x[n - 1 - i]);
        r.weights[i] = 0.5 * (w[i] + w[n - 1 - i]);
    }
    if (n % 2 == 1) r.nodes[n / 2] = 0.0;
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += r.weights[i];
    for (double& wi : r.weights) wi /= total;
    return r;
}

/// Odd-order moment-matching rule with the center node pinned at 0.
inline QuadratureRule hermite_rule(int m) {
    detail::require(m % 2 == 1 && m >= 3 && m <= 41, "hermite_rule: m must be odd with 3 <= m <= 41");
    return gauss_hermite(m);
}

inline ReducedRule reduce_rule(const QuadratureRule& rule) {
    detail::require(rule.m % 2 == 1 && rule.nodes.size() == std::size_t(rule.m),
                    "reduce_rule: rule order must be odd");
    const int c = rule.m / 2;
    detail::require(std::abs(rule.nodes[c]) <= 1e-14, "reduce_rule: central node is not zero");
    ReducedRule r;
    r.m = rule.m;
    for (int i = 0; i < rule.m; ++i) {
        if (i == c) continue;
        r.nodes.push_back(rule.nodes[i]);
        r.weights.push_back(rule.weights[i]);
    }
    r.gap_mass = rule.weights[c];
    return r;
}

}  // namespace moment_forge
