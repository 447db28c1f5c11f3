#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "error.hpp"
#include "gaussian_core.hpp"
#include "numerics.hpp"

namespace moment_forge {

/// Trapezoid: height h on [c-w, c+w], linear ramps of width eps on both sides.
struct Bump {
    double c = 0.0;
    double w = 0.0;
    double h = 0.0;
    double eps = 0.0;

    double support_lo() const { return c - w - eps; }
    double support_hi() const { return c + w + eps; }
};

inline double bump_eval(const Bump& b, double z) {
    const double lo = b.c - b.w, hi = b.c + b.w;
    if (z >= lo && z <= hi) return b.h;
    if (b.eps <= 0.0) return 0.0;
    if (z < lo && z >= lo - b.eps) return (b.h / b.eps) * (z - b.c + b.eps + b.w);
    if (z > hi && z <= hi + b.eps) return -(b.h / b.eps) * (z - b.c - b.eps - b.w);
    return 0.0;
}

namespace detail {

inline double ipow(double x, int k) {
    // |x|^k with sign restored, so (-x)^k == +-x^k bitwise
    const double m = std::pow(std::abs(x), k);
    return (x < 0.0 && k % 2) ? -m : m;
}

inline void check_bump(const Bump& b) {
    detail::require_finite(b.c, "bump center");
    detail::require_finite(b.w, "bump half-width");
    detail::require_finite(b.h, "bump height");
    detail::require_finite(b.eps, "bump ramp width");
    detail::require(b.w >= 0.0 && b.eps >= 0.0, "bump requires w >= 0 and eps >= 0");
}

}  // namespace detail

/// E[T(g)^k], ramps integrated in the unit-interval substitution.
inline double bump_moment(const Bump& b, int k) {
    detail::check_bump(b);
    detail::require(k >= 1, "bump_moment: k must be >= 1");
    const double plateau = gaussian_mass(b.c - b.w, b.c + b.w);
    double ramps = 0.0;
    if (b.eps > 0.0) {
        const auto& gl = gauss_legendre<64>();
        const double l0 = b.c - b.w - b.eps, r0 = b.c + b.w + b.eps;
        for (int q = 0; q < 64; ++q) {
            const double u = 0.5 * (gl.x[q] + 1.0);
            const double eu = b.eps * u;
            ramps += gl.w[q] * std::pow(u, k) * (std_normal_pdf(l0 + eu) + std_normal_pdf(r0 - eu));
        }
        ramps *= 0.5 * b.eps;
    }
    return detail::ipow(b.h, k) * (plateau + ramps);
}

inline double bump_moment_dh(const Bump& b, int k) {
    detail::require(k >= 1, "bump_moment_dh: k must be >= 1");
    detail::require(b.h != 0.0, "bump_moment_dh: h must be nonzero");
    return (k / b.h) * bump_moment(b, k);
}

/// dM/d(eps), differentiating the substituted ramp integrals.
inline double bump_moment_deps(const Bump& b, int k) {
    detail::check_bump(b);
    detail::require(k >= 1, "bump_moment_deps: k must be >= 1");
    detail::require(b.eps > 0.0, "bump_moment_deps: eps must be positive");
    const auto& gl = gauss_legendre<64>();
    const double l0 = b.c - b.w - b.eps, r0 = b.c + b.w + b.eps;
    double s = 0.0;
    for (int q = 0; q < 64; ++q) {
        const double u = 0.5 * (gl.x[q] + 1.0);
        const double eu = b.eps * u;
        const double L = l0 + eu, R = r0 - eu;
        const double pl = std_normal_pdf(L), pr = std_normal_pdf(R);
        const double uk = std::pow(u, k);
        s += gl.w[q] * uk * ((pl + pr) + b.eps * (1.0 - u) * (L * pl - R * pr));
    }
    return detail::ipow(b.h, k) * 0.5 * s;
}

struct ClosedFormMoment {
    double value = 0.0;
    /// sum of |terms| / |value|; digits lost is about log10 of this
    double cancellation = 1.0;
    bool reliable = true;
};

/**
 * @brief Closed form of the bump moment (even k, bump right of the origin).
 *
 * Each ramp is a shifted truncated moment of an affine map of g; the inner
 * Gaussian moment factor is (i-1)!! for the i-th binomial term.
 */
inline ClosedFormMoment bump_moment_closed(const Bump& b, int k) {
    detail::check_bump(b);
    detail::require(k >= 2 && k % 2 == 0, "bump_moment_closed: k must be even and positive");
    detail::require(b.eps > 0.0, "bump_moment_closed: eps must be positive");
    detail::require(b.c - b.eps - b.w >= 0.0, "bump_moment_closed: requires c - eps - w >= 0");

    double sum = 0.0, mag = 0.0;
    auto add = [&](double t) {
        sum += t;
        mag += std::abs(t);
    };
    add(detail::ipow(b.h, k) * gaussian_mass(b.c - b.w, b.c + b.w));

    const double s = b.h / b.eps;
    // ramp value = slope * g + offset on [a, bb]
    auto ramp = [&](double slope, double offset, double a, double bb) {
        const double mass = gaussian_mass(a, bb);
        double binom = 1.0;
        for (int i = 0; i <= k; ++i) {
            if (i > 0) binom = binom * (k - i + 1) / i;
            const double coef = binom * detail::ipow(slope, i) * detail::ipow(offset, k - i);
            if (coef == 0.0) continue;
            if (i % 2 == 0) add(coef * double_factorial(i - 1) * mass);
            if (i >= 1) {
                add(-coef * p_poly(i, bb) * std_normal_pdf(bb));
                add(coef * p_poly(i, a) * std_normal_pdf(a));
            }
        }
    };
    ramp(s, s * (-b.c + b.eps + b.w), b.c - b.eps - b.w, b.c - b.w);
    ramp(-s, s * (b.c + b.eps + b.w), b.c + b.w, b.c + b.eps + b.w);

    ClosedFormMoment out;
    out.value = sum;
    out.cancellation = sum != 0.0 ? mag / std::abs(sum) : (mag == 0.0 ? 1.0 : INFINITY);
    out.reliable = out.cancellation * 2.220446049250313e-16 <= 1e-3;
    return out;
}

/**
 * @brief Odd piecewise-linear f = sum of m-1 disjoint bumps sharing one eps.
 *
 * Bumps are stored in ascending center order; the right half mirrors the
 * left half exactly.
 */
struct BumpInstance {
    int m = 0;
    std::vector<double> centers;
    std::vector<double> half_widths;
    std::vector<double> heights;
    double eps = 0.0;
    double gap_mass = 0.0;
    double nu = 0.0;
    /// reduced-rule weights the plateaus were laid out for
    std::vector<double> plateau_weights;

    std::size_t size() const { return centers.size(); }
    int half() const { return static_cast<int>(centers.size() / 2); }
    Bump bump(std::size_t i) const { return {centers[i], half_widths[i], heights[i], eps}; }

    double interval_lo(std::size_t i) const { return centers[i] - half_widths[i]; }
    double interval_hi(std::size_t i) const { return centers[i] + half_widths[i]; }

    double max_endpoint() const {
        double r = 0.0;
        for (std::size_t i = 0; i < size(); ++i)
            r = std::max(r, std::abs(centers[i]) + half_widths[i] + eps);
        return r;
    }
    double max_abs_height() const {
        double r = 0.0;
        for (double h : heights) r = std::max(r, std::abs(h));
        return r;
    }
    double max_slope() const { return eps > 0.0 ? max_abs_height() / eps : INFINITY; }

    /// Smallest gap between consecutive supports at ramp width e.
    double min_support_gap(double e) const {
        double g = INFINITY;
        for (std::size_t i = 0; i + 1 < size(); ++i)
            g = std::min(g, (centers[i + 1] - half_widths[i + 1] - e) - (centers[i] + half_widths[i] + e));
        return g;
    }

    /// Throws ValidationError naming the first broken invariant.
    void validate(double mass_tol = 1e-10) const {
        using detail::require;
        require(m >= 3 && m % 2 == 1, "instance: m must be odd and >= 3");
        const std::size_t n = static_cast<std::size_t>(m - 1);
        require(centers.size() == n && half_widths.size() == n && heights.size() == n,
                "instance: expected m-1 bumps");
        require(std::isfinite(eps) && eps >= 0.0, "instance: eps must be finite and >= 0");
        require(gap_mass > 0.0 && gap_mass < 1.0, "instance: gap_mass must lie in (0,1)");
        require(nu > 0.0 && nu < 1.0, "instance: nu must lie in (0,1)");
        for (std::size_t i = 0; i < n; ++i) {
            require(std::isfinite(centers[i]) && std::isfinite(half_widths[i]) && std::isfinite(heights[i]),
                    "instance: non-finite bump parameter");
            require(half_widths[i] >= 0.0, "instance: negative half-width");
        }
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = n - 1 - i;
            const std::string pair = " for bumps " + std::to_string(i + 1) + " and " + std::to_string(j + 1);
            const double scale = std::max(1.0, std::abs(centers[i]));
            require(std::abs(centers[i] + centers[j]) <= 1e-12 * scale,
                    "symmetry invariant violated: c_i != -c_{m-i}" + pair);
            require(std::abs(half_widths[i] - half_widths[j]) <= 1e-12 * scale,
                    "symmetry invariant violated: w_i != w_{m-i}" + pair);
            require(std::abs(heights[i] + heights[j]) <= 1e-12 * std::max(1.0, std::abs(heights[i])),
                    "symmetry invariant violated: h_i != -h_{m-i}" + pair);
        }
        for (std::size_t i = 0; i + 1 < n; ++i) {
            require(centers[i] + half_widths[i] + eps < centers[i + 1] - half_widths[i + 1] - eps,
                    "separation invariant violated: supports of bumps " + std::to_string(i + 1) +
                        " and " + std::to_string(i + 2) + " overlap");
        }
        if (!plateau_weights.empty()) {
            require(plateau_weights.size() == n, "instance: plateau_weights must have m-1 entries");
            for (std::size_t i = 0; i < n; ++i)
                require(std::abs(gaussian_mass(interval_lo(i), interval_hi(i)) - plateau_weights[i]) <= mass_tol,
                        "plateau mass invariant violated for bump " + std::to_string(i + 1));
        }
    }
};

inline double instance_eval(const BumpInstance& inst, double z) {
    const auto it = std::upper_bound(inst.centers.begin(), inst.centers.end(), z);
    const std::size_t idx = static_cast<std::size_t>(it - inst.centers.begin());
    double v = 0.0;
    if (idx > 0) v += bump_eval(inst.bump(idx - 1), z);
    if (idx < inst.size()) v += bump_eval(inst.bump(idx), z);
    return v;
}

/// E[f(g)^k]; mirrored pairs are summed first so odd orders cancel exactly.
inline double instance_pushforward_moment(const BumpInstance& inst, int k) {
    detail::require(k >= 1, "instance_pushforward_moment: k must be >= 1");
    const std::size_t n = inst.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n / 2; ++i)
        s += bump_moment(inst.bump(i), k) + bump_moment(inst.bump(n - 1 - i), k);
    return s;
}

/// max over k = 1..kmax of |E f(g)^k - E g^k|.
inline double instance_moment_error(const BumpInstance& inst, int kmax) {
    double e = 0.0;
    for (int k = 1; k <= kmax; ++k)
        e = std::max(e, std::abs(instance_pushforward_moment(inst, k) - gaussian_moment(k)));
    return e;
}

/**
 * @brief Lay out plateaus so each carries its reduced-rule weight.
 *
 * Walking left to right, each plateau is preceded by Gaussian mass gap/m;
 * the right half is the mirror image. eps0 = 0 gives the plateau limit.
 */
inline BumpInstance layout(const ReducedRule& reduced, double eps0, double nu) {
    using detail::require;
    require(reduced.m >= 3 && reduced.m % 2 == 1, "layout: m must be odd and >= 3");
    require(reduced.nodes.size() == std::size_t(reduced.m - 1), "layout: reduced rule must have m-1 nodes");
    require(std::isfinite(eps0) && eps0 >= 0.0, "layout: eps0 must be >= 0");
    require(nu > 0.0 && nu < 1.0, "layout: nu must lie in (0,1)");
    const int m = reduced.m;
    const std::size_t n = reduced.nodes.size(), half = n / 2;

    BumpInstance inst;
    inst.m = m;
    inst.eps = eps0;
    inst.gap_mass = reduced.gap_mass;
    inst.nu = nu;
    inst.centers.assign(n, 0.0);
    inst.half_widths.assign(n, 0.0);
    inst.heights.assign(n, 0.0);
    inst.plateau_weights.assign(n, 0.0);

    double p = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
        p += reduced.gap_mass / m;
        const double a = gaussian_quantile(p);
        p += reduced.weights[i];
        const double b = gaussian_quantile(p);
        const std::size_t j = n - 1 - i;
        inst.centers[i] = 0.5 * (a + b);
        inst.half_widths[i] = 0.5 * (b - a);
        inst.heights[i] = reduced.nodes[i];
        inst.plateau_weights[i] = reduced.weights[i];
        inst.centers[j] = -inst.centers[i];
        inst.half_widths[j] = inst.half_widths[i];
        inst.heights[j] = -inst.heights[i];
        inst.plateau_weights[j] = reduced.weights[i];
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (!(inst.centers[i] + inst.half_widths[i] + eps0 < inst.centers[i + 1] - inst.half_widths[i + 1] - eps0))
            throw ValidationError("layout: eps0 too large, supports of bumps " + std::to_string(i + 1) +
                                  " and " + std::to_string(i + 2) + " collide");
    }
    inst.validate();
    const double err = instance_moment_error(inst, m);
    if (!(err < 0.5 * nu))
        throw ValidationError("layout: initial moment error " + std::to_string(err) +
                              " is not below nu/2 (ramps of width eps0, or m too large for 64-bit plateau endpoints)");
    return inst;
}

}  // namespace moment_forge
