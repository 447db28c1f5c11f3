#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "bump_model.hpp"
#include "error.hpp"
#include "gaussian_core.hpp"
#include "network_export.hpp"
#include "numerics.hpp"
#include "ode_flow.hpp"
#include "pushforward_dist.hpp"
#include "random.hpp"

namespace moment_forge {

struct ChiSquaredResult {
    double value = 0.0;
    double error = 0.0;
    /// e^{c R^2} / sigma, reported next to the value (c recorded, not asserted)
    double reference = 0.0;
    double reference_c = 1.0;
};

inline ChiSquaredResult chi_squared_vs_gaussian(const PushforwardDist& dist, double reference_c = 1.0) {
    const double s = dist.sigma();
    detail::require(s > 0.0 && s <= 0.5, "chi_squared_vs_gaussian: sigma must lie in (0, 1/2]");
    const double L = dist.effective_radius(8.0);
    auto f = [&](double x) { return dist.density(x) * dist.density_ratio(x); };
    std::vector<double> pts = dist.feature_points();
    for (double p : dist.feature_points()) {
        pts.push_back(p - 3.0 * s);
        pts.push_back(p + 3.0 * s);
    }
    const auto r = integrate_adaptive(f, make_breaks(pts, -L, L), 1e-13, 1e-12, 20000);
    if (!r.converged)
        throw NumericGuardError("chi_squared_vs_gaussian: quadrature did not converge (error " +
                                std::to_string(r.error) + ")");
    ChiSquaredResult out;
    out.value = r.value - 1.0;
    out.error = r.error;
    out.reference_c = reference_c;
    const double R = dist.support_radius();
    out.reference = std::exp(reference_c * R * R) / s;
    return out;
}

struct PlaneIntegral {
    double value = 0.0;
    double error_estimate = 0.0;
    std::size_t nodes_per_axis = 0;
};

namespace detail {

struct AxisGrid {
    std::vector<double> x, w;
};

inline AxisGrid axis_grid(double L, double panel) {
    const auto& gl = gauss_legendre<8>();
    const auto n = static_cast<std::size_t>(std::ceil(2.0 * L / panel));
    const double h = 2.0 * L / n;
    AxisGrid g;
    g.x.reserve(8 * n);
    g.w.reserve(8 * n);
    for (std::size_t p = 0; p < n; ++p) {
        const double mid = -L + (p + 0.5) * h;
        for (int q = 0; q < 8; ++q) {
            g.x.push_back(mid + 0.5 * h * gl.x[q]);
            g.w.push_back(0.5 * h * gl.w[q]);
        }
    }
    return g;
}

// Refine a tensor-grid integral by halving the panel width until two levels agree.
template <class Eval>
PlaneIntegral refine_plane(Eval&& eval, double L, double panel0, double tol, int max_levels, const char* what) {
    double prev = NAN;
    PlaneIntegral out;
    for (int lev = 0; lev < max_levels; ++lev) {
        const AxisGrid g = axis_grid(L, panel0 / std::ldexp(1.0, lev));
        const double v = eval(g);
        out.nodes_per_axis = g.x.size();
        if (lev > 0) {
            out.value = v;
            out.error_estimate = std::abs(v - prev);
            if (out.error_estimate <= tol) return out;
        }
        prev = v;
    }
    throw NumericGuardError(std::string(what) + ": 2-D quadrature did not converge, achieved tolerance " +
                            std::to_string(out.error_estimate));
}

}  // namespace detail

/**
 * @brief chi_{N(0,I)}(P_v, P_v') for <v, v'> = cosine, reduced to the plane of v, v'.
 *
 * In coordinates (x, x') = (<v,z>, <v',z>) the integrand is
 * D'(x) D'(x') (K - 1) with K = exp(x^2/2 - y'^2/2) / sin(theta).
 */
inline PlaneIntegral pairwise_correlation(const PushforwardDist& dist, double cosine, double tol = 1e-9) {
    detail::require(std::abs(cosine) < 1.0, "pairwise_correlation: |cosine| must be < 1");
    detail::require(dist.sigma() > 0.0, "pairwise_correlation: sigma must be positive");
    const double t = cosine, sn = std::sqrt((1.0 - t) * (1.0 + t));
    const double L = dist.effective_radius(10.0);
    const double panel = 0.5 * std::min(dist.feature_width(), sn);
    auto eval = [&](const detail::AxisGrid& g) {
        const std::size_t n = g.x.size();
        std::vector<double> wd(n);
        for (std::size_t i = 0; i < n; ++i) wd[i] = g.w[i] * dist.density(g.x[i]);
        const double lsn = std::log(sn), inv = 1.0 / (2.0 * sn * sn);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (wd[i] == 0.0) continue;
            const double xi = g.x[i], base = 0.5 * xi * xi - lsn;
            double row = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double yp = t * g.x[j] - xi;
                row += wd[j] * std::expm1(base - yp * yp * inv);
            }
            total += wd[i] * row;
        }
        return total;
    };
    return detail::refine_plane(eval, L, panel, tol, 4, "pairwise_correlation");
}

/// d_TV(P_v, P_v') = 1 - int min(D'(x) g(y), D'(x') g(y')) csc(theta) over the plane.
inline PlaneIntegral tv_hidden_pair(const PushforwardDist& dist, double cosine, double tol = 1e-4) {
    detail::require(std::abs(cosine) < 1.0, "tv_hidden_pair: |cosine| must be < 1");
    detail::require(dist.sigma() > 0.0, "tv_hidden_pair: sigma must be positive");
    const double t = cosine, sn = std::sqrt((1.0 - t) * (1.0 + t));
    const double L = dist.effective_radius(10.0);
    const double panel = 0.5 * std::min(dist.feature_width(), sn);
    auto eval = [&](const detail::AxisGrid& g) {
        const std::size_t n = g.x.size();
        std::vector<double> dens(n);
        for (std::size_t i = 0; i < n; ++i) dens[i] = dist.density(g.x[i]);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (dens[i] == 0.0 && dens[j] == 0.0) continue;
                const double y = (g.x[j] - t * g.x[i]) / sn, yp = (t * g.x[j] - g.x[i]) / sn;
                row += g.w[j] * std::min(dens[i] * std_normal_pdf(y), dens[j] * std_normal_pdf(yp));
            }
            total += g.w[i] * row;
        }
        return 1.0 - total / sn;
    };
    auto r = detail::refine_plane(eval, L, panel, tol, 4, "tv_hidden_pair");
    r.value = std::clamp(r.value, 0.0, 1.0);
    return r;
}

/// 1-D Wasserstein-1 distance between two empirical measures.
inline double w1_empirical(std::vector<double> a, std::vector<double> b) {
    detail::require(!a.empty() && !b.empty(), "w1_empirical: empty input");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a.size() == b.size()) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
        return s / a.size();
    }
    // integral of |F_a - F_b| over the merged support
    const double na = a.size(), nb = b.size();
    std::size_t i = 0, j = 0;
    double prev = std::min(a[0], b[0]), s = 0.0;
    while (i < a.size() || j < b.size()) {
        const double x = (j >= b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
        s += std::abs(i / na - j / nb) * (x - prev);
        prev = x;
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
    }
    return s;
}

struct SupportDistance {
    double cosine = 0.0;
    double threshold = 0.0;
    double exceed_probability = 0.0;
    double w1_lower_bound = 0.0;
    std::size_t n = 0;
};

/**
 * @brief How often <v, x> for x ~ P_v' lands far from the plateau heights of D'.
 *
 * <v, x> = t X' + sin(theta) N with X' ~ D'. Threshold is c / sqrt(m).
 */
inline SupportDistance distance_to_support(const PushforwardDist& dist, double cosine, std::size_t n,
                                           std::uint64_t seed, double c = 0.1, bool include_zero = false) {
    const BumpInstance* inst = dist.instance();
    detail::require(inst != nullptr, "distance_to_support: needs a bump-instance distribution");
    detail::require(std::abs(cosine) <= 1.0, "distance_to_support: |cosine| must be <= 1");
    detail::require(n >= 1, "distance_to_support: n must be >= 1");
    std::vector<double> heights;
    for (double h : inst->heights) heights.push_back(dist.scale() * h);
    if (include_zero) heights.push_back(0.0);
    std::sort(heights.begin(), heights.end());
    const double t = cosine, sn = std::sqrt(std::max(0.0, (1.0 - t) * (1.0 + t)));
    const auto x = dist.sample(n, seed);
    Rng orth(seed, streams::ambient);
    SupportDistance out;
    out.cosine = cosine;
    out.threshold = c / std::sqrt(double(inst->m));
    out.n = n;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = t * x[i] + (sn > 0.0 ? sn * orth.normal() : 0.0);
        auto it = std::lower_bound(heights.begin(), heights.end(), y);
        double dmin = INFINITY;
        if (it != heights.end()) dmin = std::min(dmin, *it - y);
        if (it != heights.begin()) dmin = std::min(dmin, y - *(it - 1));
        if (dmin > out.threshold) ++hits;
    }
    out.exceed_probability = double(hits) / n;
    out.w1_lower_bound = out.exceed_probability * out.threshold;
    return out;
}

/// W1 between <v, x> under P_v and under P_v' (a lower bound for the d-dim W1).
inline double projected_w1(const PushforwardDist& dist, double cosine, std::size_t n, std::uint64_t seed) {
    const double t = cosine, sn = std::sqrt(std::max(0.0, (1.0 - t) * (1.0 + t)));
    auto a = dist.sample(n, seed);
    auto b = dist.sample(n, seed + 1);
    Rng orth(seed, streams::ambient);
    for (auto& x : b) x = t * x + sn * orth.normal();
    return w1_empirical(std::move(a), std::move(b));
}

struct BoundCheck {
    double cosine = 0.0;
    double value = 0.0;
    double bound = 0.0;
    double margin = 0.0;  ///< positive when the check passes
    double error_estimate = 0.0;
    bool pass = false;
    std::string error;
};

struct VerificationConfig {
    double sigma = 0.05;
    double nu = 1e-4;
    double slope_target = 0.0;  ///< 0: not checked
    std::vector<double> correlation_cosines{0.05, 0.1, 0.2};
    std::vector<double> tv_cosines{0.5, 0.1};
    double tv_slack = 0.05;
    double correlation_tol = 1e-9;
    double tv_tol = 1e-4;
    std::size_t w1_samples = 1000000;
    double w1_constant = 3.0;
    double support_sigma = 0.01;
    double support_cosine = 0.5;
    double support_c = 0.1;
    double support_min_probability = 0.2;
    std::size_t support_samples = 100000;
    double vandermonde_c = 0.5;
    double chi_reference_c = 1.0;
    std::uint64_t seed = 1;
};

struct VerificationReport {
    VerificationConfig config;
    int m = 0;
    double eps0 = 0.0, epsT = 0.0, achieved_T = 0.0;

    std::vector<double> moment_errors;         ///< D', k = 1..m
    std::vector<double> latent_moment_errors;  ///< D = f(N(0,1)), k = 1..m
    std::vector<double> plateau_moment_errors; ///< eps = 0 limit, k = 1..m
    bool moments_pass = false;

    double slope_max = 0.0;
    double weight_bound = 0.0;
    double weight_bound_formula = 0.0;
    std::size_t network_size = 0;
    double network_max_deviation = 0.0;
    bool network_pass = false;
    bool slope_pass = true;

    double chi_squared = NAN;
    double chi_reference = NAN;
    std::vector<BoundCheck> pairwise_corr;
    std::vector<BoundCheck> tv_separation;

    double w1_d0_dT = NAN;
    double w1_bound = NAN;
    double max_height_drift = 0.0;
    bool w1_pass = false;
    SupportDistance support;
    bool support_pass = false;

    double sigma_min_initial = 0.0, sigma_min_final = 0.0, sigma_min_min = 0.0, sigma_min_max = 0.0;
    VandermondeCheck vandermonde;

    std::vector<std::string> errors;

    bool all_pass() const {
        bool ok = moments_pass && network_pass && slope_pass && w1_pass && support_pass && errors.empty();
        for (const auto& c : pairwise_corr) ok = ok && c.pass;
        for (const auto& c : tv_separation) ok = ok && c.pass;
        return ok;
    }
};

/// Run every check on one build; sub-check failures are recorded, not thrown.
inline VerificationReport verify_instance(const BumpInstance& initial, const EvolveResult& evolved,
                                          const ReluNetwork& network, const VerificationConfig& cfg) {
    VerificationReport rep;
    rep.config = cfg;
    const BumpInstance& fin = evolved.instance;
    rep.m = fin.m;
    rep.eps0 = initial.eps;
    rep.epsT = fin.eps;
    rep.achieved_T = evolved.trace.achieved_T;
    auto guard = [&](const std::string& name, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            rep.errors.push_back(name + ": " + e.what());
        }
    };

    PushforwardDist dist = PushforwardDist::from_instance(fin, cfg.sigma);
    double max_err = 0.0;
    guard("moments", [&] {
        for (int k = 1; k <= fin.m; ++k) {
            const double g = gaussian_moment(k);
            rep.moment_errors.push_back(std::abs(dist.moment(k) - g));
            rep.latent_moment_errors.push_back(std::abs(dist.latent_moment(k) - g));
            BumpInstance p0 = initial;
            p0.eps = 0.0;
            rep.plateau_moment_errors.push_back(std::abs(instance_pushforward_moment(p0, k) - g));
            max_err = std::max(max_err, rep.moment_errors.back());
        }
        rep.moments_pass = max_err < cfg.nu;
    });

    guard("network", [&] {
        rep.network_size = network.size();
        rep.weight_bound = network.weight_bound();
        rep.weight_bound_formula = implementbox_weight_bound(fin);
        rep.slope_max = fin.max_slope();
        Rng rng(cfg.seed, 11);
        const double span = fin.max_endpoint() + 0.5;
        double dev = 0.0;
        for (int i = 0; i < 10000; ++i) {
            const double z = (2.0 * rng.uniform() - 1.0) * span;
            dev = std::max(dev, std::abs(network(z) - instance_eval(fin, z)));
        }
        rep.network_max_deviation = dev;
        rep.network_pass = dev <= 1e-9 * std::max(1.0, fin.max_abs_height()) &&
                           rep.weight_bound == rep.weight_bound_formula;
        if (cfg.slope_target > 0.0) rep.slope_pass = rep.slope_max <= cfg.slope_target;
    });

    guard("chi_squared", [&] {
        const auto c = chi_squared_vs_gaussian(dist, cfg.chi_reference_c);
        rep.chi_squared = c.value;
        rep.chi_reference = c.reference;
    });

    for (double t : cfg.correlation_cosines) {
        BoundCheck b;
        b.cosine = t;
        try {
            const auto r = pairwise_correlation(dist, t, cfg.correlation_tol);
            b.value = r.value;
            b.error_estimate = r.error_estimate;
            b.bound = std::pow(std::abs(t), fin.m + 1) * rep.chi_squared + cfg.nu * cfg.nu;
            b.margin = b.bound - std::abs(b.value);
            b.pass = std::isfinite(b.margin) && b.margin > 0.0;
        } catch (const std::exception& e) {
            b.error = e.what();
        }
        rep.pairwise_corr.push_back(b);
    }

    for (double t : cfg.tv_cosines) {
        BoundCheck b;
        b.cosine = t;
        try {
            const auto r = tv_hidden_pair(dist, t, cfg.tv_tol);
            b.value = r.value;
            b.error_estimate = r.error_estimate;
            b.bound = 1.0 - 2.0 * cfg.sigma * std::log(1.0 / cfg.sigma) - cfg.tv_slack;
            b.margin = b.value - b.bound;
            b.pass = b.margin > 0.0;
        } catch (const std::exception& e) {
            b.error = e.what();
        }
        rep.tv_separation.push_back(b);
    }

    guard("w1", [&] {
        const auto d0 = PushforwardDist::from_instance(initial, 0.0).sample(cfg.w1_samples, cfg.seed);
        const auto dT = PushforwardDist::from_instance(fin, 0.0).sample(cfg.w1_samples, cfg.seed);
        rep.w1_d0_dT = w1_empirical(d0, dT);
        for (std::size_t i = 0; i < fin.size(); ++i)
            rep.max_height_drift = std::max(rep.max_height_drift, std::abs(fin.heights[i] - initial.heights[i]));
        rep.w1_bound = rep.max_height_drift + cfg.w1_constant * fin.m * rep.achieved_T;
        rep.w1_pass = rep.w1_d0_dT <= rep.w1_bound;
    });

    guard("distance_to_support", [&] {
        const auto ds = PushforwardDist::from_instance(fin, cfg.support_sigma);
        rep.support = distance_to_support(ds, cfg.support_cosine, cfg.support_samples, cfg.seed, cfg.support_c);
        rep.support_pass = rep.support.exceed_probability >= cfg.support_min_probability;
    });

    const auto& sm = evolved.trace.sigma_mins;
    if (!sm.empty()) {
        rep.sigma_min_initial = sm.front();
        rep.sigma_min_final = sm.back();
        rep.sigma_min_min = *std::min_element(sm.begin(), sm.end());
        rep.sigma_min_max = *std::max_element(sm.begin(), sm.end());
    }
    guard("vandermonde", [&] {
        std::vector<double> sq;
        for (int i = 0; i < initial.half(); ++i) sq.push_back(initial.heights[i] * initial.heights[i]);
        rep.vandermonde = vandermonde_sigma_check(sq, cfg.vandermonde_c);
    });
    return rep;
}

}  // namespace moment_forge
