#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "bump_model.hpp"
#include "error.hpp"

namespace moment_forge {

/// Linear system governing the height velocity at one (h, eps).
struct FlowSystem {
    int half = 0;
    Eigen::MatrixXd Z;        ///< Z(i, l) = M_{i, 2(l+1)}
    Eigen::VectorXd b;        ///< b(l) = -sum_i dM_{i, 2(l+1)} / d eps
    Eigen::VectorXd A_diag;   ///< 1 / h_i
    Eigen::VectorXd B_diag;   ///< 2, 4, ..., m-1
    double sigma_min_Z = 0.0;
    double sigma_max_Z = 0.0;
};

inline double smallest_singular_value(const Eigen::MatrixXd& M, double* largest = nullptr) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    const auto& s = svd.singularValues();
    if (largest) *largest = s.size() ? s(0) : 0.0;
    return s.size() ? s(s.size() - 1) : 0.0;
}

inline FlowSystem build_system(const BumpInstance& inst) {
    const int half = inst.half();
    detail::require(half >= 1, "build_system: instance has no bumps");
    detail::require(inst.eps > 0.0, "build_system: eps must be positive");
    FlowSystem s;
    s.half = half;
    s.Z.resize(half, half);
    s.b = Eigen::VectorXd::Zero(half);
    s.A_diag.resize(half);
    s.B_diag.resize(half);
    for (int i = 0; i < half; ++i) {
        const Bump bi = inst.bump(i);
        if (bi.h == 0.0) throw ValidationError("build_system: height h_" + std::to_string(i + 1) + " is zero");
        s.A_diag(i) = 1.0 / bi.h;
        for (int l = 0; l < half; ++l) {
            const int k = 2 * (l + 1);
            s.Z(i, l) = bump_moment(bi, k);
            s.b(l) -= bump_moment_deps(bi, k);
        }
    }
    for (int l = 0; l < half; ++l) s.B_diag(l) = 2.0 * (l + 1);
    if (!s.Z.allFinite() || !s.b.allFinite()) throw NumericGuardError("build_system: non-finite moment");
    s.sigma_min_Z = smallest_singular_value(s.Z, &s.sigma_max_Z);
    return s;
}

/// J(l, i) = d mu_l / d h_i = (2l / h_i) M_{i,2l}; the flow solves J v = b.
inline Eigen::MatrixXd flow_jacobian(const FlowSystem& s) {
    Eigen::MatrixXd J(s.half, s.half);
    for (int l = 0; l < s.half; ++l)
        for (int i = 0; i < s.half; ++i) J(l, i) = s.B_diag(l) * s.A_diag(i) * s.Z(i, l);
    return J;
}

/// Half-sum even moments mu_l = sum_{i <= half} M_{i,2l}, l = 1..half.
inline Eigen::VectorXd half_moments(const BumpInstance& inst) {
    const int half = inst.half();
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(half);
    for (int i = 0; i < half; ++i)
        for (int l = 0; l < half; ++l) mu(l) += bump_moment(inst.bump(i), 2 * (l + 1));
    return mu;
}

/// Copy of `inst` with left-half heights h (mirrored to the right) and ramp width e.
inline BumpInstance with_state(const BumpInstance& inst, const Eigen::VectorXd& h, double e) {
    BumpInstance out = inst;
    const std::size_t n = inst.size();
    for (std::size_t i = 0; i < n / 2; ++i) {
        out.heights[i] = h(static_cast<Eigen::Index>(i));
        out.heights[n - 1 - i] = -h(static_cast<Eigen::Index>(i));
    }
    out.eps = e;
    return out;
}

inline Eigen::VectorXd left_heights(const BumpInstance& inst) {
    Eigen::VectorXd h(inst.half());
    for (int i = 0; i < inst.half(); ++i) h(i) = inst.heights[i];
    return h;
}

struct FlowOptions {
    double atol = 1e-10;
    double rtol = 1e-10;
    double sigma_floor_rel = 1e-12;  ///< floor = rel * sigma_max(Z)
    double max_step_fraction = 1.0 / 20.0;
    double direction_ceiling = 1e8;
    double height_floor = 1e-9;
    double collision_margin = 0.05;  ///< fraction of the plateau gap kept free
    double max_sigma_drop = 0.5;
    double drift_bound = 1e-6;
    bool project = true;
    int max_steps = 100000;
};

struct DirectionResult {
    Eigen::VectorXd v;
    double sigma_min = 0.0;
};

/// Height velocity at time t (eps = inst.eps + t) for left-half heights h.
inline DirectionResult flow_direction_ex(double t, const Eigen::VectorXd& h, const BumpInstance& inst,
                                         const FlowOptions& opt = {}) {
    detail::require(t >= 0.0, "flow_direction: t must be nonnegative");
    detail::require(h.size() == inst.half(), "flow_direction: height vector has wrong size");
    const FlowSystem s = build_system(with_state(inst, h, inst.eps + t));
    const double floor = opt.sigma_floor_rel * s.sigma_max_Z;
    if (!(s.sigma_min_Z > floor)) throw ConditioningBreakdown(t, s.sigma_min_Z, floor);
    DirectionResult r;
    r.sigma_min = s.sigma_min_Z;
    r.v = flow_jacobian(s).fullPivLu().solve(s.b);
    return r;
}

inline Eigen::VectorXd flow_direction(double t, const Eigen::VectorXd& h, const BumpInstance& inst,
                                      const FlowOptions& opt = {}) {
    return flow_direction_ex(t, h, inst, opt).v;
}

/// Either a final ramp width or a maximum slope max_i |h_i| / eps.
struct SlopeTarget {
    enum class Kind { eps, slope } kind = Kind::eps;
    double value = 0.0;

    static SlopeTarget final_eps(double e) { return {Kind::eps, e}; }
    static SlopeTarget max_slope(double s) { return {Kind::slope, s}; }
};

struct EvolutionTrace {
    std::vector<double> times;
    std::vector<double> eps_values;
    std::vector<std::vector<double>> heights;
    std::vector<double> sigma_mins;
    std::vector<std::vector<double>> moment_residuals;
    std::vector<double> direction_norms;
    std::vector<double> odd_moment_max;
    std::vector<double> step_sizes;
    int rejected_steps = 0;

    bool target_reached = true;
    std::string stop_reason = "target reached";
    double achieved_T = 0.0;

    bool projected = false;
    double residual_before_projection = 0.0;
    double residual_after_projection = 0.0;
    int projection_iterations = 0;

    std::string status() const { return target_reached ? "reached" : "target-not-reached"; }
};

struct EvolveResult {
    BumpInstance instance;
    EvolutionTrace trace;
};

namespace detail {

inline double max_odd_moment(const BumpInstance& inst) {
    double r = 0.0;
    for (int k = 1; k <= inst.m; k += 2) r = std::max(r, std::abs(instance_pushforward_moment(inst, k)));
    return r;
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

/**
 * @brief Integrate the moment-preserving height flow while eps grows at unit speed.
 *
 * Dormand-Prince 5(4) with step control; stops at the target, at the support
 * collision cap, or when a guard fires (flagged target-not-reached).
 */
inline EvolveResult evolve(const BumpInstance& inst, const SlopeTarget& target, const FlowOptions& opt = {}) {
    inst.validate();
    detail::require(inst.eps > 0.0, "evolve: eps(0) must be positive");
    detail::require(target.value > 0.0 && std::isfinite(target.value), "evolve: target must be positive");
    const double e0 = inst.eps;
    if (target.kind == SlopeTarget::Kind::eps)
        detail::require(target.value >= e0, "evolve: eps target below eps(0)");

    // collision cap from plateau gaps
    const double plateau_gap = inst.min_support_gap(0.0);
    const double eps_cap = 0.5 * plateau_gap * (1.0 - opt.collision_margin);
    const double t_cap = eps_cap - e0;
    if (!(t_cap > 0.0)) throw NumericGuardError("evolve: support-collision guard fires at t=0");

    Eigen::VectorXd h = left_heights(inst);
    const Eigen::VectorXd mu0 = half_moments(inst);

    EvolutionTrace tr;
    auto record = [&](double t, const Eigen::VectorXd& hh, double smin, double vnorm) {
        const BumpInstance cur = with_state(inst, hh, e0 + t);
        tr.times.push_back(t);
        tr.eps_values.push_back(e0 + t);
        tr.heights.push_back(detail::to_std(hh));
        tr.sigma_mins.push_back(smin);
        tr.moment_residuals.push_back(detail::to_std((half_moments(cur) - mu0).cwiseAbs()));
        tr.direction_norms.push_back(vnorm);
        tr.odd_moment_max.push_back(detail::max_odd_moment(cur));
    };

    DirectionResult d0 = flow_direction_ex(0.0, h, inst, opt);  // breakdown here has made no progress
    record(0.0, h, d0.sigma_min, d0.v.lpNorm<Eigen::Infinity>());

    auto horizon = [&](const Eigen::VectorXd& hh) {
        if (target.kind == SlopeTarget::Kind::eps) return target.value - e0;
        return hh.cwiseAbs().maxCoeff() / target.value - e0;
    };

    // Dormand-Prince tableau
    static constexpr double c[7] = {0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1, 1};
    static constexpr double a[7][6] = {
        {0, 0, 0, 0, 0, 0},
        {1.0 / 5, 0, 0, 0, 0, 0},
        {3.0 / 40, 9.0 / 40, 0, 0, 0, 0},
        {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0},
        {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0},
        {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0},
        {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
    static constexpr double b5[7] = {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0};
    static constexpr double b4[7] = {5179.0 / 57600, 0, 7571.0 / 16695, 393.0 / 640, -92097.0 / 339200,
                                     187.0 / 2100, 1.0 / 40};

    double t = 0.0;
    double T = horizon(h);
    double prev_sigma = d0.sigma_min;
    auto stop = [&](const std::string& why) {
        tr.target_reached = false;
        tr.stop_reason = why;
    };
    if (T > t_cap) T = t_cap;
    double dt = std::min(T * opt.max_step_fraction, 1e-3 * std::max(T, 1e-300));
    int steps = 0;

    for (int round = 0; round < 50 && T > t; ++round) {
        const double hmax = std::max(T * opt.max_step_fraction, 1e-300);
        dt = std::min(std::max(dt, 1e-6 * hmax), hmax);
        bool aborted = false;
        while (t < T) {
            if (++steps > opt.max_steps) {
                stop("step budget exhausted");
                aborted = true;
                break;
            }
            const double step = std::min(dt, T - t);
            std::array<Eigen::VectorXd, 7> k;
            Eigen::VectorXd y5;
            double smin_new = 0.0;
            bool ok = true;
            try {
                k[0] = flow_direction_ex(t, h, inst, opt).v;
                for (int s = 1; s < 7; ++s) {
                    Eigen::VectorXd y = h;
                    for (int j = 0; j < s; ++j) y += step * a[s][j] * k[j];
                    if ((y.cwiseAbs().array() < opt.height_floor).any()) throw NumericGuardError("height floor");
                    auto dr = flow_direction_ex(t + c[s] * step, y, inst, opt);
                    k[s] = dr.v;
                    if (s == 6) {
                        y5 = y;
                        smin_new = dr.sigma_min;
                    }
                }
            } catch (const NumericGuardError&) {
                ok = false;
            }
            double err = INFINITY;
            if (ok) {
                Eigen::VectorXd e = Eigen::VectorXd::Zero(h.size());
                for (int s = 0; s < 7; ++s) e += step * (b5[s] - b4[s]) * k[s];
                err = 0.0;
                for (Eigen::Index i = 0; i < h.size(); ++i) {
                    const double sc = opt.atol + opt.rtol * std::max(std::abs(h(i)), std::abs(y5(i)));
                    err = std::max(err, std::abs(e(i)) / sc);
                }
                if (smin_new < opt.max_sigma_drop * prev_sigma) {
                    ok = false;
                    err = INFINITY;
                }
            }
            if (!ok || err > 1.0) {
                ++tr.rejected_steps;
                dt = ok ? step * std::max(0.2, 0.9 * std::pow(err, -0.2)) : 0.5 * step;
                if (dt < 1e-14 * std::max(T, e0)) {
                    if (t == 0.0) throw NumericGuardError("evolve: step size underflow before any progress");
                    stop("step size underflow (conditioning or height guard)");
                    aborted = true;
                    break;
                }
                continue;
            }
            const double vnorm = k[6].lpNorm<Eigen::Infinity>();
            if (vnorm > opt.direction_ceiling) {
                if (t == 0.0) throw NumericGuardError("evolve: direction ceiling exceeded at t=0");
                stop("direction-magnitude ceiling exceeded");
                aborted = true;
                break;
            }
            t = (T - t <= step) ? T : t + step;
            h = y5;
            prev_sigma = smin_new;
            tr.step_sizes.push_back(step);
            record(t, h, smin_new, vnorm);
            dt = std::min(hmax, step * std::min(5.0, 0.9 * std::pow(std::max(err, 1e-10), -0.2)));
        }
        if (aborted) break;
        if (t >= t_cap) {
            if (horizon(h) > t + 1e-15 * std::max(1.0, t)) stop("support-collision guard");
            break;
        }
        const double next = horizon(h);
        if (next <= t) break;  // target met
        T = std::min(next, t_cap);
    }
    tr.achieved_T = t;

    EvolveResult out{with_state(inst, h, e0 + t), std::move(tr)};
    auto& trace = out.trace;
    trace.residual_before_projection = trace.moment_residuals.back().empty()
                                           ? 0.0
                                           : *std::max_element(trace.moment_residuals.back().begin(),
                                                               trace.moment_residuals.back().end());
    trace.residual_after_projection = trace.residual_before_projection;
    if (opt.project && t > 0.0) {
        Eigen::VectorXd hp = h;
        for (int it = 0; it < 8; ++it) {
            const BumpInstance cur = with_state(inst, hp, e0 + t);
            const Eigen::VectorXd r = half_moments(cur) - mu0;
            if (r.lpNorm<Eigen::Infinity>() <= 1e-15 * std::max(1.0, mu0.lpNorm<Eigen::Infinity>())) break;
            hp -= flow_jacobian(build_system(cur)).fullPivLu().solve(r);
            trace.projection_iterations = it + 1;
        }
        const double after = (half_moments(with_state(inst, hp, e0 + t)) - mu0).lpNorm<Eigen::Infinity>();
        if (after <= trace.residual_before_projection) {
            out.instance = with_state(inst, hp, e0 + t);
            trace.projected = true;
            trace.residual_after_projection = after;
        }
    }
    return out;
}

struct VandermondeCheck {
    double lower_bound = 0.0;
    double actual = 0.0;
    double constant = 0.0;
    double separation = 0.0;
    bool meets_bound = false;
};

/// sigma_min of V(i, j) = z_j^i against (1/n) (c zeta)^(n-1).
inline VandermondeCheck vandermonde_sigma_check(const std::vector<double>& nodes, double c = 0.5) {
    const auto n = static_cast<Eigen::Index>(nodes.size());
    detail::require(n >= 1, "vandermonde_sigma_check: need at least one node");
    std::vector<double> s = nodes;
    std::sort(s.begin(), s.end());
    double zeta = n == 1 ? 1.0 : INFINITY;
    for (Eigen::Index i = 1; i < n; ++i) zeta = std::min(zeta, s[i] - s[i - 1]);
    detail::require(zeta > 0.0, "vandermonde_sigma_check: duplicate nodes");
    Eigen::MatrixXd V(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double p = 1.0;
        for (Eigen::Index i = 0; i < n; ++i, p *= nodes[j]) V(i, j) = p;
    }
    VandermondeCheck r;
    r.constant = c;
    r.separation = zeta;
    r.lower_bound = std::pow(c * zeta, double(n - 1)) / double(n);
    r.actual = smallest_singular_value(V);
    r.meets_bound = r.actual >= r.lower_bound;
    return r;
}

}  // namespace moment_forge
