#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bump_model.hpp"
#include "error.hpp"

namespace moment_forge {

/// s * relu(<w, x> + b)
struct ReluUnit {
    int sign = 1;
    std::vector<double> weights;
    double bias = 0.0;
};

/**
 * @brief One-hidden-layer ReLU network plus an optional exact linear term.
 *
 * g(x) = sum_i s_i relu(<w_i, x> + b_i) + <linear, x>.
 */
struct ReluNetwork {
    std::size_t input_dim = 1;
    std::vector<ReluUnit> units;
    std::vector<double> linear;  ///< empty or input_dim entries

    std::size_t size() const { return units.size(); }

    /// W: the largest |w| (Euclidean) or |b| over all units.
    double weight_bound() const {
        double r = 0.0;
        for (const auto& u : units) {
            double nrm = 0.0;
            for (double w : u.weights) nrm += w * w;
            r = std::max({r, std::sqrt(nrm), std::abs(u.bias)});
        }
        return r;
    }

    double evaluate(std::span<const double> x) const {
        if (x.size() != input_dim) throw ValidationError("network evaluate: input dimension mismatch");
        double out = 0.0;
        for (const auto& u : units) {
            double pre = u.bias;
            for (std::size_t j = 0; j < input_dim; ++j) pre += u.weights[j] * x[j];
            if (pre > 0.0) out += u.sign * pre;
        }
        for (std::size_t j = 0; j < linear.size(); ++j) out += linear[j] * x[j];
        return out;
    }

    double operator()(double z) const {
        const double x[1] = {z};
        return evaluate(x);
    }
    double operator()(double z1, double z2) const {
        const double x[2] = {z1, z2};
        return evaluate(x);
    }

    void validate() const {
        detail::require(input_dim >= 1, "network: input_dim must be >= 1");
        detail::require(linear.empty() || linear.size() == input_dim, "network: linear term has wrong size");
        for (const auto& u : units) {
            detail::require(u.sign == 1 || u.sign == -1, "network: unit sign must be +1 or -1");
            detail::require(u.weights.size() == input_dim, "network: unit weight has wrong size");
            for (double w : u.weights) detail::require(std::isfinite(w), "network: non-finite weight");
            detail::require(std::isfinite(u.bias), "network: non-finite bias");
        }
        for (double l : linear) detail::require(std::isfinite(l), "network: non-finite linear coefficient");
    }
};

using ReluNetwork1D = ReluNetwork;

/// max_i (|h_i| / eps) * max(1, |c_i| + eps + w_i)
inline double implementbox_weight_bound(const BumpInstance& inst) {
    double r = 0.0;
    for (std::size_t i = 0; i < inst.size(); ++i) {
        const double a = std::abs(inst.heights[i]) / inst.eps;
        r = std::max(r, a * std::max(1.0, std::abs(inst.centers[i]) + inst.eps + inst.half_widths[i]));
    }
    return r;
}

/// Four units per bump, ordered by bump then breakpoint.
inline ReluNetwork compile(const BumpInstance& inst) {
    detail::require(inst.eps > 0.0, "compile: eps must be positive (the eps=0 limit is discontinuous)");
    ReluNetwork net;
    net.input_dim = 1;
    for (std::size_t i = 0; i < inst.size(); ++i) {
        const double c = inst.centers[i], w = inst.half_widths[i], e = inst.eps, h = inst.heights[i];
        const double a = std::abs(h) / e;
        const int s = h < 0.0 ? -1 : 1;
        net.units.push_back({s, {a}, a * (-c + e + w)});
        net.units.push_back({-s, {a}, a * (-c + w)});
        net.units.push_back({-s, {a}, a * (-c - w)});
        net.units.push_back({s, {a}, a * (-c - e - w)});
    }
    return net;
}

/// (z1, z2) -> sqrt(1 - sigma^2) net(z1) + sigma z2
inline ReluNetwork smooth_inner(const ReluNetwork& net, double sigma) {
    detail::require(sigma > 0.0 && sigma < 1.0, "smooth_inner: sigma must lie in (0,1)");
    detail::require(net.input_dim == 1, "smooth_inner: expects a one-input network");
    const double alpha = std::sqrt(1.0 - sigma * sigma);
    ReluNetwork out;
    out.input_dim = 2;
    for (const auto& u : net.units) out.units.push_back({u.sign, {alpha * u.weights[0], 0.0}, alpha * u.bias});
    out.linear = {net.linear.empty() ? 0.0 : alpha * net.linear[0], sigma};
    return out;
}

/// Replace linear terms by relu pairs: l x = sign(l) (relu(|l| x) - relu(-|l| x)).
inline ReluNetwork to_pure_relu(const ReluNetwork& net) {
    ReluNetwork out = net;
    out.linear.clear();
    for (std::size_t j = 0; j < net.linear.size(); ++j) {
        const double l = net.linear[j];
        if (l == 0.0) continue;
        const int s = l < 0.0 ? -1 : 1;
        std::vector<double> w(net.input_dim, 0.0);
        w[j] = std::abs(l);
        out.units.push_back({s, w, 0.0});
        w[j] = -std::abs(l);
        out.units.push_back({-s, w, 0.0});
    }
    return out;
}

/**
 * @brief d-dimensional generator F_v(z) = U (f*(z1, z2), z3, ..., z_{d+1}).
 *
 * U is the Householder reflection with U e1 = v (identity when v = e1).
 * With duplicate > 1 the d outputs are repeated that many times.
 */
struct LiftedNetwork {
    std::size_t d = 0;
    std::vector<double> v;
    double sigma = 0.0;
    ReluNetwork inner;     ///< one-input f
    ReluNetwork smoothed;  ///< two-input f*
    std::vector<double> householder;  ///< u = e1 - v, empty for the identity
    int duplicate = 1;

    std::size_t input_dim() const { return d + 1; }
    std::size_t output_dim() const { return d * static_cast<std::size_t>(duplicate); }

    /// ReLU units per output coordinate, and the count with the two linear terms.
    std::size_t relu_units() const { return smoothed.size(); }
    std::size_t units_with_linear() const { return smoothed.size() + 2; }

    void apply_rotation(std::vector<double>& y) const {
        if (householder.empty()) return;
        double uu = 0.0, uy = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            uu += householder[i] * householder[i];
            uy += householder[i] * y[i];
        }
        const double f = 2.0 * uy / uu;
        for (std::size_t i = 0; i < d; ++i) y[i] -= f * householder[i];
    }

    Eigen::MatrixXd rotation() const {
        Eigen::MatrixXd U = Eigen::MatrixXd::Identity(d, d);
        if (householder.empty()) return U;
        Eigen::Map<const Eigen::VectorXd> u(householder.data(), static_cast<Eigen::Index>(d));
        U -= (2.0 / u.squaredNorm()) * u * u.transpose();
        return U;
    }

    std::vector<double> evaluate(std::span<const double> z) const {
        if (z.size() != d + 1) throw ValidationError("lifted evaluate: input dimension mismatch");
        std::vector<double> y(d);
        y[0] = smoothed(z[0], z[1]);
        for (std::size_t i = 1; i < d; ++i) y[i] = z[i + 1];
        apply_rotation(y);
        if (duplicate == 1) return y;
        std::vector<double> out;
        out.reserve(output_dim());
        for (int r = 0; r < duplicate; ++r) out.insert(out.end(), y.begin(), y.end());
        return out;
    }

    /// Output coordinate j as alpha_j f*(z1, z2) + <u_j, (z3, ..., z_{d+1})>.
    ReluNetwork coordinate_network(std::size_t j) const {
        detail::require(j < d, "coordinate_network: index out of range");
        const Eigen::MatrixXd U = rotation();
        const double alpha = U(static_cast<Eigen::Index>(j), 0);
        ReluNetwork out;
        out.input_dim = d + 1;
        out.linear.assign(d + 1, 0.0);
        if (alpha != 0.0) {
            const int sa = alpha < 0.0 ? -1 : 1;
            const double aa = std::abs(alpha);
            for (const auto& u : smoothed.units) {
                std::vector<double> w(d + 1, 0.0);
                w[0] = aa * u.weights[0];
                w[1] = aa * u.weights[1];
                out.units.push_back({u.sign * sa, w, aa * u.bias});
            }
            out.linear[0] = alpha * smoothed.linear[0];
            out.linear[1] = alpha * smoothed.linear[1];
        }
        for (std::size_t i = 1; i < d; ++i)
            out.linear[i + 1] = U(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
        return out;
    }
};

inline LiftedNetwork lift(const ReluNetwork& net, double sigma, std::size_t d, const std::vector<double>& v,
                          int duplicate = 1) {
    detail::require(d >= 2, "lift: d must be >= 2");
    detail::require(v.size() == d, "lift: direction has wrong dimension");
    detail::require(duplicate >= 1, "lift: duplicate factor must be >= 1");
    double nrm = 0.0;
    for (double x : v) nrm += x * x;
    if (!(std::abs(std::sqrt(nrm) - 1.0) <= 1e-12)) throw ValidationError("lift: v must be a unit vector");
    LiftedNetwork L;
    L.d = d;
    L.v = v;
    L.sigma = sigma;
    L.inner = net;
    L.smoothed = smooth_inner(net, sigma);
    L.duplicate = duplicate;
    double off = std::abs(v[0] - 1.0);
    for (std::size_t i = 1; i < d; ++i) off = std::max(off, std::abs(v[i]));
    if (off > 1e-12) {
        L.householder.assign(d, 0.0);
        L.householder[0] = 1.0 - v[0];
        for (std::size_t i = 1; i < d; ++i) L.householder[i] = -v[i];
    }
    return L;
}

}  // namespace moment_forge
