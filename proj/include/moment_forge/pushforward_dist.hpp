#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "bump_model.hpp"
#include "error.hpp"
#include "gaussian_core.hpp"
#include "network_export.hpp"
#include "numerics.hpp"
#include "random.hpp"

namespace moment_forge {

/// Seed stream ids shared by all samplers.
namespace streams {
inline constexpr std::uint64_t latent = 1;
inline constexpr std::uint64_t smoothing = 2;
inline constexpr std::uint64_t ambient = 3;
inline constexpr std::uint64_t null = 4;
inline constexpr std::uint64_t directions = 5;
}  // namespace streams

/**
 * @brief One linear piece of a piecewise-linear latent map.
 *
 * Finite pieces carry exact endpoint values; an unbounded piece is anchored at
 * its finite end (or at g = 0 when both ends are infinite, with f_lo = f(0)).
 */
struct LatentPiece {
    double lo = 0.0, hi = 0.0;
    double f_lo = 0.0, f_hi = 0.0;
    double slope = 0.0;

    bool bounded() const { return std::isfinite(lo) && std::isfinite(hi); }
    bool constant() const { return slope == 0.0 && f_lo == f_hi; }
    double value(double g) const {
        if (bounded()) return f_lo + (f_hi - f_lo) * ((g - lo) / (hi - lo));
        if (std::isfinite(lo)) return f_lo + slope * (g - lo);
        if (std::isfinite(hi)) return f_hi + slope * (g - hi);
        return f_lo + slope * g;
    }
};

struct PiecewiseLinearMap {
    std::vector<LatentPiece> pieces;  ///< ordered, covering the real line

    static PiecewiseLinearMap from_instance(const BumpInstance& inst) {
        PiecewiseLinearMap f;
        const double inf = INFINITY;
        double left = -inf;
        for (std::size_t i = 0; i < inst.size(); ++i) {
            const Bump b = inst.bump(i);
            f.pieces.push_back({left, b.support_lo(), 0.0, 0.0, 0.0});
            if (b.eps > 0.0) f.pieces.push_back({b.support_lo(), b.c - b.w, 0.0, b.h, b.h / b.eps});
            f.pieces.push_back({b.c - b.w, b.c + b.w, b.h, b.h, 0.0});
            if (b.eps > 0.0) f.pieces.push_back({b.c + b.w, b.support_hi(), b.h, 0.0, -b.h / b.eps});
            left = b.support_hi();
        }
        f.pieces.push_back({left, inf, 0.0, 0.0, 0.0});
        // drop empty plateaus (w = 0)
        std::erase_if(f.pieces, [](const LatentPiece& p) { return !(p.lo < p.hi); });
        return f;
    }

    static PiecewiseLinearMap identity() { return {{{-INFINITY, INFINITY, 0.0, 0.0, 1.0}}}; }

    /// Exact pieces of a one-input network from its breakpoints.
    static PiecewiseLinearMap from_network(const ReluNetwork& net) {
        detail::require(net.input_dim == 1, "from_network: expects a one-input network");
        std::vector<double> bp;
        for (const auto& u : net.units)
            if (u.weights[0] != 0.0) bp.push_back(-u.bias / u.weights[0]);
        std::sort(bp.begin(), bp.end());
        bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
        auto slope_in = [&](double a, double b) {  // slope of the region strictly between a and b
            double z = std::isfinite(a) && std::isfinite(b) ? 0.5 * (a + b)
                       : std::isfinite(a)                   ? a + 1.0
                       : std::isfinite(b)                   ? b - 1.0
                                                            : 0.0;
            double s = net.linear.empty() ? 0.0 : net.linear[0];
            for (const auto& u : net.units)
                if (u.weights[0] * z + u.bias > 0.0) s += u.sign * u.weights[0];
            return s;
        };
        PiecewiseLinearMap f;
        if (bp.empty()) {
            f.pieces.push_back({-INFINITY, INFINITY, net(0.0), net(0.0), slope_in(-INFINITY, INFINITY)});
            return f;
        }
        std::vector<double> vals;
        for (double x : bp) vals.push_back(net(x));
        f.pieces.push_back({-INFINITY, bp.front(), vals.front(), vals.front(), slope_in(-INFINITY, bp.front())});
        for (std::size_t i = 0; i + 1 < bp.size(); ++i)
            f.pieces.push_back({bp[i], bp[i + 1], vals[i], vals[i + 1], slope_in(bp[i], bp[i + 1])});
        f.pieces.push_back({bp.back(), INFINITY, vals.back(), vals.back(), slope_in(bp.back(), INFINITY)});
        for (auto& p : f.pieces)
            if (!p.bounded()) {
                if (std::isfinite(p.lo)) p.f_hi = p.slope == 0.0 ? p.f_lo : NAN;
                if (std::isfinite(p.hi)) p.f_lo = p.slope == 0.0 ? p.f_hi : NAN;
            }
        return f;
    }

    const LatentPiece& piece_at(double g) const {
        auto it = std::upper_bound(pieces.begin(), pieces.end(), g,
                                   [](double x, const LatentPiece& p) { return x < p.lo; });
        return it == pieces.begin() ? pieces.front() : *(it - 1);
    }
    double operator()(double g) const { return piece_at(g).value(g); }

    bool bounded_range() const {
        for (const auto& p : pieces)
            if (!p.bounded() && p.slope != 0.0) return false;
        return true;
    }
    double max_abs_value() const {
        double r = 0.0;
        for (const auto& p : pieces) {
            if (std::isfinite(p.lo) || p.bounded()) r = std::max(r, std::abs(std::isfinite(p.f_lo) ? p.f_lo : 0.0));
            if (std::isfinite(p.hi) || p.bounded()) r = std::max(r, std::abs(std::isfinite(p.f_hi) ? p.f_hi : 0.0));
        }
        return r;
    }
};

/**
 * @brief D' = sqrt(1 - sigma^2) f(N(0,1)) * N(0, sigma^2) for piecewise-linear f.
 *
 * The density is exact: every linear piece of f contributes a Gaussian
 * product integral with a closed form.
 */
class PushforwardDist {
public:
    PushforwardDist(PiecewiseLinearMap f, double sigma, std::function<double(double)> eval = {})
        : map_(std::move(f)), sigma_(sigma), scale_(std::sqrt(1.0 - sigma * sigma)), eval_(std::move(eval)) {
        detail::require(sigma >= 0.0 && sigma < 1.0, "pushforward: sigma must lie in [0,1)");
        detail::require(!map_.pieces.empty(), "pushforward: empty latent map");
    }

    static PushforwardDist from_instance(const BumpInstance& inst, double sigma) {
        auto shared = std::make_shared<const BumpInstance>(inst);
        PushforwardDist d(PiecewiseLinearMap::from_instance(inst), sigma,
                          [shared](double z) { return instance_eval(*shared, z); });
        d.instance_ = shared;
        return d;
    }
    static PushforwardDist from_network(const ReluNetwork& net, double sigma) {
        auto shared = std::make_shared<const ReluNetwork>(net);
        return PushforwardDist(PiecewiseLinearMap::from_network(net), sigma,
                               [shared](double z) { return (*shared)(z); });
    }
    /// f = identity, so D' = N(0, 1) for every sigma.
    static PushforwardDist identity(double sigma) {
        return PushforwardDist(PiecewiseLinearMap::identity(), sigma, [](double z) { return z; });
    }

    double sigma() const { return sigma_; }
    double scale() const { return scale_; }
    const PiecewiseLinearMap& map() const { return map_; }
    const BumpInstance* instance() const { return instance_.get(); }

    double latent(double g) const { return eval_ ? eval_(g) : map_(g); }

    /// R = max |f|; infinite when f is unbounded.
    double support_radius() const {
        if (instance_) return instance_->max_abs_height();
        return map_.bounded_range() ? map_.max_abs_value() : INFINITY;
    }

    /// Half-width of a window holding all but a negligible part of D'.
    double effective_radius(double tails = 8.0) const {
        const double R = support_radius();
        if (std::isfinite(R)) return scale_ * R + tails * sigma_;
        double q = 0.0, off = 0.0;
        for (const auto& p : map_.pieces)
            if (!p.bounded()) {
                q = std::max(q, std::abs(p.slope));
                off = std::max(off, std::abs(std::isfinite(p.lo) ? p.f_lo : std::isfinite(p.hi) ? p.f_hi : p.f_lo));
            }
        off = std::max(off, map_.max_abs_value());
        return scale_ * off + (tails + 1.0) * std::sqrt(sigma_ * sigma_ + scale_ * scale_ * q * q);
    }

    /// Narrowest feature of the density (sets 2-D panel widths).
    double feature_width() const {
        for (const auto& p : map_.pieces)
            if (p.constant()) return sigma_;
        return std::max(sigma_, 0.25);
    }

    /// Points in x where the density has structure (atoms' centers, ramp ends).
    std::vector<double> feature_points() const {
        std::vector<double> pts{0.0};
        for (const auto& p : map_.pieces) {
            if (std::isfinite(p.f_lo)) pts.push_back(scale_ * p.f_lo);
            if (std::isfinite(p.f_hi)) pts.push_back(scale_ * p.f_hi);
        }
        std::sort(pts.begin(), pts.end());
        pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
        return pts;
    }

    double density(double x) const {
        detail::require(sigma_ > 0.0, "density: sigma = 0 has atoms, no density");
        if (std::isnan(x)) throw ValidationError("density: NaN input");
        return inv_sqrt_2pi * sum_terms(x, 0.0);
    }

    /// D'(x) / gamma(x), exponents combined before exponentiation.
    double density_ratio(double x) const {
        detail::require(sigma_ > 0.0, "density_ratio: sigma = 0 has atoms, no density");
        return sum_terms(x, 0.5 * x * x);
    }

    /// E[f(g)^k] for the latent pushforward D.
    double latent_moment(int k) const {
        detail::require(k >= 0, "latent_moment: k must be nonnegative");
        if (k == 0) return 1.0;
        if (instance_) return instance_pushforward_moment(*instance_, k);
        double s = 0.0;
        for (const auto& p : map_.pieces) {
            if (p.constant()) {
                s += detail::ipow(p.f_lo, k) * gaussian_mass(p.lo, p.hi);
            } else if (p.bounded() && p.hi - p.lo <= 4.0) {
                const int panels = static_cast<int>(std::ceil((p.hi - p.lo) / 0.5));
                const double dg = (p.hi - p.lo) / panels;
                for (int j = 0; j < panels; ++j)
                    s += gl_integrate<64>([&](double g) { return std::pow(p.value(g), k) * std_normal_pdf(g); },
                                          p.lo + j * dg, p.lo + (j + 1) * dg);
            } else {
                // f = p0 + q g on the piece
                const double q = p.slope;
                const double p0 = p.value(0.0);
                double binom = 1.0;
                for (int j = 0; j <= k; ++j) {
                    if (j > 0) binom = binom * (k - j + 1) / j;
                    const double c = binom * detail::ipow(q, j) * detail::ipow(p0, k - j);
                    if (c != 0.0) s += c * truncated_moment(j, p.lo, p.hi);
                }
            }
        }
        return s;
    }

    /// E[x^k] for x ~ D', by binomial expansion over independent parts.
    double moment(int k) const {
        detail::require(k >= 0, "moment: k must be nonnegative");
        double s = 0.0, binom = 1.0;
        for (int j = 0; j <= k; ++j) {
            if (j > 0) binom = binom * (k - j + 1) / j;
            const double g = gaussian_moment(k - j);
            if (g == 0.0) continue;
            const double noise = (k - j == 0) ? 1.0 : std::pow(sigma_, k - j);
            s += binom * std::pow(scale_, j) * latent_moment(j) * noise * g;
        }
        return s;
    }

    /// sqrt(1 - sigma^2) f(g1) + sigma g2 with g1, g2 from streams 1 and 2.
    std::vector<double> sample(std::size_t n, std::uint64_t seed) const {
        Rng g1(seed, streams::latent), g2(seed, streams::smoothing);
        std::vector<double> out(n);
        for (auto& x : out) {
            x = scale_ * latent(g1.normal());
            if (sigma_ > 0.0) x += sigma_ * g2.normal();
        }
        return out;
    }

private:
    double sum_terms(double x, double shift) const {
        const double s2 = sigma_ * sigma_;
        double acc = 0.0;
        for (const auto& p : map_.pieces) {
            if (p.constant()) {
                const double y = x - scale_ * p.f_lo;
                acc += std::exp(shift - y * y / (2.0 * s2)) / sigma_ * gaussian_mass(p.lo, p.hi);
            } else if (p.bounded()) {
                // g = alpha + beta u, s f = s f_lo + kappa u for u in [0, 1]
                const double alpha = p.lo, beta = p.hi - p.lo;
                const double y = x - scale_ * p.f_lo, kappa = scale_ * (p.f_hi - p.f_lo);
                const double A = beta * beta + kappa * kappa / s2, rA = std::sqrt(A);
                const double q = beta * beta * s2 + kappa * kappa;
                const double num = beta * y + alpha * kappa;
                const double lo = (alpha * beta - y * kappa / s2) / rA;
                const double hi = (beta * (alpha + beta) + kappa * (kappa - y) / s2) / rA;
                acc += beta * std::exp(shift - num * num / (2.0 * q)) / std::sqrt(q) * gaussian_mass(lo, hi);
            } else {
                // s f = s p0 + kappa g on an unbounded interval
                const double p0 = std::isfinite(p.lo) ? p.f_lo - p.slope * p.lo
                                  : std::isfinite(p.hi) ? p.f_hi - p.slope * p.hi
                                                        : p.f_lo;
                const double y = x - scale_ * p0, kappa = scale_ * p.slope;
                const double v = s2 + kappa * kappa, rA = std::sqrt(v) / sigma_;
                const double shiftg = y * kappa / v;
                acc += std::exp(shift - y * y / (2.0 * v)) / std::sqrt(v) *
                       gaussian_mass(rA * (p.lo - shiftg), rA * (p.hi - shiftg));
            }
        }
        return acc;
    }

    PiecewiseLinearMap map_;
    double sigma_;
    double scale_;
    std::function<double(double)> eval_;
    std::shared_ptr<const BumpInstance> instance_;
};

/// Row-major n x d sample block.
struct SampleMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;

    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
};

/// Law that is D' along v and standard Gaussian orthogonal to v.
struct HiddenDirectionDist {
    std::size_t d = 0;
    std::vector<double> v;
    PushforwardDist marginal;

    HiddenDirectionDist(std::vector<double> dir, PushforwardDist m)
        : d(dir.size()), v(std::move(dir)), marginal(std::move(m)) {
        detail::require(d >= 1, "hidden direction: d must be >= 1");
        double nrm = 0.0;
        for (double x : v) nrm += x * x;
        detail::require(std::abs(std::sqrt(nrm) - 1.0) <= 1e-12, "hidden direction: v must be a unit vector");
    }
};

/// x = s v + (I - v v^T) g, with s from streams 1-2 and g from stream 3.
inline SampleMatrix sample_hidden(const HiddenDirectionDist& hd, std::size_t n, std::uint64_t seed) {
    const auto s = hd.marginal.sample(n, seed);
    Rng g(seed, streams::ambient);
    SampleMatrix out{n, hd.d, std::vector<double>(n * hd.d)};
    for (std::size_t i = 0; i < n; ++i) {
        auto r = out.row(i);
        double vg = 0.0;
        for (std::size_t j = 0; j < hd.d; ++j) {
            r[j] = g.normal();
            vg += hd.v[j] * r[j];
        }
        for (std::size_t j = 0; j < hd.d; ++j) r[j] += (s[i] - vg) * hd.v[j];
    }
    return out;
}

inline SampleMatrix sample_null(std::size_t d, std::size_t n, std::uint64_t seed) {
    detail::require(d >= 1, "sample_null: d must be >= 1");
    Rng g(seed, streams::null);
    SampleMatrix out{n, d, std::vector<double>(n * d)};
    for (auto& x : out.data) x = g.normal();
    return out;
}

inline std::vector<double> random_unit_vector(std::size_t d, Rng& rng) {
    std::vector<double> u(d);
    double nrm = 0.0;
    do {
        nrm = 0.0;
        for (auto& x : u) {
            x = rng.normal();
            nrm += x * x;
        }
    } while (nrm == 0.0);
    nrm = std::sqrt(nrm);
    for (auto& x : u) x /= nrm;
    return u;
}

/// Random unit vectors with pairwise |<u, v>| < max_overlap.
inline std::vector<std::vector<double>> generate_directions(std::size_t d, std::size_t count, double max_overlap,
                                                           std::uint64_t seed, std::size_t retry_budget = 0) {
    detail::require(d >= 1, "generate_directions: d must be >= 1");
    detail::require(count >= 2, "generate_directions: count must be >= 2");
    detail::require(max_overlap > 0.0 && max_overlap < 1.0, "generate_directions: max_overlap must lie in (0,1)");
    if (retry_budget == 0) retry_budget = 100 * count;
    Rng rng(seed, streams::directions);
    std::vector<std::vector<double>> out;
    std::size_t rejected = 0;
    while (out.size() < count) {
        auto u = random_unit_vector(d, rng);
        bool ok = true;
        for (const auto& v : out) {
            double ip = 0.0;
            for (std::size_t j = 0; j < d; ++j) ip += u[j] * v[j];
            if (std::abs(ip) >= max_overlap) {
                ok = false;
                break;
            }
        }
        if (ok) {
            out.push_back(std::move(u));
        } else if (++rejected > retry_budget) {
            throw NumericGuardError("generate_directions: retry budget exhausted; try a larger d or max_overlap");
        }
    }
    return out;
}

}  // namespace moment_forge
