#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "error.hpp"
#include "gaussian_core.hpp"
#include "numerics.hpp"
#include "pushforward_dist.hpp"
#include "random.hpp"

namespace moment_forge {

enum class OracleMode { honest, adversarial };
enum class Hypothesis { planted, null };

inline const char* to_string(OracleMode m) { return m == OracleMode::honest ? "honest" : "adversarial"; }

/// phi(<u, x>) for a unit vector u; expectations have exact 1-D laws.
struct ProjectionQuery {
    std::vector<double> u;
    std::function<double(double)> phi;
};

/// phi(x_S) for distinct coordinates S.
struct SubsetQuery {
    std::vector<std::size_t> coords;
    std::function<double(std::span<const double>)> phi;
};

struct GeneralQuery {
    std::function<double(std::span<const double>)> phi;
};

struct Query {
    std::variant<ProjectionQuery, SubsetQuery, GeneralQuery> form;
    std::string label;
};

/// The law an oracle answers about; the planted direction is not exposed.
class SqTarget {
public:
    static SqTarget null(std::size_t d) { return SqTarget(d); }
    static SqTarget planted(HiddenDirectionDist hd) { return SqTarget(std::move(hd)); }

    std::size_t dim() const { return d_; }
    bool is_planted() const { return hd_.has_value(); }

private:
    explicit SqTarget(std::size_t d) : d_(d) {}
    explicit SqTarget(HiddenDirectionDist hd) : d_(hd.d), hd_(std::move(hd)) {}

    std::size_t d_;
    std::optional<HiddenDirectionDist> hd_;
    friend class SqOracle;
};

struct QueryLog {
    std::size_t count = 0;
    std::vector<std::string> descriptions;
    std::size_t clamp_warnings = 0;
    std::size_t samples_used = 0;
    std::vector<double> tolerances;  ///< per query: tau (STAT) or the VSTAT tolerance
};

struct OracleOptions {
    OracleMode mode = OracleMode::honest;
    double tau = 0.01;        ///< STAT tolerance
    double vstat_t = 1e4;     ///< VSTAT sample-size parameter
    std::uint64_t seed = 1;   ///< fresh-sample streams
    std::uint64_t reference_seed = 7;  ///< shared by every oracle in an experiment
    std::size_t high_precision_samples = 200000;  ///< 0 disables the sampling fallback
    int hermite_nodes = 100;
};

/**
 * @brief Simulated STAT(tau) / VSTAT(t) oracle.
 *
 * Honest mode averages fresh samples. Adversarial mode computes the target
 * expectation and answers the null expectation whenever it lies within the
 * tolerance, otherwise the nearest admissible value.
 */
class SqOracle {
public:
    SqOracle(SqTarget target, OracleOptions opt) : target_(std::move(target)), opt_(opt) {
        detail::require(opt_.tau > 0.0 && opt_.tau < 1.0, "oracle: tau must lie in (0,1)");
        detail::require(opt_.vstat_t >= 1.0, "oracle: VSTAT t must be >= 1");
        gh_ = gauss_hermite(opt_.hermite_nodes);
        if (target_.hd_) build_latent_atoms();
    }

    const QueryLog& log() const { return log_; }
    const OracleOptions& options() const { return opt_; }

    double stat(const Query& q) {
        const std::size_t idx = next(q);
        auto fn = clamped(q, -1.0, 1.0);
        double ans;
        if (opt_.mode == OracleMode::honest) {
            const auto n = static_cast<std::size_t>(std::ceil(4.0 / (opt_.tau * opt_.tau)));
            ans = sample_moments(q, fn, n, Rng(opt_.seed, 1000 + idx), target_.is_planted()).mean;
        } else {
            const Moments target = expectation(q, fn, idx, target_.is_planted());
            const Moments null = expectation(q, fn, idx, false, true);
            ans = std::clamp(null.mean, target.mean - opt_.tau, target.mean + opt_.tau);
        }
        log_.tolerances.push_back(opt_.tau);
        return ans;
    }

    double vstat(const Query& q) {
        const std::size_t idx = next(q);
        auto fn = clamped(q, 0.0, 1.0);
        const double t = opt_.vstat_t;
        double ans, tol;
        if (opt_.mode == OracleMode::honest) {
            const auto n = static_cast<std::size_t>(std::ceil(4.0 * t));
            const Moments s = sample_moments(q, fn, n, Rng(opt_.seed, 1000 + idx), target_.is_planted());
            ans = s.mean;
            tol = std::max(1.0 / t, std::sqrt(std::max(0.0, s.var) / t));
        } else {
            const Moments target = expectation(q, fn, idx, target_.is_planted());
            const Moments null = expectation(q, fn, idx, false, true);
            tol = std::max(1.0 / t, std::sqrt(std::max(0.0, target.var) / t));
            ans = std::clamp(null.mean, target.mean - tol, target.mean + tol);
        }
        log_.tolerances.push_back(tol);
        return ans;
    }

private:
    struct Moments {
        double mean = 0.0, var = 0.0;
    };
    struct Atom {
        double value, weight;
    };
    using Fn = std::function<double(const Query&, std::span<const double>, double)>;

    std::size_t next(const Query& q) {
        log_.descriptions.push_back(q.label);
        return log_.count++;
    }

    // phi clamped to [lo, hi]; the projection form reads the scalar argument
    std::function<double(double, std::span<const double>)> clamped(const Query& q, double lo, double hi) {
        return [this, &q, lo, hi](double y, std::span<const double> xs) {
            double v;
            if (auto* p = std::get_if<ProjectionQuery>(&q.form)) v = p->phi(y);
            else if (auto* s = std::get_if<SubsetQuery>(&q.form)) v = s->phi(xs);
            else v = std::get<GeneralQuery>(q.form).phi(xs);
            if (v < lo || v > hi || std::isnan(v)) {
                ++log_.clamp_warnings;
                v = std::isnan(v) ? lo : std::clamp(v, lo, hi);
            }
            return v;
        };
    }

    double direction_overlap(const std::vector<double>& u) const {
        detail::require(u.size() == target_.d_, "projection query: direction has wrong dimension");
        double ip = 0.0;
        for (std::size_t j = 0; j < u.size(); ++j) ip += u[j] * target_.hd_->v[j];
        return ip;
    }

    static void check_unit(const std::vector<double>& u) {
        double nrm = 0.0;
        for (double x : u) nrm += x * x;
        detail::require(std::abs(std::sqrt(nrm) - 1.0) <= 1e-9, "projection query: direction must be a unit vector");
    }

    // One draw of the marginal D' (three-stream free: uses the given rng).
    double draw_marginal(Rng& rng) const {
        const auto& m = target_.hd_->marginal;
        double x = m.scale() * m.latent(rng.normal());
        if (m.sigma() > 0.0) x += m.sigma() * rng.normal();
        return x;
    }

    template <class F>
    Moments sample_moments(const Query& q, F& fn, std::size_t n, Rng rng, bool planted) {
        log_.samples_used += n;
        double sum = 0.0, sum2 = 0.0;
        std::vector<double> buf;
        if (auto* p = std::get_if<ProjectionQuery>(&q.form)) {
            check_unit(p->u);
            const double t = planted ? direction_overlap(p->u) : 0.0;
            const double sn = std::sqrt(std::max(0.0, (1.0 - t) * (1.0 + t)));
            for (std::size_t i = 0; i < n; ++i) {
                const double y = planted ? t * draw_marginal(rng) + sn * rng.normal() : rng.normal();
                const double v = fn(y, {});
                sum += v;
                sum2 += v * v;
            }
        } else if (auto* s = std::get_if<SubsetQuery>(&q.form)) {
            const std::size_t k = s->coords.size();
            buf.resize(k);
            std::vector<double> vs(k);
            double vv = 0.0;
            if (planted) {
                for (std::size_t a = 0; a < k; ++a) {
                    detail::require(s->coords[a] < target_.d_, "subset query: coordinate out of range");
                    vs[a] = target_.hd_->v[s->coords[a]];
                    vv += vs[a] * vs[a];
                }
            }
            const double rest = std::sqrt(std::max(0.0, 1.0 - vv));
            for (std::size_t i = 0; i < n; ++i) {
                for (auto& b : buf) b = rng.normal();
                if (planted) {
                    // x_S = X v_S + g_S - v_S <v, g>, with <v, g> = v_S . g_S + rest * n'
                    const double x = draw_marginal(rng);
                    double vg = rest * rng.normal();
                    for (std::size_t a = 0; a < k; ++a) vg += vs[a] * buf[a];
                    for (std::size_t a = 0; a < k; ++a) buf[a] += (x - vg) * vs[a];
                }
                const double v = fn(0.0, buf);
                sum += v;
                sum2 += v * v;
            }
        } else {
            const std::size_t d = target_.d_;
            buf.resize(d);
            for (std::size_t i = 0; i < n; ++i) {
                for (auto& b : buf) b = rng.normal();
                if (planted) {
                    const double x = draw_marginal(rng);
                    double vg = 0.0;
                    for (std::size_t j = 0; j < d; ++j) vg += target_.hd_->v[j] * buf[j];
                    for (std::size_t j = 0; j < d; ++j) buf[j] += (x - vg) * target_.hd_->v[j];
                }
                const double v = fn(0.0, buf);
                sum += v;
                sum2 += v * v;
            }
        }
        Moments m;
        m.mean = sum / n;
        m.var = n > 1 ? std::max(0.0, (sum2 - sum * m.mean) / (n - 1)) : 0.0;
        return m;
    }

    // E[phi] and Var[phi] computed deterministically (quadrature or high-precision sampling).
    template <class F>
    Moments expectation(const Query& q, F& fn, std::size_t idx, bool planted, bool reference = false) {
        if (auto* p = std::get_if<ProjectionQuery>(&q.form)) {
            check_unit(p->u);
            if (!planted) return gauss_expectation(fn, 0.0, 1.0);
            const double t = direction_overlap(p->u);
            // <u, x> = t s f(g) + rho N with rho^2 = t^2 sigma^2 + 1 - t^2
            const auto& m = target_.hd_->marginal;
            const double rho = std::sqrt(t * t * m.sigma() * m.sigma() + std::max(0.0, (1.0 - t) * (1.0 + t)));
            double s1 = 0.0, s2 = 0.0, wsum = 0.0;
            for (const auto& a : atoms_) {
                const Moments g = gauss_expectation(fn, t * m.scale() * a.value, rho);
                s1 += a.weight * g.mean;
                s2 += a.weight * (g.var + g.mean * g.mean);
                wsum += a.weight;
            }
            Moments out;
            out.mean = s1 / wsum;
            out.var = std::max(0.0, s2 / wsum - out.mean * out.mean);
            return out;
        }
        if (opt_.high_precision_samples == 0)
            throw ValidationError("adversarial oracle: query '" + q.label +
                                  "' has no registered 1-D form and the high-precision sampling budget is 0");
        const std::uint64_t s = reference ? opt_.reference_seed : opt_.seed;
        return sample_moments(q, fn, opt_.high_precision_samples, Rng(s, 500000 + idx), planted);
    }

    template <class F>
    Moments gauss_expectation(F& fn, double mean, double sd) const {
        double s1 = 0.0, s2 = 0.0, wsum = 0.0;
        for (std::size_t j = 0; j < gh_.nodes.size(); ++j) {
            const double v = fn(mean + sd * gh_.nodes[j], {});
            s1 += gh_.weights[j] * v;
            s2 += gh_.weights[j] * v * v;
            wsum += gh_.weights[j];
        }
        Moments out;
        out.mean = s1 / wsum;
        out.var = std::max(0.0, s2 / wsum - out.mean * out.mean);
        return out;
    }

    // latent law of f(g) as weighted atoms: exact plateaus, Gauss-Legendre on ramps
    void build_latent_atoms() {
        const auto& gl = gauss_legendre<16>();
        for (const auto& p : target_.hd_->marginal.map().pieces) {
            if (p.constant()) {
                atoms_.push_back({p.f_lo, gaussian_mass(p.lo, p.hi)});
            } else if (p.bounded()) {
                const double dg = p.hi - p.lo;
                for (int q = 0; q < 16; ++q) {
                    const double u = 0.5 * (gl.x[q] + 1.0);
                    atoms_.push_back({p.f_lo + (p.f_hi - p.f_lo) * u, 0.5 * gl.w[q] * dg * std_normal_pdf(p.lo + dg * u)});
                }
            } else {
                for (std::size_t j = 0; j < gh_.nodes.size(); ++j) {
                    const double g = gh_.nodes[j];
                    if (g >= p.lo && g <= p.hi) atoms_.push_back({p.value(g), gh_.weights[j]});
                }
            }
        }
    }

    SqTarget target_;
    OracleOptions opt_;
    QueryLog log_;
    QuadratureRule gh_;
    std::vector<Atom> atoms_;
};

/// One trial: an oracle plus the planted direction for baselines that cheat.
struct TrialSetup {
    SqOracle oracle;
    std::vector<double> v;
};

using OracleFactory = std::function<TrialSetup(Hypothesis, std::uint64_t trial_seed)>;

/// Factory drawing a fresh uniform v per trial (the null draws one too).
inline OracleFactory make_hidden_direction_factory(const PushforwardDist& marginal, std::size_t d, OracleOptions base) {
    return [marginal, d, base](Hypothesis h, std::uint64_t trial_seed) {
        Rng rng(trial_seed, 21);
        auto v = random_unit_vector(d, rng);
        OracleOptions o = base;
        o.seed = splitmix64(trial_seed ^ (h == Hypothesis::planted ? 0x5eedULL : 0xa11ULL));
        SqTarget target = h == Hypothesis::planted ? SqTarget::planted(HiddenDirectionDist(v, marginal))
                                                   : SqTarget::null(d);
        return TrialSetup{SqOracle(std::move(target), o), std::move(v)};
    };
}

struct DistinguisherParams {
    int degree = 5;
    std::size_t monomial_queries = 30;
    std::size_t directions = 100;
    std::size_t d = 0;
    /// marginal known to the oracle-v baseline (cheating channel)
    const PushforwardDist* marginal = nullptr;
    double separation_floor = 0.0;
};

struct DistinguisherResult {
    std::string algorithm;
    std::string decision;  ///< YES if the algorithm separates the hypotheses (advantage >= 1/3)
    std::size_t queries_used = 0;
    double advantage = 0.0;
    std::size_t trials = 0;
    std::size_t yes_planted = 0, yes_null = 0;
    std::size_t identical_answer_trials = 0;
    double max_answer_gap = 0.0;
    std::size_t d = 0;
    double tau = 0.0;
    std::string mode;
};

inline const std::vector<std::string>& distinguisher_ids() {
    static const std::vector<std::string> ids{"moment-scan", "random-projection-moment", "oracle-v"};
    return ids;
}

namespace detail {

/// Probabilists' Hermite He_k(y).
inline double hermite_he(int k, double y) {
    double h0 = 1.0, h1 = y;
    if (k == 0) return h0;
    for (int j = 1; j < k; ++j) {
        const double h2 = y * h1 - j * h0;
        h0 = h1;
        h1 = h2;
    }
    return h1;
}

/// max |He_k| on [-6, 6], used to scale queries into [-1, 1].
inline double hermite_bound(int k) {
    double b = 0.0;
    for (int i = 0; i <= 12000; ++i) b = std::max(b, std::abs(hermite_he(k, -6.0 + i * 1e-3)));
    return b;
}

struct Union {
    std::vector<std::pair<double, double>> iv;
    bool contains(double y) const {
        for (const auto& [a, b] : iv)
            if (y >= a && y <= b) return true;
        return false;
    }
    double gaussian_prob() const {
        double s = 0.0;
        for (const auto& [a, b] : iv) s += gaussian_mass(a, b);
        return s;
    }
};

inline Union merge(std::vector<std::pair<double, double>> iv) {
    std::sort(iv.begin(), iv.end());
    Union u;
    for (const auto& p : iv) {
        if (!u.iv.empty() && p.first <= u.iv.back().second) u.iv.back().second = std::max(u.iv.back().second, p.second);
        else u.iv.push_back(p);
    }
    return u;
}

// Runs one algorithm against one oracle; returns the answers and the YES/NO decision.
inline std::pair<std::vector<double>, bool> run_one(const std::string& algo, TrialSetup& ts,
                                                     const DistinguisherParams& p, std::uint64_t algo_seed) {
    Rng rng(algo_seed, 31);
    auto& o = ts.oracle;
    const double tau = o.options().tau;
    std::vector<double> answers;
    bool yes = false;
    const std::size_t d = p.d;
    if (algo == "moment-scan") {
        for (std::size_t q = 0; q < p.monomial_queries; ++q) {
            const int deg = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(p.degree)));
            std::vector<std::size_t> coords;
            std::vector<int> expo;
            for (int j = 0; j < deg; ++j) {
                const std::size_t c = rng.below(d);
                auto it = std::find(coords.begin(), coords.end(), c);
                if (it == coords.end()) {
                    coords.push_back(c);
                    expo.push_back(1);
                } else {
                    ++expo[it - coords.begin()];
                }
            }
            const double B = std::pow(6.0, deg);
            double ref = 1.0 / B;
            for (int e : expo) ref *= gaussian_moment(e);
            SubsetQuery sq{coords, [expo, B](std::span<const double> x) {
                               double v = 1.0;
                               for (std::size_t a = 0; a < expo.size(); ++a)
                                   for (int e = 0; e < expo[a]; ++e) v *= x[a];
                               return std::clamp(v / B, -1.0, 1.0);
                           }};
            const double ans = o.stat({sq, "monomial degree " + std::to_string(deg)});
            answers.push_back(ans);
            if (std::abs(ans - ref) > tau) yes = true;
        }
    } else if (algo == "random-projection-moment") {
        std::vector<double> bounds(p.degree + 1);
        for (int k = 1; k <= p.degree; ++k) bounds[k] = hermite_bound(k);
        for (std::size_t r = 0; r < p.directions; ++r) {
            const auto u = random_unit_vector(d, rng);
            for (int k = 1; k <= p.degree; ++k) {
                const double B = bounds[k];
                ProjectionQuery pq{u, [k, B](double y) { return std::clamp(hermite_he(k, y) / B, -1.0, 1.0); }};
                const double ans = o.stat({pq, "He_" + std::to_string(k) + " along random direction"});
                answers.push_back(ans);
                if (std::abs(ans) > tau) yes = true;
            }
        }
    } else if (algo == "oracle-v") {
        require(p.marginal != nullptr && p.marginal->instance() != nullptr,
                "oracle-v: needs the planted bump-instance marginal");
        const auto& m = *p.marginal;
        require(m.sigma() > 0.0, "oracle-v: the planted marginal needs sigma > 0");
        const double s = m.sigma();
        const double a = 2.0 * s * std::sqrt(std::log(1.0 / s));
        std::vector<std::pair<double, double>> iv{{-a, a}};
        for (double h : m.instance()->heights) iv.push_back({m.scale() * h - a, m.scale() * h + a});
        const Union comb = merge(iv);
        const double null_value = comb.gaussian_prob();
        // planted comb mass under D' (the baseline knows D')
        double planted_value = 0.0;
        for (const auto& [lo, hi] : comb.iv)
            planted_value += integrate_adaptive([&](double x) { return m.density(x); }, lo, hi, 1e-12, 1e-10).value;
        const double threshold = 0.5 * (null_value + planted_value);
        ProjectionQuery pq{ts.v, [comb](double y) { return comb.contains(y) ? 1.0 : 0.0; }};
        const double ans = o.stat({pq, "comb indicator along v"});
        answers.push_back(ans);
        yes = ans > threshold;
    } else {
        throw ValidationError("unknown distinguisher '" + algo + "'");
    }
    return {answers, yes};
}

}  // namespace detail

/// Run `algo` against planted and null oracles over `trials` independent trials.
inline DistinguisherResult run_distinguisher(const std::string& algo, const OracleFactory& factory, std::size_t trials,
                                             std::uint64_t seed, DistinguisherParams params) {
    const auto& ids = distinguisher_ids();
    if (std::find(ids.begin(), ids.end(), algo) == ids.end())
        throw ValidationError("unknown distinguisher '" + algo + "'");
    detail::require(trials >= 30, "run_distinguisher: at least 30 trials are required");
    DistinguisherResult res;
    res.algorithm = algo;
    res.trials = trials;
    for (std::size_t i = 0; i < trials; ++i) {
        const std::uint64_t ts = splitmix64(seed * 0x100000001b3ULL + i);
        TrialSetup planted = factory(Hypothesis::planted, ts);
        TrialSetup null = factory(Hypothesis::null, ts);
        if (i == 0) {
            res.tau = planted.oracle.options().tau;
            res.mode = to_string(planted.oracle.options().mode);
            res.d = planted.v.size();
        }
        params.d = planted.v.size();
        const auto [ap, yp] = detail::run_one(algo, planted, params, ts);
        const auto [an, yn] = detail::run_one(algo, null, params, ts);
        res.yes_planted += yp;
        res.yes_null += yn;
        res.queries_used = std::max(res.queries_used, planted.oracle.log().count);
        bool same = ap.size() == an.size();
        for (std::size_t q = 0; q < std::min(ap.size(), an.size()); ++q) {
            same = same && ap[q] == an[q];
            res.max_answer_gap = std::max(res.max_answer_gap, std::abs(ap[q] - an[q]));
        }
        res.identical_answer_trials += same;
    }
    res.advantage = (double(res.yes_planted) - double(res.yes_null)) / double(trials);
    res.decision = res.advantage >= 1.0 / 3.0 ? "YES" : "NO";
    return res;
}

}  // namespace moment_forge
