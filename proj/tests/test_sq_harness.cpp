#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <gtest/gtest.h>

#include <moment_forge/sq_harness.hpp>

#include "support/fixtures.hpp"

using namespace moment_forge;
using boost::math::quadrature::gauss_kronrod;
using test_support::default_instance;

namespace {

constexpr double sigma = 0.05;

const PushforwardDist& marginal() {
    static const PushforwardDist d = PushforwardDist::from_instance(default_instance(), sigma);
    return d;
}

std::vector<double> unit(std::size_t d, std::uint64_t seed) {
    Rng r(seed, 5);
    return random_unit_vector(d, r);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

SqOracle oracle(std::size_t d, const std::vector<double>* v, OracleMode mode, std::uint64_t seed = 1) {
    OracleOptions o;
    o.mode = mode;
    o.seed = seed;
    o.high_precision_samples = 20000;
    return SqOracle(v ? SqTarget::planted(HiddenDirectionDist(*v, marginal())) : SqTarget::null(d), o);
}

Query cosine_query(const std::vector<double>& u, double a) {
    return {ProjectionQuery{u, [a](double y) { return std::cos(a * y); }}, "cos"};
}

// E cos(a <u, x>) under P_v with t = <u, v>: E_{X ~ D'} cos(a t X) * exp(-a^2 (1 - t^2) / 2), by direct quadrature
double planted_cosine(double a, double t) {
    const double R = default_instance().max_abs_height() + 10.0 * sigma;
    const int panels = static_cast<int>(std::ceil(2.0 * R / sigma));
    const double h = 2.0 * R / panels;
    double s = 0.0;
    for (int i = 0; i < panels; ++i)
        s += gauss_kronrod<double, 31>::integrate(
            [&](double x) { return marginal().density(x) * std::cos(a * t * x); }, -R + i * h, -R + (i + 1) * h, 6,
            1e-12);
    return s * std::exp(-0.5 * a * a * (1.0 - t * t));
}

double normal_cdf(double x) { return 0.5 * boost::math::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST(StatOracle, ConstantQueryIsExact) {
    const std::size_t d = 6;
    const auto v = unit(d, 1);
    const auto u = unit(d, 2);
    for (auto mode : {OracleMode::honest, OracleMode::adversarial})
        for (bool planted : {false, true}) {
            auto o = oracle(d, planted ? &v : nullptr, mode);
            EXPECT_EQ(o.stat({ProjectionQuery{u, [](double) { return 1.0; }}, "one"}), 1.0);
            EXPECT_EQ(o.stat({SubsetQuery{{0, 3}, [](std::span<const double>) { return 1.0; }}, "one"}), 1.0);
            EXPECT_EQ(o.stat({GeneralQuery{[](std::span<const double>) { return 1.0; }}, "one"}), 1.0);
            EXPECT_EQ(o.vstat({ProjectionQuery{u, [](double) { return 0.0; }}, "zero"}), 0.0);
            EXPECT_EQ(o.log().count, 4u);
        }
}

TEST(StatOracle, OddQueryUnderNull) {
    const double B = detail::hermite_bound(3);
    auto o = oracle(5, nullptr, OracleMode::honest);
    const double ans = o.stat({SubsetQuery{{0}, [B](std::span<const double> x) {
                                   return std::clamp((x[0] * x[0] * x[0] - 3.0 * x[0]) / B, -1.0, 1.0);
                               }},
                               "He_3(x_1)/B"});
    EXPECT_LE(std::abs(ans), 0.01);
    EXPECT_EQ(o.log().samples_used, 40000u);
}

TEST(StatOracle, ClampsAndCountsOutOfRangeAnswers) {
    auto o = oracle(3, nullptr, OracleMode::honest);
    EXPECT_EQ(o.stat({ProjectionQuery{{1.0, 0.0, 0.0}, [](double) { return 5.0; }}, "big"}), 1.0);
    EXPECT_EQ(o.log().clamp_warnings, 40000u);
    EXPECT_EQ(o.log().descriptions.front(), "big");
}

TEST(StatOracle, AdversarialLowDegreeMomentsMatchGaussian) {
    const std::size_t d = 10;
    const auto v = unit(d, 3);
    auto planted = oracle(d, &v, OracleMode::adversarial);
    auto null = oracle(d, nullptr, OracleMode::adversarial);
    for (int r = 0; r < 5; ++r) {
        // the first direction is v itself
        auto u = unit(d, 10 + r);
        if (r == 0) u = v;
        for (int k = 1; k <= 5; ++k) {
            const double B = detail::hermite_bound(k);
            const Query q{ProjectionQuery{u, [k, B](double y) { return std::clamp(detail::hermite_he(k, y) / B, -1.0, 1.0); }},
                          "He_k"};
            const double a = planted.stat(q), b = null.stat(q);
            EXPECT_LE(std::abs(a), 0.01);
            EXPECT_LE(std::abs(b), 0.01);
            EXPECT_EQ(a, b) << "k=" << k;
        }
    }
}

TEST(StatOracle, AdversarialAnswersStayWithinTau) {
    const std::size_t d = 4;
    const auto v = unit(d, 4);
    auto o = oracle(d, &v, OracleMode::adversarial);
    for (int r = 0; r < 8; ++r) {
        auto u = unit(d, 40 + r);
        if (r == 0) u = v;
        const double a = 0.5 + r * 0.4;
        const double truth = planted_cosine(a, dot(u, v));
        const double ans = o.stat(cosine_query(u, a));
        EXPECT_LE(std::abs(ans - truth), 0.01 + 1e-6) << "a=" << a;
        // null value exp(-a^2/2) is kept whenever it is admissible
        const double null = std::exp(-0.5 * a * a);
        if (std::abs(null - truth) < 0.01 - 1e-6) EXPECT_NEAR(ans, null, 1e-9);
    }
}

TEST(StatOracle, HonestCalibration) {
    const std::size_t d = 3;
    const auto v = unit(d, 5);
    auto null = oracle(d, nullptr, OracleMode::honest, 11);
    auto planted = oracle(d, &v, OracleMode::honest, 12);
    std::vector<std::tuple<std::vector<double>, double, double>> cases;
    for (int c = 0; c < 10; ++c) {
        auto u = unit(d, 60 + c);
        if (c == 0) u = v;
        const double a = 0.3 + 0.3 * c;
        cases.emplace_back(u, a, planted_cosine(a, dot(u, v)));
    }
    int outside = 0;
    for (int i = 0; i < 500; ++i) {
        const auto& [u, a, truth] = cases[i % cases.size()];
        if (std::abs(null.stat(cosine_query(u, a)) - std::exp(-0.5 * a * a)) > 0.01) ++outside;
        if (std::abs(planted.stat(cosine_query(u, a)) - truth) > 0.01) ++outside;
    }
    EXPECT_LE(outside, 50);
    EXPECT_EQ(null.log().count, 500u);
}

TEST(VStatOracle, HalfSpaceAndBernoulliTolerance) {
    const std::size_t d = 5;
    const auto u = unit(d, 7);
    auto o = oracle(d, nullptr, OracleMode::honest);
    const double half = o.vstat({ProjectionQuery{u, [](double y) { return y > 0.0 ? 1.0 : 0.0; }}, "half-space"});
    EXPECT_NEAR(half, 0.5, o.log().tolerances.back());
    const double t = o.options().vstat_t;
    for (double c : {0.0, 1.0, 2.5}) {
        const double p = 1.0 - normal_cdf(c);
        const double ans = o.vstat({ProjectionQuery{u, [c](double y) { return y > c ? 1.0 : 0.0; }}, "tail"});
        const double expected_tol = std::max(1.0 / t, std::sqrt(p * (1.0 - p) / t));
        EXPECT_NEAR(o.log().tolerances.back(), expected_tol, 0.05 * expected_tol) << c;
        EXPECT_NEAR(ans, p, 2.0 * expected_tol);
    }
}

TEST(VStatOracle, AdversarialUsesComputedVariance) {
    const std::size_t d = 5;
    const auto u = unit(d, 8);
    auto o = oracle(d, nullptr, OracleMode::adversarial);
    // smooth [0,1] query with closed-form mean and variance under N(0,1)
    const double ans = o.vstat({ProjectionQuery{u, [](double y) { return 0.5 + 0.5 * std::cos(y); }}, "cos"});
    const double m = 0.5 + 0.5 * std::exp(-0.5);
    const double var = 0.25 * (0.5 + 0.5 * std::exp(-2.0)) - 0.25 * std::exp(-1.0);
    EXPECT_NEAR(ans, m, 1e-12);
    EXPECT_NEAR(o.log().tolerances.back(), std::sqrt(var / o.options().vstat_t), 1e-9);
}

TEST(StatOracle, ErrorsAndPreconditions) {
    OracleOptions o;
    o.mode = OracleMode::adversarial;
    o.high_precision_samples = 0;
    SqOracle a(SqTarget::null(3), o);
    EXPECT_THROW(a.stat({GeneralQuery{[](std::span<const double>) { return 0.0; }}, "g"}), ValidationError);
    EXPECT_THROW(a.stat({ProjectionQuery{{1.0, 1.0, 0.0}, [](double) { return 0.0; }}, "p"}), ValidationError);
    OracleOptions bad;
    bad.tau = 0.0;
    EXPECT_THROW(SqOracle(SqTarget::null(3), bad), ValidationError);
}

TEST(Distinguisher, ArgumentChecks) {
    OracleOptions base;
    const auto f = make_hidden_direction_factory(marginal(), 5, base);
    DistinguisherParams p;
    EXPECT_THROW(run_distinguisher("spectral", f, 30, 1, p), ValidationError);
    EXPECT_THROW(run_distinguisher("moment-scan", f, 29, 1, p), ValidationError);
    EXPECT_THROW(run_distinguisher("oracle-v", f, 30, 1, p), ValidationError);
}

TEST(Distinguisher, AdversarialProjectionMomentsAreBlind) {
    OracleOptions base;
    base.mode = OracleMode::adversarial;
    const auto f = make_hidden_direction_factory(marginal(), 10, base);
    DistinguisherParams p;
    p.directions = 10;
    const auto r = run_distinguisher("random-projection-moment", f, 30, 3, p);
    EXPECT_EQ(r.identical_answer_trials, 30u);
    EXPECT_EQ(r.max_answer_gap, 0.0);
    EXPECT_EQ(r.advantage, 0.0);
    EXPECT_EQ(r.decision, "NO");
    EXPECT_EQ(r.queries_used, 50u);
}

TEST(Distinguisher, AdversarialMonomialsAreBlind) {
    OracleOptions base;
    base.mode = OracleMode::adversarial;
    base.high_precision_samples = 20000;
    const auto f = make_hidden_direction_factory(marginal(), 10, base);
    DistinguisherParams p;
    p.monomial_queries = 10;
    const auto r = run_distinguisher("moment-scan", f, 30, 4, p);
    EXPECT_EQ(r.identical_answer_trials, 30u);
    EXPECT_EQ(r.advantage, 0.0);
}

TEST(Distinguisher, OracleVSeparates) {
    OracleOptions base;
    const auto f = make_hidden_direction_factory(marginal(), 20, base);
    DistinguisherParams p;
    p.marginal = &marginal();
    const auto r = run_distinguisher("oracle-v", f, 30, 5, p);
    EXPECT_GE(r.advantage, 0.8);
    EXPECT_EQ(r.decision, "YES");
    EXPECT_EQ(r.mode, "honest");
    EXPECT_EQ(r.d, 20u);
}

TEST(Distinguisher, Deterministic) {
    OracleOptions base;
    const auto f = make_hidden_direction_factory(marginal(), 6, base);
    DistinguisherParams p;
    p.directions = 2;
    const auto a = run_distinguisher("random-projection-moment", f, 30, 9, p);
    const auto b = run_distinguisher("random-projection-moment", f, 30, 9, p);
    EXPECT_EQ(a.yes_planted, b.yes_planted);
    EXPECT_EQ(a.yes_null, b.yes_null);
    EXPECT_EQ(a.max_answer_gap, b.max_answer_gap);
}
