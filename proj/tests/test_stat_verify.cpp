#include <cmath>

#include <gtest/gtest.h>

#include <moment_forge/stat_verify.hpp>

#include "support/fixtures.hpp"

using namespace moment_forge;
using test_support::default_build;
using test_support::default_instance;

namespace {

constexpr double sigma = 0.05;

// f(g) = q g, so D' = N(0, a) with a = (1 - sigma^2) q^2 + sigma^2
PushforwardDist linear_marginal(double q, double s) {
    PiecewiseLinearMap f{{{-INFINITY, INFINITY, 0.0, 0.0, q}}};
    return PushforwardDist(f, s, [q](double z) { return q * z; });
}

double variance_of(double q, double s) { return (1.0 - s * s) * q * q + s * s; }

// Gaussian closed forms against N(0,1) in the hidden-direction family
double gaussian_chi2(double a) { return 1.0 / std::sqrt(a * (2.0 - a)) - 1.0; }
double gaussian_corr(double a, double t) { return 1.0 / std::sqrt(1.0 - t * t * (1.0 - a) * (1.0 - a)) - 1.0; }

const PushforwardDist& default_dist() {
    static const PushforwardDist d = PushforwardDist::from_instance(default_instance(), sigma);
    return d;
}

const ChiSquaredResult& default_chi2() {
    static const ChiSquaredResult c = chi_squared_vs_gaussian(default_dist());
    return c;
}

}  // namespace

TEST(ChiSquared, GaussianMarginalsAreExact) {
    EXPECT_NEAR(chi_squared_vs_gaussian(PushforwardDist::identity(0.2)).value, 0.0, 1e-8);
    for (double q : {0.6, 0.9, 1.2}) {
        const double a = variance_of(q, 0.3);
        EXPECT_NEAR(chi_squared_vs_gaussian(linear_marginal(q, 0.3)).value, gaussian_chi2(a), 1e-8) << q;
    }
}

TEST(ChiSquared, BumpInstanceMatchesImportanceSampling) {
    const auto& c = default_chi2();
    ASSERT_TRUE(std::isfinite(c.value));
    EXPECT_GT(c.value, 0.0);
    EXPECT_GT(c.reference, 0.0);
    // chi^2 + 1 = E_{x ~ D'} [D'(x) / gamma(x)]
    const auto x = default_dist().sample(1000000, 3);
    double s = 0.0, s2 = 0.0;
    for (double v : x) {
        const double r = default_dist().density_ratio(v);
        s += r;
        s2 += r * r;
    }
    const double n = x.size(), mc = s / n - 1.0;
    EXPECT_NEAR(mc, c.value, 0.05 * c.value);
    EXPECT_LT(std::sqrt((s2 / n - (s / n) * (s / n)) / n), 0.01 * c.value);
}

TEST(ChiSquared, Preconditions) {
    EXPECT_THROW(chi_squared_vs_gaussian(PushforwardDist::from_instance(default_instance(), 0.0)), ValidationError);
    EXPECT_THROW(chi_squared_vs_gaussian(PushforwardDist::from_instance(default_instance(), 0.6)), ValidationError);
}

TEST(PairwiseCorrelation, ZeroCosineFactorizes) {
    EXPECT_NEAR(pairwise_correlation(default_dist(), 0.0).value, 0.0, 1e-8);
    EXPECT_NEAR(pairwise_correlation(linear_marginal(0.8, 0.2), 0.0).value, 0.0, 1e-8);
}

TEST(PairwiseCorrelation, GaussianClosedForm) {
    const double q = 0.8, s = 0.2, a = variance_of(q, s);
    const auto d = linear_marginal(q, s);
    for (double t : {-0.7, 0.1, 0.5, 0.9, 0.99})
        EXPECT_NEAR(pairwise_correlation(d, t).value, gaussian_corr(a, t), 1e-7) << t;
    // approaching t = 1 recovers chi^2
    const double chi = chi_squared_vs_gaussian(d).value;
    EXPECT_NEAR(pairwise_correlation(d, 0.999).value, chi, 0.02 * chi);
}

TEST(PairwiseCorrelation, EvenInCosine) {
    for (double t : {0.1, 0.3})
        EXPECT_LE(std::abs(pairwise_correlation(default_dist(), t).value -
                           pairwise_correlation(default_dist(), -t).value),
                  2e-6);
}

TEST(PairwiseCorrelation, SmallAngleInequality) {
    const double chi = default_chi2().value, nu = 1e-4;
    for (double t : {0.05, 0.1, 0.2}) {
        const auto r = pairwise_correlation(default_dist(), t);
        const double bound = std::pow(t, 6) * chi + nu * nu;
        EXPECT_LT(std::abs(r.value), bound) << "cosine " << t;
        RecordProperty("margin_" + std::to_string(t), std::to_string(bound - std::abs(r.value)));
    }
}

TEST(PairwiseCorrelation, RisesTowardChiSquared) {
    // ramps of width sigma / slope are far below the plane grid near t = 1,
    // so the bump instance only approaches chi^2 from below here
    const double chi = default_chi2().value;
    const double a = pairwise_correlation(default_dist(), 0.5).value;
    const double b = pairwise_correlation(default_dist(), 0.9).value;
    const double c = pairwise_correlation(default_dist(), 0.99).value;
    EXPECT_LT(a, b);
    EXPECT_LT(b, c);
    EXPECT_LT(c, chi);
}

TEST(PairwiseCorrelation, Preconditions) {
    EXPECT_THROW(pairwise_correlation(default_dist(), 1.0), ValidationError);
    EXPECT_THROW(pairwise_correlation(PushforwardDist::from_instance(default_instance(), 0.0), 0.2),
                 ValidationError);
    EXPECT_THROW(pairwise_correlation(default_dist(), 0.2, 0.0), NumericGuardError);
}

TEST(TotalVariation, IdenticalGaussianMarginals) {
    for (double t : {0.0, 0.3, 0.5}) EXPECT_NEAR(tv_hidden_pair(PushforwardDist::identity(0.3), t).value, 0.0, 2e-4);
}

TEST(TotalVariation, SeparationBound) {
    const double bound = 1.0 - 2.0 * sigma * std::log(1.0 / sigma) - 0.05;
    const double tv5 = tv_hidden_pair(default_dist(), 0.5).value;
    const double tv1 = tv_hidden_pair(default_dist(), 0.1).value;
    EXPECT_GE(tv5, bound);
    EXPECT_GE(tv1, bound);
    EXPECT_GE(tv1, tv5 - 0.05);
    EXPECT_LE(tv1, 1.0);
}

TEST(TotalVariation, LargeCosineRegime) {
    // reported, not bounded: the same-sign regime |t| >= 1/2
    const double tv = tv_hidden_pair(default_dist(), 0.9).value;
    EXPECT_GE(tv, 0.0);
    EXPECT_LE(tv, tv_hidden_pair(default_dist(), 0.5).value + 1e-3);
    RecordProperty("tv_0.9", std::to_string(tv));
}

TEST(TotalVariation, Preconditions) {
    EXPECT_THROW(tv_hidden_pair(default_dist(), 1.0), ValidationError);
    EXPECT_THROW(tv_hidden_pair(default_dist(), -1.5), ValidationError);
}

TEST(Wasserstein, ElementaryCases) {
    const std::vector<double> a{0.3, -1.0, 2.0, 5.5};
    EXPECT_EQ(w1_empirical(a, a), 0.0);
    std::vector<double> b = a;
    for (auto& x : b) x += 0.25;
    EXPECT_NEAR(w1_empirical(a, b), 0.25, 1e-15);
    EXPECT_DOUBLE_EQ(w1_empirical({0.0}, {1.0, 1.0}), 1.0);
    EXPECT_DOUBLE_EQ(w1_empirical({0.0, 1.0}, {0.0, 0.5, 1.0}), 1.0 / 6.0);
    EXPECT_THROW(w1_empirical({}, {1.0}), ValidationError);
}

TEST(Wasserstein, TriangleInequality) {
    Rng r(1, 1);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> x(500), y(500), z(700);
        for (auto& v : x) v = r.normal();
        for (auto& v : y) v = 0.5 + 2.0 * r.normal();
        for (auto& v : z) v = r.uniform() * 3.0;
        EXPECT_LE(w1_empirical(x, z), w1_empirical(x, y) + w1_empirical(y, z) + 1e-12);
    }
}

TEST(Wasserstein, InitialVersusEvolved) {
    const auto& r = default_build();
    const auto init = layout(reduce_rule(hermite_rule(5)), 1e-6, 1e-4);
    const auto d0 = PushforwardDist::from_instance(init, 0.0).sample(1000000, 5);
    const auto dT = PushforwardDist::from_instance(r.instance, 0.0).sample(1000000, 5);
    double drift = 0.0;
    for (std::size_t i = 0; i < init.size(); ++i) drift = std::max(drift, std::abs(r.instance.heights[i] - init.heights[i]));
    EXPECT_LE(w1_empirical(d0, dT), drift + 3.0 * 5 * r.trace.achieved_T);
}

TEST(DistanceToSupport, PlateauLimitLeavesOnlyTheGaps) {
    const auto inst = layout(reduce_rule(hermite_rule(5)), 1e-9, 1e-4);
    const auto d = PushforwardDist::from_instance(inst, 1e-9);
    const std::size_t n = 200000;
    const auto s = distance_to_support(d, 1.0, n, 2);
    const double p = inst.gap_mass;
    EXPECT_NEAR(s.exceed_probability, p, 4.0 * std::sqrt(p * (1 - p) / n));
    EXPECT_EQ(distance_to_support(d, 1.0, 1000, 2, 0.1, true).exceed_probability, 0.0);
}

TEST(DistanceToSupport, HalfCosineExceedance) {
    const auto d = PushforwardDist::from_instance(default_instance(), 0.01);
    const auto s = distance_to_support(d, 0.5, 100000, 4, 0.1);
    EXPECT_NEAR(s.threshold, 0.1 / std::sqrt(5.0), 1e-15);
    EXPECT_GE(s.exceed_probability, 0.2);
    EXPECT_DOUBLE_EQ(s.w1_lower_bound, s.exceed_probability * s.threshold);
    // the bound counted against the full support, zero included, sits under the measured W1
    const auto full = distance_to_support(d, 0.5, 100000, 4, 0.1, true);
    EXPECT_LE(full.w1_lower_bound, projected_w1(d, 0.5, 100000, 6));
}

TEST(DistanceToSupport, NeedsAnInstance) {
    EXPECT_THROW(distance_to_support(PushforwardDist::identity(0.1), 0.5, 10, 1), ValidationError);
}

TEST(VerifyInstance, DefaultBuildPasses) {
    const auto init = layout(reduce_rule(hermite_rule(5)), 1e-6, 1e-4);
    const auto& r = default_build();
    VerificationConfig cfg;
    cfg.w1_samples = 200000;
    const auto rep = verify_instance(init, r, compile(r.instance), cfg);
    EXPECT_TRUE(rep.errors.empty()) << (rep.errors.empty() ? "" : rep.errors.front());
    ASSERT_EQ(rep.moment_errors.size(), 5u);
    for (double e : rep.moment_errors) EXPECT_LT(e, 1e-4);
    EXPECT_GT(rep.chi_squared, 0.0);
    EXPECT_TRUE(std::isfinite(rep.chi_squared));
    ASSERT_EQ(rep.tv_separation.size(), 2u);
    EXPECT_GE(rep.tv_separation[0].value, 0.65);
    EXPECT_EQ(rep.weight_bound, rep.weight_bound_formula);
    EXPECT_EQ(rep.network_size, 16u);
    EXPECT_GT(rep.sigma_min_min, 0.0);
    EXPECT_TRUE(rep.all_pass());
}

TEST(VerifyInstance, SubCheckFailuresAreRecorded) {
    const auto init = layout(reduce_rule(hermite_rule(5)), 1e-6, 1e-4);
    const auto& r = default_build();
    VerificationConfig cfg;
    cfg.w1_samples = 1000;
    cfg.correlation_cosines = {0.1};
    cfg.correlation_tol = 0.0;  // unattainable
    cfg.tv_cosines = {};
    cfg.support_cosine = 2.0;
    const auto rep = verify_instance(init, r, compile(r.instance), cfg);
    ASSERT_EQ(rep.pairwise_corr.size(), 1u);
    EXPECT_FALSE(rep.pairwise_corr[0].pass);
    EXPECT_NE(rep.pairwise_corr[0].error.find("did not converge"), std::string::npos);
    ASSERT_EQ(rep.errors.size(), 1u);
    EXPECT_NE(rep.errors[0].find("distance_to_support"), std::string::npos);
    EXPECT_FALSE(rep.all_pass());
}
