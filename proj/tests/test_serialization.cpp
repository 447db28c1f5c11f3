#include <cmath>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include <moment_forge/serialization.hpp>

#include "support/fixtures.hpp"

using namespace moment_forge;

namespace {

BuildRecord default_record() {
    BuildRecord b;
    b.rule = reduce_rule(hermite_rule(5));
    b.initial = layout(b.rule, 1e-6, 1e-4);
    b.evolved = test_support::default_build();
    b.target = SlopeTarget::final_eps(1e-3);
    return b;
}

}  // namespace

TEST(Reals, ShortestRoundTrip) {
    for (double x : {0.1, -1.0 / 3.0, 1e-300, 5e-324, 1.7976931348623157e308, -0.0, 2.0 / 7.0}) {
        const auto s = format_real(x);
        const double y = parse_real(json(s));
        EXPECT_EQ(std::signbit(x), std::signbit(y));
        EXPECT_EQ(x, y) << s;
    }
    EXPECT_EQ(format_real(NAN), "nan");
    EXPECT_EQ(format_real(INFINITY), "inf");
    EXPECT_EQ(format_real(-INFINITY), "-inf");
    EXPECT_TRUE(std::isnan(parse_real(json("nan"))));
    EXPECT_EQ(parse_real(json("-inf")), -INFINITY);
    EXPECT_EQ(parse_real(json(0.25)), 0.25);
    EXPECT_THROW(parse_real(json("1.5x")), ValidationError);
    EXPECT_THROW(parse_real(json::array()), ValidationError);
}

TEST(BuildJson, RoundTripIsBitExact) {
    const auto b = default_record();
    const json j = build_to_json(b);
    const auto r = build_from_json(parse_json(dump(j), "memory"));
    EXPECT_EQ(r.initial.heights, b.initial.heights);
    EXPECT_EQ(r.initial.centers, b.initial.centers);
    EXPECT_EQ(r.initial.half_widths, b.initial.half_widths);
    EXPECT_EQ(r.evolved.instance.heights, b.evolved.instance.heights);
    EXPECT_EQ(r.evolved.instance.eps, b.evolved.instance.eps);
    EXPECT_EQ(r.evolved.trace.times, b.evolved.trace.times);
    EXPECT_EQ(r.evolved.trace.sigma_mins, b.evolved.trace.sigma_mins);
    EXPECT_EQ(r.evolved.trace.heights, b.evolved.trace.heights);
    EXPECT_EQ(r.rule.nodes, b.rule.nodes);
    EXPECT_EQ(dump(build_to_json(r)), dump(j));
}

TEST(BuildJson, BrokenSymmetryIsNamed) {
    json j = build_to_json(default_record());
    j["layout"]["centers"][0] = format_real(parse_real(j["layout"]["centers"][0]) + 1e-3);
    try {
        build_from_json(j);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("symmetry invariant violated"), std::string::npos) << e.what();
    }
}

TEST(BuildJson, MalformedInputs) {
    json j = build_to_json(default_record());
    json wrong = j;
    wrong["kind"] = "relu1d";
    EXPECT_THROW(build_from_json(wrong), ValidationError);
    json missing = j;
    missing.erase("trace");
    EXPECT_THROW(build_from_json(missing), ValidationError);
    json schema = j;
    schema["schema"] = "other/9";
    EXPECT_THROW(build_from_json(schema), ValidationError);
    json shorter = j;
    shorter["evolved"]["heights"].erase(0);
    EXPECT_THROW(build_from_json(shorter), ValidationError);
    EXPECT_THROW(parse_json("{not json", "memory"), ValidationError);
}

TEST(Files, MissingPathIsIoError) {
    EXPECT_THROW(read_text("/nonexistent/dir/instance.json"), IoError);
    EXPECT_THROW(write_text("/nonexistent/dir/out.json", "x"), IoError);
    const auto p = std::filesystem::temp_directory_path() / "mf_serialization_test.json";
    write_text(p.string(), dump(build_to_json(default_record())));
    EXPECT_EQ(load_build(p.string()).evolved.instance.heights, default_record().evolved.instance.heights);
    std::filesystem::remove(p);
}

TEST(NetworkJson, RoundTrip) {
    const auto net = compile(test_support::default_instance());
    const json j = parse_json(dump(network_to_json(net)), "memory");
    EXPECT_EQ(j["kind"], "relu1d");
    const auto r = network_from_json(j);
    ASSERT_EQ(r.size(), net.size());
    for (std::size_t i = 0; i < net.size(); ++i) {
        EXPECT_EQ(r.units[i].sign, net.units[i].sign);
        EXPECT_EQ(r.units[i].weights, net.units[i].weights);
        EXPECT_EQ(r.units[i].bias, net.units[i].bias);
    }
    json bad = j;
    bad["units"][0]["s"] = 3;
    EXPECT_THROW(network_from_json(bad), ValidationError);
}

TEST(NetworkJson, LiftedRoundTrip) {
    const auto net = compile(test_support::default_instance());
    Rng rng(1, 5);
    const auto v = random_unit_vector(7, rng);
    const auto L = lift(net, 0.05, 7, v, 2);
    const auto r = lifted_from_json(parse_json(dump(lifted_to_json(L)), "memory"));
    EXPECT_EQ(r.v, L.v);
    EXPECT_EQ(r.duplicate, 2);
    EXPECT_EQ(r.sigma, L.sigma);
    const std::vector<double> z{0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, 0.8};
    EXPECT_EQ(r.evaluate(z), L.evaluate(z));
}

TEST(ReportJson, EchoesConfigAndChecks) {
    VerificationReport rep;
    rep.config.sigma = 0.07;
    rep.m = 5;
    BoundCheck b;
    b.cosine = 0.1;
    b.pass = true;
    rep.pairwise_corr.push_back(b);
    const json j = report_to_json(rep);
    EXPECT_EQ(j["kind"], "report");
    EXPECT_EQ(parse_real(j["config"]["sigma"]), 0.07);
    EXPECT_EQ(j["all_pass"], false);
    EXPECT_EQ(dump(j), dump(report_to_json(rep)));
}
