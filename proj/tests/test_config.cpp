#include "isacwf/config.hpp"

#include <catch_amalgamated.hpp>

#include <sstream>

using namespace isacwf;

TEST_CASE("profiles") {
    auto desk = ExperimentConfig::profile("desk");
    CHECK(desk.M == 100);
    CHECK(desk.N == 100);
    CHECK(desk.K() == 2);
    CHECK_NOTHROW(desk.validate());
    auto paper = ExperimentConfig::profile("paper");
    CHECK(paper.M == 1000);
    CHECK(paper.N == 1000);
    CHECK(paper.delta_f == 1e6);
    CHECK(paper.mu == 0.25);
    CHECK_THROWS(ExperimentConfig::profile("huge"));
}

TEST_CASE("dump and parse round trip") {
    auto c = ExperimentConfig::desk_profile();
    c.mu = 0.3;
    c.ranges = {40.0, 55.5};
    c.rng_seed = 18446744073709551615ull;
    c.peak_refine = false;
    std::istringstream is(dump_config(c));
    auto back = parse_config(is, ExperimentConfig::paper_profile());
    CHECK(dump_config(back) == dump_config(c));
    CHECK(back.rng_seed == c.rng_seed);
    CHECK_FALSE(back.peak_refine);
}

TEST_CASE("parse errors name the line") {
    std::istringstream unknown("M = 10\nbogus = 3\n");
    try {
        parse_config(unknown);
        FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    std::istringstream nonnum("mu = lots\n");
    CHECK_THROWS(parse_config(nonnum));
    std::istringstream noeq("mu 0.3\n");
    CHECK_THROWS(parse_config(noeq));
    std::istringstream comments("# header\n\nmu = 0.5 # half\n");
    CHECK(parse_config(comments).mu == 0.5);
}

TEST_CASE("validation") {
    auto c = ExperimentConfig::desk_profile();
    c.mu = 0.0;
    CHECK_THROWS(c.validate());
    c = ExperimentConfig::desk_profile();
    c.velocities = {1.0};
    CHECK_THROWS(c.validate());
    c = ExperimentConfig::desk_profile();
    c.estimator = "magic";
    CHECK_THROWS(c.validate());
    c = ExperimentConfig::desk_profile();
    c.schatten_p = 1.5;
    CHECK_THROWS(c.validate());
}

TEST_CASE("derived quantities") {
    auto c = ExperimentConfig::desk_profile();
    CHECK(c.delay_norm() == Catch::Approx(1.0 / (100 * 1e6)));
    CHECK(c.doppler_norm_value() == Catch::Approx(1e6 / 100));
    c.doppler_norm = "symbol";
    CHECK(c.doppler_norm_value() == Catch::Approx(1e6));
    // Radar-equation power falls as R^-4.
    CHECK(c.omega_beta(100.0) / c.omega_beta(50.0) == Catch::Approx(1.0 / 16.0));
    c.sigma2 = 0.0;
    CHECK(c.resource_power() == Catch::Approx(c.p_tot_watts() / (c.mu * 100 * 100)));
}
