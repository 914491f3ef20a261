#include "isacwf/grid.hpp"

#include <catch_amalgamated.hpp>

#include <sstream>

using namespace isacwf;
using Catch::Approx;

TEST_CASE("grid derived quantities") {
    auto g = build_grid(1000, 1000, 1e6, 1e-6);
    CHECK(g.bandwidth() == Approx(1e9));
    CHECK(g.T() == Approx(1e-6));

    auto unit = build_grid(1, 1, 1.0, 0.0);
    CHECK(unit.bandwidth() == 1.0);
    CHECK(unit.T() == 1.0);

    auto g2 = build_grid(64, 32, 120e3, 1e-6);
    CHECK(g2.bandwidth() == Approx(7.68e6));
    CHECK(g2.T() == Approx(8.333333e-6).epsilon(1e-6));
    CHECK(g2.delay_resolution() == Approx(1.0 / 7.68e6));
    CHECK(g2.doppler_resolution() == Approx(120e3 / 32.0));
}

TEST_CASE("grid rejects bad parameters") {
    CHECK_THROWS_AS(build_grid(0, 4, 1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(build_grid(4, 4, 0.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(build_grid(4, 4, 1.0, -1.0), std::invalid_argument);
}

TEST_CASE("centered indices") {
    auto g = build_grid(4, 5, 1.0, 0.0);
    CHECK(g.freq_index(0) == -2);
    CHECK(g.freq_index(3) == 1);
    CHECK(g.time_index(0) == -2);
    CHECK(g.time_index(4) == 2);
}

TEST_CASE("target region checks") {
    auto g = build_grid(16, 16, 1e6, 1e-6);
    TargetParams t;
    t.tau = 0.5e-6;
    CHECK_NOTHROW(check_target(g, t));
    t.tau = 2e-6;
    CHECK_THROWS(check_target(g, t));
    t.tau = 0.5e-6;
    t.nu = 0.6 / g.T();
    CHECK_THROWS(check_target(g, t));
}

namespace {
AllocationMask two_ue(const ResourceGrid& g, std::size_t count) {
    auto m = AllocationMask::empty(g, 2);
    std::vector<BoolMat> layers = m.per_ue();
    for (std::size_t i = 0; i < count; ++i) layers[i % 2](static_cast<Eigen::Index>(i)) = true;
    return AllocationMask(g, layers);
}
} // namespace

TEST_CASE("occupancy") {
    auto g = build_grid(10, 10, 1.0, 0.0);
    CHECK(occupancy(AllocationMask::full(g)) == 1.0);
    CHECK(occupancy(AllocationMask::empty(g, 2)) == 0.0);
    CHECK(occupancy(two_ue(g, 20)) == Approx(0.2));
}

TEST_CASE("mask validation") {
    auto g = build_grid(10, 10, 1.0, 0.0);
    CHECK(validate_mask(two_ue(g, 20), 0.25).empty());

    auto layers = two_ue(g, 20).per_ue();
    layers[0](3, 7) = true;
    layers[1](3, 7) = true;
    auto shared = AllocationMask(g, layers);
    auto v = validate_mask(shared, 0.25);
    REQUIRE(v.size() == 1);
    CHECK(v[0].kind == MaskViolation::Kind::Exclusivity);
    CHECK(v[0].message == "exclusivity@(3,7)");

    auto over = validate_mask(two_ue(g, 30), 0.25);
    REQUIRE(over.size() == 1);
    CHECK(over[0].kind == MaskViolation::Kind::Occupancy);
    CHECK(over[0].message == "occupancy: 0.30 > 0.25");
}

TEST_CASE("union is recomputed from the layers") {
    auto g = build_grid(3, 3, 1.0, 0.0);
    auto m = two_ue(g, 5);
    CHECK(m.allocated() == 5);
    CHECK(m.allocated(0) == 3);
    CHECK(m.allocated(1) == 2);
}

TEST_CASE("mask file round trip") {
    auto g = build_grid(6, 4, 1.0, 0.0);
    auto m = two_ue(g, 9);
    std::stringstream ss;
    write_mask(ss, m);
    CHECK(ss.str().rfind("MASK v1 6 4 2\n", 0) == 0);
    auto back = read_mask(ss, g);
    CHECK(back == m);

    std::stringstream bad("MASK v1 5 4 1\n");
    CHECK_THROWS(read_mask(bad, g));
    std::stringstream trunc("MASK v1 6 4 1\n0000\n");
    CHECK_THROWS(read_mask(trunc, g));
}
