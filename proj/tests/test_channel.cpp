#include "isacwf/channel.hpp"
#include "isacwf/rng.hpp"

#include <catch_amalgamated.hpp>

#include <sstream>

using namespace isacwf;
using Catch::Approx;

namespace {

// Scalar-loop evaluation of sum_k beta_k exp(-j2pi tau m df) exp(j2pi nu n T).
cd scalar_entry(const ResourceGrid& g, const std::vector<TargetParams>& ts, std::size_t row, std::size_t col) {
    const double m = static_cast<double>(row) - static_cast<double>(g.M() / 2);
    const double n = static_cast<double>(col) - static_cast<double>(g.N() / 2);
    cd acc = 0.0;
    for (const auto& t : ts) {
        const double ph = -2.0 * kPi * t.tau * m * g.delta_f() + 2.0 * kPi * t.nu * n * g.T();
        acc += t.beta * cd(std::cos(ph), std::sin(ph));
    }
    return acc;
}

} // namespace

TEST_CASE("QPSK symbols") {
    auto g = build_grid(16, 8, 1.0, 0.0);
    auto s = gen_symbols(g, Constellation::QPSK, 7);
    const double r = 1.0 / std::sqrt(2.0);
    for (Eigen::Index i = 0; i < s.values.size(); ++i) {
        CHECK(std::abs(std::abs(s.values(i).real()) - r) < 1e-15);
        CHECK(std::abs(std::abs(s.values(i).imag()) - r) < 1e-15);
    }
    CHECK(gen_symbols(g, Constellation::QPSK, 7).values == s.values);
    CHECK(gen_symbols(g, Constellation::QPSK, 8).values != s.values);
}

TEST_CASE("symbol power") {
    auto g = build_grid(1000, 1000, 1.0, 0.0);
    auto q = gen_symbols(g, Constellation::QPSK, 1);
    CHECK(q.values.squaredNorm() / 1e6 == Approx(1.0).epsilon(1e-12));
    auto a = gen_symbols(build_grid(200, 200, 1.0, 0.0), Constellation::QAM16, 1);
    CHECK(a.values.squaredNorm() / 4e4 == Approx(1.0).epsilon(3e-2));
    CHECK_THROWS(parse_constellation("8PSK"));
}

TEST_CASE("sensing channel closed forms") {
    auto g = build_grid(8, 6, 1e3, 1.0);
    TargetParams t;
    t.beta = 1.0;
    std::vector<TargetParams> ts{t};
    auto h = sensing_channel(g, ts);
    CHECK((h.values.array() - cd(1.0, 0.0)).abs().maxCoeff() < 1e-15);

    ts[0].tau = 1.0 / (8 * 1e3);
    h = sensing_channel(g, ts);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 6; ++c) {
            const double m = g.freq_index(r);
            CHECK(std::abs(h.values(Eigen::Index(r), Eigen::Index(c)) - std::polar(1.0, -2.0 * kPi * m / 8.0)) < 1e-12);
        }
}

TEST_CASE("sensing channel matches scalar oracle") {
    auto g = build_grid(40, 30, 1e6, 1e-6);
    std::vector<TargetParams> ts(2);
    ts[0].tau = 2 * 50.0 / kSpeedOfLight;
    ts[0].nu = 2000.0;
    ts[0].beta = {0.3, -0.7};
    ts[1].tau = 2 * 50.15 / kSpeedOfLight;
    ts[1].nu = -3500.0;
    ts[1].beta = {-1.1, 0.2};
    auto h = sensing_channel(g, ts);
    double worst = 0.0;
    for (std::size_t r = 0; r < g.M(); ++r)
        for (std::size_t c = 0; c < g.N(); ++c) {
            const cd o = scalar_entry(g, ts, r, c);
            worst = std::max(worst, std::abs(h.values(Eigen::Index(r), Eigen::Index(c)) - o) / std::abs(o));
        }
    CHECK(worst < 1e-12);
}

TEST_CASE("communication channel") {
    auto g = build_grid(12, 10, 1e6, 1e-6);
    TargetParams ue;
    ue.comm_paths = {{1.0, 0.0, 0.0}};
    auto h = comm_channel(g, ue);
    CHECK((h.values.array() - cd(1.0, 0.0)).abs().maxCoeff() < 1e-15);

    Rng rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ue.comm_paths.clear();
    std::vector<TargetParams> as_targets;
    double power = 0.0;
    for (int q = 0; q < 3; ++q) {
        const cd a = complex_gaussian(rng, 1.0);
        const double tau = u(rng) * 1e-6, nu = (u(rng) - 0.5) * 1e5;
        ue.comm_paths.push_back({a, tau, nu});
        TargetParams t;
        t.tau = tau;
        t.nu = nu;
        t.beta = a;
        as_targets.push_back(t);
        power += std::norm(a);
    }
    CHECK(ue.comm_gain() == Approx(power));
    h = comm_channel(g, ue, 1);
    CHECK(h.ue == 1);
    for (std::size_t r = 0; r < g.M(); ++r)
        for (std::size_t c = 0; c < g.N(); ++c) {
            const cd o = scalar_entry(g, as_targets, r, c);
            CHECK(std::abs(h.values(Eigen::Index(r), Eigen::Index(c)) - o) <= 1e-12 * std::abs(o) + 1e-15);
        }
    CHECK_THROWS(comm_channel(g, TargetParams{}));
}

TEST_CASE("waveform assembly") {
    auto g = build_grid(10, 10, 1.0, 0.0);
    auto s = gen_symbols(g, Constellation::QPSK, 3);
    CHECK(assemble_waveform(1.0, s, AllocationMask::empty(g, 2)).isZero(0.0));
    CHECK(assemble_waveform(1.0, s, AllocationMask::full(g)) == s.values);

    auto layers = AllocationMask::empty(g, 1).per_ue();
    for (Eigen::Index i = 0; i < 37; ++i) layers[0](i * 2) = true;
    auto X = assemble_waveform(std::sqrt(2.5), s, AllocationMask(g, layers));
    CHECK(X.squaredNorm() == Approx(2.5 * 37));
}

TEST_CASE("received signal") {
    auto g = build_grid(100, 100, 1.0, 1.0);
    auto s = gen_symbols(g, Constellation::QPSK, 3);
    TargetParams t;
    t.tau = 0.1;
    t.beta = 2.0;
    std::vector<TargetParams> ts{t};
    auto H = sensing_channel(g, ts);
    auto clean = rx_signal(s.values, H, 0.0, 9);
    CHECK(clean.values == s.values.cwiseProduct(H.values));

    CMat zero = CMat::Zero(100, 100);
    auto noise = rx_signal(zero, H, 0.04, 11);
    CHECK(noise.values.squaredNorm() / 1e4 == Approx(0.04).epsilon(0.05));
    CHECK(rx_signal(zero, H, 0.04, 11).values == noise.values);
    CHECK_THROWS(rx_signal(zero, H, -1.0, 1));
}

TEST_CASE("sensing SNR") {
    std::vector<cd> b{1.0};
    CHECK(sensing_snr(1.0, b, 1.0, 1.0) == 1.0);
    CHECK(sensing_snr(1.0, b, 1.0, 2.0) == 0.5);
    std::vector<cd> b2{{0.3, 0.4}, {1.0, -2.0}};
    const double w2 = noise_for_snr(0.7, b2, 250.0, 31.6);
    CHECK(sensing_snr(0.7, b2, 250.0, w2) == Approx(31.6));
    CHECK_THROWS(sensing_snr(1.0, b, 0.0, 1.0));
}

TEST_CASE("CMAT round trip") {
    CMat a(3, 2);
    a << cd(1, 2), cd(3, 4), cd(-5, 6), cd(7, -8), cd(0.1, 0.2), cd(1e-300, -1e300);
    std::stringstream ss;
    write_cmat(ss, a);
    CHECK(ss.str().size() == 4 + 4 + 16 + 6 * 16);
    CHECK(read_cmat(ss) == a);
    std::stringstream bad("XXXX");
    CHECK_THROWS(read_cmat(bad));
}

TEST_CASE("seed derivation") {
    CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
    CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
}
