#include "isacwf/crb.hpp"
#include "isacwf/rng.hpp"

#include <catch_amalgamated.hpp>

using namespace isacwf;
using Catch::Approx;

namespace {

// Direct Fisher information of R = sigma * S .* H + W for unit-modulus S:
// F_ab = 2 sigma2 / sigma_w2 * sum over allocated cells Re{conj(dH/da) dH/db},
// parameters ordered (tau_1..tau_K, nu_1..nu_K).
Eigen::MatrixXd direct_fim(const ResourceGrid& g, const BoolMat& mask, const std::vector<TargetParams>& ts,
                           double sigma2, double sigma_w2) {
    const auto K = static_cast<Eigen::Index>(ts.size());
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(2 * K, 2 * K);
    std::vector<cd> d(static_cast<std::size_t>(2 * K));
    for (std::size_t c = 0; c < g.N(); ++c)
        for (std::size_t r = 0; r < g.M(); ++r) {
            if (!mask(Eigen::Index(r), Eigen::Index(c))) continue;
            const double m = g.freq_index(r), n = g.time_index(c);
            for (Eigen::Index k = 0; k < K; ++k) {
                const auto& t = ts[std::size_t(k)];
                const cd e = t.beta * std::polar(1.0, -2.0 * kPi * t.tau * m * g.delta_f() + 2.0 * kPi * t.nu * n * g.T());
                d[std::size_t(k)] = cd(0.0, -2.0 * kPi * m * g.delta_f()) * e;
                d[std::size_t(K + k)] = cd(0.0, 2.0 * kPi * n * g.T()) * e;
            }
            for (Eigen::Index a = 0; a < 2 * K; ++a)
                for (Eigen::Index b = 0; b < 2 * K; ++b)
                    F(a, b) += 2.0 * sigma2 / sigma_w2 * std::real(std::conj(d[std::size_t(a)]) * d[std::size_t(b)]);
        }
    return F;
}

std::vector<TargetParams> two_targets(const ResourceGrid& g) {
    std::vector<TargetParams> ts(2);
    ts[0].tau = 2 * 50.0 / kSpeedOfLight;
    ts[0].nu = 0.13 / g.T();
    ts[0].beta = {0.8, 0.3};
    ts[1].tau = ts[0].tau + 0.7 * g.delay_resolution();
    ts[1].nu = -0.21 / g.T();
    ts[1].beta = {-0.4, 0.9};
    return ts;
}

BoolMat random_mask(const ResourceGrid& g, double p, std::uint64_t seed) {
    Rng rng(seed);
    std::bernoulli_distribution b(p);
    BoolMat m(Eigen::Index(g.M()), Eigen::Index(g.N()));
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = b(rng);
    return m;
}

double rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / b.norm(); }

} // namespace

TEST_CASE("steering vectors") {
    auto g = build_grid(4, 3, 1.0, 1.0);
    auto s = steering_vectors(g, 0.0, 0.0);
    CHECK((s.d_tau.array() - cd(1.0)).abs().maxCoeff() == 0.0);
    CHECK((s.d_nu.array() - cd(1.0)).abs().maxCoeff() == 0.0);

    s = steering_vectors(g, 0.25, 0.0);
    const cd expect[4] = {std::polar(1.0, kPi), std::polar(1.0, kPi / 2), 1.0, std::polar(1.0, -kPi / 2)};
    for (int i = 0; i < 4; ++i) CHECK(std::abs(s.d_tau(i) - expect[i]) < 1e-15);
}

TEST_CASE("coupled responses") {
    auto g = build_grid(16, 8, 1e6, 1e-6);
    auto a = steering_vectors(g, 0.3e-6, 1234.0);
    auto self = coupled_responses(a, a);
    CHECK((self.d_tau.array() - cd(1.0)).abs().maxCoeff() < 1e-15);
    CHECK((self.d_nu.array() - cd(1.0)).abs().maxCoeff() < 1e-15);

    auto b = steering_vectors(g, 0.3e-6 - g.delay_resolution(), 1234.0);
    auto kl = coupled_responses(a, b);
    for (Eigen::Index i = 0; i < 16; ++i)
        CHECK(std::abs(kl.d_tau(i) - std::polar(1.0, -2.0 * kPi * g.freq_index(std::size_t(i)) / 16.0)) < 1e-14);

    auto c = steering_vectors(g, 0.71e-6, -4321.0);
    auto ac = coupled_responses(a, c);
    for (Eigen::Index i = 0; i < 8; ++i) CHECK(std::abs(ac.d_nu(i) - a.d_nu(i) * std::conj(c.d_nu(i))) < 1e-14);
}

TEST_CASE("single-target FIM on the full grid") {
    auto g = build_grid(10, 6, 2e5, 1e-5);
    std::vector<TargetParams> ts(1);
    ts[0].tau = 1e-6;
    ts[0].nu = 500.0;
    BoolMat all = BoolMat::Constant(10, 6, true);
    auto F = fim(g, all, ts, 2.0, 0.5);
    double sm2 = 0.0;
    for (std::size_t r = 0; r < 10; ++r) sm2 += g.freq_index(r) * g.freq_index(r);
    const double expect = 2.0 * 2.0 / 0.5 * 4.0 * kPi * kPi * g.delta_f() * g.delta_f() * 6.0 * sm2;
    CHECK(F.tau(0, 0) == Approx(expect).epsilon(1e-12));
    CHECK(rel(F.assemble(), direct_fim(g, all, ts, 2.0, 0.5)) < 1e-12);
}

TEST_CASE("FIM matches the direct derivative oracle") {
    auto g = build_grid(16, 12, 1e6, 1e-6);
    auto ts = two_targets(g);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto mask = random_mask(g, 0.3, seed);
        auto F = fim(g, mask, ts, 1.3, 0.2).assemble();
        CHECK(rel(F, direct_fim(g, mask, ts, 1.3, 0.2)) < 1e-12);
    }
}

TEST_CASE("FIM properties") {
    auto g = build_grid(20, 14, 1e6, 1e-6);
    auto ts = two_targets(g);
    auto mask = random_mask(g, 0.25, 3);
    auto F = fim(g, mask, ts, 1.0, 1.0).assemble();
    CHECK((F - F.transpose()).norm() <= 1e-14 * F.norm());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(F);
    CHECK(es.eigenvalues().minCoeff() >= -1e-9 * F.norm());

    // Scale law: F is proportional to sigma2 / sigma_w2.
    auto F2 = fim(g, mask, ts, 3.0, 0.5).assemble();
    CHECK(rel(F2, 6.0 * F) < 1e-13);

    // Adding resources never removes information.
    BoolMat more = mask;
    more(0, 0) = more(5, 7) = more(19, 13) = true;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> diff(fim(g, more, ts, 1.0, 1.0).assemble() - F);
    CHECK(diff.eigenvalues().minCoeff() >= -1e-9 * F.norm());

    CHECK_THROWS(fim(g, mask, ts, 1.0, 0.0));
    CHECK_FALSE(fim(g, BoolMat::Constant(20, 14, false), ts, 1.0, 1.0).warning.empty());
}

TEST_CASE("CRB: block-diagonal and scalar cases") {
    FimBlocks b;
    b.tau = Eigen::Matrix2d{{4.0, 1.0}, {1.0, 3.0}};
    b.nu = Eigen::Matrix2d{{2.0, 0.5}, {0.5, 5.0}};
    b.nu_tau = Eigen::Matrix2d::Zero();
    auto c = crb(b);
    CHECK(c.tau == Eigen::MatrixXd(b.tau.inverse()));
    CHECK(c.nu == Eigen::MatrixXd(b.nu.inverse()));

    FimBlocks s;
    s.tau = Eigen::MatrixXd::Constant(1, 1, 7.0);
    s.nu = Eigen::MatrixXd::Constant(1, 1, 3.0);
    s.nu_tau = Eigen::MatrixXd::Constant(1, 1, -2.0);
    auto cs = crb(s);
    CHECK(cs.tau(0, 0) == Approx(1.0 / (7.0 - 4.0 / 3.0)));
    CHECK(cs.nu(0, 0) == Approx(1.0 / (3.0 - 4.0 / 7.0)));
}

TEST_CASE("CRB matches direct inversion") {
    auto g = build_grid(16, 12, 1e6, 1e-6);
    auto ts = two_targets(g);
    auto b = fim(g, random_mask(g, 0.4, 9), ts, 1.0, 1e-3);
    auto c = crb(b);
    const Eigen::MatrixXd inv = b.assemble().inverse();
    CHECK(rel(c.tau, inv.topLeftCorner(2, 2)) < 1e-10);
    CHECK(rel(c.nu, inv.bottomRightCorner(2, 2)) < 1e-10);
}

TEST_CASE("singular FIM is reported with the failing block") {
    auto g = build_grid(8, 8, 1.0, 1.0);
    std::vector<TargetParams> ts(1);
    BoolMat one_col = BoolMat::Constant(8, 8, false);
    one_col.col(4).setConstant(true);  // time index 0: no Doppler information
    auto b = fim(g, one_col, ts, 1.0, 1.0);
    try {
        crb(b);
        FAIL("expected SingularFimError");
    } catch (const SingularFimError& e) {
        CHECK(std::string(e.what()).find("F_nu") != std::string::npos);
    }
    std::string name;
    CHECK_FALSE(try_crb(b, kDefaultCondCap, &name).has_value());
    CHECK(name == "F_nu");
}

TEST_CASE("design objective and gain") {
    CrbMatrices c{Eigen::Matrix2d{{4.0, 0.0}, {0.0, 2.0}}, Eigen::Matrix2d{{8.0, 1.0}, {1.0, 10.0}}};
    CHECK(design_objective(c, 1.0, 0.0, 2.0, 1.0) == Approx(6.0 / 4.0));
    CrbMatrices eq{Eigen::Matrix2d::Identity() * 3.0, Eigen::Matrix2d::Identity() * 12.0};
    // equal normalized traces t = 6 with delta tau 1 and delta nu 2
    CHECK(design_objective(eq, 0.5, 0.5, 1.0, 2.0) == Approx(6.0));
    CHECK_THROWS(design_objective(c, 0.5, 0.5, 0.0, 1.0));

    CHECK(crb_gain(c, c) == 1.0);
    CrbMatrices five{5.0 * c.tau, 5.0 * c.nu};
    CHECK(crb_gain(five, c) == Approx(5.0));
    CrbMatrices zero{Eigen::Matrix2d::Zero(), Eigen::Matrix2d::Zero()};
    CHECK_THROWS(crb_gain(c, zero));
}
