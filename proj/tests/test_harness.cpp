#include "isacwf/harness.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

using namespace isacwf;
using Catch::Approx;

namespace {

ExperimentConfig small_config() {
    auto c = ExperimentConfig::desk_profile();
    c.M = 40;
    c.N = 40;
    return c;
}

std::string csv_of(const std::vector<ResultRow>& rows) {
    std::ostringstream os;
    write_csv(os, rows);
    return os.str();
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

} // namespace

TEST_CASE("method names") {
    CHECK(canonical_estimator("linear") == "linear_interp");
    CHECK(canonical_estimator("zerofill") == "zero_fill");
    CHECK(canonical_estimator("completion") == "completion");
    CHECK_THROWS(canonical_estimator("magic"));
    CHECK_THROWS(canonical_scheduler("smart"));
}

TEST_CASE("sweep spec validation") {
    SweepSpec s;
    s.values = {1.0, 2.0};
    CHECK_NOTHROW(s.validate());
    s.values = {2.0, 1.0};
    CHECK_THROWS(s.validate());
    s.values = {};
    CHECK_THROWS(s.validate());
    s.values = {1.0};
    s.trials = 0;
    CHECK_THROWS(s.validate());
}

TEST_CASE("empty rows give a header-only CSV") {
    const auto s = csv_of({});
    CHECK(s == std::string(kCsvHeader) + "\n");
}

TEST_CASE("detection matching") {
    std::vector<TargetParams> truth(2);
    truth[0].tau = 10.0;
    truth[1].tau = 20.0;
    Detection det;
    det.tau_hat = {20.2, 9.9};
    det.nu_hat = {0.1, 0.0};
    auto m = detail::match_detections(det, truth, 1.0, 1.0, 2.0);
    CHECK(m.err_tau[0] == Approx(-0.1));
    CHECK(m.err_tau[1] == Approx(0.2));
    CHECK(m.err_nu[1] == Approx(0.1));

    det.tau_hat = {20.2};
    det.nu_hat = {0.0};
    m = detail::match_detections(det, truth, 1.0, 1.0, 2.0);
    CHECK(std::isnan(m.err_tau[0]));
    CHECK(m.err_tau[1] == Approx(0.2));

    det.tau_hat = {13.0, 20.0};
    det.nu_hat = {0.0, 0.0};
    m = detail::match_detections(det, truth, 1.0, 1.0, 2.0);
    CHECK(std::isnan(m.err_tau[0]));  // outside the gate
}

TEST_CASE("RMSE sweep cardinality and determinism") {
    auto cfg = small_config();
    SweepSpec spec;
    spec.values = {0, 10, 20, 30, 40};
    spec.trials = 2;
    spec.master_seed = 77;
    spec.methods = {{"optimized", "zero_fill"}, {"random", "linear_interp"}, {"random_contiguous", "completion"}};
    auto a = run_rmse_sweep(cfg, spec);
    CHECK(a.rows.size() == 30);
    spec.threads = 3;
    auto b = run_rmse_sweep(cfg, spec);
    CHECK(csv_of(a.rows) == csv_of(b.rows));
    for (const auto& r : a.rows) {
        if (r.matched) CHECK(r.rmse_delay >= 0.0);
        CHECK(r.g_s == Approx(0.25 * 1600));
    }
}

TEST_CASE("manifest replay reproduces the CSV") {
    auto cfg = small_config();
    cfg.rng_seed = 5;
    SweepSpec spec;
    spec.variable = "sensing_snr";
    spec.values = {10, 30};
    spec.trials = 2;
    spec.master_seed = 5;
    spec.methods = {{"optimized", "completion"}};
    auto out = run_rmse_sweep(cfg, spec);
    const auto dir = std::filesystem::temp_directory_path() / "isacwf_test_harness";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "rmse.csv").string();
    emit_results(out.rows, path, manifest_json(cfg, spec, "sweep-rmse", out.runtime));

    auto m = load_manifest(path + ".manifest.json");
    CHECK(m.command == "sweep-rmse");
    CHECK(dump_config(m.config) == dump_config(cfg));
    auto again = run_rmse_sweep(m.config, m.spec);
    CHECK(csv_of(again.rows) == slurp(path));
    CHECK_THROWS(emit_results(out.rows, (dir / "missing" / "x.csv").string(), nlohmann::json::object()));
}

TEST_CASE("noiseless point is limited by bin and refinement error") {
    auto cfg = small_config();
    SweepSpec spec;
    spec.values = {std::numeric_limits<double>::infinity()};
    spec.trials = 3;
    spec.methods = {{"random", "linear_interp"}};
    cfg.mu = 1.0;
    auto out = run_rmse_sweep(cfg, spec);
    const auto g = cfg.grid();
    for (const auto& r : out.rows) {
        CHECK(r.failure_rate == 0.0);
        CHECK(r.rmse_delay <= 0.5 * g.delay_resolution());
        CHECK(r.rmse_doppler <= 0.5 * g.doppler_resolution());
        CHECK(r.crb_delay == 0.0);
    }
}

TEST_CASE("CRB references match a recomputation") {
    auto cfg = small_config();
    SweepSpec spec;
    spec.values = {20};
    spec.trials = 1;
    spec.master_seed = 3;
    spec.methods = {{"optimized", "zero_fill"}};
    auto out = run_rmse_sweep(cfg, spec);
    REQUIRE(out.rows.size() == 2);

    auto truth = on_grid_targets(cfg);
    const auto p = make_problem(cfg, truth);
    const auto mask = optimize_allocation(p, {cfg.bnb_node_limit, cfg.bnb_time_limit}).mask;
    detail::draw_betas(truth, cfg, derive_seed(3, {0, 0, detail::kBeta}));
    std::vector<cd> betas;
    for (const auto& t : truth) betas.push_back(t.beta);
    const double w2 = noise_for_snr(p.sigma2, betas, double(mask.allocated()), 100.0);
    const auto c = crb(fim(mask, truth, p.sigma2, w2));
    CHECK(out.rows[0].crb_delay == Approx(std::sqrt(c.tau.trace() / 2.0)).epsilon(1e-12));
    CHECK(out.rows[1].crb_doppler == Approx(std::sqrt(c.nu.trace() / 2.0)).epsilon(1e-12));
}

TEST_CASE("gain is one when every method allocates the full grid") {
    auto cfg = small_config();
    cfg.mu = 1.0;
    cfg.block_size = 1;
    SweepSpec spec;
    spec.values = {0.25, 1.0, 2.0};
    spec.trials = 2;
    auto out = run_gain_sweep(cfg, spec);
    REQUIRE(out.rows.size() == 9);
    for (const auto& r : out.rows) CHECK(r.gain == Approx(1.0).epsilon(1e-9));
}

TEST_CASE("gain sweep needs two targets") {
    auto cfg = small_config();
    cfg.ranges = {50.0};
    cfg.velocities = {1.0};
    SweepSpec spec;
    spec.values = {1.0};
    CHECK_THROWS(run_gain_sweep(cfg, spec));
}

TEST_CASE("random mask with interpolation improves with SNR") {
    // gamma_s divides by g_s = 5000 here, so the noise-limited range sits
    // well below 0 dB; above it the interpolation bias dominates.
    auto cfg = ExperimentConfig::desk_profile();
    cfg.mu = 0.5;
    SweepSpec spec;
    spec.values = {-50, -35, -20};
    spec.trials = 20;
    spec.methods = {{"random", "linear_interp"}};
    auto out = run_rmse_sweep(cfg, spec);
    REQUIRE(out.rows.size() == 6);
    std::vector<double> per_point;
    for (std::size_t i = 0; i < 3; ++i) {
        const double a = out.rows[2 * i].rmse_delay, b = out.rows[2 * i + 1].rmse_delay;
        REQUIRE(std::isfinite(a));
        REQUIRE(std::isfinite(b));
        per_point.push_back(std::sqrt(0.5 * (a * a + b * b)));
    }
    CHECK(per_point[1] < per_point[0]);
    CHECK(per_point[2] < per_point[1]);
}
