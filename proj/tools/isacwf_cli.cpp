// Batch driver: waveform design, single-shot simulation/estimation and the
// two Monte Carlo studies.

#include "isacwf/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

using namespace isacwf;

namespace {

struct Options {
    std::string config_path;
    std::string profile = "desk";
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::string> solver;
    std::optional<std::string> estimator;
    std::optional<std::size_t> trials;
    std::optional<std::size_t> threads;
    std::vector<std::string> sets;
    std::string manifest;
    std::string mask_path;
    std::string rx_path;
    std::string tx_path;
    std::optional<double> snr_db;
    std::vector<std::string> methods;
};

ExperimentConfig resolve_config(const Options& o) {
    auto cfg = ExperimentConfig::profile(o.profile);
    if (!o.config_path.empty()) cfg = load_config(o.config_path, cfg);
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed) cfg.rng_seed = *o.seed;
    if (o.solver) cfg.solver = *o.solver;
    if (o.estimator) cfg.estimator = *o.estimator;
    if (o.trials) cfg.trials = *o.trials;
    if (o.threads) cfg.threads = *o.threads;
    cfg.validate();
    return cfg;
}

AllocationMask load_mask(const std::string& path, const ResourceGrid& grid) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open mask '" + path + "'");
    return read_mask(is, grid);
}

void save_mask(const std::string& path, const AllocationMask& mask) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_mask(os, mask);
}

CMat load_cmat(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    return read_cmat(is);
}

void save_cmat(const std::string& path, const CMat& a) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_cmat(os, a);
}

SolveReport design(const ExperimentConfig& cfg) {
    auto p = make_problem(cfg, on_grid_targets(cfg));
    p.check_feasible();
    if (cfg.solver == "greedy") return greedy_allocation(p);
    return optimize_allocation(p, {cfg.bnb_node_limit, cfg.bnb_time_limit});
}

int cmd_design(const Options& o) {
    const auto cfg = resolve_config(o);
    const auto r = design(cfg);
    save_mask(o.out.empty() ? "mask.txt" : o.out, r.mask);
    std::printf("solver %s\nobjective %.10g\nlower_bound %.10g\ngap %.3g\nnodes %zu\nallocated %zu / %zu\n",
                r.solver.c_str(), r.objective, r.lower_bound, r.gap, r.nodes, r.mask.allocated(),
                r.mask.grid().cells());
    for (std::size_t k = 0; k < r.mask.K(); ++k) std::printf("ue %zu: %zu cells\n", k, r.mask.allocated(k));
    return 0;
}

int cmd_simulate(const Options& o) {
    const auto cfg = resolve_config(o);
    const auto grid = cfg.grid();
    const auto mask = o.mask_path.empty() ? design(cfg).mask : load_mask(o.mask_path, grid);
    auto truth = on_grid_targets(cfg);
    Rng rng(derive_seed(cfg.rng_seed, {detail::kBeta}));
    for (std::size_t k = 0; k < truth.size(); ++k) truth[k].beta = complex_gaussian(rng, cfg.omega_beta(cfg.ranges[k]));

    const double sigma2 = cfg.resource_power();
    const auto symbols =
        gen_symbols(grid, parse_constellation(cfg.constellation), derive_seed(cfg.rng_seed, {detail::kSymbols}));
    const CMat X = assemble_waveform(std::sqrt(sigma2), symbols, mask);
    std::vector<cd> betas;
    for (const auto& t : truth) betas.push_back(t.beta);
    const double g_s = static_cast<double>(mask.allocated());
    const double w2 = o.snr_db ? noise_for_snr(sigma2, betas, g_s, std::pow(10.0, *o.snr_db / 10.0)) : cfg.sigma_w2;
    const auto R = rx_signal(X, sensing_channel(grid, truth), w2, derive_seed(cfg.rng_seed, {detail::kNoise}));

    const std::string rx = o.out.empty() ? "rx.cmat" : o.out;
    save_cmat(rx, R.values);
    save_cmat(o.tx_path.empty() ? rx + ".tx" : o.tx_path, X);
    std::printf("noise_power %.10g\nsnr_db %.4f\n", w2, 10.0 * std::log10(sensing_snr(sigma2, betas, g_s, w2)));
    std::printf("target,tau_s,nu_hz,beta_re,beta_im\n");
    for (std::size_t k = 0; k < truth.size(); ++k)
        std::printf("%zu,%.10g,%.10g,%.10g,%.10g\n", k, truth[k].tau, truth[k].nu, truth[k].beta.real(),
                    truth[k].beta.imag());
    return 0;
}

int cmd_estimate(const Options& o) {
    const auto cfg = resolve_config(o);
    const auto grid = cfg.grid();
    if (o.rx_path.empty()) throw std::invalid_argument("estimate needs --rx");
    RxMatrix R{load_cmat(o.rx_path), 0.0, 0};
    const CMat X = load_cmat(o.tx_path.empty() ? o.rx_path + ".tx" : o.tx_path);
    if (static_cast<std::size_t>(R.values.rows()) != grid.M() || static_cast<std::size_t>(R.values.cols()) != grid.N())
        throw std::invalid_argument("received matrix shape does not match the configured grid");
    AllocationMask mask;
    if (!o.mask_path.empty()) {
        mask = load_mask(o.mask_path, grid);
    } else {
        BoolMat u = X.array().abs() > 0.0;
        mask = AllocationMask(grid, {u});
    }
    const auto partial = ls_channel_estimate(R, X, mask);
    const auto dd = dd_transform(grid, detail::reconstruct(cfg, partial, canonical_estimator(cfg.estimator)));
    const auto det = detect_peaks(dd, cfg.K(), cfg.peak_guard, cfg.peak_refine);

    std::ostringstream os;
    os << "detection,tau_s,nu_hz,delay_bin,doppler_bin,magnitude\n";
    for (std::size_t d = 0; d < det.size(); ++d)
        os << d << ',' << detail::fmt_num(det.tau_hat[d]) << ',' << detail::fmt_num(det.nu_hat[d]) << ','
           << detail::fmt_num(det.delay_bin[d]) << ',' << detail::fmt_num(det.doppler_bin[d]) << ','
           << detail::fmt_num(det.magnitude[d]) << '\n';
    if (o.out.empty()) {
        std::cout << os.str();
    } else {
        std::ofstream f(o.out);
        if (!f) throw std::runtime_error("cannot open '" + o.out + "' for writing");
        f << os.str();
    }
    if (det.shortfall) std::fprintf(stderr, "warning: fewer peaks than targets\n");
    return 0;
}

std::vector<Method> parse_methods(const std::vector<std::string>& specs, const ExperimentConfig& cfg) {
    std::vector<Method> out;
    if (specs.empty()) {
        out.push_back({"optimized", cfg.estimator});
        out.push_back({"random", "linear_interp"});
        out.push_back({"random_contiguous", "linear_interp"});
        return out;
    }
    for (const auto& s : specs) {
        const auto colon = s.find(':');
        if (colon == std::string::npos) throw std::invalid_argument("--method expects scheduler:estimator, got '" + s + "'");
        out.push_back({canonical_scheduler(s.substr(0, colon)), canonical_estimator(s.substr(colon + 1))});
    }
    return out;
}

int run_sweep(const std::string& command, const ExperimentConfig& cfg, const SweepSpec& spec, const std::string& out) {
    const auto res = command == "sweep-gain" ? run_gain_sweep(cfg, spec) : run_rmse_sweep(cfg, spec);
    emit_results(res.rows, out, manifest_json(cfg, spec, command, res.runtime));
    std::fprintf(stderr, "%zu rows -> %s (%.1f s)\n", res.rows.size(), out.c_str(), res.runtime);
    return 0;
}

int cmd_sweep(const std::string& command, const Options& o) {
    if (!o.manifest.empty()) {
        auto m = load_manifest(o.manifest);
        if (m.command != command)
            throw std::invalid_argument("manifest was written by '" + m.command + "', not '" + command + "'");
        if (o.threads) m.spec.threads = *o.threads;
        return run_sweep(command, m.config, m.spec, o.out.empty() ? "replay.csv" : o.out);
    }
    const auto cfg = resolve_config(o);
    SweepSpec spec;
    spec.trials = cfg.trials;
    spec.master_seed = cfg.rng_seed;
    spec.threads = cfg.threads;
    if (command == "sweep-gain") {
        spec.variable = "inter_delay_spacing";
        spec.values = cfg.gain_spacings;
    } else {
        spec.variable = "sensing_snr";
        spec.values = cfg.snr_db;
        spec.methods = parse_methods(o.methods, cfg);
    }
    return run_sweep(command, cfg, spec, o.out.empty() ? (command == "sweep-gain" ? "gain.csv" : "rmse.csv") : o.out);
}

// Invariant suite on one configuration. Prints one line per check.
int cmd_validate(const Options& o) {
    const auto cfg = resolve_config(o);
    const auto grid = cfg.grid();
    int failures = 0;
    auto report = [&](const std::string& name, bool ok, const std::string& detail = {}) {
        std::printf("%s %s%s%s\n", ok ? "ok  " : "FAIL", name.c_str(), detail.empty() ? "" : ": ", detail.c_str());
        if (!ok) ++failures;
    };

    const auto targets = on_grid_targets(cfg);
    for (std::size_t k = 0; k < targets.size(); ++k) {
        try {
            check_target(grid, targets[k]);
            report("target " + std::to_string(k) + " inside the unambiguous region", true);
        } catch (const std::exception& e) {
            report("target " + std::to_string(k) + " inside the unambiguous region", false, e.what());
        }
    }

    auto p = make_problem(cfg, targets);
    try {
        p.check_feasible();
        report("constraints feasible", true);
    } catch (const std::exception& e) {
        report("constraints feasible", false, e.what());
        return 1;
    }
    const auto n_min = p.n_min_fine();

    auto check_mask = [&](const std::string& name, const AllocationMask& m) {
        const auto v = validate_mask(m, cfg.mu);
        report(name + " mask exclusive and within occupancy", v.empty(), v.empty() ? "" : v.front().message);
        bool counts = m.K() == n_min.size();
        for (std::size_t k = 0; counts && k < m.K(); ++k) counts = m.allocated(k) >= n_min[k];
        report(name + " mask meets per-UE minimum counts", counts);
    };

    const auto bnb = optimize_allocation(p, {cfg.bnb_node_limit, cfg.bnb_time_limit});
    const auto greedy = greedy_allocation(p);
    check_mask("bnb", bnb.mask);
    check_mask("greedy", greedy.mask);
    report("bnb objective not above greedy", bnb.objective <= greedy.objective * (1.0 + 1e-9));
    check_mask("random", random_scheduler(grid, cfg.K(), cfg.mu, n_min, derive_seed(cfg.rng_seed, {detail::kMask, 0})));
    try {
        check_mask("random_contiguous", random_contiguous_scheduler(grid, cfg.K(), cfg.mu, cfg.block_size, n_min,
                                                                    derive_seed(cfg.rng_seed, {detail::kMask, 1})));
    } catch (const PlacementError& e) {
        report("random_contiguous placement", false, e.what());
    }

    const auto F = fim(bnb.mask, targets, p.sigma2, cfg.sigma_w2);
    const Eigen::MatrixXd full = F.assemble();
    report("FIM symmetric", (full - full.transpose()).norm() <= 1e-12 * full.norm());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(full);
    report("FIM positive semidefinite", es.eigenvalues().minCoeff() >= -1e-9 * es.eigenvalues().maxCoeff());
    try {
        const auto c = crb(F, cfg.cond_cap);
        const Eigen::MatrixXd inv = full.inverse();
        const auto K = static_cast<Eigen::Index>(cfg.K());
        const double e1 = (c.tau - inv.topLeftCorner(K, K)).norm() / inv.topLeftCorner(K, K).norm();
        const double e2 = (c.nu - inv.bottomRightCorner(K, K)).norm() / inv.bottomRightCorner(K, K).norm();
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2e", std::max(e1, e2));
        report("Schur-complement CRB matches direct inverse", std::max(e1, e2) < 1e-8, buf);
    } catch (const SingularFimError& e) {
        report("CRB computable", false, e.what());
    }

    const auto H = sensing_channel(grid, targets);
    const auto dd = dd_transform(grid, H.values);
    const double rt = (dd_inverse(grid, dd) - H.values).norm() / H.values.norm();
    report("delay-Doppler transform round trip", rt < 1e-10);
    const auto det = detect_peaks(dd, cfg.K(), cfg.peak_guard, cfg.peak_refine);
    const auto match = detail::match_detections(det, targets, grid.delay_resolution(), grid.doppler_resolution(),
                                                0.5);
    bool all = true;
    for (double e : match.err_tau) all = all && !std::isnan(e);
    report("noiseless full-grid detection finds every target", all);

    std::printf("%d check(s) failed\n", failures);
    return failures ? 1 : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"OFDM ISAC waveform design and delay-Doppler estimation"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "key = value config file applied over the profile")
            ->check(CLI::ExistingFile);
        sub->add_option("--profile", o.profile, "base parameter set")->check(CLI::IsMember({"desk", "paper"}));
        sub->add_option("--set", o.sets, "override one config key (key=value), repeatable");
        sub->add_option("--seed", o.seed, "master seed");
        sub->add_option("--out", o.out, "output path");
        sub->add_option("--solver", o.solver, "allocation solver")->check(CLI::IsMember({"bnb", "greedy"}));
        sub->add_option("--estimator", o.estimator, "channel reconstruction")
            ->check(CLI::IsMember({"completion", "linear", "zerofill"}));
        sub->add_option("--trials", o.trials, "trials per sweep point")->check(CLI::PositiveNumber);
        sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    };

    auto* design = app.add_subcommand("design", "optimize an allocation and write the mask file");
    common(design);
    auto* simulate = app.add_subcommand("simulate", "transmit on a mask and write the received grid (CMAT)");
    common(simulate);
    simulate->add_option("--mask", o.mask_path, "mask file (designed on the fly when omitted)");
    simulate->add_option("--tx", o.tx_path, "waveform dump path (default: <out>.tx)");
    simulate->add_option("--snr", o.snr_db, "sensing SNR in dB (default: configured noise power)");
    auto* estimate = app.add_subcommand("estimate", "estimate delays and Dopplers from a received grid");
    common(estimate);
    estimate->add_option("--rx", o.rx_path, "received grid (CMAT)")->required();
    estimate->add_option("--tx", o.tx_path, "transmitted grid (default: <rx>.tx)");
    estimate->add_option("--mask", o.mask_path, "mask file (default: nonzero waveform cells)");
    auto* gain = app.add_subcommand("sweep-gain", "CRB gain against the baselines vs inter-delay spacing");
    common(gain);
    gain->add_option("--manifest", o.manifest, "replay a previous run from its manifest");
    auto* rmse = app.add_subcommand("sweep-rmse", "delay/Doppler RMSE vs sensing SNR");
    common(rmse);
    rmse->add_option("--manifest", o.manifest, "replay a previous run from its manifest");
    rmse->add_option("--method", o.methods, "scheduler:estimator pair, repeatable");
    auto* validate = app.add_subcommand("validate", "run the invariant suite on a configuration");
    common(validate);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*design) return cmd_design(o);
        if (*simulate) return cmd_simulate(o);
        if (*estimate) return cmd_estimate(o);
        if (*gain) return cmd_sweep("sweep-gain", o);
        if (*rmse) return cmd_sweep("sweep-rmse", o);
        if (*validate) return cmd_validate(o);
    } catch (const InfeasibleError& e) {
        std::fprintf(stderr, "infeasible (%s): %s\n", e.constraint().c_str(), e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
