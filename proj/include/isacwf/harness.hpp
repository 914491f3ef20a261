#pragma once

#include "isacwf/allocator.hpp"
#include "isacwf/channel.hpp"
#include "isacwf/config.hpp"
#include "isacwf/crb.hpp"
#include "isacwf/estimator.hpp"
#include "isacwf/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#ifndef ISACWF_VERSION
#define ISACWF_VERSION "unknown"
#endif

namespace isacwf {

inline constexpr const char* kVersion = ISACWF_VERSION;

// ---------------------------------------------------------------------------
// Sweep description

struct Method {
    std::string scheduler = "optimized";  // optimized | random | random_contiguous
    std::string estimator = "completion"; // completion | linear_interp | zero_fill

    std::string tag() const { return scheduler + "+" + estimator; }
};

inline std::string canonical_estimator(const std::string& s) {
    if (s == "completion") return "completion";
    if (s == "linear" || s == "linear_interp") return "linear_interp";
    if (s == "zerofill" || s == "zero_fill") return "zero_fill";
    throw std::invalid_argument("unknown estimator '" + s + "' (expected completion, linear or zerofill)");
}

inline std::string canonical_scheduler(const std::string& s) {
    if (s == "optimized" || s == "random" || s == "random_contiguous") return s;
    throw std::invalid_argument("unknown scheduler '" + s + "' (expected optimized, random or random_contiguous)");
}

struct SweepSpec {
    std::string variable;          // inter_delay_spacing | sensing_snr
    std::vector<double> values;
    std::size_t trials = 20;
    std::vector<Method> methods;
    std::uint64_t master_seed = 1;
    std::size_t threads = 1;

    void validate() const {
        if (trials < 1) throw std::invalid_argument("sweep needs at least one trial per point");
        if (values.empty()) throw std::invalid_argument("sweep value list is empty");
        if (!std::is_sorted(values.begin(), values.end())) throw std::invalid_argument("sweep values must be sorted");
        if (threads < 1) throw std::invalid_argument("thread count must be >= 1");
    }
};

struct ResultRow {
    std::string study;       // gain | rmse
    std::string scheduler;
    std::string estimator;   // empty for gain rows
    std::string variable;
    double value = 0.0;
    int target = -1;         // -1: not per target
    double rmse_delay = std::numeric_limits<double>::quiet_NaN();    // s
    double rmse_doppler = std::numeric_limits<double>::quiet_NaN();  // Hz
    double crb_delay = std::numeric_limits<double>::quiet_NaN();     // sqrt of CRB, s
    double crb_doppler = std::numeric_limits<double>::quiet_NaN();   // sqrt of CRB, Hz
    double gain = std::numeric_limits<double>::quiet_NaN();
    double failure_rate = std::numeric_limits<double>::quiet_NaN();
    double snr_db = std::numeric_limits<double>::quiet_NaN();
    double g_s = std::numeric_limits<double>::quiet_NaN();
    std::size_t trials = 0;
    std::size_t matched = 0;
    std::uint64_t point_seed = 0;
};

struct SweepOutput {
    std::vector<ResultRow> rows;
    double runtime = 0.0;  // s, kept out of the CSV so the CSV stays byte-stable
};

// ---------------------------------------------------------------------------
// Targets

/// Targets at the configured ranges and velocities with nominal reflection
/// amplitudes sqrt(Omega) and single-path UE links at the same delay and Doppler.
inline std::vector<TargetParams> nominal_targets(const ExperimentConfig& cfg) {
    std::vector<TargetParams> t(cfg.K());
    for (std::size_t k = 0; k < cfg.K(); ++k) {
        t[k].range = cfg.ranges[k];
        t[k].tau = 2.0 * cfg.ranges[k] / kSpeedOfLight;
        t[k].nu = 2.0 * cfg.velocities[k] / cfg.wavelength();
        t[k].beta = std::sqrt(cfg.omega_beta(cfg.ranges[k]));
        const double a = std::sqrt(cfg.comm_gain(k) / static_cast<double>(cfg.comm_paths));
        for (std::size_t q = 0; q < cfg.comm_paths; ++q) t[k].comm_paths.push_back({a, t[k].tau, t[k].nu});
    }
    return t;
}

// ---------------------------------------------------------------------------
// Helpers

namespace detail {

enum Purpose : std::uint64_t { kBeta = 1, kSymbols = 2, kNoise = 3, kMask = 4 };

/// Runs body(i) for i in [0, n) on up to `threads` workers; results go to indexed slots.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t w = 0; w < threads; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += threads) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline void draw_betas(std::vector<TargetParams>& t, const ExperimentConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t k = 0; k < t.size(); ++k) t[k].beta = complex_gaussian(rng, cfg.omega_beta(cfg.ranges[k]));
}

inline AllocationMask design_mask(const ExperimentConfig& cfg, const AllocationProblem& p) {
    if (cfg.solver == "greedy") return greedy_allocation(p).mask;
    return optimize_allocation(p, {cfg.bnb_node_limit, cfg.bnb_time_limit}).mask;
}

inline AllocationMask baseline_mask(const ExperimentConfig& cfg, const std::string& scheduler,
                                    const std::vector<std::size_t>& n_min, std::uint64_t seed) {
    const auto grid = cfg.grid();
    if (scheduler == "random") return random_scheduler(grid, cfg.K(), cfg.mu, n_min, seed);
    if (scheduler == "random_contiguous")
        return random_contiguous_scheduler(grid, cfg.K(), cfg.mu, cfg.block_size, n_min, seed);
    throw std::invalid_argument("unknown baseline scheduler '" + scheduler + "'");
}

inline CompletionConfig completion_config(const ExperimentConfig& cfg) {
    CompletionConfig c;
    c.p = cfg.schatten_p;
    c.lambda_scale = cfg.lambda_scale;
    c.rho = cfg.lambda_decay;
    c.max_iters = cfg.completion_max_iters;
    c.tol = cfg.completion_tol;
    return c;
}

inline CMat reconstruct(const ExperimentConfig& cfg, const PartialChannel& partial, const std::string& estimator) {
    if (estimator == "completion") return schatten_complete(partial, completion_config(cfg)).values;
    if (estimator == "linear_interp") return linear_interp_baseline(partial).values;
    if (estimator == "zero_fill") return partial.values;
    throw std::invalid_argument("unknown estimator '" + estimator + "'");
}

/// Per-target squared errors after optimal assignment; NaN marks a failure.
struct MatchResult {
    std::vector<double> err_tau, err_nu;  // s, Hz
};

/**
 * Assigns detections to targets minimizing the summed normalized distance
 * (exhaustive over permutations, K <= 8). A target fails when it has no
 * detection or its error exceeds `gate` bins on either axis.
 */
inline MatchResult match_detections(const Detection& det, std::span<const TargetParams> truth, double dtau, double dnu,
                                    double gate) {
    const std::size_t K = truth.size(), D = det.size();
    MatchResult r{std::vector<double>(K, std::numeric_limits<double>::quiet_NaN()),
                  std::vector<double>(K, std::numeric_limits<double>::quiet_NaN())};
    if (K > 8) throw std::invalid_argument("matching supports at most 8 targets");
    std::vector<std::size_t> perm(std::max(K, D));
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> best_perm;
    auto dist = [&](std::size_t k, std::size_t d) {
        const double a = (det.tau_hat[d] - truth[k].tau) / dtau, b = (det.nu_hat[d] - truth[k].nu) / dnu;
        return std::sqrt(a * a + b * b);
    };
    do {
        double total = 0.0;
        for (std::size_t k = 0; k < K; ++k)
            total += perm[k] < D ? dist(k, perm[k]) : 1e6;  // missing detection
        if (total < best) {
            best = total;
            best_perm.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(K));
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t d = best_perm[k];
        if (d >= D) continue;
        const double et = det.tau_hat[d] - truth[k].tau, en = det.nu_hat[d] - truth[k].nu;
        if (std::abs(et) / dtau > gate || std::abs(en) / dnu > gate) continue;
        r.err_tau[k] = et;
        r.err_nu[k] = en;
    }
    return r;
}

inline std::string fmt_num(double v) {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

} // namespace detail

// ---------------------------------------------------------------------------
// CRB gain study

/**
 * For each inter-delay spacing (in units of 1/B), builds K=2 targets around
 * the first configured range, designs the optimized mask and both baseline
 * masks per trial, and reports G = tr(C_tau, baseline) / tr(C_tau, optimized)
 * averaged over trials. Reflection coefficients are drawn per trial.
 */
inline SweepOutput run_gain_sweep(const ExperimentConfig& cfg, const SweepSpec& spec) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    spec.validate();
    if (cfg.K() != 2) throw std::invalid_argument("gain sweep needs exactly two targets");
    const double dtau = cfg.delay_norm();
    const std::vector<std::string> baselines{"random", "random_contiguous"};

    struct Trial {
        double tr_opt = 0.0;
        std::vector<double> tr_base;
        std::vector<double> gain;
    };
    SweepOutput out;
    for (std::size_t pi = 0; pi < spec.values.size(); ++pi) {
        const double spacing = spec.values[pi];
        const std::uint64_t point_seed = derive_seed(spec.master_seed, {pi});
        std::vector<Trial> trials(spec.trials);
        detail::parallel_for(spec.trials, spec.threads, [&](std::size_t ti) {
            auto targets = nominal_targets(cfg);
            targets[1].tau = targets[0].tau + spacing * dtau;
            detail::draw_betas(targets, cfg, derive_seed(spec.master_seed, {pi, ti, detail::kBeta}));
            AllocationProblem p;
            try {
                p = make_problem(cfg, targets);
                p.check_feasible();
            } catch (const InfeasibleError& e) {
                throw InfeasibleError(e.constraint(), std::string(e.what()) + " (gain sweep, spacing " +
                                                          detail::fmt_num(spacing) + ")");
            }
            const auto opt = detail::design_mask(cfg, p);
            const double s2 = p.sigma2, w2 = cfg.sigma_w2;
            const auto c_opt = crb(fim(opt, targets, s2, w2), cfg.cond_cap);
            Trial tr;
            tr.tr_opt = c_opt.tau.trace();
            const auto n_min = p.n_min_fine();
            for (std::size_t b = 0; b < baselines.size(); ++b) {
                const auto m = detail::baseline_mask(cfg, baselines[b], n_min,
                                                     derive_seed(spec.master_seed, {pi, ti, detail::kMask, b}));
                const auto c = crb(fim(m, targets, s2, w2), cfg.cond_cap);
                tr.tr_base.push_back(c.tau.trace());
                tr.gain.push_back(crb_gain(c, c_opt));
            }
            trials[ti] = std::move(tr);
        });

        const double n = static_cast<double>(spec.trials);
        ResultRow base;
        base.study = "gain";
        base.variable = spec.variable.empty() ? "inter_delay_spacing" : spec.variable;
        base.value = spacing;
        base.trials = spec.trials;
        base.point_seed = point_seed;
        double tr_opt = 0.0;
        for (const auto& t : trials) tr_opt += t.tr_opt / n;
        ResultRow opt_row = base;
        opt_row.scheduler = "optimized";
        opt_row.crb_delay = std::sqrt(tr_opt / 2.0);
        opt_row.gain = 1.0;
        out.rows.push_back(opt_row);
        for (std::size_t b = 0; b < baselines.size(); ++b) {
            double g = 0.0, trb = 0.0;
            for (const auto& t : trials) {
                g += t.gain[b] / n;
                trb += t.tr_base[b] / n;
            }
            ResultRow r = base;
            r.scheduler = baselines[b];
            r.crb_delay = std::sqrt(trb / 2.0);
            r.gain = g;
            out.rows.push_back(r);
        }
    }
    out.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------
// RMSE study

/// Targets on the delay/Doppler bin lattice: the first at the bin nearest its
/// configured range and velocity, the rest offset by the configured spacings.
inline std::vector<TargetParams> on_grid_targets(const ExperimentConfig& cfg) {
    auto t = nominal_targets(cfg);
    const auto grid = cfg.grid();
    const double dtau = grid.delay_resolution(), dnu = grid.doppler_resolution();
    const double i0 = std::round(t[0].tau / dtau), j0 = std::round(t[0].nu / dnu);
    for (std::size_t k = 0; k < t.size(); ++k) {
        t[k].tau = (i0 + static_cast<double>(k) * cfg.rmse_delay_spacing) * dtau;
        t[k].nu = (j0 + static_cast<double>(k) * cfg.rmse_doppler_spacing) * dnu;
        for (auto& p : t[k].comm_paths) {
            p.tau = t[k].tau;
            p.nu = t[k].nu;
        }
    }
    return t;
}

/**
 * For each sensing SNR (dB; "inf" for a noiseless point), runs full pipeline
 * trials per method: mask, QPSK symbols, reflection draw, noise scaled so
 * that gamma_s hits the target with g_s = allocated count, LS estimate,
 * reconstruction, DD transform, peak detection, assignment. Emits per-target
 * RMSE with sqrt-CRB references averaged over the same trials.
 */
inline SweepOutput run_rmse_sweep(const ExperimentConfig& cfg, const SweepSpec& spec) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    spec.validate();
    if (spec.methods.empty()) throw std::invalid_argument("RMSE sweep needs at least one method");
    const auto grid = cfg.grid();
    const auto K = cfg.K();
    const auto truth_nominal = on_grid_targets(cfg);
    for (const auto& t : truth_nominal) check_target(grid, t);
    const double dtau = grid.delay_resolution(), dnu = grid.doppler_resolution();
    const auto constellation = parse_constellation(cfg.constellation);

    // The optimized waveform is designed once, on nominal reflection powers.
    auto problem = make_problem(cfg, truth_nominal);
    const auto n_min = problem.n_min_fine();
    std::optional<AllocationMask> optimized;
    for (const auto& m : spec.methods)
        if (canonical_scheduler(m.scheduler) == "optimized" && !optimized) optimized = detail::design_mask(cfg, problem);
    const double sigma2 = problem.sigma2;
    const double sigma = std::sqrt(sigma2);

    struct TrialOut {
        std::vector<double> err_tau, err_nu;  // NaN on failure
        double tr_tau = 0.0, tr_nu = 0.0;
        double g_s = 0.0;
    };
    SweepOutput out;
    for (std::size_t pi = 0; pi < spec.values.size(); ++pi) {
        const double snr_db = spec.values[pi];
        const double gamma = std::isinf(snr_db) ? std::numeric_limits<double>::infinity() : std::pow(10.0, snr_db / 10.0);
        const std::uint64_t point_seed = derive_seed(spec.master_seed, {pi});
        for (std::size_t mi = 0; mi < spec.methods.size(); ++mi) {
            const std::string sched = canonical_scheduler(spec.methods[mi].scheduler);
            const std::string est = canonical_estimator(spec.methods[mi].estimator);
            std::vector<TrialOut> trials(spec.trials);
            detail::parallel_for(spec.trials, spec.threads, [&](std::size_t ti) {
                auto truth = truth_nominal;
                detail::draw_betas(truth, cfg, derive_seed(spec.master_seed, {pi, ti, detail::kBeta}));
                const AllocationMask mask = sched == "optimized"
                    ? *optimized
                    : detail::baseline_mask(cfg, sched, n_min, derive_seed(spec.master_seed, {pi, ti, detail::kMask, mi}));
                const auto symbols = gen_symbols(grid, constellation, derive_seed(spec.master_seed, {pi, ti, detail::kSymbols}));
                const CMat X = assemble_waveform(sigma, symbols, mask);
                const auto H = sensing_channel(grid, truth);
                std::vector<cd> betas;
                for (const auto& t : truth) betas.push_back(t.beta);
                const double g_s = static_cast<double>(mask.allocated());
                const double w2 = std::isinf(gamma) ? 0.0 : noise_for_snr(sigma2, betas, g_s, gamma);
                const auto R = rx_signal(X, H, w2, derive_seed(spec.master_seed, {pi, ti, detail::kNoise}));
                const auto partial = ls_channel_estimate(R, X, mask);
                const auto dd = dd_transform(grid, detail::reconstruct(cfg, partial, est));
                const auto det = detect_peaks(dd, K, cfg.peak_guard, cfg.peak_refine);
                const auto match = detail::match_detections(det, truth, dtau, dnu, static_cast<double>(cfg.peak_guard));
                TrialOut to{match.err_tau, match.err_nu, 0.0, 0.0, g_s};
                if (w2 > 0.0) {
                    const auto c = crb(fim(mask, truth, sigma2, w2), cfg.cond_cap);
                    to.tr_tau = c.tau.trace();
                    to.tr_nu = c.nu.trace();
                }
                trials[ti] = std::move(to);
            });

            // Sequential reduction in trial order.
            double tr_tau = 0.0, tr_nu = 0.0, g_s = 0.0;
            const double n = static_cast<double>(spec.trials);
            for (const auto& t : trials) {
                tr_tau += t.tr_tau / n;
                tr_nu += t.tr_nu / n;
                g_s += t.g_s / n;
            }
            for (std::size_t k = 0; k < K; ++k) {
                double se_tau = 0.0, se_nu = 0.0;
                std::size_t ok = 0;
                for (const auto& t : trials) {
                    if (std::isnan(t.err_tau[k])) continue;
                    se_tau += t.err_tau[k] * t.err_tau[k];
                    se_nu += t.err_nu[k] * t.err_nu[k];
                    ++ok;
                }
                ResultRow r;
                r.study = "rmse";
                r.scheduler = sched;
                r.estimator = est;
                r.variable = spec.variable.empty() ? "sensing_snr" : spec.variable;
                r.value = snr_db;
                r.target = static_cast<int>(k);
                if (ok) {
                    r.rmse_delay = std::sqrt(se_tau / static_cast<double>(ok));
                    r.rmse_doppler = std::sqrt(se_nu / static_cast<double>(ok));
                }
                r.crb_delay = std::sqrt(tr_tau / static_cast<double>(K));
                r.crb_doppler = std::sqrt(tr_nu / static_cast<double>(K));
                r.failure_rate = static_cast<double>(spec.trials - ok) / n;
                r.snr_db = snr_db;
                r.g_s = g_s;
                r.trials = spec.trials;
                r.matched = ok;
                r.point_seed = point_seed;
                out.rows.push_back(r);
            }
        }
    }
    out.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------
// Output

inline const char* kCsvHeader =
    "study,scheduler,estimator,sweep_variable,sweep_value,target,rmse_delay_s,rmse_doppler_hz,"
    "sqrt_crb_delay_s,sqrt_crb_doppler_hz,crb_gain,failure_rate,snr_db,g_s,trials,matched,point_seed";

inline void write_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
    using detail::fmt_num;
    os << kCsvHeader << '\n';
    for (const auto& r : rows) {
        os << r.study << ',' << r.scheduler << ',' << r.estimator << ',' << r.variable << ',' << fmt_num(r.value) << ','
           << (r.target >= 0 ? std::to_string(r.target) : std::string()) << ',' << fmt_num(r.rmse_delay) << ','
           << fmt_num(r.rmse_doppler) << ',' << fmt_num(r.crb_delay) << ',' << fmt_num(r.crb_doppler) << ','
           << fmt_num(r.gain) << ',' << fmt_num(r.failure_rate) << ',' << fmt_num(r.snr_db) << ',' << fmt_num(r.g_s)
           << ',' << r.trials << ',' << r.matched << ',' << r.point_seed << '\n';
    }
}

inline nlohmann::json manifest_json(const ExperimentConfig& cfg, const SweepSpec& spec, const std::string& command,
                                    double runtime) {
    nlohmann::json j;
    j["version"] = kVersion;
    j["command"] = command;
    nlohmann::json c = nlohmann::json::object();
    for (const auto& [k, v] : cfg.to_pairs()) c[k] = v;
    j["config"] = c;
    nlohmann::json s;
    s["variable"] = spec.variable;
    s["values"] = spec.values;
    s["trials"] = spec.trials;
    s["master_seed"] = spec.master_seed;
    s["threads"] = spec.threads;
    nlohmann::json methods = nlohmann::json::array();
    for (const auto& m : spec.methods) methods.push_back({{"scheduler", m.scheduler}, {"estimator", m.estimator}});
    s["methods"] = methods;
    j["sweep"] = s;
    j["runtime_s"] = runtime;
    return j;
}

struct Manifest {
    ExperimentConfig config;
    SweepSpec spec;
    std::string command;
};

inline Manifest parse_manifest(const nlohmann::json& j) {
    Manifest m;
    m.command = j.at("command").get<std::string>();
    for (const auto& [k, v] : j.at("config").items()) m.config.set(k, v.get<std::string>());
    const auto& s = j.at("sweep");
    m.spec.variable = s.at("variable").get<std::string>();
    m.spec.values = s.at("values").get<std::vector<double>>();
    m.spec.trials = s.at("trials").get<std::size_t>();
    m.spec.master_seed = s.at("master_seed").get<std::uint64_t>();
    m.spec.threads = s.at("threads").get<std::size_t>();
    for (const auto& mm : s.at("methods"))
        m.spec.methods.push_back({mm.at("scheduler").get<std::string>(), mm.at("estimator").get<std::string>()});
    return m;
}

inline Manifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest '" + path + "'");
    return parse_manifest(nlohmann::json::parse(is));
}

/// Writes `path` (CSV) and `path.manifest.json`. I/O errors are rethrown with the path.
inline void emit_results(const std::vector<ResultRow>& rows, const std::string& path, const nlohmann::json& manifest) {
    {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
        write_csv(os, rows);
        if (!os) throw std::runtime_error("write to '" + path + "' failed");
    }
    const std::string mpath = path + ".manifest.json";
    std::ofstream ms(mpath, std::ios::binary);
    if (!ms) throw std::runtime_error("cannot open '" + mpath + "' for writing");
    ms << manifest.dump(2) << '\n';
    if (!ms) throw std::runtime_error("write to '" + mpath + "' failed");
}

} // namespace isacwf
