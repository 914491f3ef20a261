#pragma once

#include "isacwf/grid.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace isacwf {

/**
 * All knobs of one run. Defaults are the paper-scale simulation parameters
 * (30 GHz carrier, 1000x1000 grid at 1 MHz spacing, 43 dBm, mu = 0.25,
 * R = 50 m, block size 10, SE threshold 4 bit/s/Hz).
 *
 * The target list is given by `ranges` and `velocities` (one entry per
 * target/UE); K is their length.
 */
struct ExperimentConfig {
    // grid
    std::size_t M = 1000;
    std::size_t N = 1000;
    double delta_f = 1e6;
    double cp_duration = 500e-9;

    // radio
    double f0 = 30e9;
    double p_tot_dbm = 43.0;
    double sigma2 = 0.0;        // per-resource power [W]; 0 derives P_tot / (mu M N)
    double sigma_w2 = 1e-14;    // sensing noise per resource [W]
    double sigma_z2 = 2e-26;    // UE noise per resource [W]
    std::string constellation = "qpsk";

    // targets / UEs
    std::vector<double> ranges{50.0, 50.15};
    std::vector<double> velocities{10.0, 10.0};
    std::vector<double> comm_gains_db{};  // empty: free-space gain at each range
    std::size_t comm_paths = 1;
    double reflectivity = 1.0;

    // design problem
    double mu = 0.25;
    double eta_bar = 4.0;
    double eps_tau = 0.5;
    double eps_nu = 0.5;
    std::string doppler_norm = "burst";  // burst: 1/(N T), symbol: 1/T
    std::size_t group_f = 0;             // 0 picks the finest grouping with <= max_coarse_cells
    std::size_t group_t = 0;
    std::size_t max_coarse_cells = 400;
    std::size_t block_size = 10;
    std::string solver = "bnb";
    std::size_t bnb_node_limit = 200;
    double bnb_time_limit = 0.0;  // seconds, 0 = none (keeps runs reproducible)
    std::size_t relax_max_iters = 500;
    double relax_tol = 1e-6;
    double cond_cap = 1e12;

    // estimation
    double schatten_p = 0.5;
    double lambda_scale = 0.9;
    double lambda_decay = 0.9;
    std::size_t completion_max_iters = 200;
    double completion_tol = 1e-4;
    std::size_t peak_guard = 2;
    bool peak_refine = true;
    std::string estimator = "completion";

    // sweeps
    std::vector<double> gain_spacings{0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0};
    std::vector<double> snr_db{10.0, 15.0, 20.0, 25.0, 30.0, 35.0};
    std::size_t trials = 20;
    std::size_t threads = 1;
    double rmse_delay_spacing = 4.0;    // bins
    double rmse_doppler_spacing = 2.0;  // bins

    // seeds
    std::uint64_t rng_seed = 1;
    std::uint64_t solver_seed = 1;

    std::size_t K() const { return ranges.size(); }

    ResourceGrid grid() const { return build_grid(M, N, delta_f, cp_duration); }

    double p_tot_watts() const { return std::pow(10.0, (p_tot_dbm - 30.0) / 10.0); }

    /// Per-resource power, spreading P_tot uniformly over the mu M N allocatable cells.
    double resource_power() const {
        if (sigma2 > 0.0) return sigma2;
        return p_tot_watts() / (mu * static_cast<double>(M) * static_cast<double>(N));
    }

    double delay_norm() const { return 1.0 / (static_cast<double>(M) * delta_f); }
    double doppler_norm_value() const {
        const double T = 1.0 / delta_f;
        return doppler_norm == "symbol" ? 1.0 / T : 1.0 / (static_cast<double>(N) * T);
    }

    double wavelength() const { return kSpeedOfLight / f0; }

    /// Mean scattering power, radar-equation form proportional to f0^-2 R^-4.
    double omega_beta(double range) const {
        const double lam = wavelength();
        return reflectivity * lam * lam / (std::pow(4.0 * kPi, 3) * std::pow(range, 4));
    }

    /// Total link gain |alpha_k|^2 of UE k.
    double comm_gain(std::size_t k) const {
        if (!comm_gains_db.empty()) return std::pow(10.0, comm_gains_db.at(k) / 10.0);
        const double a = wavelength() / (4.0 * kPi * ranges.at(k));
        return a * a;
    }

    void validate() const {
        auto fail = [](const std::string& s) { throw std::invalid_argument("config: " + s); };
        if (M < 1 || N < 1) fail("M and N must be >= 1");
        if (!(delta_f > 0)) fail("delta_f must be positive");
        if (!(mu > 0.0 && mu <= 1.0)) fail("mu must lie in (0, 1]");
        if (!(schatten_p > 0.0 && schatten_p <= 1.0)) fail("schatten_p must lie in (0, 1]");
        if (eps_tau < 0 || eps_tau > 1 || eps_nu < 0 || eps_nu > 1) fail("CRB weights must lie in [0, 1]");
        if (!(eps_tau + eps_nu > 0)) fail("eps_tau + eps_nu must be positive");
        if (ranges.empty()) fail("at least one target range is required");
        if (velocities.size() != ranges.size()) fail("ranges and velocities must have the same length");
        if (!comm_gains_db.empty() && comm_gains_db.size() != ranges.size())
            fail("comm_gains_db must be empty or have one entry per target");
        for (double r : ranges)
            if (!(r > 0)) fail("ranges must be positive");
        if (doppler_norm != "burst" && doppler_norm != "symbol") fail("doppler_norm must be burst or symbol");
        if (block_size < 1) fail("block_size must be >= 1");
        if (comm_paths < 1) fail("comm_paths must be >= 1");
        if (!(lambda_decay > 0 && lambda_decay < 1)) fail("lambda_decay must lie in (0, 1)");
        if (!(completion_tol > 0)) fail("completion_tol must be positive");
        if (trials < 1) fail("trials must be >= 1");
        if (threads < 1) fail("threads must be >= 1");
        if (sigma_w2 < 0 || sigma_z2 <= 0) fail("noise powers must be positive");
        if (solver != "bnb" && solver != "greedy") fail("solver must be bnb or greedy");
        if (estimator != "completion" && estimator != "linear" && estimator != "zerofill")
            fail("estimator must be completion, linear or zerofill");
    }

    // ---- key/value persistence ------------------------------------------------

    /// Every key, in a fixed order, with its value rendered losslessly.
    std::vector<std::pair<std::string, std::string>> to_pairs() const {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& f : fields()) out.emplace_back(f.name, f.get(*this));
        return out;
    }

    void set(const std::string& key, const std::string& value) {
        for (const auto& f : fields()) {
            if (f.name == key) {
                f.set(*this, value);
                return;
            }
        }
        throw std::invalid_argument("config: unknown key '" + key + "'");
    }

    static ExperimentConfig paper_profile() { return ExperimentConfig{}; }

    /// Desk-scale preset: 100x100 grid at the same subcarrier spacing.
    static ExperimentConfig desk_profile() {
        ExperimentConfig c;
        c.M = 100;
        c.N = 100;
        return c;
    }

    static ExperimentConfig profile(const std::string& name) {
        if (name == "paper") return paper_profile();
        if (name == "desk") return desk_profile();
        throw std::invalid_argument("unknown profile '" + name + "' (expected desk or paper)");
    }

private:
    struct Field {
        std::string name;
        std::function<std::string(const ExperimentConfig&)> get;
        std::function<void(ExperimentConfig&, const std::string&)> set;
    };

    static std::string fmt(double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return buf;
    }
    static double to_double(const std::string& s) {
        std::size_t pos = 0;
        double v = 0;
        try {
            v = std::stod(s, &pos);
        } catch (const std::exception&) {
            throw std::invalid_argument("config: '" + s + "' is not a number");
        }
        if (pos != s.size()) throw std::invalid_argument("config: '" + s + "' is not a number");
        return v;
    }
    static std::uint64_t to_u64(const std::string& s) {
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size())
            throw std::invalid_argument("config: '" + s + "' is not a non-negative integer");
        return v;
    }
    static bool to_bool(const std::string& s) {
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw std::invalid_argument("config: '" + s + "' is not a boolean");
    }
    static std::vector<double> to_list(const std::string& s) {
        std::vector<double> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) {
            auto b = item.find_first_not_of(" \t");
            auto e = item.find_last_not_of(" \t");
            if (b == std::string::npos) continue;
            out.push_back(to_double(item.substr(b, e - b + 1)));
        }
        return out;
    }
    static std::string from_list(const std::vector<double>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ',';
            s += fmt(v[i]);
        }
        return s;
    }

    static const std::vector<Field>& fields() {
        // clang-format off
#define ISACWF_DBL(name) Field{#name, [](const ExperimentConfig& c) { return fmt(c.name); }, \
                               [](ExperimentConfig& c, const std::string& v) { c.name = to_double(v); }}
#define ISACWF_SZ(name) Field{#name, [](const ExperimentConfig& c) { return std::to_string(c.name); }, \
                              [](ExperimentConfig& c, const std::string& v) { c.name = static_cast<std::size_t>(to_u64(v)); }}
#define ISACWF_U64(name) Field{#name, [](const ExperimentConfig& c) { return std::to_string(c.name); }, \
                               [](ExperimentConfig& c, const std::string& v) { c.name = to_u64(v); }}
#define ISACWF_STR(name) Field{#name, [](const ExperimentConfig& c) { return c.name; }, \
                               [](ExperimentConfig& c, const std::string& v) { c.name = v; }}
#define ISACWF_BOOL(name) Field{#name, [](const ExperimentConfig& c) { return std::string(c.name ? "true" : "false"); }, \
                                [](ExperimentConfig& c, const std::string& v) { c.name = to_bool(v); }}
#define ISACWF_LIST(name) Field{#name, [](const ExperimentConfig& c) { return from_list(c.name); }, \
                                [](ExperimentConfig& c, const std::string& v) { c.name = to_list(v); }}
        static const std::vector<Field> f = {
            ISACWF_SZ(M), ISACWF_SZ(N), ISACWF_DBL(delta_f), ISACWF_DBL(cp_duration),
            ISACWF_DBL(f0), ISACWF_DBL(p_tot_dbm), ISACWF_DBL(sigma2), ISACWF_DBL(sigma_w2),
            ISACWF_DBL(sigma_z2), ISACWF_STR(constellation),
            ISACWF_LIST(ranges), ISACWF_LIST(velocities), ISACWF_LIST(comm_gains_db),
            ISACWF_SZ(comm_paths), ISACWF_DBL(reflectivity),
            ISACWF_DBL(mu), ISACWF_DBL(eta_bar), ISACWF_DBL(eps_tau), ISACWF_DBL(eps_nu),
            ISACWF_STR(doppler_norm), ISACWF_SZ(group_f), ISACWF_SZ(group_t), ISACWF_SZ(max_coarse_cells),
            ISACWF_SZ(block_size), ISACWF_STR(solver), ISACWF_SZ(bnb_node_limit), ISACWF_DBL(bnb_time_limit),
            ISACWF_SZ(relax_max_iters), ISACWF_DBL(relax_tol), ISACWF_DBL(cond_cap),
            ISACWF_DBL(schatten_p), ISACWF_DBL(lambda_scale), ISACWF_DBL(lambda_decay),
            ISACWF_SZ(completion_max_iters), ISACWF_DBL(completion_tol), ISACWF_SZ(peak_guard),
            ISACWF_BOOL(peak_refine),
            ISACWF_STR(estimator),
            ISACWF_LIST(gain_spacings), ISACWF_LIST(snr_db), ISACWF_SZ(trials), ISACWF_SZ(threads),
            ISACWF_DBL(rmse_delay_spacing), ISACWF_DBL(rmse_doppler_spacing),
            ISACWF_U64(rng_seed), ISACWF_U64(solver_seed),
        };
#undef ISACWF_DBL
#undef ISACWF_SZ
#undef ISACWF_U64
#undef ISACWF_STR
#undef ISACWF_LIST
#undef ISACWF_BOOL
        // clang-format on
        return f;
    }
};

/**
 * Applies a flat `key = value` document on top of `base`. Blank lines and
 * `#` comments are ignored; unknown keys and malformed lines are errors.
 */
inline ExperimentConfig parse_config(std::istream& is, ExperimentConfig base = {}) {
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        auto trim = [](std::string s) {
            auto x = s.find_first_not_of(" \t\r");
            auto y = s.find_last_not_of(" \t\r");
            return x == std::string::npos ? std::string{} : s.substr(x, y - x + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            base.set(key, value);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    return parse_config(in, std::move(base));
}

inline std::string dump_config(const ExperimentConfig& cfg) {
    std::string s;
    for (const auto& [k, v] : cfg.to_pairs()) s += k + " = " + v + "\n";
    return s;
}

} // namespace isacwf
