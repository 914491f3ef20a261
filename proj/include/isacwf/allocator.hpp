#pragma once

#include "isacwf/config.hpp"
#include "isacwf/crb.hpp"
#include "isacwf/errors.hpp"
#include "isacwf/grid.hpp"
#include "isacwf/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace isacwf {

// ---------------------------------------------------------------------------
// Coarse grid

/// Subchannel x slot grouping of a resource grid.
struct CoarseGrid {
    ResourceGrid base;
    std::size_t group_f = 1;
    std::size_t group_t = 1;

    std::size_t M() const { return base.M() / group_f; }
    std::size_t N() const { return base.N() / group_t; }
    std::size_t cells() const { return M() * N(); }
    std::size_t group_size() const { return group_f * group_t; }

    static CoarseGrid make(const ResourceGrid& base, std::size_t group_f, std::size_t group_t) {
        if (group_f < 1 || group_t < 1 || base.M() % group_f != 0 || base.N() % group_t != 0)
            throw std::invalid_argument("coarse grouping " + std::to_string(group_f) + "x" + std::to_string(group_t) +
                                        " does not divide the " + std::to_string(base.M()) + "x" +
                                        std::to_string(base.N()) + " grid");
        return {base, group_f, group_t};
    }

    /// Finest grouping with at most `max_cells` coarse cells; square groups preferred.
    static CoarseGrid automatic(const ResourceGrid& base, std::size_t max_cells = 400) {
        std::vector<std::size_t> df, dt;
        for (std::size_t d = 1; d <= base.M(); ++d)
            if (base.M() % d == 0) df.push_back(d);
        for (std::size_t d = 1; d <= base.N(); ++d)
            if (base.N() % d == 0) dt.push_back(d);
        std::size_t best_f = base.M(), best_t = base.N();
        std::size_t best_cells = 1;
        double best_skew = std::numeric_limits<double>::infinity();
        for (auto gf : df)
            for (auto gt : dt) {
                const std::size_t c = (base.M() / gf) * (base.N() / gt);
                if (c > max_cells) continue;
                const double skew = std::abs(std::log(static_cast<double>(gf) / static_cast<double>(gt)));
                if (c > best_cells || (c == best_cells && skew < best_skew)) {
                    best_cells = c;
                    best_skew = skew;
                    best_f = gf;
                    best_t = gt;
                }
            }
        return {base, best_f, best_t};
    }

    /// Replicates a coarse boolean matrix onto the base grid.
    BoolMat expand(const BoolMat& coarse) const {
        BoolMat fine(static_cast<Eigen::Index>(base.M()), static_cast<Eigen::Index>(base.N()));
        for (Eigen::Index n = 0; n < fine.cols(); ++n)
            for (Eigen::Index m = 0; m < fine.rows(); ++m)
                fine(m, n) = coarse(m / static_cast<Eigen::Index>(group_f), n / static_cast<Eigen::Index>(group_t));
        return fine;
    }
};

// ---------------------------------------------------------------------------
// Spectral-efficiency constraint

/**
 * Smallest number of resources meeting the average SE threshold when every
 * allocated resource carries log2(1 + gamma) bit/s/Hz and every other one
 * carries nothing: ceil(L eta / log2(1 + gamma)).
 */
inline std::size_t min_resources_per_ue(double eta_bar, double gamma, std::size_t L) {
    if (eta_bar <= 0.0) return 0;
    const double rate = std::log2(1.0 + gamma);
    if (!(rate > 0.0)) throw InfeasibleError("spectral-efficiency", "per-resource rate log2(1+gamma) is zero");
    const double need = static_cast<double>(L) * eta_bar / rate;
    // Absorb rounding in L*eta/rate before taking the ceiling.
    const auto n = static_cast<std::size_t>(std::ceil(need * (1.0 - 1e-12)));
    if (n > L)
        throw InfeasibleError("spectral-efficiency", "needs " + std::to_string(n) + " of " + std::to_string(L) +
                                                         " resources (SE threshold exceeds per-resource capacity)");
    return n;
}

// ---------------------------------------------------------------------------
// Problem

struct AllocationProblem {
    CoarseGrid coarse;
    std::vector<TargetParams> targets;
    double eps_tau = 0.5, eps_nu = 0.5;
    double mu = 0.25;
    double eta_bar = 4.0;
    double sigma2 = 1.0, sigma_z2 = 1.0, sigma_w2 = 1.0;
    double delay_norm = 1.0;    // Delta tau
    double doppler_norm = 1.0;  // Delta nu
    double cond_cap = kDefaultCondCap;
    std::size_t relax_max_iters = 500;
    double relax_tol = 1e-6;

    std::size_t K() const { return targets.size(); }

    /// Per-UE minimum counts on the fine grid.
    std::vector<std::size_t> n_min_fine() const {
        std::vector<std::size_t> out;
        for (const auto& t : targets)
            out.push_back(min_resources_per_ue(eta_bar, sigma2 * t.comm_gain() / sigma_z2, coarse.base.cells()));
        return out;
    }

    /// Per-UE minimum counts in coarse cells.
    std::vector<std::size_t> n_min_coarse() const {
        auto f = n_min_fine();
        for (auto& v : f) v = (v + coarse.group_size() - 1) / coarse.group_size();
        return f;
    }

    /// Coarse cells that may be used under the occupancy limit.
    std::size_t budget_coarse() const {
        return static_cast<std::size_t>(std::floor(mu * static_cast<double>(coarse.cells()) * (1.0 + 1e-12)));
    }

    /// UE service order: higher path loss (smaller link gain) first.
    std::vector<std::size_t> ue_priority() const {
        std::vector<std::size_t> order(K());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return targets[a].comm_gain() < targets[b].comm_gain();
        });
        return order;
    }

    void check_feasible() const {
        const auto nmin = n_min_coarse();
        const std::size_t need = std::accumulate(nmin.begin(), nmin.end(), std::size_t{0});
        const std::size_t have = budget_coarse();
        if (need > have)
            throw InfeasibleError("occupancy", "spectral-efficiency minimums need " + std::to_string(need) +
                                                   " coarse cells but occupancy allows " + std::to_string(have));
        if (have == 0) throw InfeasibleError("occupancy", "occupancy admits no coarse cell");
    }
};

/// Builds a design problem for `targets` from the run configuration.
inline AllocationProblem make_problem(const ExperimentConfig& cfg, std::vector<TargetParams> targets) {
    const auto grid = cfg.grid();
    AllocationProblem p;
    p.coarse = (cfg.group_f && cfg.group_t) ? CoarseGrid::make(grid, cfg.group_f, cfg.group_t)
                                            : CoarseGrid::automatic(grid, cfg.max_coarse_cells);
    p.targets = std::move(targets);
    p.eps_tau = cfg.eps_tau;
    p.eps_nu = cfg.eps_nu;
    p.mu = cfg.mu;
    p.eta_bar = cfg.eta_bar;
    p.sigma2 = cfg.resource_power();
    p.sigma_z2 = cfg.sigma_z2;
    p.sigma_w2 = cfg.sigma_w2;
    p.delay_norm = cfg.delay_norm();
    p.doppler_norm = cfg.doppler_norm_value();
    p.cond_cap = cfg.cond_cap;
    p.relax_max_iters = cfg.relax_max_iters;
    p.relax_tol = cfg.relax_tol;
    return p;
}

// ---------------------------------------------------------------------------
// FIM as an affine function of the coarse allocation

/**
 * F(a) = sum_c a_c G_c in normalized coordinates (tau / Delta tau, nu / Delta nu),
 * where G_c is the information contributed by coarse cell c. In these
 * coordinates the weighted design objective is tr(W F^-1) with
 * W = diag(eps_tau I, eps_nu I).
 */
class FimModel {
public:
    explicit FimModel(const AllocationProblem& p) : problem_(&p) {
        const auto& grid = p.coarse.base;
        const auto K = static_cast<Eigen::Index>(p.K());
        if (K == 0) throw std::invalid_argument("allocation problem has no targets");
        const auto M = static_cast<Eigen::Index>(grid.M()), N = static_cast<Eigen::Index>(grid.N());
        const auto Mc = static_cast<Eigen::Index>(p.coarse.M());
        const auto L = p.coarse.cells();
        dim_ = 2 * K;
        cells_.assign(L, Eigen::MatrixXd::Zero(dim_, dim_));

        std::vector<SteeringPair> st;
        for (const auto& t : p.targets) st.push_back(steering_vectors(grid, t.tau, t.nu));

        const double c = 2.0 * p.sigma2 / p.sigma_w2 * 4.0 * kPi * kPi;
        const double su = grid.delta_f() * p.delay_norm;  // d(phase)/d(u) per unit m, over 2 pi
        const double sv = grid.T() * p.doppler_norm;
        for (Eigen::Index k = 0; k < K; ++k)
            for (Eigen::Index l = k; l < K; ++l) {
                const auto cr = coupled_responses(st[static_cast<std::size_t>(k)], st[static_cast<std::size_t>(l)]);
                const cd bb = p.targets[static_cast<std::size_t>(k)].beta *
                              std::conj(p.targets[static_cast<std::size_t>(l)].beta);
                for (Eigen::Index n = 0; n < N; ++n) {
                    const double ni = grid.time_index(static_cast<std::size_t>(n));
                    const cd wn = bb * cr.d_nu(n);
                    const Eigen::Index cn = n / static_cast<Eigen::Index>(p.coarse.group_t);
                    for (Eigen::Index m = 0; m < M; ++m) {
                        const double mi = grid.freq_index(static_cast<std::size_t>(m));
                        const double re = std::real(wn * cr.d_tau(m));
                        const auto cm = m / static_cast<Eigen::Index>(p.coarse.group_f);
                        auto& G = cells_[static_cast<std::size_t>(cm + Mc * cn)];
                        G(k, l) += c * su * su * mi * mi * re;
                        G(K + k, K + l) += c * sv * sv * ni * ni * re;
                        // Doppler-by-delay coupling, same sign convention as fim().
                        G(K + k, l) -= c * su * sv * mi * ni * re;
                        if (l != k) G(K + l, k) -= c * su * sv * mi * ni * re;
                    }
                }
            }
        for (auto& G : cells_) {
            // mirror the lower/upper halves of each symmetric block
            for (Eigen::Index k = 0; k < K; ++k)
                for (Eigen::Index l = k + 1; l < K; ++l) {
                    G(l, k) = G(k, l);
                    G(K + l, K + k) = G(K + k, K + l);
                }
            // the full matrix is symmetric: upper-right is the transpose of lower-left
            G.topRightCorner(K, K) = G.bottomLeftCorner(K, K).transpose();
        }

        weights_ = Eigen::VectorXd(dim_);
        weights_.head(K).setConstant(p.eps_tau);
        weights_.tail(K).setConstant(p.eps_nu);

        Eigen::MatrixXd total = Eigen::MatrixXd::Zero(dim_, dim_);
        for (const auto& G : cells_) total += G;
        reg_ = 1e-12 * total.trace() / static_cast<double>(dim_);
    }

    std::size_t cells() const { return cells_.size(); }
    Eigen::Index dim() const { return dim_; }
    const Eigen::MatrixXd& cell(std::size_t c) const { return cells_[c]; }
    const AllocationProblem& problem() const { return *problem_; }

    Eigen::MatrixXd information(std::span<const double> a) const {
        Eigen::MatrixXd F = Eigen::MatrixXd::Zero(dim_, dim_);
        for (std::size_t c = 0; c < cells_.size(); ++c)
            if (a[c] != 0.0) F += a[c] * cells_[c];
        return F;
    }

    /// tr(W F^-1), +inf unless F is numerically positive definite.
    double relaxed_value(const Eigen::MatrixXd& F, Eigen::MatrixXd* inverse = nullptr) const {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(F);
        if (ldlt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
        const auto d = ldlt.vectorD();
        // Scale-free positivity check on the pivots.
        if (!(d.minCoeff() > 1e-14 * d.cwiseAbs().maxCoeff())) return std::numeric_limits<double>::infinity();
        Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(dim_, dim_));
        const double v = (weights_.asDiagonal() * inv).trace();
        if (inverse) *inverse = std::move(inv);
        return v;
    }

    /// tr(W (F + delta I)^-1) with a tiny ridge, finite even for rank-deficient F.
    double regularized_value(const Eigen::MatrixXd& F) const {
        Eigen::MatrixXd Fr = F;
        Fr.diagonal().array() += reg_;
        return relaxed_value(Fr);
    }

    /// Exact objective through the CRB Schur complements; +inf if singular.
    double exact_value(const Eigen::MatrixXd& F) const {
        auto blocks = FimBlocks::from_matrix(F);
        auto c = try_crb(blocks, problem_->cond_cap);
        if (!c) return std::numeric_limits<double>::infinity();
        return problem_->eps_tau * c->tau.trace() + problem_->eps_nu * c->nu.trace();
    }

    double exact_value(const BoolMat& coarse_union) const {
        std::vector<double> a(cells_.size());
        for (std::size_t c = 0; c < a.size(); ++c) a[c] = coarse_union(static_cast<Eigen::Index>(c)) ? 1.0 : 0.0;
        return exact_value(information(a));
    }

    /// d tr(W F^-1) / d a_c = -tr(F^-1 W F^-1 G_c)
    void gradient(const Eigen::MatrixXd& Finv, std::span<double> g) const {
        const Eigen::MatrixXd P = Finv * weights_.asDiagonal() * Finv;
        for (std::size_t c = 0; c < cells_.size(); ++c) g[c] = -(P.cwiseProduct(cells_[c])).sum();
    }

private:
    const AllocationProblem* problem_;
    Eigen::Index dim_ = 0;
    std::vector<Eigen::MatrixXd> cells_;
    Eigen::VectorXd weights_;
    double reg_ = 0.0;
};

// ---------------------------------------------------------------------------
// Node relaxation

/// Per-variable state in a branch-and-bound node.
enum class Fix : std::int8_t { Free = -1, Zero = 0, One = 1 };

struct RelaxationResult {
    std::vector<double> a;  // relaxed allocation at the last iterate
    double value = std::numeric_limits<double>::infinity();  // relaxed objective at `a`
    double bound = -std::numeric_limits<double>::infinity(); // certified lower bound
    std::size_t iterations = 0;
};

namespace detail {

// Euclidean projection onto {lo <= a <= hi, sum a = total} by bisection on the shift.
inline void project_capped_simplex(std::span<const double> y, std::span<const double> lo, std::span<const double> hi,
                                   double total, std::span<double> out) {
    double tlo = std::numeric_limits<double>::infinity(), thi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < y.size(); ++i) {
        tlo = std::min(tlo, y[i] - hi[i]);
        thi = std::max(thi, y[i] - lo[i]);
    }
    auto sum_at = [&](double theta) {
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += std::clamp(y[i] - theta, lo[i], hi[i]);
        return s;
    };
    for (int it = 0; it < 200 && thi - tlo > 1e-15 * std::max(1.0, std::abs(thi)); ++it) {
        const double mid = 0.5 * (tlo + thi);
        if (sum_at(mid) > total) tlo = mid;
        else thi = mid;
    }
    const double theta = 0.5 * (tlo + thi);
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = std::clamp(y[i] - theta, lo[i], hi[i]);
}

// min_s g^T s over the node polytope: fixed ones, plus the `free_ones`
// free variables with the smallest gradient.
inline double linear_minimum(std::span<const double> g, std::span<const Fix> fix, std::size_t free_ones) {
    double v = 0.0;
    std::vector<double> free_g;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (fix[i] == Fix::One) v += g[i];
        else if (fix[i] == Fix::Free) free_g.push_back(g[i]);
    }
    std::partial_sort(free_g.begin(), free_g.begin() + static_cast<std::ptrdiff_t>(free_ones), free_g.end());
    for (std::size_t i = 0; i < free_ones; ++i) v += free_g[i];
    return v;
}

} // namespace detail

/**
 * Convex relaxation of a node: minimize tr(W F(a)^-1) over a in [0,1]^L with
 * the node's fixings and sum(a) = budget, by projected gradient with
 * backtracking. The returned bound is f(a) + min_s grad^T (s - a) over the
 * node polytope, a valid lower bound by convexity at any iterate.
 * Stops early once the bound reaches `cutoff`.
 */
inline RelaxationResult solve_relaxation(const FimModel& model, std::span<const Fix> fix, std::size_t budget,
                                         double cutoff = std::numeric_limits<double>::infinity(),
                                         std::size_t max_iters = 500, double tol = 1e-6) {
    const std::size_t L = model.cells();
    RelaxationResult r;
    std::vector<double> lo(L), hi(L);
    std::size_t ones = 0, nfree = 0;
    for (std::size_t i = 0; i < L; ++i) {
        lo[i] = fix[i] == Fix::One ? 1.0 : 0.0;
        hi[i] = fix[i] == Fix::Zero ? 0.0 : 1.0;
        ones += fix[i] == Fix::One;
        nfree += fix[i] == Fix::Free;
    }
    if (ones > budget || ones + nfree < budget) return r;  // empty node, bound = -inf, value = inf
    const std::size_t free_ones = budget - ones;

    r.a.assign(L, 0.0);
    for (std::size_t i = 0; i < L; ++i)
        r.a[i] = fix[i] == Fix::One ? 1.0 : (fix[i] == Fix::Free ? double(free_ones) / double(nfree) : 0.0);

    Eigen::MatrixXd Finv;
    r.value = model.relaxed_value(model.information(r.a), &Finv);
    if (!std::isfinite(r.value)) {
        // The uniform point dominates every vertex's information range, so
        // every integer completion is singular too.
        r.bound = std::numeric_limits<double>::infinity();
        return r;
    }

    std::vector<double> g(L), y(L), trial(L);
    double step = 0.0;
    for (std::size_t it = 0; it < max_iters; ++it) {
        r.iterations = it + 1;
        model.gradient(Finv, g);
        double ga = 0.0;
        for (std::size_t i = 0; i < L; ++i) ga += g[i] * r.a[i];
        r.bound = std::max(r.bound, r.value + detail::linear_minimum(g, fix, free_ones) - ga);
        if (r.bound >= cutoff) break;
        if (r.value - r.bound <= tol * std::abs(r.value)) break;

        if (step == 0.0) {
            double gmax = 0.0;
            for (std::size_t i = 0; i < L; ++i)
                if (fix[i] == Fix::Free) gmax = std::max(gmax, std::abs(g[i]));
            if (gmax == 0.0) break;
            step = 1.0 / gmax;
        } else {
            step *= 2.0;
        }

        bool moved = false;
        double new_value = r.value;
        Eigen::MatrixXd new_inv;
        for (int bt = 0; bt < 60; ++bt) {
            for (std::size_t i = 0; i < L; ++i) y[i] = r.a[i] - step * g[i];
            detail::project_capped_simplex(y, lo, hi, double(budget), trial);
            double lin = 0.0, sq = 0.0;
            for (std::size_t i = 0; i < L; ++i) {
                const double d = trial[i] - r.a[i];
                lin += g[i] * d;
                sq += d * d;
            }
            if (sq == 0.0) break;
            new_value = model.relaxed_value(model.information(trial), &new_inv);
            if (std::isfinite(new_value) && new_value <= r.value + lin + sq / (2.0 * step)) {
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
        const double change = std::abs(r.value - new_value);
        r.a.swap(trial);
        r.value = new_value;
        Finv = std::move(new_inv);
        if (change <= tol * std::abs(r.value)) {
            // final bound at the accepted point
            model.gradient(Finv, g);
            double ga2 = 0.0;
            for (std::size_t i = 0; i < L; ++i) ga2 += g[i] * r.a[i];
            r.bound = std::max(r.bound, r.value + detail::linear_minimum(g, fix, free_ones) - ga2);
            break;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Solvers

struct SolveBudget {
    std::size_t node_limit = 200;
    double time_limit = 0.0;  // seconds; 0 disables the wall-clock limit
};

struct SolveReport {
    AllocationMask mask;      // per-UE masks on the base grid
    BoolMat coarse_union;     // chosen coarse cells
    double objective = std::numeric_limits<double>::infinity();
    double lower_bound = -std::numeric_limits<double>::infinity();
    double gap = std::numeric_limits<double>::infinity();  // (objective - lower_bound) / objective
    std::size_t nodes = 0;
    double wall_time = 0.0;
    std::string solver;       // bnb | greedy | random | random_contiguous
};

namespace detail {

inline std::vector<std::size_t> split_counts(std::size_t total, std::span<const std::size_t> n_min,
                                             std::span<const std::size_t> order) {
    std::vector<std::size_t> n(n_min.begin(), n_min.end());
    const std::size_t need = std::accumulate(n.begin(), n.end(), std::size_t{0});
    std::size_t rest = total - need;
    const std::size_t K = n.size();
    for (std::size_t i = 0; i < K; ++i) n[order[i]] += rest / K;
    for (std::size_t i = 0; i < rest % K; ++i) n[order[i]] += 1;
    return n;
}

// Labels the chosen coarse cells with UEs (consecutive runs in vec order,
// higher path-loss UE first) and expands them to the base grid.
inline AllocationMask label_and_expand(const AllocationProblem& p, const BoolMat& coarse_union) {
    const auto nmin = p.n_min_coarse();
    const auto order = p.ue_priority();
    const auto chosen = static_cast<std::size_t>(coarse_union.count());
    const auto counts = split_counts(chosen, nmin, order);
    std::vector<BoolMat> layers(p.K(), BoolMat::Constant(coarse_union.rows(), coarse_union.cols(), false));
    std::size_t slot = 0, taken = 0;
    for (Eigen::Index c = 0; c < coarse_union.size(); ++c) {
        if (!coarse_union(c)) continue;
        while (slot < order.size() && taken == counts[order[slot]]) {
            ++slot;
            taken = 0;
        }
        layers[order[slot]](c) = true;
        ++taken;
    }
    std::vector<BoolMat> fine;
    for (const auto& l : layers) fine.push_back(p.coarse.expand(l));
    return AllocationMask(p.coarse.base, std::move(fine));
}

inline BoolMat to_coarse_mask(const AllocationProblem& p, std::span<const std::size_t> cells) {
    BoolMat u = BoolMat::Constant(static_cast<Eigen::Index>(p.coarse.M()), static_cast<Eigen::Index>(p.coarse.N()), false);
    for (auto c : cells) u(static_cast<Eigen::Index>(c)) = true;
    return u;
}

inline double report_objective(const AllocationProblem& p, const AllocationMask& mask) {
    auto c = try_crb(fim(mask, p.targets, p.sigma2, p.sigma_w2), p.cond_cap);
    if (!c) return std::numeric_limits<double>::infinity();
    return design_objective(*c, p.eps_tau, p.eps_nu, p.delay_norm, p.doppler_norm);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace detail

/**
 * Greedy add-then-swap heuristic on the coarse grid.
 *
 * Cells are added one at a time (best decrease of the objective) up to the
 * occupancy budget, which also passes through the SE-minimal count; then
 * single-cell swaps are applied while any of them improves the objective.
 */
inline SolveReport greedy_allocation(const AllocationProblem& p, const FimModel* shared_model = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    p.check_feasible();
    std::optional<FimModel> own;
    if (!shared_model) own.emplace(p);
    const FimModel& model = shared_model ? *shared_model : *own;
    const std::size_t L = model.cells();
    const std::size_t U = p.budget_coarse();

    std::vector<char> in(L, 0);
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(model.dim(), model.dim());
    for (std::size_t step = 0; step < U; ++step) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t pick = L;
        for (std::size_t c = 0; c < L; ++c) {
            if (in[c]) continue;
            const double v = model.regularized_value(F + model.cell(c));
            if (pick == L || v < best) {
                best = v;
                pick = c;
            }
        }
        in[pick] = 1;
        F += model.cell(pick);
    }

    double current = model.regularized_value(F);
    for (std::size_t pass = 0; pass < 4 * L; ++pass) {
        double best = current;
        std::size_t best_out = L, best_in = L;
        for (std::size_t o = 0; o < L; ++o) {
            if (!in[o]) continue;
            const Eigen::MatrixXd Fo = F - model.cell(o);
            for (std::size_t c = 0; c < L; ++c) {
                if (in[c]) continue;
                const double v = model.regularized_value(Fo + model.cell(c));
                if (v < best * (1.0 - 1e-12)) {
                    best = v;
                    best_out = o;
                    best_in = c;
                }
            }
        }
        if (best_out == L) break;
        in[best_out] = 0;
        in[best_in] = 1;
        F += model.cell(best_in) - model.cell(best_out);
        current = best;
    }

    std::vector<std::size_t> cells;
    for (std::size_t c = 0; c < L; ++c)
        if (in[c]) cells.push_back(c);
    SolveReport rep;
    rep.coarse_union = detail::to_coarse_mask(p, cells);
    rep.mask = detail::label_and_expand(p, rep.coarse_union);
    rep.objective = detail::report_objective(p, rep.mask);
    rep.solver = "greedy";
    rep.nodes = 0;
    rep.wall_time = detail::seconds_since(t0);
    return rep;
}

/**
 * Branch-and-bound over the coarse cells (no cutting planes).
 *
 * The objective only depends on the union of the UE masks and is monotone
 * in the allocation, so nodes fix the union to exactly the occupancy budget;
 * SE minimums are met afterwards by labeling. Branches on the most
 * fractional relaxed variable, depth-first, rounding direction first. The
 * incumbent starts from the greedy solution and is refreshed by rounding
 * every node relaxation.
 */
inline SolveReport optimize_allocation(const AllocationProblem& p, SolveBudget budget = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    p.check_feasible();
    const FimModel model(p);
    const std::size_t L = model.cells();
    const std::size_t U = p.budget_coarse();
    const std::size_t Mc = p.coarse.M();

    auto seed = greedy_allocation(p, &model);
    std::vector<char> best_cells(L, 0);
    for (std::size_t c = 0; c < L; ++c) best_cells[c] = seed.coarse_union(static_cast<Eigen::Index>(c));
    double incumbent = model.exact_value(seed.coarse_union);

    auto try_incumbent = [&](const std::vector<char>& cells) {
        BoolMat u(static_cast<Eigen::Index>(Mc), static_cast<Eigen::Index>(p.coarse.N()));
        for (std::size_t c = 0; c < L; ++c) u(static_cast<Eigen::Index>(c)) = cells[c] != 0;
        const double v = model.exact_value(u);
        if (v < incumbent) {
            incumbent = v;
            best_cells = cells;
        }
    };
    auto prunable = [&](double bound) { return bound >= incumbent - 1e-10 * std::abs(incumbent); };

    // Top-U rounding of a relaxed point: fixed ones plus the largest free values.
    auto round_point = [&](const std::vector<Fix>& fix, const std::vector<double>& a, std::size_t ones) {
        std::vector<std::size_t> free_idx;
        for (std::size_t c = 0; c < L; ++c)
            if (fix[c] == Fix::Free) free_idx.push_back(c);
        std::stable_sort(free_idx.begin(), free_idx.end(), [&](std::size_t x, std::size_t y) { return a[x] > a[y]; });
        std::vector<char> cells(L, 0);
        for (std::size_t c = 0; c < L; ++c) cells[c] = fix[c] == Fix::One;
        for (std::size_t i = 0; i < U - ones; ++i) cells[free_idx[i]] = 1;
        return cells;
    };

    struct Node {
        std::vector<Fix> fix;
        double parent_bound;
    };
    std::vector<Node> stack;
    stack.push_back({std::vector<Fix>(L, Fix::Free), -std::numeric_limits<double>::infinity()});
    std::size_t nodes = 0;
    bool exhausted = false;

    while (!stack.empty()) {
        if (nodes >= budget.node_limit ||
            (budget.time_limit > 0.0 && detail::seconds_since(t0) >= budget.time_limit)) {
            exhausted = true;
            break;
        }
        Node node = std::move(stack.back());
        stack.pop_back();
        if (prunable(node.parent_bound)) continue;
        ++nodes;

        std::size_t ones = 0, nfree = 0;
        for (auto f : node.fix) {
            ones += f == Fix::One;
            nfree += f == Fix::Free;
        }
        if (ones > U || ones + nfree < U) continue;
        if (ones == U || ones + nfree == U) {
            std::vector<char> cells(L, 0);
            for (std::size_t c = 0; c < L; ++c)
                cells[c] = node.fix[c] == Fix::One || (node.fix[c] == Fix::Free && ones < U);
            try_incumbent(cells);
            continue;
        }

        auto rel = solve_relaxation(model, node.fix, U, incumbent, p.relax_max_iters, p.relax_tol);
        if (prunable(rel.bound)) continue;
        try_incumbent(round_point(node.fix, rel.a, ones));
        if (prunable(rel.bound)) continue;

        std::size_t branch = L;
        double closest = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < L; ++c) {
            if (node.fix[c] != Fix::Free) continue;
            const double d = std::abs(rel.a[c] - 0.5);
            if (d < closest) {
                closest = d;
                branch = c;
            }
        }
        Node up{node.fix, rel.bound}, down{std::move(node.fix), rel.bound};
        up.fix[branch] = Fix::One;
        down.fix[branch] = Fix::Zero;
        if (rel.a[branch] >= 0.5) {
            stack.push_back(std::move(down));
            stack.push_back(std::move(up));
        } else {
            stack.push_back(std::move(up));
            stack.push_back(std::move(down));
        }
    }

    SolveReport rep;
    std::vector<std::size_t> cells;
    for (std::size_t c = 0; c < L; ++c)
        if (best_cells[c]) cells.push_back(c);
    rep.coarse_union = detail::to_coarse_mask(p, cells);
    rep.mask = detail::label_and_expand(p, rep.coarse_union);
    rep.objective = detail::report_objective(p, rep.mask);
    rep.nodes = nodes;
    rep.solver = "bnb";
    if (!exhausted) {
        rep.lower_bound = incumbent;
        rep.gap = 0.0;
    } else {
        double lb = incumbent;
        for (const auto& n : stack) lb = std::min(lb, n.parent_bound);
        rep.lower_bound = lb;
        rep.gap = std::isfinite(lb) && incumbent > 0 ? (incumbent - lb) / incumbent
                                                     : std::numeric_limits<double>::infinity();
    }
    rep.wall_time = detail::seconds_since(t0);
    return rep;
}

// ---------------------------------------------------------------------------
// Baseline schedulers (base grid)

namespace detail {

inline std::vector<std::size_t> count_priority(std::span<const std::size_t> n_min) {
    std::vector<std::size_t> order(n_min.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return n_min[a] > n_min[b]; });
    return order;
}

inline std::size_t occupancy_budget(const ResourceGrid& grid, double mu) {
    return static_cast<std::size_t>(std::floor(mu * static_cast<double>(grid.cells()) * (1.0 + 1e-12)));
}

} // namespace detail

/// Uniformly random disjoint per-UE resource sets, floor(mu L) cells in total.
inline AllocationMask random_scheduler(const ResourceGrid& grid, std::size_t K, double mu,
                                       std::span<const std::size_t> n_min, std::uint64_t seed) {
    if (n_min.size() != K) throw std::invalid_argument("n_min must have one entry per UE");
    const std::size_t L = grid.cells();
    const std::size_t U = detail::occupancy_budget(grid, mu);
    const std::size_t need = std::accumulate(n_min.begin(), n_min.end(), std::size_t{0});
    if (need > U)
        throw InfeasibleError("occupancy", "minimum counts " + std::to_string(need) + " exceed budget " + std::to_string(U));

    Rng rng(seed);
    std::vector<std::size_t> idx(L);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < U; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, L - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    const auto order = detail::count_priority(n_min);
    const auto counts = detail::split_counts(U, n_min, order);
    std::vector<BoolMat> layers(K, BoolMat::Constant(static_cast<Eigen::Index>(grid.M()), static_cast<Eigen::Index>(grid.N()), false));
    std::size_t pos = 0;
    for (auto k : order)
        for (std::size_t i = 0; i < counts[k]; ++i) layers[k](static_cast<Eigen::Index>(idx[pos++])) = true;
    return AllocationMask(grid, std::move(layers));
}

/**
 * Random blocks of `block` consecutive subcarriers within one symbol,
 * floor(mu L / block) of them, placed without overlap. Each UE gets enough
 * whole blocks for its minimum when that fits; otherwise remainders go into
 * shorter blocks so the minimums are still met without exceeding mu.
 * Positions are drawn by rejection sampling; after `retries_per_block`
 * misses the block goes to a uniformly chosen free position, and
 * PlacementError is raised only when no free position is left.
 */
inline AllocationMask random_contiguous_scheduler(const ResourceGrid& grid, std::size_t K, double mu, std::size_t block,
                                                  std::span<const std::size_t> n_min, std::uint64_t seed,
                                                  std::size_t retries_per_block = 2000) {
    if (block < 1) throw std::invalid_argument("block size must be >= 1");
    if (block > grid.M()) throw std::invalid_argument("block size exceeds subcarrier count");
    if (n_min.size() != K) throw std::invalid_argument("n_min must have one entry per UE");
    const std::size_t U = detail::occupancy_budget(grid, mu);
    const std::size_t need = std::accumulate(n_min.begin(), n_min.end(), std::size_t{0});
    if (need > U)
        throw InfeasibleError("occupancy", "minimum counts " + std::to_string(need) + " exceed budget " + std::to_string(U));
    const auto order = detail::count_priority(n_min);

    struct Plan {
        std::size_t ue, length;
    };
    std::vector<Plan> plan;
    const std::size_t nblocks = U / block;
    std::size_t whole_needed = 0;
    for (auto v : n_min) whole_needed += (v + block - 1) / block;
    if (whole_needed <= nblocks) {
        std::vector<std::size_t> nb(K);
        for (std::size_t k = 0; k < K; ++k) nb[k] = (n_min[k] + block - 1) / block;
        for (std::size_t i = 0; i < nblocks - whole_needed; ++i) nb[order[i % K]] += 1;
        for (auto k : order)
            for (std::size_t i = 0; i < nb[k]; ++i) plan.push_back({k, block});
    } else {
        std::size_t used = 0;
        for (auto k : order) {
            for (std::size_t i = 0; i < n_min[k] / block; ++i) plan.push_back({k, block});
            if (n_min[k] % block) plan.push_back({k, n_min[k] % block});
            used += n_min[k];
        }
        for (std::size_t i = 0; used + block <= U; ++i, used += block) plan.push_back({order[i % K], block});
    }

    Rng rng(seed);
    BoolMat taken = BoolMat::Constant(static_cast<Eigen::Index>(grid.M()), static_cast<Eigen::Index>(grid.N()), false);
    std::vector<BoolMat> layers(K, taken);
    std::uniform_int_distribution<std::size_t> col(0, grid.N() - 1);
    for (const auto& b : plan) {
        std::uniform_int_distribution<std::size_t> row(0, grid.M() - b.length);
        bool placed = false;
        for (std::size_t attempt = 0; attempt < retries_per_block && !placed; ++attempt) {
            const auto n = static_cast<Eigen::Index>(col(rng));
            const auto m0 = static_cast<Eigen::Index>(row(rng));
            const auto len = static_cast<Eigen::Index>(b.length);
            if (taken.col(n).segment(m0, len).any()) continue;
            taken.col(n).segment(m0, len).setConstant(true);
            layers[b.ue].col(n).segment(m0, len).setConstant(true);
            placed = true;
        }
        if (placed) continue;
        // Rejection sampling stalled: draw uniformly among the free positions.
        std::vector<std::pair<Eigen::Index, Eigen::Index>> free;
        const auto len = static_cast<Eigen::Index>(b.length);
        for (Eigen::Index n = 0; n < taken.cols(); ++n)
            for (Eigen::Index m0 = 0; m0 + len <= taken.rows(); ++m0)
                if (!taken.col(n).segment(m0, len).any()) free.push_back({m0, n});
        if (free.empty())
            throw PlacementError("no free run of " + std::to_string(b.length) + " subcarriers left for the next block");
        const auto [m0, n] = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
        taken.col(n).segment(m0, len).setConstant(true);
        layers[b.ue].col(n).segment(m0, len).setConstant(true);
    }
    return AllocationMask(grid, std::move(layers));
}

/// Wraps a baseline mask in a report scored with the design objective.
inline SolveReport score_mask(const AllocationProblem& p, AllocationMask mask, std::string solver) {
    SolveReport r;
    r.objective = detail::report_objective(p, mask);
    r.mask = std::move(mask);
    r.solver = std::move(solver);
    return r;
}

} // namespace isacwf
