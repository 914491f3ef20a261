#pragma once

#include "isacwf/channel.hpp"
#include "isacwf/errors.hpp"
#include "isacwf/grid.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace isacwf {

// ---------------------------------------------------------------------------
// Least squares on the allocated cells

struct PartialChannel {
    CMat values;      // zero where not observed
    BoolMat observed;
};

inline PartialChannel ls_channel_estimate(const RxMatrix& R, const CMat& X, const AllocationMask& mask) {
    const auto& u = mask.union_mask();
    if (R.values.rows() != u.rows() || R.values.cols() != u.cols() || X.rows() != u.rows() || X.cols() != u.cols())
        throw std::invalid_argument("received signal, waveform and mask shapes differ");
    PartialChannel p{CMat::Zero(u.rows(), u.cols()), u};
    for (Eigen::Index n = 0; n < u.cols(); ++n)
        for (Eigen::Index m = 0; m < u.rows(); ++m) {
            if (!u(m, n)) continue;
            if (X(m, n) == cd{0.0, 0.0})
                throw std::domain_error("zero waveform sample on allocated cell (" + std::to_string(m) + "," +
                                        std::to_string(n) + ")");
            p.values(m, n) = R.values(m, n) / X(m, n);
        }
    return p;
}

// ---------------------------------------------------------------------------
// Schatten-p matrix completion

struct CompletionConfig {
    double p = 0.5;
    double lambda0 = 0.0;       // 0: lambda_scale * s_max^(2-p), s_max of the zero-filled input
    double lambda_scale = 0.9;
    double rho = 0.9;           // geometric decay per iteration
    std::vector<double> lambda_schedule;  // overrides lambda0/rho when non-empty
    std::size_t max_iters = 200;
    double tol = 1e-4;

    void validate() const {
        if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("Schatten exponent must lie in (0, 1]");
        if (!(tol > 0.0)) throw std::invalid_argument("completion tolerance must be positive");
        if (max_iters < 1) throw std::invalid_argument("completion needs at least one iteration");
        if (lambda_schedule.empty()) {
            if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("lambda decay must lie in (0, 1)");
            if (lambda0 < 0.0 || !(lambda_scale > 0.0)) throw std::invalid_argument("lambda must be positive");
        } else {
            for (std::size_t i = 0; i < lambda_schedule.size(); ++i) {
                if (!(lambda_schedule[i] > 0.0)) throw std::invalid_argument("lambda schedule must be positive");
                if (i && !(lambda_schedule[i] < lambda_schedule[i - 1]))
                    throw std::invalid_argument("lambda schedule must be strictly decreasing");
            }
        }
    }
};

struct CompletionResult {
    CMat values;
    std::size_t iterations = 0;
    bool converged = false;
};

/// sigma <- max(sigma - lambda sigma^(p-1), 0); zero stays zero.
inline double shrink_value(double s, double lambda, double p) {
    if (!(s > 0.0)) return 0.0;
    const double t = s - lambda * (p == 1.0 ? 1.0 : std::pow(s, p - 1.0));
    return t > 0.0 ? t : 0.0;
}

/// Generalized singular-value thresholding of Z.
inline CMat shrink_singular_values(const CMat& Z, double lambda, double p) {
    Eigen::BDCSVD<CMat> svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::VectorXd s = svd.singularValues();
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        s(i) = shrink_value(s(i), lambda, p);
        if (s(i) > 0.0) r = i + 1;
    }
    if (r == 0) return CMat::Zero(Z.rows(), Z.cols());
    return svd.matrixU().leftCols(r) * s.head(r).asDiagonal() * svd.matrixV().leftCols(r).adjoint();
}

/// Writes the observed entries of `partial` into Z.
inline void impose_observed(CMat& Z, const PartialChannel& partial) {
    Z = partial.observed.select(partial.values.array(), Z.array()).matrix();
}

/// One iteration: threshold, then restore the observations.
inline CMat completion_step(const CMat& Z, const PartialChannel& partial, double lambda, double p) {
    CMat next = shrink_singular_values(Z, lambda, p);
    impose_observed(next, partial);
    return next;
}

/**
 * Iterated soft thresholding with the Schatten-p shrinkage rule. Starts from
 * the zero-filled estimate; stops when the relative Frobenius change falls
 * below tol. Observed entries of the result equal the input exactly.
 */
inline CompletionResult schatten_complete(const PartialChannel& partial, const CompletionConfig& cfg = {}) {
    cfg.validate();
    if (partial.observed.count() == 0) throw std::invalid_argument("completion needs at least one observed cell");
    if (partial.values.rows() != partial.observed.rows() || partial.values.cols() != partial.observed.cols())
        throw std::invalid_argument("partial channel shapes differ");

    CMat Z = partial.observed.select(partial.values.array(), cd{0.0, 0.0}).matrix();
    double lambda = cfg.lambda0;
    if (cfg.lambda_schedule.empty() && lambda == 0.0) {
        // lambda carries units of s^(2-p); this keeps the first shrink of
        // s_max at (1 - lambda_scale) s_max for any p and any signal scale.
        Eigen::BDCSVD<CMat> svd(Z);
        lambda = cfg.lambda_scale * std::pow(svd.singularValues()(0), 2.0 - cfg.p);
    }
    CompletionResult res;
    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
        if (!cfg.lambda_schedule.empty())
            lambda = cfg.lambda_schedule[std::min(it, cfg.lambda_schedule.size() - 1)];
        CMat next = completion_step(Z, partial, lambda, cfg.p);
        const double zn = Z.norm();
        const double change = (next - Z).norm() / (zn > 0.0 ? zn : 1.0);
        Z = std::move(next);
        res.iterations = it + 1;
        if (change < cfg.tol) {
            res.converged = true;
            break;
        }
        if (cfg.lambda_schedule.empty()) lambda *= cfg.rho;
    }
    res.values = std::move(Z);
    return res;
}

// ---------------------------------------------------------------------------
// Linear interpolation baseline

struct InterpResult {
    CMat values;
    std::vector<std::size_t> empty_rows;  // subcarriers with no observation, left at zero
};

/**
 * Per subcarrier, linear interpolation along time between observed samples,
 * held constant beyond the first/last observation. Rows with a single
 * observation take the nearest observed value along frequency in each column.
 */
inline InterpResult linear_interp_baseline(const PartialChannel& partial) {
    const auto& obs = partial.observed;
    const auto M = obs.rows(), N = obs.cols();
    InterpResult out{partial.values, {}};
    for (Eigen::Index m = 0; m < M; ++m) {
        std::vector<Eigen::Index> at;
        for (Eigen::Index n = 0; n < N; ++n)
            if (obs(m, n)) at.push_back(n);
        if (at.empty()) {
            out.values.row(m).setZero();
            out.empty_rows.push_back(static_cast<std::size_t>(m));
            continue;
        }
        if (at.size() == 1) {
            for (Eigen::Index n = 0; n < N; ++n) {
                if (obs(m, n)) continue;
                cd v = partial.values(m, at[0]);
                for (Eigen::Index d = 1; d < M; ++d) {
                    if (m - d >= 0 && obs(m - d, n)) {
                        v = partial.values(m - d, n);
                        break;
                    }
                    if (m + d < M && obs(m + d, n)) {
                        v = partial.values(m + d, n);
                        break;
                    }
                }
                out.values(m, n) = v;
            }
            continue;
        }
        for (Eigen::Index n = 0; n < at.front(); ++n) out.values(m, n) = partial.values(m, at.front());
        for (Eigen::Index n = at.back() + 1; n < N; ++n) out.values(m, n) = partial.values(m, at.back());
        for (std::size_t i = 0; i + 1 < at.size(); ++i) {
            const auto a = at[i], b = at[i + 1];
            const cd va = partial.values(m, a), vb = partial.values(m, b);
            for (auto n = a + 1; n < b; ++n) {
                const double w = static_cast<double>(n - a) / static_cast<double>(b - a);
                out.values(m, n) = (1.0 - w) * va + w * vb;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Delay-Doppler domain

struct DdMap {
    CMat values;              // rows: delay bins 0..M-1, cols: Doppler bins 0..N-1 (wrapped)
    double delay_bin = 0.0;   // 1/B
    double doppler_bin = 0.0; // 1/(NT)
};

namespace detail {

// Theta[i, m] = exp(+j 2 pi i m_c / L) / sqrt(L), m_c the centered index.
inline CMat dft_matrix(std::size_t L) {
    const auto n = static_cast<Eigen::Index>(L);
    CMat T(n, n);
    const double s = 1.0 / std::sqrt(static_cast<double>(L));
    const auto half = static_cast<long long>(L / 2);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index m = 0; m < n; ++m) {
            // reduce the phase index modulo L before scaling to keep the argument small
            const long long k = (static_cast<long long>(i) * (static_cast<long long>(m) - half)) % static_cast<long long>(L);
            T(i, m) = s * std::polar(1.0, 2.0 * kPi * static_cast<double>(k) / static_cast<double>(L));
        }
    return T;
}

} // namespace detail

/// H~ = Theta_M H Theta_N^H (unitary). A target at (tau, nu) peaks at bin (tau B, nu N T).
inline DdMap dd_transform(const ResourceGrid& grid, const CMat& H) {
    if (H.rows() != static_cast<Eigen::Index>(grid.M()) || H.cols() != static_cast<Eigen::Index>(grid.N()))
        throw std::invalid_argument("channel shape does not match grid");
    const CMat TM = detail::dft_matrix(grid.M()), TN = detail::dft_matrix(grid.N());
    return {TM * H * TN.adjoint(), grid.delay_resolution(), grid.doppler_resolution()};
}

inline CMat dd_inverse(const ResourceGrid& grid, const DdMap& map) {
    const CMat TM = detail::dft_matrix(grid.M()), TN = detail::dft_matrix(grid.N());
    return TM.adjoint() * map.values * TN;
}

struct Detection {
    std::vector<double> tau_hat;     // s
    std::vector<double> nu_hat;      // Hz
    std::vector<double> magnitude;
    std::vector<double> delay_bin;   // fractional, in [0, M)
    std::vector<double> doppler_bin; // fractional, centered
    bool refined = false;
    bool shortfall = false;

    std::size_t size() const { return tau_hat.size(); }
};

namespace detail {

inline double parabolic_offset(double left, double mid, double right) {
    const double den = left - 2.0 * mid + right;
    if (!(den < 0.0)) return 0.0;
    return std::clamp(0.5 * (left - right) / den, -0.5, 0.5);
}

inline Eigen::Index wrap(Eigen::Index i, Eigen::Index L) { return ((i % L) + L) % L; }

inline Eigen::Index circular_distance(Eigen::Index a, Eigen::Index b, Eigen::Index L) {
    const auto d = std::abs(a - b) % L;
    return std::min(d, L - d);
}

} // namespace detail

/**
 * K largest local maxima of |H~| (8-neighbourhood, circular). Each accepted
 * peak suppresses a (2 guard + 1)^2 window; optional three-point parabolic
 * refinement on each axis.
 */
inline Detection detect_peaks(const DdMap& map, std::size_t K, std::size_t guard = 2, bool refine = true) {
    if (K < 1) throw std::invalid_argument("peak count must be >= 1");
    const Eigen::ArrayXXd mag = map.values.cwiseAbs().array();
    const auto M = mag.rows(), N = mag.cols();
    struct Cand {
        double v;
        Eigen::Index i, j;
    };
    std::vector<Cand> cands;
    for (Eigen::Index j = 0; j < N; ++j)
        for (Eigen::Index i = 0; i < M; ++i) {
            const double v = mag(i, j);
            if (!(v > 0.0)) continue;
            bool peak = true;
            for (int di = -1; di <= 1 && peak; ++di)
                for (int dj = -1; dj <= 1 && peak; ++dj) {
                    if (!di && !dj) continue;
                    const auto ii = detail::wrap(i + di, M), jj = detail::wrap(j + dj, N);
                    if (ii == i && jj == j) continue;
                    const double w = mag(ii, jj);
                    // ties resolved toward the lower linear index
                    if (w > v || (w == v && ii + M * jj < i + M * j)) peak = false;
                }
            if (peak) cands.push_back({v, i, j});
        }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.v > b.v; });

    Detection det;
    det.refined = refine;
    const auto g = static_cast<Eigen::Index>(guard);
    std::vector<Cand> taken;
    for (const auto& c : cands) {
        if (taken.size() == K) break;
        bool blocked = false;
        for (const auto& t : taken)
            if (detail::circular_distance(c.i, t.i, M) <= g && detail::circular_distance(c.j, t.j, N) <= g) blocked = true;
        if (blocked) continue;
        taken.push_back(c);
        double di = 0.0, dj = 0.0;
        if (refine) {
            if (M >= 3) di = detail::parabolic_offset(mag(detail::wrap(c.i - 1, M), c.j), c.v, mag(detail::wrap(c.i + 1, M), c.j));
            if (N >= 3) dj = detail::parabolic_offset(mag(c.i, detail::wrap(c.j - 1, N)), c.v, mag(c.i, detail::wrap(c.j + 1, N)));
        }
        double ib = static_cast<double>(c.i) + di;
        if (ib < 0.0) ib = 0.0;
        const Eigen::Index jc = c.j < (N + 1) / 2 ? c.j : c.j - N;
        const double jb = static_cast<double>(jc) + dj;
        det.delay_bin.push_back(ib);
        det.doppler_bin.push_back(jb);
        det.tau_hat.push_back(ib * map.delay_bin);
        det.nu_hat.push_back(jb * map.doppler_bin);
        det.magnitude.push_back(c.v);
    }
    det.shortfall = taken.size() < K;
    return det;
}

// ---------------------------------------------------------------------------
// Exhaustive maximum likelihood (tiny instances)

struct MlBudget {
    std::size_t max_cells = 4096;
    std::size_t max_candidates = 10000;
    double max_work = 2e9;  // candidate tuples times observed cells
};

/**
 * Minimizes ||r - sum_k b_k x.*h(tau_k, nu_k)||^2 over the candidate lattice
 * delays x dopplers, amplitudes by least squares, on cells where X != 0.
 * K = 1 or 2. Throws BudgetError beyond the budget.
 */
inline Detection ml_estimate(const CMat& R, const CMat& X, const ResourceGrid& grid, std::size_t K,
                             std::span<const double> delays, std::span<const double> dopplers, MlBudget budget = {}) {
    if (K < 1 || K > 2) throw std::invalid_argument("exhaustive ML supports K = 1 or 2");
    if (grid.cells() > budget.max_cells)
        throw BudgetError("ML search limited to " + std::to_string(budget.max_cells) + " cells, grid has " +
                          std::to_string(grid.cells()));
    const std::size_t C = delays.size() * dopplers.size();
    if (C == 0) throw std::invalid_argument("empty ML search grid");
    if (C > budget.max_candidates)
        throw BudgetError("ML search grid has " + std::to_string(C) + " points, limit " +
                          std::to_string(budget.max_candidates));

    std::vector<std::pair<Eigen::Index, Eigen::Index>> cells;
    for (Eigen::Index n = 0; n < X.cols(); ++n)
        for (Eigen::Index m = 0; m < X.rows(); ++m)
            if (X(m, n) != cd{0.0, 0.0}) cells.push_back({m, n});
    const double tuples = K == 1 ? double(C) : 0.5 * double(C) * double(C - 1);
    if (tuples * double(cells.size()) > budget.max_work)
        throw BudgetError("ML search work " + std::to_string(tuples * double(cells.size())) + " exceeds budget");

    const auto P = static_cast<Eigen::Index>(cells.size());
    Eigen::VectorXcd r(P);
    for (Eigen::Index i = 0; i < P; ++i) r(i) = R(cells[i].first, cells[i].second);
    // Atoms a_c = x .* h(tau_c, nu_c) on the observed cells.
    CMat A(P, static_cast<Eigen::Index>(C));
    for (std::size_t di = 0; di < delays.size(); ++di)
        for (std::size_t vi = 0; vi < dopplers.size(); ++vi) {
            const auto c = static_cast<Eigen::Index>(di * dopplers.size() + vi);
            for (Eigen::Index i = 0; i < P; ++i) {
                const auto [m, n] = cells[i];
                const double ph = -2.0 * kPi * grid.freq_index(std::size_t(m)) * grid.delta_f() * delays[di] +
                                  2.0 * kPi * grid.time_index(std::size_t(n)) * grid.T() * dopplers[vi];
                A(i, c) = X(m, n) * std::polar(1.0, ph);
            }
        }
    const Eigen::VectorXcd b = A.adjoint() * r;
    const Eigen::VectorXd e = A.colwise().squaredNorm().transpose();

    std::vector<std::size_t> best;
    double best_fit = -std::numeric_limits<double>::infinity();  // explained energy b^H G^-1 b
    if (K == 1) {
        for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(C); ++c) {
            const double fit = std::norm(b(c)) / e(c);
            if (fit > best_fit) {
                best_fit = fit;
                best = {std::size_t(c)};
            }
        }
    } else {
        for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(C); ++c)
            for (Eigen::Index d = c + 1; d < static_cast<Eigen::Index>(C); ++d) {
                const cd g = A.col(c).dot(A.col(d));  // a_c^H a_d
                const double det = e(c) * e(d) - std::norm(g);
                if (!(det > 1e-12 * e(c) * e(d))) continue;
                // b^H G^-1 b for G = [[e_c, g], [g*, e_d]]
                const double fit =
                    (e(d) * std::norm(b(c)) + e(c) * std::norm(b(d)) - 2.0 * std::real(std::conj(b(c)) * g * b(d))) / det;
                if (fit > best_fit) {
                    best_fit = fit;
                    best = {std::size_t(c), std::size_t(d)};
                }
            }
    }
    Detection det;
    for (auto c : best) {
        const std::size_t di = c / dopplers.size(), vi = c % dopplers.size();
        det.tau_hat.push_back(delays[di]);
        det.nu_hat.push_back(dopplers[vi]);
        det.delay_bin.push_back(delays[di] / grid.delay_resolution());
        det.doppler_bin.push_back(dopplers[vi] / grid.doppler_resolution());
        det.magnitude.push_back(std::abs(b(static_cast<Eigen::Index>(c))) / std::sqrt(e(static_cast<Eigen::Index>(c))));
    }
    det.shortfall = best.size() < K;
    return det;
}

/// Residual ||r - sum b_k a_k||^2 with least-squares amplitudes, for checking argmin claims.
inline double ml_residual(const CMat& R, const CMat& X, const ResourceGrid& grid, std::span<const double> taus,
                          std::span<const double> nus) {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> cells;
    for (Eigen::Index n = 0; n < X.cols(); ++n)
        for (Eigen::Index m = 0; m < X.rows(); ++m)
            if (X(m, n) != cd{0.0, 0.0}) cells.push_back({m, n});
    const auto P = static_cast<Eigen::Index>(cells.size());
    CMat A(P, static_cast<Eigen::Index>(taus.size()));
    Eigen::VectorXcd r(P);
    for (Eigen::Index i = 0; i < P; ++i) {
        const auto [m, n] = cells[i];
        r(i) = R(m, n);
        for (std::size_t k = 0; k < taus.size(); ++k) {
            const double ph = -2.0 * kPi * grid.freq_index(std::size_t(m)) * grid.delta_f() * taus[k] +
                              2.0 * kPi * grid.time_index(std::size_t(n)) * grid.T() * nus[k];
            A(i, static_cast<Eigen::Index>(k)) = X(m, n) * std::polar(1.0, ph);
        }
    }
    const Eigen::VectorXcd coef = A.colPivHouseholderQr().solve(r);
    return (r - A * coef).squaredNorm();
}

} // namespace isacwf
