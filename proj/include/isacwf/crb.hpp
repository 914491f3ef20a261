#pragma once

#include "isacwf/errors.hpp"
#include "isacwf/grid.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>

namespace isacwf {

/// Delay response over subcarriers and Doppler response over symbols.
struct SteeringPair {
    Eigen::VectorXcd d_tau;
    Eigen::VectorXcd d_nu;
};

inline SteeringPair steering_vectors(const ResourceGrid& grid, double tau, double nu) {
    const auto M = static_cast<Eigen::Index>(grid.M()), N = static_cast<Eigen::Index>(grid.N());
    SteeringPair s{Eigen::VectorXcd(M), Eigen::VectorXcd(N)};
    for (Eigen::Index i = 0; i < M; ++i)
        s.d_tau(i) = std::polar(1.0, -2.0 * kPi * grid.freq_index(static_cast<std::size_t>(i)) * grid.delta_f() * tau);
    for (Eigen::Index i = 0; i < N; ++i)
        s.d_nu(i) = std::polar(1.0, 2.0 * kPi * grid.time_index(static_cast<std::size_t>(i)) * grid.T() * nu);
    return s;
}

/// Element-wise d_k .* conj(d_l) on both axes.
inline SteeringPair coupled_responses(const SteeringPair& k, const SteeringPair& l) {
    if (k.d_tau.size() != l.d_tau.size() || k.d_nu.size() != l.d_nu.size())
        throw std::invalid_argument("steering pairs belong to different grids");
    return {k.d_tau.cwiseProduct(l.d_tau.conjugate()), k.d_nu.cwiseProduct(l.d_nu.conjugate())};
}

/**
 * Fisher information over (tau_1..tau_K, nu_1..nu_K), amplitudes known.
 *
 * `nu_tau` is the Doppler-by-delay coupling block: nu_tau(k, l) is the
 * information shared by nu_k and tau_l. The assembled matrix is
 * [[tau, nu_tau^T], [nu_tau, nu]].
 */
struct FimBlocks {
    Eigen::MatrixXd tau;
    Eigen::MatrixXd nu;
    Eigen::MatrixXd nu_tau;
    double sigma2 = 0.0;
    double sigma_w2 = 0.0;
    std::string warning;  // non-empty when the blocks are known to be singular

    Eigen::Index K() const { return tau.rows(); }

    Eigen::MatrixXd assemble() const {
        const auto K = tau.rows();
        Eigen::MatrixXd F(2 * K, 2 * K);
        F.topLeftCorner(K, K) = tau;
        F.topRightCorner(K, K) = nu_tau.transpose();
        F.bottomLeftCorner(K, K) = nu_tau;
        F.bottomRightCorner(K, K) = nu;
        return F;
    }

    static FimBlocks from_matrix(const Eigen::MatrixXd& F, double sigma2 = 0.0, double sigma_w2 = 0.0) {
        if (F.rows() != F.cols() || F.rows() % 2 != 0) throw std::invalid_argument("FIM must be 2K x 2K");
        const auto K = F.rows() / 2;
        return {F.topLeftCorner(K, K), F.bottomRightCorner(K, K), F.bottomLeftCorner(K, K), sigma2, sigma_w2, {}};
    }
};

namespace detail {

// Per-cell information kernel shared by the public FIM and the allocator:
// accumulates  w * Re{beta_k beta_l^* d_tau_kl[m] d_nu_kl[n]} * (m^2, n^2, m n)
// for every allocated cell. Returned in units of "index", the caller applies
// the physical or normalized scale factors.
struct IndexMoments {
    Eigen::MatrixXd mm, nn, mn;
};

inline IndexMoments index_moments(const ResourceGrid& grid, const BoolMat& allocated,
                                  std::span<const TargetParams> targets) {
    const auto K = static_cast<Eigen::Index>(targets.size());
    const auto M = static_cast<Eigen::Index>(grid.M()), N = static_cast<Eigen::Index>(grid.N());
    std::vector<SteeringPair> st;
    st.reserve(targets.size());
    for (const auto& t : targets) st.push_back(steering_vectors(grid, t.tau, t.nu));

    IndexMoments out{Eigen::MatrixXd::Zero(K, K), Eigen::MatrixXd::Zero(K, K), Eigen::MatrixXd::Zero(K, K)};
    Eigen::VectorXcd row_mm(N), row_m(N), row_1(N);
    for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index l = k; l < K; ++l) {
            const auto c = coupled_responses(st[static_cast<std::size_t>(k)], st[static_cast<std::size_t>(l)]);
            const cd bb = targets[static_cast<std::size_t>(k)].beta * std::conj(targets[static_cast<std::size_t>(l)].beta);
            // Sum over m first for each column, then combine with the time response.
            double s_mm = 0.0, s_nn = 0.0, s_mn = 0.0;
            for (Eigen::Index n = 0; n < N; ++n) {
                cd a_mm{0, 0}, a_m{0, 0}, a_1{0, 0};
                for (Eigen::Index m = 0; m < M; ++m) {
                    if (!allocated(m, n)) continue;
                    const double mi = grid.freq_index(static_cast<std::size_t>(m));
                    const cd d = c.d_tau(m);
                    a_1 += d;
                    a_m += mi * d;
                    a_mm += mi * mi * d;
                }
                const double ni = grid.time_index(static_cast<std::size_t>(n));
                const cd w = bb * c.d_nu(n);
                s_mm += std::real(w * a_mm);
                s_nn += ni * ni * std::real(w * a_1);
                s_mn += ni * std::real(w * a_m);
            }
            out.mm(k, l) = out.mm(l, k) = s_mm;
            out.nn(k, l) = out.nn(l, k) = s_nn;
            out.mn(k, l) = out.mn(l, k) = s_mn;
        }
    }
    return out;
}

} // namespace detail

/**
 * Fisher information of the two-dimensional exponential model R = X.*H + W
 * for constant-modulus symbols of power sigma2 on the allocated cells.
 *
 *   F_tau(k,l)   = 2 sigma2/sigma_w2 * 4 pi^2 df^2   sum a m^2 Re{b_k b_l^* d_tau_kl d_nu_kl}
 *   F_nu(k,l)    = 2 sigma2/sigma_w2 * 4 pi^2 T^2    sum a n^2 Re{...}
 *   F_nu_tau(k,l)= -2 sigma2/sigma_w2 * 4 pi^2 df T  sum a m n Re{...}
 *
 * The minus sign on the coupling block follows from d/dtau and d/dnu having
 * opposite phase signs; it cancels in every CRB.
 */
inline FimBlocks fim(const ResourceGrid& grid, const BoolMat& allocated, std::span<const TargetParams> targets,
                     double sigma2, double sigma_w2) {
    if (targets.empty()) throw std::invalid_argument("FIM needs at least one target");
    if (allocated.rows() != static_cast<Eigen::Index>(grid.M()) || allocated.cols() != static_cast<Eigen::Index>(grid.N()))
        throw std::invalid_argument("allocation shape does not match grid");
    if (!(sigma_w2 > 0.0)) throw std::invalid_argument("sensing noise power must be positive");
    const auto mom = detail::index_moments(grid, allocated, targets);
    const double c = 2.0 * sigma2 / sigma_w2 * 4.0 * kPi * kPi;
    FimBlocks b;
    b.tau = c * grid.delta_f() * grid.delta_f() * mom.mm;
    b.nu = c * grid.T() * grid.T() * mom.nn;
    b.nu_tau = -c * grid.delta_f() * grid.T() * mom.mn;
    b.sigma2 = sigma2;
    b.sigma_w2 = sigma_w2;
    if (allocated.count() == 0) b.warning = "empty allocation: FIM is identically zero (singular)";
    return b;
}

inline FimBlocks fim(const AllocationMask& mask, std::span<const TargetParams> targets, double sigma2, double sigma_w2) {
    if (mask.K() != targets.size())
        throw std::invalid_argument("mask has " + std::to_string(mask.K()) + " UEs but " +
                                    std::to_string(targets.size()) + " targets were given");
    return fim(mask.grid(), mask.union_mask(), targets, sigma2, sigma_w2);
}

struct CrbMatrices {
    Eigen::MatrixXd tau;  // s^2
    Eigen::MatrixXd nu;   // Hz^-2
};

inline double condition_number(const Eigen::MatrixXd& A) {
    if (A.size() == 0) return std::numeric_limits<double>::infinity();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    const auto& s = svd.singularValues();
    const double smax = s(0), smin = s(s.size() - 1);
    if (!(smin > 0.0) || !std::isfinite(smax)) return std::numeric_limits<double>::infinity();
    return smax / smin;
}

inline constexpr double kDefaultCondCap = 1e12;

/// Non-throwing CRB inversion; on failure returns nullopt and names the block.
inline std::optional<CrbMatrices> try_crb(const FimBlocks& b, double cond_cap, std::string* failed_block = nullptr,
                                          double* failed_cond = nullptr) {
    auto reject = [&](const char* name, double cond) -> std::optional<CrbMatrices> {
        if (failed_block) *failed_block = name;
        if (failed_cond) *failed_cond = cond;
        return std::nullopt;
    };
    double cn = condition_number(b.nu);
    if (!(cn <= cond_cap)) return reject("F_nu", cn);
    double ct = condition_number(b.tau);
    if (!(ct <= cond_cap)) return reject("F_tau", ct);
    // Delay and Doppler entries carry very different units, so the joint
    // conditioning is judged on the unit-diagonal scaling of F.
    const Eigen::MatrixXd F = b.assemble();
    const Eigen::VectorXd d = F.diagonal().cwiseSqrt().cwiseInverse();
    double cf = condition_number(d.asDiagonal() * F * d.asDiagonal());
    if (!(cf <= cond_cap)) return reject("F", cf);

    const Eigen::MatrixXd schur_tau = b.tau - b.nu_tau.transpose() * b.nu.inverse() * b.nu_tau;
    double cs = condition_number(schur_tau);
    if (!(cs <= cond_cap)) return reject("F_tau - F_nu_tau^T F_nu^-1 F_nu_tau", cs);
    // F_nu_tau^T is the delay-by-Doppler block; its transpose couples back.
    const Eigen::MatrixXd schur_nu = b.nu - b.nu_tau * b.tau.inverse() * b.nu_tau.transpose();
    double cv = condition_number(schur_nu);
    if (!(cv <= cond_cap)) return reject("F_nu - F_nu_tau F_tau^-1 F_nu_tau^T", cv);
    return CrbMatrices{schur_tau.inverse(), schur_nu.inverse()};
}

/// CRB matrices from Schur complements of the FIM. Throws SingularFimError.
inline CrbMatrices crb(const FimBlocks& b, double cond_cap = kDefaultCondCap) {
    std::string block;
    double cond = 0.0;
    auto c = try_crb(b, cond_cap, &block, &cond);
    if (!c) throw SingularFimError(block, cond);
    return *c;
}

/// eps_tau tr(C_tau)/dtau^2 + eps_nu tr(C_nu)/dnu^2
inline double design_objective(const CrbMatrices& c, double eps_tau, double eps_nu, double dtau, double dnu) {
    if (!(dtau > 0.0) || !(dnu > 0.0)) throw std::invalid_argument("normalization resolutions must be positive");
    return eps_tau * c.tau.trace() / (dtau * dtau) + eps_nu * c.nu.trace() / (dnu * dnu);
}

/// G = tr(C_tau,rand) / tr(C_tau,opt)
inline double crb_gain(const CrbMatrices& baseline, const CrbMatrices& optimized) {
    const double den = optimized.tau.trace();
    if (!(den > 0.0)) throw std::domain_error("CRB gain undefined: optimized delay CRB trace is not positive");
    return baseline.tau.trace() / den;
}

} // namespace isacwf
