#pragma once

// Reference implementations used only by the tests.

#include "isacwf/allocator.hpp"
#include "isacwf/estimator.hpp"

#include <numeric>

namespace oracle {

using isacwf::CMat;
using isacwf::cd;

/// Singular value thresholding for min tau ||X||_* + 0.5 ||X||_F^2 subject to
/// matching the observed entries (Cai, Candes and Shen iteration).
inline CMat svt(const isacwf::PartialChannel& partial, std::size_t max_iters = 5000, double tol = 1e-9) {
    const auto& obs = partial.observed;
    const double m = double(obs.rows()), n = double(obs.cols());
    const double frac = double(obs.count()) / (m * n);
    const CMat Pm = obs.select(partial.values.array(), cd(0.0)).matrix();
    const double scale = Pm.norm() / std::sqrt(double(obs.count()));  // typical entry magnitude
    const double tau = 5.0 * std::sqrt(m * n) * scale;
    const double delta = std::min(1.2 / frac, 1.9);
    CMat Y = CMat::Zero(obs.rows(), obs.cols());
    CMat X = Y;
    for (std::size_t it = 0; it < max_iters; ++it) {
        Eigen::BDCSVD<CMat> svd(Y, Eigen::ComputeThinU | Eigen::ComputeThinV);
        Eigen::VectorXd s = (svd.singularValues().array() - tau).cwiseMax(0.0);
        X = svd.matrixU() * s.asDiagonal() * svd.matrixV().adjoint();
        const CMat resid = obs.select((partial.values - X).array(), cd(0.0)).matrix();
        Y += delta * resid;
        if (resid.norm() <= tol * Pm.norm()) break;
    }
    return X;
}

/// Best design objective over every coarse subset S with need <= |S| <= U,
/// scored through the public FIM and CRB on the base grid.
inline double exhaustive(const isacwf::AllocationProblem& p) {
    using namespace isacwf;
    const std::size_t L = p.coarse.cells(), U = p.budget_coarse();
    if (L > 20) throw std::invalid_argument("exhaustive search limited to 20 coarse cells");
    const auto nmin = p.n_min_coarse();
    const std::size_t need = std::accumulate(nmin.begin(), nmin.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    for (std::uint32_t s = 0; s < (1u << L); ++s) {
        const auto cnt = static_cast<std::size_t>(__builtin_popcount(s));
        if (cnt < need || cnt > U || cnt == 0) continue;
        BoolMat cm(Eigen::Index(p.coarse.M()), Eigen::Index(p.coarse.N()));
        for (std::size_t c = 0; c < L; ++c) cm(Eigen::Index(c)) = (s >> c) & 1u;
        const auto f = fim(p.coarse.base, p.coarse.expand(cm), p.targets, p.sigma2, p.sigma_w2);
        auto c = try_crb(f, p.cond_cap);
        if (!c) continue;
        best = std::min(best, design_objective(*c, p.eps_tau, p.eps_nu, p.delay_norm, p.doppler_norm));
    }
    return best;
}

} // namespace oracle
