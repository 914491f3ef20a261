#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace isacwf {

using cd = std::complex<double>;
using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSpeedOfLight = 299792458.0;

/**
 * Frequency-time resource lattice.
 *
 * Rows are subcarriers (frequency index m), columns are OFDM symbols (time
 * index n). Vectorization is column-major: cell (m, n) maps to l = m + M*n.
 * The symbol duration is always derived from the subcarrier spacing.
 */
class ResourceGrid {
public:
    ResourceGrid() = default;

    static ResourceGrid make(std::size_t M, std::size_t N, double delta_f, double cp_duration) {
        if (M < 1 || N < 1)
            throw std::invalid_argument("grid dimensions must be at least 1x1");
        if (!(delta_f > 0.0))
            throw std::invalid_argument("subcarrier spacing must be positive");
        if (cp_duration < 0.0)
            throw std::invalid_argument("cyclic prefix duration must be non-negative");
        ResourceGrid g;
        g.M_ = M;
        g.N_ = N;
        g.delta_f_ = delta_f;
        g.cp_ = cp_duration;
        return g;
    }

    std::size_t M() const { return M_; }
    std::size_t N() const { return N_; }
    std::size_t cells() const { return M_ * N_; }
    double delta_f() const { return delta_f_; }
    double T() const { return 1.0 / delta_f_; }
    double bandwidth() const { return static_cast<double>(M_) * delta_f_; }
    double cp_duration() const { return cp_; }
    double burst_duration() const { return static_cast<double>(N_) * T(); }

    // Centered indices: m in [-M/2, M/2 - 1], n in [-N/2, N/2 - 1].
    double freq_index(std::size_t row) const {
        return static_cast<double>(static_cast<long long>(row) - static_cast<long long>(M_ / 2));
    }
    double time_index(std::size_t col) const {
        return static_cast<double>(static_cast<long long>(col) - static_cast<long long>(N_ / 2));
    }

    // Delay-Doppler bin widths of the 2D periodogram.
    double delay_resolution() const { return 1.0 / bandwidth(); }
    double doppler_resolution() const { return 1.0 / burst_duration(); }

    bool operator==(const ResourceGrid&) const = default;

private:
    std::size_t M_ = 1, N_ = 1;
    double delta_f_ = 1.0;
    double cp_ = 0.0;
};

inline ResourceGrid build_grid(std::size_t M, std::size_t N, double delta_f, double cp_duration) {
    return ResourceGrid::make(M, N, delta_f, cp_duration);
}

/// One communication path of a UE link.
struct CommPath {
    cd alpha{1.0, 0.0};
    double tau = 0.0;
    double nu = 0.0;
};

/// A UE that is also a sensing target.
struct TargetParams {
    cd beta{1.0, 0.0};
    double tau = 0.0;  // s
    double nu = 0.0;   // Hz
    double range = 0.0;  // m, 0 when unknown
    std::vector<CommPath> comm_paths;

    double comm_gain() const {
        double g = 0.0;
        for (const auto& p : comm_paths) g += std::norm(p.alpha);
        return g;
    }
};

/// Throws std::invalid_argument if the target is outside the unambiguous
/// region of the grid (tau beyond the cyclic prefix, |nu| >= 1/(2T)).
inline void check_target(const ResourceGrid& grid, const TargetParams& t) {
    if (t.tau < 0.0 || t.tau > grid.cp_duration()) {
        std::ostringstream os;
        os << "target delay " << t.tau << " s outside [0, cp_duration=" << grid.cp_duration() << "]";
        throw std::invalid_argument(os.str());
    }
    if (!(std::abs(t.nu) < 0.5 / grid.T())) {
        std::ostringstream os;
        os << "target Doppler " << t.nu << " Hz outside (-1/(2T), 1/(2T))";
        throw std::invalid_argument(os.str());
    }
}

/**
 * Per-UE boolean occupancy plus their union.
 *
 * The union is always recomputed from the per-UE layers; it is never set
 * independently.
 */
class AllocationMask {
public:
    AllocationMask() = default;

    AllocationMask(ResourceGrid grid, std::vector<BoolMat> per_ue)
        : grid_(grid), per_ue_(std::move(per_ue)) {
        union_ = BoolMat::Constant(static_cast<Eigen::Index>(grid_.M()),
                                   static_cast<Eigen::Index>(grid_.N()), false);
        for (const auto& layer : per_ue_) {
            if (layer.rows() != union_.rows() || layer.cols() != union_.cols())
                throw std::invalid_argument("mask layer shape does not match grid");
            union_ = union_ || layer;
        }
    }

    static AllocationMask empty(const ResourceGrid& grid, std::size_t K) {
        std::vector<BoolMat> layers(K, BoolMat::Constant(static_cast<Eigen::Index>(grid.M()),
                                                         static_cast<Eigen::Index>(grid.N()), false));
        return AllocationMask(grid, std::move(layers));
    }

    static AllocationMask full(const ResourceGrid& grid) {
        std::vector<BoolMat> layers(1, BoolMat::Constant(static_cast<Eigen::Index>(grid.M()),
                                                         static_cast<Eigen::Index>(grid.N()), true));
        return AllocationMask(grid, std::move(layers));
    }

    const ResourceGrid& grid() const { return grid_; }
    std::size_t K() const { return per_ue_.size(); }
    const BoolMat& ue(std::size_t k) const { return per_ue_.at(k); }
    const std::vector<BoolMat>& per_ue() const { return per_ue_; }
    const BoolMat& union_mask() const { return union_; }

    std::size_t allocated() const { return static_cast<std::size_t>(union_.count()); }
    std::size_t allocated(std::size_t k) const { return static_cast<std::size_t>(per_ue_.at(k).count()); }

    bool operator==(const AllocationMask& o) const {
        if (!(grid_ == o.grid_) || per_ue_.size() != o.per_ue_.size()) return false;
        for (std::size_t k = 0; k < per_ue_.size(); ++k)
            if ((per_ue_[k] != o.per_ue_[k]).any()) return false;
        return true;
    }

private:
    ResourceGrid grid_;
    std::vector<BoolMat> per_ue_;
    BoolMat union_;
};

inline double occupancy(const AllocationMask& mask) {
    return static_cast<double>(mask.allocated()) / static_cast<double>(mask.grid().cells());
}

/// True when `count` resources out of `total` respect occupancy `mu`.
inline bool within_occupancy(std::size_t count, std::size_t total, double mu) {
    return static_cast<double>(count) <= mu * static_cast<double>(total) * (1.0 + 1e-12);
}

struct MaskViolation {
    enum class Kind { Exclusivity, Occupancy, Shape };
    Kind kind;
    std::size_t m = 0, n = 0;
    std::string message;
};

inline std::vector<MaskViolation> validate_mask(const AllocationMask& mask, double mu) {
    std::vector<MaskViolation> out;
    const auto M = mask.grid().M(), N = mask.grid().N();
    for (std::size_t k = 0; k < mask.K(); ++k) {
        const auto& layer = mask.ue(k);
        if (static_cast<std::size_t>(layer.rows()) != M || static_cast<std::size_t>(layer.cols()) != N) {
            out.push_back({MaskViolation::Kind::Shape, 0, 0, "shape: layer " + std::to_string(k)});
            return out;
        }
    }
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t m = 0; m < M; ++m) {
            int owners = 0;
            for (std::size_t k = 0; k < mask.K(); ++k)
                owners += mask.ue(k)(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)) ? 1 : 0;
            if (owners > 1) {
                out.push_back({MaskViolation::Kind::Exclusivity, m, n,
                               "exclusivity@(" + std::to_string(m) + "," + std::to_string(n) + ")"});
            }
        }
    }
    if (!within_occupancy(mask.allocated(), mask.grid().cells(), mu)) {
        std::ostringstream os;
        os.precision(2);
        os << std::fixed << "occupancy: " << occupancy(mask) << " > " << mu;
        out.push_back({MaskViolation::Kind::Occupancy, 0, 0, os.str()});
    }
    return out;
}

// Mask file: "MASK v1 M N K", then K blocks of M lines of N '0'/'1'
// characters. The union is not stored.

inline void write_mask(std::ostream& os, const AllocationMask& mask) {
    const auto M = mask.grid().M(), N = mask.grid().N();
    os << "MASK v1 " << M << ' ' << N << ' ' << mask.K() << '\n';
    std::string line(N, '0');
    for (std::size_t k = 0; k < mask.K(); ++k) {
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t n = 0; n < N; ++n)
                line[n] = mask.ue(k)(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)) ? '1' : '0';
            os << line << '\n';
        }
    }
}

/// Reads a mask; the grid supplies delta_f and cp (the file stores only shape).
inline AllocationMask read_mask(std::istream& is, const ResourceGrid& grid) {
    std::string magic, version;
    std::size_t M = 0, N = 0, K = 0;
    if (!(is >> magic >> version >> M >> N >> K) || magic != "MASK" || version != "v1")
        throw std::runtime_error("malformed mask header (expected 'MASK v1 M N K')");
    if (M != grid.M() || N != grid.N())
        throw std::runtime_error("mask shape " + std::to_string(M) + "x" + std::to_string(N) +
                                 " does not match grid " + std::to_string(grid.M()) + "x" +
                                 std::to_string(grid.N()));
    std::vector<BoolMat> layers(K, BoolMat::Constant(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(N), false));
    std::string line;
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t m = 0; m < M; ++m) {
            do {
                if (!(is >> line)) throw std::runtime_error("truncated mask file");
            } while (line.empty());
            if (line.size() != N)
                throw std::runtime_error("mask row " + std::to_string(m) + " of block " + std::to_string(k) +
                                         " has " + std::to_string(line.size()) + " columns, expected " +
                                         std::to_string(N));
            for (std::size_t n = 0; n < N; ++n) {
                if (line[n] != '0' && line[n] != '1')
                    throw std::runtime_error("mask characters must be 0 or 1");
                layers[k](static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)) = line[n] == '1';
            }
        }
    }
    return AllocationMask(grid, std::move(layers));
}

} // namespace isacwf
