#pragma once

#include "isacwf/grid.hpp"
#include "isacwf/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>

namespace isacwf {

using CMat = Eigen::MatrixXcd;

enum class Constellation { BPSK, QPSK, QAM16 };

inline Constellation parse_constellation(const std::string& s) {
    if (s == "qpsk") return Constellation::QPSK;
    if (s == "bpsk") return Constellation::BPSK;
    if (s == "qam16") return Constellation::QAM16;
    throw std::invalid_argument("unsupported constellation '" + s + "'");
}

inline bool is_psk(Constellation c) { return c != Constellation::QAM16; }

struct SymbolMatrix {
    CMat values;
    Constellation constellation = Constellation::QPSK;
};

/// i.i.d. unit-average-power symbols on every cell, allocated or not.
inline SymbolMatrix gen_symbols(const ResourceGrid& grid, Constellation c, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> pick(0, c == Constellation::QAM16 ? 15 : (c == Constellation::QPSK ? 3 : 1));
    const auto M = static_cast<Eigen::Index>(grid.M()), N = static_cast<Eigen::Index>(grid.N());
    SymbolMatrix s{CMat(M, N), c};
    const double r2 = 1.0 / std::sqrt(2.0);
    const double r10 = 1.0 / std::sqrt(10.0);
    for (Eigen::Index n = 0; n < N; ++n) {
        for (Eigen::Index m = 0; m < M; ++m) {
            const int v = pick(rng);
            switch (c) {
            case Constellation::BPSK: s.values(m, n) = {v ? 1.0 : -1.0, 0.0}; break;
            case Constellation::QPSK: s.values(m, n) = {(v & 1) ? r2 : -r2, (v & 2) ? r2 : -r2}; break;
            case Constellation::QAM16: {
                const double lv[4] = {-3.0, -1.0, 1.0, 3.0};
                s.values(m, n) = {lv[v & 3] * r10, lv[v >> 2] * r10};
                break;
            }
            }
        }
    }
    return s;
}

struct ChannelMatrix {
    enum class Kind { Sensing, Communication };
    CMat values;
    Kind kind = Kind::Sensing;
    std::size_t ue = 0;  // communication only
};

/// Sum of K delay-Doppler exponentials on the centered index lattice.
inline ChannelMatrix sensing_channel(const ResourceGrid& grid, std::span<const TargetParams> targets) {
    const auto M = static_cast<Eigen::Index>(grid.M()), N = static_cast<Eigen::Index>(grid.N());
    ChannelMatrix h{CMat::Zero(M, N), ChannelMatrix::Kind::Sensing, 0};
    for (const auto& t : targets) {
        check_target(grid, t);
        Eigen::VectorXcd dtau(M), dnu(N);
        for (Eigen::Index m = 0; m < M; ++m)
            dtau(m) = std::polar(1.0, -2.0 * kPi * t.tau * grid.freq_index(static_cast<std::size_t>(m)) * grid.delta_f());
        for (Eigen::Index n = 0; n < N; ++n)
            dnu(n) = std::polar(1.0, 2.0 * kPi * t.nu * grid.time_index(static_cast<std::size_t>(n)) * grid.T());
        h.values.noalias() += t.beta * (dtau * dnu.transpose());
    }
    return h;
}

/// Multipath UE channel. Only the path gains feed the SE constraint.
inline ChannelMatrix comm_channel(const ResourceGrid& grid, const TargetParams& ue, std::size_t ue_index = 0) {
    if (ue.comm_paths.empty()) throw std::invalid_argument("communication channel needs at least one path");
    const auto M = static_cast<Eigen::Index>(grid.M()), N = static_cast<Eigen::Index>(grid.N());
    ChannelMatrix h{CMat::Zero(M, N), ChannelMatrix::Kind::Communication, ue_index};
    for (const auto& p : ue.comm_paths) {
        Eigen::VectorXcd dtau(M), dnu(N);
        for (Eigen::Index m = 0; m < M; ++m)
            dtau(m) = std::polar(1.0, -2.0 * kPi * p.tau * grid.freq_index(static_cast<std::size_t>(m)) * grid.delta_f());
        for (Eigen::Index n = 0; n < N; ++n)
            dnu(n) = std::polar(1.0, 2.0 * kPi * p.nu * grid.time_index(static_cast<std::size_t>(n)) * grid.T());
        h.values.noalias() += p.alpha * (dtau * dnu.transpose());
    }
    return h;
}

/// X = sigma * S on allocated cells, 0 elsewhere.
inline CMat assemble_waveform(double sigma, const SymbolMatrix& symbols, const AllocationMask& mask) {
    const auto& u = mask.union_mask();
    if (symbols.values.rows() != u.rows() || symbols.values.cols() != u.cols())
        throw std::invalid_argument("symbol matrix and mask shapes differ");
    return u.select(sigma * symbols.values.array(), cd{0.0, 0.0}).matrix();
}

struct RxMatrix {
    CMat values;
    double noise_power = 0.0;
    std::uint64_t seed = 0;
};

/// R = X .* H + W, W i.i.d. CN(0, noise_power).
inline RxMatrix rx_signal(const CMat& X, const ChannelMatrix& H, double noise_power, std::uint64_t seed) {
    if (X.rows() != H.values.rows() || X.cols() != H.values.cols())
        throw std::invalid_argument("waveform and channel shapes differ");
    if (noise_power < 0.0) throw std::invalid_argument("noise power must be non-negative");
    RxMatrix r{X.cwiseProduct(H.values), noise_power, seed};
    if (noise_power > 0.0) {
        Rng rng(seed);
        std::normal_distribution<double> nd(0.0, std::sqrt(noise_power / 2.0));
        for (Eigen::Index n = 0; n < r.values.cols(); ++n)
            for (Eigen::Index m = 0; m < r.values.rows(); ++m) {
                const double re = nd(rng);
                const double im = nd(rng);
                r.values(m, n) += cd{re, im};
            }
    }
    return r;
}

/// gamma_s = sigma^2 ||beta||^2 / (g_s sigma_w^2).
inline double sensing_snr(double sigma2, std::span<const cd> betas, double processing_gain, double sigma_w2) {
    if (!(processing_gain > 0.0)) throw std::invalid_argument("processing gain must be positive");
    double b2 = 0.0;
    for (auto b : betas) b2 += std::norm(b);
    return sigma2 * b2 / (processing_gain * sigma_w2);
}

/// Inverse of sensing_snr for the noise power.
inline double noise_for_snr(double sigma2, std::span<const cd> betas, double processing_gain, double gamma_s) {
    if (!(processing_gain > 0.0) || !(gamma_s > 0.0))
        throw std::invalid_argument("processing gain and target SNR must be positive");
    double b2 = 0.0;
    for (auto b : betas) b2 += std::norm(b);
    return sigma2 * b2 / (processing_gain * gamma_s);
}

// CMAT dump: "CMAT", u32 version (1), u64 M, u64 N, all little-endian, then
// M*N (re, im) float64 pairs in row-major order.

namespace detail {
inline bool host_is_little_endian() {
    const std::uint16_t probe = 1;
    unsigned char b = 0;
    std::memcpy(&b, &probe, 1);
    return b == 1;
}
template <class T>
void put_le(std::ostream& os, T v) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if (!host_is_little_endian())
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}
template <class T>
T get_le(std::istream& is) {
    unsigned char bytes[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw std::runtime_error("truncated CMAT stream");
    if (!host_is_little_endian())
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}
} // namespace detail

inline void write_cmat(std::ostream& os, const CMat& a) {
    os.write("CMAT", 4);
    detail::put_le<std::uint32_t>(os, 1);
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(a.rows()));
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(a.cols()));
    for (Eigen::Index m = 0; m < a.rows(); ++m)
        for (Eigen::Index n = 0; n < a.cols(); ++n) {
            detail::put_le<double>(os, a(m, n).real());
            detail::put_le<double>(os, a(m, n).imag());
        }
}

inline CMat read_cmat(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "CMAT", 4) != 0) throw std::runtime_error("not a CMAT stream");
    if (detail::get_le<std::uint32_t>(is) != 1) throw std::runtime_error("unsupported CMAT version");
    const auto M = detail::get_le<std::uint64_t>(is);
    const auto N = detail::get_le<std::uint64_t>(is);
    CMat a(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(N));
    for (Eigen::Index m = 0; m < a.rows(); ++m)
        for (Eigen::Index n = 0; n < a.cols(); ++n) {
            const double re = detail::get_le<double>(is);
            const double im = detail::get_le<double>(is);
            a(m, n) = {re, im};
        }
    return a;
}

} // namespace isacwf
