#pragma once

// Multipath MIMO channel with QAM pilots, plus the real embedding that lets the
// real-valued recovery core estimate a complex channel.

#include <cstdint>
#include <fstream>
#include <iterator>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lowrank/common.hpp"
#include "lowrank/random.hpp"
#include "lowrank/recovery.hpp"

namespace lowrank {

inline constexpr double speed_of_light = 299792458.0;

struct ChannelConfig {
    Index d = 64;  ///< antennas
    Index n = 16;  ///< subcarriers
    int num_paths = 4;
    double snr_db = 10.0;
    Seed path_gain_seed = 1;
    Seed angle_seed = 2;
    double carrier_hz = 28e9;
    double subcarrier_spacing_hz = 1e6;
    double common_distance_m = 30.0;

    void validate() const {
        detail::require(d >= 1 && n >= 1, "channel: d and n must be >= 1");
        detail::require(num_paths >= 1, "channel: num_paths must be >= 1");
        detail::require(std::isfinite(snr_db), "channel: snr_db must be finite");
        detail::require(carrier_hz > 0.0 && subcarrier_spacing_hz > 0.0, "channel: frequencies must be positive");
        detail::require(common_distance_m > 0.0, "channel: distance must be positive");
    }

    [[nodiscard]] double snr_linear() const { return std::pow(10.0, snr_db / 10.0); }
};

/// Reads a byte stream as a flat bit stream, most significant bit first.
class BitReader {
  public:
    explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    [[nodiscard]] std::size_t remaining() const noexcept { return bytes_.size() * 8 - pos_; }

    int next() {
        if (remaining() == 0)
            throw std::out_of_range("bit stream exhausted");
        const std::uint8_t byte = bytes_[pos_ / 8];
        const int bit = (byte >> (7 - pos_ % 8)) & 1;
        ++pos_;
        return bit;
    }

  private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

/// 00 -> (-1+j), 01 -> (-1-j), 10 -> (1+j), 11 -> (1-j), all scaled by 1/sqrt(d).
inline std::complex<double> qam_symbol(int b0, int b1, Index d) {
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    return {(b0 ? 1.0 : -1.0) * s, (b1 ? -1.0 : 1.0) * s};
}

/// Consumes 2d bits per pilot vector; a trailing partial vector is dropped.
inline std::vector<ComplexVector> bits_to_qam(std::span<const std::uint8_t> bytes, Index d) {
    detail::require(!bytes.empty(), "bits_to_qam: empty bit stream");
    detail::require(d >= 1, "bits_to_qam: d must be >= 1");
    BitReader reader(bytes);
    const auto bits_per_vector = static_cast<std::size_t>(2 * d);
    std::vector<ComplexVector> out;
    while (reader.remaining() >= bits_per_vector) {
        ComplexVector x(d);
        for (Index i = 0; i < d; ++i) {
            const int b0 = reader.next();
            const int b1 = reader.next();
            x(i) = qam_symbol(b0, b1, d);
        }
        out.push_back(std::move(x));
    }
    return out;
}

/// Seeded pseudo-random pilot bytes, used when no bit file is given.
inline std::vector<std::uint8_t> pseudo_random_bytes(std::size_t count, Seed seed) {
    Rng rng(seed);
    std::vector<std::uint8_t> out(count);
    for (auto &b : out)
        b = static_cast<std::uint8_t>(rng.next_u64() >> 56);
    return out;
}

inline std::vector<std::uint8_t> read_bytes(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open bit file: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Uniform linear array response a(theta) = d^{-1/2} [1, e^{j pi theta}, ..., e^{j (d-1) pi theta}]^T.
inline ComplexVector steering_vector(double theta, Index d) {
    detail::require(d >= 1, "steering_vector: d must be >= 1");
    ComplexVector a(d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (Index i = 0; i < d; ++i)
        a(i) = scale * std::polar(1.0, std::numbers::pi * theta * static_cast<double>(i));
    return a;
}

struct ComplexChannel {
    ComplexMatrix h; ///< d x n
    int complex_rank = 0;
};

inline int complex_numerical_rank(const ComplexMatrix &h, double rel_tol = 1e-10) {
    Eigen::JacobiSVD<ComplexMatrix> svd(h);
    return numerical_rank(Vector(svd.singularValues()), rel_tol);
}

/// h_i = sqrt(d/L) e^{-j k_i r} sum_l g_l a(theta_l), k_i = 2 pi f_i / c.
inline ComplexChannel build_channel_from_paths(const ChannelConfig &cfg, const ComplexVector &gains,
                                               const Vector &angles) {
    cfg.validate();
    detail::require(gains.size() == angles.size() && gains.size() >= 1, "channel: path list mismatch");
    ComplexVector sum = ComplexVector::Zero(cfg.d);
    for (Index l = 0; l < gains.size(); ++l)
        sum += gains(l) * steering_vector(angles(l), cfg.d);
    const double amp = std::sqrt(static_cast<double>(cfg.d) / static_cast<double>(gains.size()));

    ComplexChannel ch;
    ch.h.resize(cfg.d, cfg.n);
    for (Index i = 0; i < cfg.n; ++i) {
        const double f = cfg.carrier_hz + static_cast<double>(i) * cfg.subcarrier_spacing_hz;
        const double k = 2.0 * std::numbers::pi * f / speed_of_light;
        ch.h.col(i) = amp * std::polar(1.0, -k * cfg.common_distance_m) * sum;
    }
    ch.complex_rank = complex_numerical_rank(ch.h);
    return ch;
}

/// g_l ~ CN(0, 1), theta_l ~ U(-1, 1).
inline ComplexChannel build_channel(const ChannelConfig &cfg) {
    cfg.validate();
    Rng gain_rng(cfg.path_gain_seed);
    Rng angle_rng(cfg.angle_seed);
    ComplexVector gains(cfg.num_paths);
    Vector angles(cfg.num_paths);
    for (int l = 0; l < cfg.num_paths; ++l) {
        gains(l) = gain_rng.complex_normal(1.0);
        angles(l) = angle_rng.uniform(-1.0, 1.0);
    }
    return build_channel_from_paths(cfg, gains, angles);
}

/// y = H^* x + e, e ~ CN(0, SNR^{-1} I). Pass rng = nullptr for a noiseless draw.
inline ComplexVector channel_observe(const ComplexChannel &ch, const ComplexVector &x, double snr_db, Rng *rng) {
    detail::require(x.size() == ch.h.rows(), "channel_observe: pilot length mismatch");
    ComplexVector y = ch.h.adjoint() * x;
    if (rng != nullptr) {
        const double variance = 1.0 / std::pow(10.0, snr_db / 10.0);
        for (Index i = 0; i < y.size(); ++i)
            y(i) += rng->complex_normal(variance);
    }
    return y;
}

struct RealifiedPair {
    Vector phi;    ///< [Re x; Im x]
    Vector y_real; ///< [Re y; Im y]
};

inline RealifiedPair realify_system(const ComplexVector &x, const ComplexVector &y) {
    detail::require(x.allFinite() && y.allFinite(), "realify_system: non-finite entries");
    RealifiedPair out;
    out.phi.resize(2 * x.size());
    out.phi << x.real(), x.imag();
    out.y_real.resize(2 * y.size());
    out.y_real << y.real(), y.imag();
    return out;
}

/// For y = G x (G: n x d), returns Theta_real (2d x 2n) with
/// Theta_real^T = [[Re G, -Im G], [Im G, Re G]], so [Re y; Im y] = Theta_real^T [Re x; Im x].
inline Matrix realify_matrix(const ComplexMatrix &g) {
    const Index n = g.rows();
    const Index d = g.cols();
    Matrix t(2 * n, 2 * d);
    t.topLeftCorner(n, d) = g.real();
    t.topRightCorner(n, d) = -g.imag();
    t.bottomLeftCorner(n, d) = g.imag();
    t.bottomRightCorner(n, d) = g.real();
    return t.transpose();
}

/// Inverse of realify_system for one vector: [a; b] -> a + j b.
inline ComplexVector complexify(const Vector &v) {
    detail::require(v.size() % 2 == 0, "complexify: odd length");
    const Index h = v.size() / 2;
    ComplexVector out(h);
    for (Index i = 0; i < h; ++i)
        out(i) = {v(i), v(h + i)};
    return out;
}

/// Complex rank implied by a real-embedding rank (2r -> r), rounding half up.
constexpr int complex_rank_from_real(int raw_real_rank) noexcept { return (raw_real_rank + 1) / 2; }

struct ComplexEstimate {
    ComplexMatrix h_hat;
    int complex_rank_est = 0;
    int raw_real_rank = 0;
};

/// Averages the two redundant blocks of an estimated Theta_real^T = [[X11, X12], [X21, X22]]:
/// Re G = (X11 + X22)/2, Im G = (X21 - X12)/2, H = G^*. The raw real rank is the
/// numerical rank of x_real.
inline ComplexEstimate extract_complex_estimate(const Matrix &x_real) {
    detail::require(x_real.rows() % 2 == 0 && x_real.cols() % 2 == 0, "extract_complex_estimate: odd dimensions");
    const Matrix t = x_real.transpose(); // 2n x 2d
    const Index n = t.rows() / 2;
    const Index d = t.cols() / 2;
    const Matrix re = 0.5 * (t.topLeftCorner(n, d) + t.bottomRightCorner(n, d));
    const Matrix im = 0.5 * (t.bottomLeftCorner(n, d) - t.topRightCorner(n, d));
    ComplexMatrix g(n, d);
    g.real() = re;
    g.imag() = im;

    ComplexEstimate out;
    out.h_hat = g.adjoint();
    out.raw_real_rank = numerical_rank(x_real);
    out.complex_rank_est = complex_rank_from_real(out.raw_real_rank);
    return out;
}

} // namespace lowrank
