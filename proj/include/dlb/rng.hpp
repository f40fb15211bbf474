#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace dlb {

/// Philox4x32-10 block function (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
/// Pure function of (counter, key); used as the only entropy source so that every
/// platform reproduces the same sequences.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

/// Well-known sub-stream purposes. Combine with `make_stream_id` to get per-cell streams.
enum class StreamPurpose : std::uint16_t {
    kTrainData = 1,
    kTestData = 2,
    kLabelNoise = 3,
    kInit = 4,
    kShuffle = 5,
    kFolds = 6,
    kMonteCarlo = 7,
    kGMean = 8,
};

/// Packs a purpose tag and two small indices (e.g. depth, fold) into one stream id.
constexpr std::uint64_t make_stream_id(StreamPurpose purpose, std::uint32_t a = 0, std::uint32_t b = 0) {
    return (static_cast<std::uint64_t>(purpose) << 48) | (static_cast<std::uint64_t>(a & 0xFFFFFFu) << 24) |
           static_cast<std::uint64_t>(b & 0xFFFFFFu);
}

/// Deterministic counter-based random stream.
///
/// The 64-bit seed is the Philox key; the 64-bit stream id occupies the upper half of the
/// 128-bit counter and a block index the lower half, so distinct stream ids never share a
/// counter value. Uniform and Gaussian variates are derived by hand (not through <random>
/// distributions, whose algorithms are implementation-defined).
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    std::uint32_t next_u32();
    std::uint64_t next_u64();

    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t uniform_index(std::uint64_t n);
    /// Standard normal via the Marsaglia polar method.
    double gaussian();

private:
    void refill();

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t block_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int buffered_ = 0;
    double spare_gaussian_ = 0.0;
    bool has_spare_ = false;
};

/// d i.i.d. standard-normal samples.
Eigen::VectorXd gaussian_vector(RngStream& rng, Eigen::Index d);

/// rows x cols matrix of i.i.d. standard normals, filled row-major.
Eigen::MatrixXd gaussian_matrix(RngStream& rng, Eigen::Index rows, Eigen::Index cols);

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(std::span<T> values, RngStream& rng) {
    for (std::size_t i = values.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_index(i));
        std::swap(values[i - 1], values[j]);
    }
}

/// Random permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, RngStream& rng);

}  // namespace dlb
