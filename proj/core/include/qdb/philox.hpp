#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace qdb {

// Philox4x32-10 counter-based generator (Salmon et al.). A block cipher on a
// 128-bit counter under a 64-bit key; any (counter, key) pair can be evaluated
// independently, so path/step draws need no shared generator state.
struct Philox4x32 {
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                              std::array<std::uint32_t, 2> key) {
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
            const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }
};

// Stream identifiers keep draws for different purposes disjoint under one
// root seed.
enum class RngStream : std::uint32_t {
    Increments = 0,
    Shuffle = 1,
    Sampling = 2,
};

// Deterministic N(0,1) draws addressed by (seed, stream, path, step, index).
// One Philox block yields two normals via Box-Muller.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, RngStream stream = RngStream::Increments)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_(static_cast<std::uint32_t>(stream)) {}

    // i-th standard normal of (path, step); i in [0, 2^33).
    double normal(std::uint64_t path, std::uint64_t step, std::uint32_t i) const {
        const auto pair = normal_pair(path, step, i >> 1);
        return (i & 1u) ? pair[1] : pair[0];
    }

    // Both normals of block b of (path, step).
    std::array<double, 2> normal_pair(std::uint64_t path, std::uint64_t step,
                                      std::uint32_t block_index) const {
        const std::array<std::uint32_t, 4> ctr = {
            static_cast<std::uint32_t>(step),
            static_cast<std::uint32_t>(step >> 32) ^ (stream_ << 24) ^ block_index,
            static_cast<std::uint32_t>(path),
            static_cast<std::uint32_t>(path >> 32),
        };
        const auto r = Philox4x32::block(ctr, key_);
        return box_muller(r[0], r[1]);
    }

    // Uniform in [0,1) addressed the same way (used for seeded subsampling).
    double uniform(std::uint64_t path, std::uint64_t step, std::uint32_t i) const {
        const std::array<std::uint32_t, 4> ctr = {
            static_cast<std::uint32_t>(step),
            static_cast<std::uint32_t>(step >> 32) ^ (stream_ << 24) ^ (i >> 2),
            static_cast<std::uint32_t>(path),
            static_cast<std::uint32_t>(path >> 32),
        };
        const auto r = Philox4x32::block(ctr, key_);
        return to_unit(r[i & 3u]) - 0x1p-33;
    }

private:
    static double to_unit(std::uint32_t x) {
        // (x + 1/2) * 2^-32, strictly inside (0,1)
        return (static_cast<double>(x) + 0.5) * 0x1p-32;
    }

    static std::array<double, 2> box_muller(std::uint32_t a, std::uint32_t b) {
        const double u1 = to_unit(a);
        const double u2 = to_unit(b);
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * M_PI * u2;
        return {radius * std::cos(angle), radius * std::sin(angle)};
    }

    std::array<std::uint32_t, 2> key_;
    std::uint32_t stream_;
};

}  // namespace qdb
