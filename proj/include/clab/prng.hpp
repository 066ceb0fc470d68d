#pragma once
#include <cmath>
#include <cstdint>
#include <numbers>

namespace clab {

// Philox4x32-10 counter-based generator.
// Salmon et al., "Parallel random numbers: as easy as 1, 2, 3", SC 2011.
//
// The generator is a pure function of (key, counter): the 64-bit seed is the
// key, the 64-bit stream id occupies the upper half of the 128-bit counter
// and the block index the lower half. Two Philox objects with the same
// (seed, stream) produce identical output on every platform, and distinct
// streams never overlap, which is what makes parallel sampling bit-identical
// to the serial order.
class Philox {
public:
    explicit Philox(std::uint64_t seed, std::uint64_t stream = 0)
        : key0_(static_cast<std::uint32_t>(seed)),
          key1_(static_cast<std::uint32_t>(seed >> 32)),
          ctr2_(static_cast<std::uint32_t>(stream)),
          ctr3_(static_cast<std::uint32_t>(stream >> 32)) {}

    std::uint32_t next_u32() {
        if (buf_pos_ == 4) {
            fill_block();
            buf_pos_ = 0;
        }
        return buf_[buf_pos_++];
    }

    std::uint64_t next_u64() {
        std::uint64_t lo = next_u32();
        std::uint64_t hi = next_u32();
        return lo | (hi << 32);
    }

    // Uniform double in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t next_below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n + 1) % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v > limit);
        return v % n;
    }

    // Standard normal via Box-Muller; the paired value is cached.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - next_double();  // (0, 1], keeps the log finite
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Deterministic 64-bit seed derivation, used to split one master seed
    // into independent child seeds. Implemented as the first output block of
    // an offset key so derived seeds do not collide with stream output.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t index) {
        Philox g(seed ^ 0x9E3779B97F4A7C15ull, index);
        return g.next_u64();
    }

private:
    static void mul_hilo(std::uint32_t a, std::uint32_t b, std::uint32_t& lo, std::uint32_t& hi) {
        const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
        lo = static_cast<std::uint32_t>(p);
        hi = static_cast<std::uint32_t>(p >> 32);
    }

    void fill_block() {
        std::uint32_t c0 = ctr0_, c1 = ctr1_, c2 = ctr2_, c3 = ctr3_;
        std::uint32_t k0 = key0_, k1 = key1_;
        for (int round = 0; round < 10; ++round) {
            std::uint32_t lo0, hi0, lo1, hi1;
            mul_hilo(0xD2511F53u, c0, lo0, hi0);
            mul_hilo(0xCD9E8D57u, c2, lo1, hi1);
            const std::uint32_t n0 = hi1 ^ c1 ^ k0;
            const std::uint32_t n1 = lo1;
            const std::uint32_t n2 = hi0 ^ c3 ^ k1;
            const std::uint32_t n3 = lo0;
            c0 = n0;
            c1 = n1;
            c2 = n2;
            c3 = n3;
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        buf_[0] = c0;
        buf_[1] = c1;
        buf_[2] = c2;
        buf_[3] = c3;
        if (++ctr0_ == 0) ++ctr1_;  // 64-bit block index in ctr0:ctr1
    }

    std::uint32_t key0_, key1_;
    std::uint32_t ctr0_ = 0, ctr1_ = 0;
    std::uint32_t ctr2_, ctr3_;
    std::uint32_t buf_[4] = {};
    int buf_pos_ = 4;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace clab
