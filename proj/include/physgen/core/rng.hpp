#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace physgen {

// Philox4x32-10 counter-based generator (Salmon et al.). Every random draw in
// the toolkit is addressed by an explicit (key, counter) pair, which makes
// dataset generation, training and sampling reproducible and resumable: there
// is no hidden sequential state, only integers that are trivial to checkpoint.
class Philox {
public:
    explicit Philox(uint64_t key = 0) : key_(key) {}

    // Four 32-bit words for a given 128-bit counter.
    std::array<uint32_t, 4> block(uint64_t ctr_hi, uint64_t ctr_lo) const {
        uint32_t c0 = static_cast<uint32_t>(ctr_lo);
        uint32_t c1 = static_cast<uint32_t>(ctr_lo >> 32);
        uint32_t c2 = static_cast<uint32_t>(ctr_hi);
        uint32_t c3 = static_cast<uint32_t>(ctr_hi >> 32);
        uint32_t k0 = static_cast<uint32_t>(key_);
        uint32_t k1 = static_cast<uint32_t>(key_ >> 32);
        for (int round = 0; round < 10; ++round) {
            uint64_t p0 = static_cast<uint64_t>(0xD2511F53u) * c0;
            uint64_t p1 = static_cast<uint64_t>(0xCD9E8D57u) * c2;
            uint32_t h0 = static_cast<uint32_t>(p0 >> 32), l0 = static_cast<uint32_t>(p0);
            uint32_t h1 = static_cast<uint32_t>(p1 >> 32), l1 = static_cast<uint32_t>(p1);
            uint32_t n0 = h1 ^ c1 ^ k0;
            uint32_t n1 = l1;
            uint32_t n2 = h0 ^ c3 ^ k1;
            uint32_t n3 = l0;
            c0 = n0; c1 = n1; c2 = n2; c3 = n3;
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        return {c0, c1, c2, c3};
    }

    uint64_t key() const { return key_; }

private:
    uint64_t key_;
};

// Stream of doubles addressed by (key, stream); successive draws advance an
// internal counter. Cheap to copy; the counter is the whole state.
class RngStream {
public:
    RngStream(uint64_t key, uint64_t stream) : gen_(key), stream_(stream) {}

    // Uniform in [0, 1).
    double uniform() {
        uint32_t w = next_word();
        return (w >> 8) * (1.0 / 16777216.0); // 24-bit mantissa fill
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (uses two words per pair, caches the second).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    uint64_t next_u64() {
        uint64_t hi = next_word();
        uint64_t lo = next_word();
        return (hi << 32) | lo;
    }

    uint32_t next_u32() { return next_word(); }

    uint64_t counter() const { return ctr_; }
    void set_counter(uint64_t c) {
        ctr_ = c;
        buf_pos_ = 4;
        have_spare_ = false;
    }

private:
    uint32_t next_word() {
        if (buf_pos_ >= 4) {
            buf_ = gen_.block(stream_, ctr_++);
            buf_pos_ = 0;
        }
        return buf_[buf_pos_++];
    }

    Philox gen_;
    uint64_t stream_;
    uint64_t ctr_ = 0;
    std::array<uint32_t, 4> buf_{};
    int buf_pos_ = 4;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Mixes a root seed with identifiers (stage, image index, epoch, ...) into a
// fresh key, so independent streams never overlap.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    // splitmix64 finalizer on the combination
    uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace physgen
