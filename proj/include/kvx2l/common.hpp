#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace kvx2l {

// Error taxonomy, mapped to CLI exit codes by tools/kvx2l:
//   ConfigError / DimensionError / PreconditionError -> 2
//   IntegrityError / IoError                         -> 3
//   ResourceError                                    -> 4
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct DimensionError : Error {
    using Error::Error;
};
struct PreconditionError : Error {
    using Error::Error;
};
struct IntegrityError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct ResourceError : Error {
    using Error::Error;
};

// Deterministic, platform-independent PRNG. std::mt19937 distributions are
// implementation-defined, so all seeded draws in the project go through this.
struct SplitMix64 {
    uint64_t state = 0;

    explicit SplitMix64(uint64_t seed = 0) : state(seed) {}

    uint64_t next() {
        state += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // standard normal via Box-Muller
    double next_gauss() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 1e-300) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    uint64_t next_below(uint64_t n) { return n == 0 ? 0 : next() % n; }
};

// Mixes several seed components into one stream seed (trial ids, cell ids, ...).
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    SplitMix64 rng(a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2)));
    rng.next();
    return rng.next() ^ b;
}

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t fnv1a64_str(const std::string& s, uint64_t h = 1469598103934665603ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

// --- little-endian byte IO (serialization is little-endian by contract) ---

inline void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 24));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    put_u32(out, static_cast<uint32_t>(v));
    put_u32(out, static_cast<uint32_t>(v >> 32));
}

inline void put_i64(std::vector<uint8_t>& out, int64_t v) { put_u64(out, static_cast<uint64_t>(v)); }

inline void put_f32(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u32(out, bits);
}

inline void put_f32_array(std::vector<uint8_t>& out, const float* src, size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        const size_t at = out.size();
        out.resize(at + n * 4);
        std::memcpy(out.data() + at, src, n * 4);
    } else {
        for (size_t i = 0; i < n; ++i) put_f32(out, src[i]);
    }
}

// Cursor-based reader; throws IoError on underrun.
struct ByteReader {
    const uint8_t* data;
    size_t size;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > size) throw IoError("truncated record");
    }
    uint8_t u8() {
        need(1);
        return data[pos++];
    }
    uint32_t u32() {
        need(4);
        uint32_t v = static_cast<uint32_t>(data[pos]) | (static_cast<uint32_t>(data[pos + 1]) << 8) |
                     (static_cast<uint32_t>(data[pos + 2]) << 16) | (static_cast<uint32_t>(data[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        uint64_t lo = u32();
        uint64_t hi = u32();
        return lo | (hi << 32);
    }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    void f32_array(float* dst, size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            need(n * 4);
            std::memcpy(dst, data + pos, n * 4);
            pos += n * 4;
        } else {
            for (size_t i = 0; i < n; ++i) dst[i] = f32();
        }
    }
};

// Static-partition parallel loop. Each index writes only its own outputs, so
// results are identical for any thread count.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn, unsigned threads = 0) {
    if (threads == 0) threads = std::thread::hardware_concurrency();
    if (threads <= 1 || n < 2) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    threads = static_cast<unsigned>(std::min<size_t>(threads, n));
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (size_t i = t; i < n; i += threads) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace kvx2l
