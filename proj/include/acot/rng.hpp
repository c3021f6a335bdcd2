#pragma once

// Deterministic, serializable PRNG. All randomness in the project flows
// through streams derived from (master seed, domain tag, index), so any
// phase can be replayed from counters alone. std::random distributions are
// implementation-defined and therefore avoided.

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace acot {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a, used both for stream derivation and for file/codebook hashes.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

class Rng {
public:
    Rng() : Rng(0) {}

    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    // Independent child stream; identical (tag, index) pairs yield identical
    // streams regardless of how much the parent has been consumed.
    Rng derive(std::string_view tag, uint64_t index = 0) const {
        uint64_t h = fnv1a64(tag);
        h = fnv1a64(&index, sizeof(index), h);
        for (auto word : s_) h = fnv1a64(&word, sizeof(word), h);
        return Rng(h);
    }

    uint64_t next_u64() {  // xoshiro256**
        const uint64_t result = rotl_(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl_(s_[3], 45);
        return result;
    }

    // Uniform on [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n), rejection-sampled (n > 0).
    uint64_t below(uint64_t n) {
        const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Uniform integer in [lo, hi] inclusive.
    int64_t range(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    double gaussian(double mean = 0.0, double std = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + spare_ * std;
        }
        double u = 1.0 - uniform();  // avoid log(0)
        double v = uniform();
        double r = std::sqrt(-2.0 * std::log(u));
        double theta = 2.0 * 3.141592653589793238462643 * v;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mean + r * std::cos(theta) * std;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Index sampled proportionally to non-negative weights (sum > 0).
    size_t weighted_pick(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double r = uniform() * total;
        double cum = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) {
            cum += weights[i];
            if (r < cum) return i;
        }
        return weights.size() - 1;
    }

    // Snapshot/restore for bit-identical resume.
    struct State {
        uint64_t s[4]{};
        uint64_t has_spare = 0;
        double spare = 0.0;
    };

    State state() const {
        State st;
        for (int i = 0; i < 4; ++i) st.s[i] = s_[i];
        st.has_spare = has_spare_ ? 1 : 0;
        st.spare = spare_;
        return st;
    }

    void set_state(const State& st) {
        for (int i = 0; i < 4; ++i) s_[i] = st.s[i];
        has_spare_ = st.has_spare != 0;
        spare_ = st.spare;
    }

private:
    static uint64_t rotl_(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4]{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace acot
