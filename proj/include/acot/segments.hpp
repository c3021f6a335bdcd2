#pragma once

// Segment partitions of training sequences s = [x; c; z; y] and the
// block-structured bottleneck attention mask. Masks are boolean row-major
// matrices with allow[i*n+j] = 1 meaning position i may attend to j.

#include <acot/vocab.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace acot {

struct SegmentedSequence {
    std::vector<int> ids;
    // contiguous segments: X=[0,x_end) C=[x_end,c_end) Z=[c_end,z_end) Y=[z_end,n)
    int x_end = 0;
    int c_end = 0;
    int z_end = 0;

    int length() const { return static_cast<int>(ids.size()); }
    bool in_x(int i) const { return i < x_end; }
    bool in_c(int i) const { return i >= x_end && i < c_end; }
    bool in_z(int i) const { return i >= c_end && i < z_end; }
    bool in_y(int i) const { return i >= z_end; }
    // codebook positions only: Z minus the two delimiters
    bool in_z_abs(int i) const { return i > c_end && i < z_end - 1; }

    std::vector<int> z_abs_positions() const {
        std::vector<int> out;
        for (int i = c_end + 1; i < z_end - 1; ++i) out.push_back(i);
        return out;
    }
    std::vector<int> y_positions() const {
        std::vector<int> out;
        for (int i = z_end; i < length(); ++i) out.push_back(i);
        return out;
    }
    // Eq. 3 / Eq. 4 supervision target set
    std::vector<int> supervised_positions() const {
        std::vector<int> out = z_abs_positions();
        auto y = y_positions();
        out.insert(out.end(), y.begin(), y.end());
        return out;
    }
};

// Delimiter pair wrapping the Z block. Abstract codes are the default; the
// verbal baselines reuse the same segment geometry with think delimiters.
struct SegmentProtocol {
    int begin = -1;
    int end = -1;
};

inline SegmentProtocol abstract_protocol(const Codebook& cb) {
    return {cb.begin_abstract, cb.end_abstract};
}

inline SegmentProtocol think_protocol(const Codebook& cb) {
    return {cb.begin_think, cb.end_think};
}

inline void validate_segments(const SegmentedSequence& s, const Codebook& cb,
                              SegmentProtocol proto = {}) {
    if (proto.begin < 0) proto = abstract_protocol(cb);
    const int n = s.length();
    if (!(0 < s.x_end && s.x_end <= s.c_end && s.c_end < s.z_end && s.z_end < n)) {
        throw std::invalid_argument("segments: invalid or overlapping boundaries x_end=" +
                                    std::to_string(s.x_end) + " c_end=" + std::to_string(s.c_end) +
                                    " z_end=" + std::to_string(s.z_end) + " n=" + std::to_string(n));
    }
    if (s.z_end - s.c_end < 2 || s.ids[s.c_end] != proto.begin ||
        s.ids[s.z_end - 1] != proto.end) {
        throw std::invalid_argument("segments: Z must begin/end with its delimiter pair");
    }
}

struct AttentionMask {
    int n = 0;
    std::vector<uint8_t> allow;  // n*n, 1 = may attend

    bool at(int i, int j) const { return allow[static_cast<size_t>(i) * n + j] != 0; }
    // complement, in the layout masked_fill consumes (1 = block with -1e9)
    std::vector<uint8_t> fill_mask() const {
        std::vector<uint8_t> f(allow.size());
        for (size_t k = 0; k < allow.size(); ++k) f[k] = allow[k] ? 0 : 1;
        return f;
    }
};

inline AttentionMask build_causal_mask(int length) {
    if (length < 1) throw std::invalid_argument("build_causal_mask: length must be >= 1");
    AttentionMask m;
    m.n = length;
    m.allow.assign(static_cast<size_t>(length) * length, 0);
    for (int i = 0; i < length; ++i)
        for (int j = 0; j <= i; ++j) m.allow[static_cast<size_t>(i) * length + j] = 1;
    return m;
}

// Block rules: X/C rows are causal over X∪C; Z rows see X∪C plus causal Z;
// Y rows see X and Z plus causal Y, and never C.
inline AttentionMask build_bottleneck_mask(const SegmentedSequence& s) {
    const int n = s.length();
    AttentionMask m;
    m.n = n;
    m.allow.assign(static_cast<size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i) {
        uint8_t* row = m.allow.data() + static_cast<size_t>(i) * n;
        if (i < s.c_end) {
            for (int j = 0; j <= i; ++j) row[j] = 1;
        } else if (i < s.z_end) {
            for (int j = 0; j < s.c_end; ++j) row[j] = 1;
            for (int j = s.c_end; j <= i; ++j) row[j] = 1;
        } else {
            for (int j = 0; j < s.x_end; ++j) row[j] = 1;
            for (int j = s.c_end; j < s.z_end; ++j) row[j] = 1;
            for (int j = s.z_end; j <= i; ++j) row[j] = 1;
        }
    }
    return m;
}

// ----------------------- sequence assembly -----------------------

// Bottlenecked SFT sequence [<bos> x][c][<ba> z <ea>][y <eos>]; pass an empty
// cot for the distillation format (C collapses to nothing).
inline SegmentedSequence assemble_bottleneck(const Codebook& cb, const std::vector<int>& x,
                                             const std::vector<int>& cot,
                                             const std::vector<int>& z_codes,
                                             const std::vector<int>& y) {
    SegmentedSequence s;
    s.ids.push_back(cb.bos);
    s.ids.insert(s.ids.end(), x.begin(), x.end());
    s.x_end = s.length();
    s.ids.insert(s.ids.end(), cot.begin(), cot.end());
    s.c_end = s.length();
    s.ids.push_back(cb.begin_abstract);
    for (int z : z_codes) {
        if (!cb.is_abstract(z)) {
            throw std::invalid_argument("assemble_bottleneck: id " + std::to_string(z) +
                                        " is not a codebook token");
        }
        s.ids.push_back(z);
    }
    s.ids.push_back(cb.end_abstract);
    s.z_end = s.length();
    s.ids.insert(s.ids.end(), y.begin(), y.end());
    s.ids.push_back(cb.eos);
    validate_segments(s, cb);
    return s;
}

}  // namespace acot
