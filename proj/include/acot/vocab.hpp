#pragma once

// Base task vocabulary plus the reserved abstract codebook and delimiters.
// Ids are dense: [0, base) base tokens, [base, base+M) abstract tokens,
// then the fixed control tokens. Immutable once built.

#include <acot/rng.hpp>

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace acot {

constexpr int kControlTokenCount = 8;

// A..Z then AA..ZZ, wrapped in angle brackets: k=0 -> "<A>", k=26 -> "<AA>".
inline std::string abstract_name(int k) {
    std::string core;
    if (k < 26) {
        core = std::string(1, static_cast<char>('A' + k));
    } else {
        const int j = k - 26;
        core = {static_cast<char>('A' + j / 26), static_cast<char>('A' + j % 26)};
    }
    return "<" + core + ">";
}

struct Codebook {
    std::vector<std::string> names;
    std::unordered_map<std::string, int> ids;
    int base_size = 0;
    int M = 0;

    int bos = -1;
    int eos = -1;
    int begin_abstract = -1;
    int end_abstract = -1;
    int begin_think = -1;
    int end_think = -1;
    int pause = -1;
    int answer = -1;

    int size() const { return static_cast<int>(names.size()); }
    int abstract_id(int k) const { return base_size + k; }
    bool is_abstract(int id) const { return id >= base_size && id < base_size + M; }

    int id_of(const std::string& name) const {
        auto it = ids.find(name);
        if (it == ids.end()) throw std::invalid_argument("unknown token '" + name + "'");
        return it->second;
    }
};

inline Codebook build_codebook(int M, const std::vector<std::string>& base_alphabet) {
    if (M < 1) throw std::invalid_argument("build_codebook: M must be >= 1, got " + std::to_string(M));
    if (M > 26 + 26 * 26) throw std::invalid_argument("build_codebook: M exceeds AA..ZZ naming range");
    if (base_alphabet.empty()) throw std::invalid_argument("build_codebook: empty base alphabet");

    Codebook cb;
    cb.M = M;
    cb.base_size = static_cast<int>(base_alphabet.size());

    auto push = [&cb](const std::string& name) {
        auto [it, fresh] = cb.ids.emplace(name, cb.size());
        if (!fresh) throw std::invalid_argument("build_codebook: colliding token name '" + name + "'");
        cb.names.push_back(name);
        return it->second;
    };

    for (const auto& tok : base_alphabet) push(tok);
    for (int k = 0; k < M; ++k) push(abstract_name(k));
    cb.bos = push("<bos>");
    cb.eos = push("<eos>");
    cb.begin_abstract = push("<beginabstract>");
    cb.end_abstract = push("<endabstract>");
    cb.begin_think = push("<think>");
    cb.end_think = push("</think>");
    cb.pause = push("<pause>");
    cb.answer = push("<answer>");
    return cb;
}

inline std::vector<int> encode(const Codebook& cb, const std::vector<std::string>& tokens) {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) {
        auto it = cb.ids.find(tokens[i]);
        if (it == cb.ids.end()) {
            throw std::invalid_argument("encode: unknown token '" + tokens[i] + "' at position " +
                                        std::to_string(i));
        }
        out.push_back(it->second);
    }
    return out;
}

inline std::vector<std::string> decode(const Codebook& cb, const std::vector<int>& ids) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= cb.size()) {
            throw std::invalid_argument("decode: id " + std::to_string(ids[i]) +
                                        " out of range at position " + std::to_string(i));
        }
        out.push_back(cb.names[ids[i]]);
    }
    return out;
}

// Whitespace-splitting convenience for the space-separated task texts.
inline std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (ch == ' ' || ch == '\t' || ch == '\n') {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

// Decoding-time allowed set: the M codebook ids plus the end delimiter.
inline std::vector<int> allowed_set(const Codebook& cb) {
    std::vector<int> out;
    out.reserve(cb.M + 1);
    for (int k = 0; k < cb.M; ++k) out.push_back(cb.abstract_id(k));
    out.push_back(cb.end_abstract);
    return out;
}

inline std::string manifest_text(const Codebook& cb) {
    std::string out;
    for (int id = 0; id < cb.size(); ++id) {
        out += cb.names[id];
        out += '\t';
        out += std::to_string(id);
        out += '\n';
    }
    return out;
}

inline uint64_t codebook_hash(const Codebook& cb) { return fnv1a64(manifest_text(cb)); }

inline void write_manifest(const Codebook& cb, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_manifest: cannot open " + path);
    f << manifest_text(cb);
}

}  // namespace acot
