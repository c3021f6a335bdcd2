#pragma once

// Synthetic (x, c, y) generators with stepwise verbal CoT and exactly
// checkable answers, plus deterministic dataset splitting and JSONL I/O.
//
// modchain: left-associated chains of +,-,* over small operands, reduced
// mod a prime after every step. One CoT line per binary operation:
//   "cur op b = raw ; raw mod p = next"
// multihop: a shuffled relation table and a chained "the key of ..." query;
// one lookup per CoT line.

#include <acot/rng.hpp>
#include <acot/vocab.hpp>

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace acot {

inline constexpr const char* kNewlineToken = "<nl>";

// Largest number any modchain step can produce; the multiplication operand
// is clamped so raw values never exceed this for any allowed modulus.
inline constexpr int kMaxNumeral = 198;

struct Example {
    int64_t id = 0;
    std::string family;
    std::vector<std::string> prompt;
    std::vector<std::string> cot_steps;  // space-joined token strings, one per step
    std::vector<std::string> answer;
    int difficulty = 0;
    uint64_t seed = 0;
};

// Shared base token alphabet: numerals, operators/markers, entities. Fixed
// across task parameters so codebook hashes only depend on M.
inline std::vector<std::string> base_alphabet() {
    std::vector<std::string> v;
    for (int i = 0; i <= kMaxNumeral; ++i) v.push_back(std::to_string(i));
    for (const char* t : {"+", "-", "*", "mod", "=", ";", "?", "->", "the", "key", "of", kNewlineToken}) {
        v.emplace_back(t);
    }
    for (int i = 0; i < 32; ++i) v.push_back("e" + std::to_string(i));
    return v;
}

inline bool is_prime(int n) {
    if (n < 2) return false;
    for (int d = 2; d * d <= n; ++d) {
        if (n % d == 0) return false;
    }
    return true;
}

inline Example gen_modchain(uint64_t seed, int n_steps, int modulus) {
    if (n_steps < 1 || n_steps > 8) {
        throw std::invalid_argument("gen_modchain: n_steps must be in [1,8], got " +
                                    std::to_string(n_steps));
    }
    if (modulus < 5 || modulus > 97 || !is_prime(modulus)) {
        throw std::invalid_argument("gen_modchain: modulus must be a prime in [5,97], got " +
                                    std::to_string(modulus));
    }
    Rng rng(seed);
    Example ex;
    ex.family = "modchain";
    ex.difficulty = n_steps;
    ex.seed = seed;

    int cur = static_cast<int>(rng.range(2, 9));
    ex.prompt.push_back(std::to_string(cur));
    for (int s = 0; s < n_steps; ++s) {
        int b = static_cast<int>(rng.range(2, 9));
        const char* ops[] = {"+", "-", "*"};
        std::string op = ops[rng.below(3)];
        // Keep every intermediate inside the numeral alphabet: no negative
        // raws, and raw = cur*b <= kMaxNumeral even for the largest modulus.
        if (op == "-" && cur - b < 0) op = "+";
        if (op == "*" && cur * b > kMaxNumeral) op = "+";
        int raw = op == "+" ? cur + b : (op == "-" ? cur - b : cur * b);
        int next = raw % modulus;
        ex.cot_steps.push_back(std::to_string(cur) + " " + op + " " + std::to_string(b) + " = " +
                               std::to_string(raw) + " ; " + std::to_string(raw) + " mod " +
                               std::to_string(modulus) + " = " + std::to_string(next));
        ex.prompt.push_back(op);
        ex.prompt.push_back(std::to_string(b));
        cur = next;
    }
    ex.prompt.push_back("mod");
    ex.prompt.push_back(std::to_string(modulus));
    ex.answer.push_back(std::to_string(cur));
    return ex;
}

inline Example gen_multihop(uint64_t seed, int n_hops, int kb_size) {
    if (n_hops < 2 || n_hops > 4) {
        throw std::invalid_argument("gen_multihop: n_hops must be in [2,4], got " +
                                    std::to_string(n_hops));
    }
    if (kb_size < 2 * n_hops || kb_size > 31) {
        throw std::invalid_argument("gen_multihop: kb_size must be in [2*n_hops,31], got " +
                                    std::to_string(kb_size));
    }
    Rng rng(seed);
    Example ex;
    ex.family = "multihop";
    ex.difficulty = n_hops;
    ex.seed = seed;

    // A shuffled line graph over distinct entities is cycle-free by
    // construction; the query walks n_hops edges along it.
    std::vector<int> pool(32);
    for (int i = 0; i < 32; ++i) pool[static_cast<size_t>(i)] = i;
    rng.shuffle(pool);
    std::vector<int> order(pool.begin(), pool.begin() + kb_size + 1);

    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < kb_size; ++i) edges.emplace_back(order[i], order[i + 1]);
    rng.shuffle(edges);

    const int start = static_cast<int>(rng.below(static_cast<uint64_t>(kb_size - n_hops + 1)));
    auto ent = [](int i) { return "e" + std::to_string(i); };

    for (const auto& [a, b] : edges) {
        ex.prompt.push_back(ent(a));
        ex.prompt.push_back("->");
        ex.prompt.push_back(ent(b));
        ex.prompt.push_back(";");
    }
    ex.prompt.push_back("?");
    for (int h = 0; h < n_hops; ++h) {
        ex.prompt.push_back("the");
        ex.prompt.push_back("key");
        ex.prompt.push_back("of");
    }
    ex.prompt.push_back(ent(order[start]));

    for (int h = 0; h < n_hops; ++h) {
        ex.cot_steps.push_back("the key of " + ent(order[start + h]) + " = " +
                               ent(order[start + h + 1]));
    }
    ex.answer.push_back(ent(order[start + n_hops]));
    return ex;
}

// Verbal CoT as a flat token list, steps separated by the newline token.
inline std::vector<std::string> cot_tokens(const Example& ex) {
    std::vector<std::string> out;
    for (size_t i = 0; i < ex.cot_steps.size(); ++i) {
        if (i > 0) out.emplace_back(kNewlineToken);
        auto step = split_tokens(ex.cot_steps[i]);
        out.insert(out.end(), step.begin(), step.end());
    }
    return out;
}

struct CorpusSpec {
    std::string family = "modchain";
    int64_t n = 1000;
    uint64_t seed = 7;
    int difficulty = 3;  // modchain chain length / multihop hop count
    int modulus = 23;    // modchain
    int kb_size = 12;    // multihop
};

// Deterministic corpus: example i is a pure function of (seed, family, i),
// independent of n, so growing a corpus only appends.
inline std::vector<Example> gen_corpus(const CorpusSpec& spec) {
    if (spec.n < 1) throw std::invalid_argument("gen_corpus: n must be >= 1");
    if (spec.family != "modchain" && spec.family != "multihop") {
        throw std::invalid_argument("gen_corpus: unknown family " + spec.family);
    }
    Rng master(spec.seed);
    std::vector<Example> out;
    out.reserve(static_cast<size_t>(spec.n));
    for (int64_t i = 0; i < spec.n; ++i) {
        const uint64_t ex_seed = master.derive("example", static_cast<uint64_t>(i)).next_u64();
        Example ex = spec.family == "modchain"
                         ? gen_modchain(ex_seed, spec.difficulty, spec.modulus)
                         : gen_multihop(ex_seed, spec.difficulty, spec.kb_size);
        ex.id = i;
        out.push_back(std::move(ex));
    }
    return out;
}

struct DatasetSplit {
    std::string role;  // "sft-<t>", "distill-<t>", "rl", "eval"
    std::vector<Example> examples;
    int64_t first_id = 0;  // [first_id, last_id]; disjointness is by id range
    int64_t last_id = -1;
};

struct SplitFractions {
    double warmup_each = 0.2;  // each of the 2T warm-up slices
    double rl = 0.0;           // 0 -> split the remainder equally with eval
    double eval = 0.0;
};

inline std::vector<DatasetSplit> split_dataset(const std::vector<Example>& examples, int T,
                                               SplitFractions f) {
    if (T < 1) throw std::invalid_argument("split_dataset: T must be >= 1");
    if (f.warmup_each < 0 || f.rl < 0 || f.eval < 0 ||
        f.warmup_each * 2 * T + f.rl + f.eval > 1.0 + 1e-9) {
        throw std::invalid_argument("split_dataset: fractions must be non-negative and sum to <= 1");
    }
    const auto n = static_cast<int64_t>(examples.size());
    const auto per_warm = static_cast<int64_t>(f.warmup_each * static_cast<double>(n));
    int64_t rl_n = static_cast<int64_t>(f.rl * static_cast<double>(n));
    int64_t eval_n = static_cast<int64_t>(f.eval * static_cast<double>(n));
    const int64_t remainder = n - per_warm * 2 * T;
    if (f.rl == 0.0 && f.eval == 0.0) {
        rl_n = remainder / 2;
        eval_n = remainder - rl_n;
    }
    if (per_warm < 1 || rl_n < 1 || eval_n < 1 || per_warm * 2 * T + rl_n + eval_n > n) {
        throw std::invalid_argument("split_dataset: insufficient examples (" + std::to_string(n) +
                                    ") for T=" + std::to_string(T));
    }

    std::vector<DatasetSplit> out;
    int64_t at = 0;
    auto take = [&](const std::string& role, int64_t count) {
        DatasetSplit s;
        s.role = role;
        s.first_id = examples[static_cast<size_t>(at)].id;
        s.examples.assign(examples.begin() + at, examples.begin() + at + count);
        at += count;
        s.last_id = examples[static_cast<size_t>(at - 1)].id;
        out.push_back(std::move(s));
    };
    for (int t = 1; t <= T; ++t) {
        take("sft-" + std::to_string(t), per_warm);
        take("distill-" + std::to_string(t), per_warm);
    }
    take("rl", rl_n);
    take("eval", eval_n);
    // The RL split mirrors prompt+answer-only training data: gold CoT is
    // withheld, the verifier only ever sees (x, y).
    for (auto& ex : out[out.size() - 2].examples) ex.cot_steps.clear();
    return out;
}

inline nlohmann::json example_to_json(const Example& ex) {
    nlohmann::json j;
    j["id"] = ex.id;
    j["family"] = ex.family;
    j["prompt"] = join_tokens(ex.prompt);
    j["cot_steps"] = ex.cot_steps;
    j["answer"] = join_tokens(ex.answer);
    j["difficulty"] = ex.difficulty;
    j["seed"] = ex.seed;
    return j;
}

inline Example example_from_json(const nlohmann::json& j) {
    Example ex;
    ex.id = j.at("id").get<int64_t>();
    ex.family = j.at("family").get<std::string>();
    ex.prompt = split_tokens(j.at("prompt").get<std::string>());
    ex.cot_steps = j.at("cot_steps").get<std::vector<std::string>>();
    ex.answer = split_tokens(j.at("answer").get<std::string>());
    ex.difficulty = j.value("difficulty", 0);
    ex.seed = j.at("seed").get<uint64_t>();
    return ex;
}

inline void write_examples(const std::string& path, const std::vector<Example>& examples) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_examples: cannot open " + path);
    for (const auto& ex : examples) f << example_to_json(ex).dump() << "\n";
    if (!f) throw std::runtime_error("write_examples: write failed for " + path);
}

inline std::vector<Example> read_examples(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_examples: cannot open " + path);
    std::vector<Example> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        out.push_back(example_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

// Token-id views used by every training phase.
inline std::vector<int> prompt_ids(const Codebook& cb, const Example& ex) {
    std::vector<int> ids{cb.bos};
    auto enc = encode(cb, ex.prompt);
    ids.insert(ids.end(), enc.begin(), enc.end());
    return ids;
}

inline std::vector<int> cot_ids(const Codebook& cb, const Example& ex) {
    return encode(cb, cot_tokens(ex));
}

inline std::vector<int> answer_ids(const Codebook& cb, const Example& ex) {
    return encode(cb, ex.answer);
}

}  // namespace acot
