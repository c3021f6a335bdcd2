#include <acot/taskgen.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <map>
#include <set>

#include "oracles.hpp"

using namespace acot;

namespace {

long apply_op(long a, const std::string& op, long b) {
    if (op == "+") return a + b;
    if (op == "-") return a - b;
    if (op == "*") return a * b;
    throw std::runtime_error("unknown op " + op);
}

// Independent replay of a modchain prompt: left-associated chain, reduced
// mod p (mathematical, non-negative) after every binary operation.
std::string replay_modchain_prompt(const std::vector<std::string>& prompt) {
    REQUIRE(prompt.size() >= 5);
    REQUIRE(prompt[prompt.size() - 2] == "mod");
    const long p = std::stol(prompt.back());
    long cur = std::stol(prompt[0]);
    size_t i = 1;
    while (prompt[i] != "mod") {
        cur = apply_op(cur, prompt[i], std::stol(prompt[i + 1])) % p;
        if (cur < 0) cur += p;
        i += 2;
    }
    return std::to_string(cur);
}

// Checks each CoT line's arithmetic and the running-value continuity.
void check_modchain_steps(const Example& ex) {
    const long p = std::stol(ex.prompt.back());
    long cur = std::stol(ex.prompt[0]);
    for (const auto& line : ex.cot_steps) {
        auto t = split_tokens(line);
        REQUIRE(t.size() == 11);
        REQUIRE(t[3] == "=");
        REQUIRE(t[5] == ";");
        REQUIRE(t[7] == "mod");
        REQUIRE(t[9] == "=");
        CHECK(std::stol(t[0]) == cur);
        const long raw = apply_op(std::stol(t[0]), t[1], std::stol(t[2]));
        CHECK(std::stol(t[4]) == raw);
        CHECK(t[6] == t[4]);
        CHECK(std::stol(t[8]) == p);
        const long next = raw % p;
        CHECK(std::stol(t[10]) == next);
        CHECK(raw >= 0);
        CHECK(raw <= kMaxNumeral);
        cur = next;
    }
    CHECK(std::to_string(cur) == ex.answer[0]);
}

struct HopQuery {
    std::map<std::string, std::string> table;
    int hops = 0;
    std::string start;
};

HopQuery parse_multihop_prompt(const std::vector<std::string>& prompt) {
    HopQuery q;
    size_t i = 0;
    while (prompt[i] != "?") {
        REQUIRE(prompt[i + 1] == "->");
        REQUIRE(prompt[i + 3] == ";");
        auto [it, fresh] = q.table.emplace(prompt[i], prompt[i + 2]);
        REQUIRE(fresh);  // functional table: one key, one value
        i += 4;
    }
    ++i;
    while (prompt[i] == "the") {
        REQUIRE(prompt[i + 1] == "key");
        REQUIRE(prompt[i + 2] == "of");
        ++q.hops;
        i += 3;
    }
    REQUIRE(i + 1 == prompt.size());
    q.start = prompt[i];
    return q;
}

}  // namespace

TEST_CASE("modchain worked example: 3 + 4 mod 7") {
    // Scan seeds for the exact one-step instance from the contract.
    bool found = false;
    for (uint64_t seed = 0; seed < 20000 && !found; ++seed) {
        Example ex = gen_modchain(seed, 1, 7);
        if (ex.prompt != std::vector<std::string>{"3", "+", "4", "mod", "7"}) continue;
        found = true;
        REQUIRE(ex.cot_steps.size() == 1);
        CHECK(split_tokens(ex.cot_steps[0]) ==
              std::vector<std::string>{"3", "+", "4", "=", "7", ";", "7", "mod", "7", "=", "0"});
        CHECK(ex.answer == std::vector<std::string>{"0"});
        CHECK(ex.family == "modchain");
        CHECK(ex.difficulty == 1);
    }
    REQUIRE(found);
}

TEST_CASE("modchain rejects degenerate parameters") {
    CHECK_THROWS_WITH(gen_modchain(1, 0, 7), Catch::Matchers::ContainsSubstring("n_steps"));
    CHECK_THROWS_WITH(gen_modchain(1, 9, 7), Catch::Matchers::ContainsSubstring("n_steps"));
    CHECK_THROWS_WITH(gen_modchain(1, 2, 4), Catch::Matchers::ContainsSubstring("modulus"));
    CHECK_THROWS_WITH(gen_modchain(1, 2, 9), Catch::Matchers::ContainsSubstring("modulus"));
    CHECK_THROWS_WITH(gen_modchain(1, 2, 101), Catch::Matchers::ContainsSubstring("modulus"));
    CHECK_NOTHROW(gen_modchain(1, 8, 97));
}

TEST_CASE("modchain replay oracle over 10k samples") {
    Rng rng(2024);
    const int moduli[] = {5, 7, 23, 97};
    for (int i = 0; i < 10000; ++i) {
        const int steps = 1 + static_cast<int>(rng.below(8));
        const int p = moduli[rng.below(4)];
        Example ex = gen_modchain(rng.next_u64(), steps, p);
        REQUIRE(ex.cot_steps.size() == static_cast<size_t>(steps));
        CHECK(replay_modchain_prompt(ex.prompt) == ex.answer[0]);
        check_modchain_steps(ex);
    }
}

TEST_CASE("multihop replay oracle over 10k samples") {
    Rng rng(99);
    for (int i = 0; i < 10000; ++i) {
        const int hops = 2 + static_cast<int>(rng.below(3));
        const int kb = 2 * hops + static_cast<int>(rng.below(8));
        Example ex = gen_multihop(rng.next_u64(), hops, kb);
        HopQuery q = parse_multihop_prompt(ex.prompt);
        REQUIRE(q.hops == hops);
        REQUIRE(static_cast<int>(q.table.size()) == kb);

        std::string at = q.start;
        for (int h = 0; h < hops; ++h) {
            auto it = q.table.find(at);
            REQUIRE(it != q.table.end());
            at = it->second;
        }
        CHECK(at == ex.answer[0]);

        // CoT lines replay the same walk one lookup at a time.
        REQUIRE(ex.cot_steps.size() == static_cast<size_t>(hops));
        std::string cur = q.start;
        for (const auto& line : ex.cot_steps) {
            auto t = split_tokens(line);
            REQUIRE(t.size() == 6);
            CHECK((t[0] == "the" && t[1] == "key" && t[2] == "of" && t[4] == "="));
            CHECK(t[3] == cur);
            CHECK(q.table.at(cur) == t[5]);
            cur = t[5];
        }
        CHECK(cur == ex.answer[0]);
    }
}

TEST_CASE("multihop tables are cycle-free") {
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
        Example ex = gen_multihop(rng.next_u64(), 3, 8);
        HopQuery q = parse_multihop_prompt(ex.prompt);
        for (const auto& [start, first] : q.table) {
            std::set<std::string> seen{start};
            std::string at = start;
            while (q.table.count(at)) {
                at = q.table.at(at);
                REQUIRE(seen.insert(at).second);  // revisit would be a cycle
            }
        }
    }
}

TEST_CASE("multihop rejects degenerate parameters") {
    CHECK_THROWS_WITH(gen_multihop(1, 1, 8), Catch::Matchers::ContainsSubstring("n_hops"));
    CHECK_THROWS_WITH(gen_multihop(1, 5, 20), Catch::Matchers::ContainsSubstring("n_hops"));
    CHECK_THROWS_WITH(gen_multihop(1, 3, 5), Catch::Matchers::ContainsSubstring("kb_size"));
    CHECK_THROWS_WITH(gen_multihop(1, 2, 32), Catch::Matchers::ContainsSubstring("kb_size"));
}

TEST_CASE("generators are deterministic in the seed") {
    for (uint64_t seed : {0ULL, 7ULL, 123456789ULL}) {
        Example a = gen_modchain(seed, 3, 23), b = gen_modchain(seed, 3, 23);
        CHECK(a.prompt == b.prompt);
        CHECK(a.cot_steps == b.cot_steps);
        CHECK(a.answer == b.answer);
        Example c = gen_multihop(seed, 2, 6), d = gen_multihop(seed, 2, 6);
        CHECK(c.prompt == d.prompt);
        CHECK(c.cot_steps == d.cot_steps);
        CHECK(c.answer == d.answer);
    }
    // and seeds actually matter
    CHECK(gen_modchain(1, 3, 23).prompt != gen_modchain(2, 3, 23).prompt);
}

TEST_CASE("desk-profile gold CoT is long enough for the compression criterion") {
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
        Example ex = gen_modchain(rng.next_u64(), 3, 23);
        CHECK(cot_tokens(ex).size() == 35);  // 3 lines x 11 tokens + 2 separators
    }
}

TEST_CASE("split worked example: 1000 examples, T=2, equal fractions") {
    std::vector<Example> all;
    for (int i = 0; i < 1000; ++i) {
        Example ex = gen_modchain(static_cast<uint64_t>(i), 3, 23);
        ex.id = i;
        all.push_back(ex);
    }
    auto splits = split_dataset(all, 2, SplitFractions{});
    REQUIRE(splits.size() == 6);
    CHECK(splits[0].role == "sft-1");
    CHECK(splits[1].role == "distill-1");
    CHECK(splits[2].role == "sft-2");
    CHECK(splits[3].role == "distill-2");
    CHECK(splits[4].role == "rl");
    CHECK(splits[5].role == "eval");
    for (int i = 0; i < 4; ++i) CHECK(splits[i].examples.size() == 200);
    CHECK(splits[4].examples.size() == 100);
    CHECK(splits[5].examples.size() == 100);

    // id-range disjointness, and every id lands in exactly one split
    std::set<int64_t> seen;
    for (const auto& s : splits) {
        CHECK(s.first_id <= s.last_id);
        for (const auto& ex : s.examples) {
            CHECK(ex.id >= s.first_id);
            CHECK(ex.id <= s.last_id);
            CHECK(seen.insert(ex.id).second);
        }
    }
    CHECK(seen.size() == 1000);

    // RL split carries prompts and answers only
    for (const auto& ex : splits[4].examples) CHECK(ex.cot_steps.empty());
    for (const auto& ex : splits[5].examples) CHECK_FALSE(ex.cot_steps.empty());
}

TEST_CASE("split edge cases") {
    std::vector<Example> all;
    for (int i = 0; i < 10; ++i) {
        Example ex = gen_modchain(static_cast<uint64_t>(i), 1, 7);
        ex.id = i;
        all.push_back(ex);
    }
    auto one = split_dataset(all, 1, SplitFractions{});
    REQUIRE(one.size() == 4);
    CHECK(one[0].role == "sft-1");
    CHECK(one[1].role == "distill-1");

    std::vector<Example> five(all.begin(), all.begin() + 5);
    CHECK_THROWS_WITH(split_dataset(five, 2, SplitFractions{}),
                      Catch::Matchers::ContainsSubstring("insufficient"));
    SplitFractions over;
    over.warmup_each = 0.3;  // 2*2*0.3 + ... > 1
    over.rl = 0.3;
    over.eval = 0.1;
    CHECK_THROWS_WITH(split_dataset(all, 2, over), Catch::Matchers::ContainsSubstring("fractions"));
}

TEST_CASE("examples round-trip through JSONL") {
    std::vector<Example> all;
    Rng rng(31);
    for (int i = 0; i < 50; ++i) {
        Example ex = i % 2 == 0 ? gen_modchain(rng.next_u64(), 3, 23) : gen_multihop(rng.next_u64(), 2, 6);
        ex.id = i;
        all.push_back(ex);
    }
    const std::string path = "taskgen_roundtrip.jsonl";
    write_examples(path, all);
    auto back = read_examples(path);
    std::remove(path.c_str());
    REQUIRE(back.size() == all.size());
    for (size_t i = 0; i < all.size(); ++i) {
        CHECK(back[i].id == all[i].id);
        CHECK(back[i].family == all[i].family);
        CHECK(back[i].prompt == all[i].prompt);
        CHECK(back[i].cot_steps == all[i].cot_steps);
        CHECK(back[i].answer == all[i].answer);
        CHECK(back[i].difficulty == all[i].difficulty);
        CHECK(back[i].seed == all[i].seed);
    }
}

TEST_CASE("the base alphabet covers every generated token") {
    Codebook cb = build_codebook(16, base_alphabet());
    Rng rng(17);
    for (int i = 0; i < 2000; ++i) {
        Example m = gen_modchain(rng.next_u64(), 1 + static_cast<int>(rng.below(8)), 23);
        Example h = gen_multihop(rng.next_u64(), 2 + static_cast<int>(rng.below(3)), 8);
        for (const Example* ex : {&m, &h}) {
            CHECK_NOTHROW(prompt_ids(cb, *ex));
            CHECK_NOTHROW(cot_ids(cb, *ex));
            CHECK_NOTHROW(answer_ids(cb, *ex));
        }
    }
    // prompt ids start with <bos>
    Example ex = gen_modchain(3, 2, 23);
    auto ids = prompt_ids(cb, ex);
    CHECK(ids[0] == cb.bos);
    CHECK(ids.size() == ex.prompt.size() + 1);
}

TEST_CASE("largest modulus stays within the numeral alphabet") {
    Rng rng(77);
    for (int i = 0; i < 3000; ++i) {
        Example ex = gen_modchain(rng.next_u64(), 8, 97);
        check_modchain_steps(ex);  // asserts every raw value <= kMaxNumeral
    }
}

TEST_CASE("corpus generation is deterministic and prefix-stable") {
    CorpusSpec spec;
    spec.family = "modchain";
    spec.n = 10;
    spec.seed = 42;
    spec.difficulty = 2;
    spec.modulus = 7;

    auto a = gen_corpus(spec);
    auto b = gen_corpus(spec);
    REQUIRE(a.size() == 10);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == static_cast<int64_t>(i));
        CHECK(a[i].prompt == b[i].prompt);
        CHECK(a[i].answer == b[i].answer);
        CHECK(a[i].cot_steps.size() == 2);
    }

    // Growing the corpus keeps earlier examples: streams are per-index.
    spec.n = 5;
    auto head = gen_corpus(spec);
    for (size_t i = 0; i < head.size(); ++i) {
        CHECK(head[i].prompt == a[i].prompt);
        CHECK(head[i].answer == a[i].answer);
    }

    spec.family = "multihop";
    spec.n = 6;
    spec.difficulty = 2;
    spec.kb_size = 8;
    auto kb = gen_corpus(spec);
    REQUIRE(kb.size() == 6);
    CHECK(kb[0].family == "multihop");
    CHECK(kb[3].id == 3);

    spec.family = "riddles";
    CHECK_THROWS_AS(gen_corpus(spec), std::invalid_argument);
    spec.family = "modchain";
    spec.n = 0;
    CHECK_THROWS_AS(gen_corpus(spec), std::invalid_argument);
}
