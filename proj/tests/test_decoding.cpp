#include <acot/decoding.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "oracles.hpp"

using namespace acot;
using testutil::rigged_model;
using testutil::small_cb;

namespace {

// Logit row over the rigged vocab putting (unnormalized) weight w_i on
// token i; everything listed gets log(w), the rest a large negative value.
std::vector<double> weights_row(int vocab, const std::vector<std::pair<int, double>>& w) {
    std::vector<double> row(static_cast<size_t>(vocab), -40.0);
    for (auto [id, weight] : w) row[static_cast<size_t>(id)] = std::log(weight);
    return row;
}

std::vector<int> trace_context(const Codebook& cb) {
    return {cb.bos, 0, 6, 1, cb.begin_abstract};
}

}  // namespace

TEST_CASE("renormalization worked example") {
    // full-vocab probs {a:0.2, b:0.3, c:0.5}, allowed {a,c} -> {0.2857, 0.7143}
    std::vector<double> logits = {std::log(0.2), std::log(0.3), std::log(0.5)};
    auto p = constrain_distribution(logits, {0, 2});
    CHECK(p[0] == Catch::Approx(0.2857).margin(5e-5));
    CHECK(p[2] == Catch::Approx(0.7143).margin(5e-5));
    CHECK(p[0] == Catch::Approx(2.0 / 7.0).margin(1e-12));
    CHECK(p[2] == Catch::Approx(5.0 / 7.0).margin(1e-12));
    CHECK(p[1] == 0.0);
}

TEST_CASE("renormalization over the full vocabulary is the softmax itself") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> logits(7);
        for (auto& l : logits) l = rng.gaussian(0.0, 3.0);
        auto p = constrain_distribution(logits, {0, 1, 2, 3, 4, 5, 6});

        double mx = *std::max_element(logits.begin(), logits.end());
        double denom = 0.0;
        for (double l : logits) denom += std::exp(l - mx);
        for (size_t i = 0; i < logits.size(); ++i) {
            CHECK(p[i] == Catch::Approx(std::exp(logits[i] - mx) / denom).margin(1e-12));
        }
    }
}

TEST_CASE("renormalization onto a single token gives probability 1") {
    std::vector<double> logits = {1.0, -2.0, 0.5, 3.0};
    auto p = constrain_distribution(logits, {1});
    CHECK(p[1] == 1.0);
    CHECK(p[0] == 0.0);
    CHECK(p[2] == 0.0);
    CHECK(p[3] == 0.0);
}

TEST_CASE("renormalized distribution sums to 1 within 1e-12") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> logits(23);
        for (auto& l : logits) l = rng.gaussian(0.0, 8.0);
        std::vector<int> allowed;
        for (int i = 0; i < 23; ++i)
            if (rng.uniform() < 0.4) allowed.push_back(i);
        if (allowed.empty()) allowed.push_back(static_cast<int>(rng.below(23)));

        auto p = constrain_distribution(logits, allowed);
        double total = 0.0;
        for (double v : p) total += v;
        CHECK(std::abs(total - 1.0) < 1e-12);
        for (int i = 0; i < 23; ++i) {
            if (std::find(allowed.begin(), allowed.end(), i) == allowed.end()) CHECK(p[i] == 0.0);
        }
    }
}

TEST_CASE("constrain_distribution rejects bad allowed sets") {
    std::vector<double> logits = {0.0, 1.0};
    CHECK_THROWS_WITH(constrain_distribution(logits, {}),
                      Catch::Matchers::ContainsSubstring("empty allowed set"));
    CHECK_THROWS_WITH(constrain_distribution(logits, {5}),
                      Catch::Matchers::ContainsSubstring("outside vocab"));
}

TEST_CASE("m_max cap forces the end delimiter with its log-prob recorded") {
    Codebook cb = small_cb();
    // Codebook token <A> dominates: sampling virtually never ends on its own.
    Model m = rigged_model(cb, weights_row(cb.size(), {{cb.abstract_id(0), 1.0}}));
    DecodingConstraint dc;
    dc.allowed = allowed_set(cb);
    dc.m_max = 1;

    Rng rng(4);
    Trace tr = sample_trace(m, cb, trace_context(cb), dc, rng);
    REQUIRE(tr.codes.size() == 1);
    CHECK(tr.codes[0] == cb.abstract_id(0));
    CHECK(tr.forced_end);
    REQUIRE(tr.logprobs.size() == 2);
    // Forced delimiter log-prob comes from the renormalized distribution,
    // not a hard 0: with <A> at weight 1 and the other four allowed tokens
    // at e^-40, log p(<endabstract>) = -40 - log(1 + 4 e^-40).
    CHECK(tr.logprobs[1] == Catch::Approx(-40.0).margin(1e-6));
    CHECK(tr.logprobs[0] == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("greedy trace decoding is the argmax over the allowed set") {
    Codebook cb = small_cb();
    // Highest overall logit sits OUTSIDE the allowed set; <C> leads inside it.
    auto row = weights_row(cb.size(), {{cb.abstract_id(2), 2.0}, {cb.end_abstract, 1.0}});
    row[0] = 10.0;  // base token, never eligible
    Model m = rigged_model(cb, row);
    DecodingConstraint dc;
    dc.allowed = allowed_set(cb);
    dc.m_max = 3;
    dc.greedy = true;

    Rng rng(0);
    Trace tr = sample_trace(m, cb, trace_context(cb), dc, rng);
    REQUIRE(tr.codes.size() == 3);
    for (int c : tr.codes) CHECK(c == cb.abstract_id(2));
    CHECK(tr.forced_end);

    Rng rng2(99);  // greedy ignores the stream
    Trace tr2 = sample_trace(m, cb, trace_context(cb), dc, rng2);
    CHECK(tr2.codes == tr.codes);
    CHECK(tr2.logprobs == tr.logprobs);
}

TEST_CASE("sampled end delimiter stops the trace without the forced flag") {
    Codebook cb = small_cb();
    Model m = rigged_model(cb, weights_row(cb.size(), {{cb.end_abstract, 1.0}}));
    DecodingConstraint dc;
    dc.allowed = allowed_set(cb);
    dc.m_max = 5;
    dc.greedy = true;

    Rng rng(0);
    Trace tr = sample_trace(m, cb, trace_context(cb), dc, rng);
    CHECK(tr.codes.empty());
    CHECK_FALSE(tr.forced_end);
    REQUIRE(tr.logprobs.size() == 1);
}

TEST_CASE("trace sampling validates its context") {
    Codebook cb = small_cb();
    Model m = testutil::random_model(cb, 1, 3, 24);
    DecodingConstraint dc;
    dc.allowed = allowed_set(cb);
    dc.m_max = 4;
    Rng rng(0);

    CHECK_THROWS_WITH(sample_trace(m, cb, {cb.bos, 0, 1}, dc, rng),
                      Catch::Matchers::ContainsSubstring("begin delimiter"));

    std::vector<int> long_ctx(21, 0);
    long_ctx[0] = cb.bos;
    long_ctx.back() = cb.begin_abstract;
    CHECK_THROWS_WITH(sample_trace(m, cb, long_ctx, dc, rng),
                      Catch::Matchers::ContainsSubstring("context overflow"));
}

TEST_CASE("10,000 constrained steps never leave the allowed set") {
    Codebook cb = small_cb(6);
    Model m = testutil::random_model(cb, 2, 17, 64);
    // Widen the logit spread so the trace-length distribution is not flat.
    for (auto& v : m.w_out.values()) v *= 40.0;

    DecodingConstraint dc;
    dc.allowed = allowed_set(cb);
    dc.m_max = 8;
    const std::set<int> allowed(dc.allowed.begin(), dc.allowed.end());

    Rng master(5);
    long steps = 0;
    int forced = 0, sampled_end = 0;
    for (uint64_t round = 0; steps < 10000; ++round) {
        std::vector<std::vector<int>> contexts;
        std::vector<Rng> rngs;
        for (uint64_t i = 0; i < 64; ++i) {
            contexts.push_back({cb.bos, static_cast<int>(i % 6), 7, cb.begin_abstract});
            rngs.push_back(master.derive("scan", round * 64 + i));
        }
        auto traces = sample_traces(m, cb, contexts, dc, rngs);
        for (const auto& tr : traces) {
            REQUIRE(static_cast<int>(tr.codes.size()) <= dc.m_max);
            for (int c : tr.codes) {
                REQUIRE(allowed.count(c) == 1);
                REQUIRE(cb.is_abstract(c));
            }
            // forced exactly when the cap was hit
            CHECK(tr.forced_end == (static_cast<int>(tr.codes.size()) == dc.m_max));
            CHECK(tr.logprobs.size() == tr.codes.size() + 1);
            steps += static_cast<long>(tr.logprobs.size());
            (tr.forced_end ? forced : sampled_end) += 1;
        }
    }
    // Both stopping modes must actually occur for the scan to mean anything.
    CHECK(forced > 0);
    CHECK(sampled_end > 0);
}

TEST_CASE("greedy answer decoding is deterministic and respects the cap") {
    Codebook cb = small_cb();
    auto row = weights_row(cb.size(), {{3, 1.0}});  // never emits <eos>
    Model m = rigged_model(cb, row);
    std::vector<int> ctx = {cb.bos, 0, 6, 1, cb.begin_abstract, cb.abstract_id(0), cb.end_abstract};

    Rng rng(0);
    Answer a = generate_answer(m, cb, ctx, 5, 1.0, true, rng);
    CHECK(a.tokens == std::vector<int>(5, 3));
    CHECK(a.truncated);
    CHECK_FALSE(a.hit_eos);
    CHECK(a.logprobs.size() == 5);

    Rng rng2(123);
    Answer b = generate_answer(m, cb, ctx, 5, 1.0, true, rng2);
    CHECK(b.tokens == a.tokens);
    CHECK(b.logprobs == a.logprobs);

    // <eos> dominant: stops immediately, no truncation.
    Model stopper = rigged_model(cb, weights_row(cb.size(), {{cb.eos, 1.0}}));
    Rng rng3(0);
    Answer c = generate_answer(stopper, cb, ctx, 5, 1.0, true, rng3);
    CHECK(c.tokens.empty());
    CHECK(c.hit_eos);
    CHECK_FALSE(c.truncated);
    CHECK(c.logprobs.size() == 1);
}

TEST_CASE("answer decoding validates its context") {
    Codebook cb = small_cb();
    Model m = testutil::random_model(cb, 1, 3, 24);
    Rng rng(0);
    CHECK_THROWS_WITH(generate_answer(m, cb, {cb.bos, 0}, 4, 1.0, true, rng),
                      Catch::Matchers::ContainsSubstring("end delimiter"));
    std::vector<int> long_ctx(22, 1);
    long_ctx.back() = cb.end_abstract;
    CHECK_THROWS_WITH(generate_answer(m, cb, long_ctx, 4, 1.0, true, rng),
                      Catch::Matchers::ContainsSubstring("context overflow"));
}

TEST_CASE("sampled log-probs match teacher-forced recomputation within 1e-10") {
    Codebook cb = small_cb(5);
    Model m = testutil::random_model(cb, 2, 23, 64);
    for (auto& v : m.w_out.values()) v *= 25.0;

    DecodingConstraint dc;
    dc.allowed = allowed_set(cb);
    dc.m_max = 6;

    Rng master(31);
    std::vector<std::vector<int>> prompts;
    for (int i = 0; i < 24; ++i) prompts.push_back({cb.bos, i % 6, 6, (i * 3) % 6, 7});

    auto rollouts = rollout_batch(m, cb, prompts, dc, 4, false, master.derive("ro"));
    for (const auto& r : rollouts) {
        SegmentedSequence seq = rollout_sequence(cb, r);
        ScoreResult sc = score_sequence(m, cb, seq, dc.allowed);
        REQUIRE(sc.abstract_logprobs.size() == r.trace.logprobs.size());
        REQUIRE(sc.answer_logprobs.size() == r.answer.logprobs.size());
        for (size_t i = 0; i < sc.abstract_logprobs.size(); ++i) {
            CHECK(std::abs(sc.abstract_logprobs[i] - r.trace.logprobs[i]) < 1e-10);
        }
        for (size_t i = 0; i < sc.answer_logprobs.size(); ++i) {
            CHECK(std::abs(sc.answer_logprobs[i] - r.answer.logprobs[i]) < 1e-10);
        }
    }
}

TEST_CASE("a sequence's samples do not depend on batch composition") {
    Codebook cb = small_cb(5);
    Model m = testutil::random_model(cb, 2, 29, 64);
    for (auto& v : m.w_out.values()) v *= 25.0;

    DecodingConstraint dc;
    dc.allowed = allowed_set(cb);
    dc.m_max = 6;
    Rng master(77);

    std::vector<int> prompt = {cb.bos, 2, 6, 3, 7};
    auto alone = rollout_batch(m, cb, {prompt}, dc, 4, false, master.derive("g"));
    auto crowd = rollout_batch(m, cb, {prompt, {cb.bos, 1, 6, 1, 7}, {cb.bos, 4, 6, 0, 7}}, dc, 4,
                               false, master.derive("g"));

    CHECK(alone[0].trace.codes == crowd[0].trace.codes);
    CHECK(alone[0].trace.forced_end == crowd[0].trace.forced_end);
    CHECK(alone[0].answer.tokens == crowd[0].answer.tokens);
    REQUIRE(alone[0].trace.logprobs.size() == crowd[0].trace.logprobs.size());
    for (size_t i = 0; i < alone[0].trace.logprobs.size(); ++i) {
        CHECK(alone[0].trace.logprobs[i] ==
              Catch::Approx(crowd[0].trace.logprobs[i]).margin(1e-9));
    }
}

TEST_CASE("identical seeds reproduce identical rollouts") {
    Codebook cb = small_cb(4);
    Model m = testutil::random_model(cb, 1, 41, 64);
    DecodingConstraint dc;
    dc.allowed = allowed_set(cb);
    dc.m_max = 5;

    std::vector<std::vector<int>> prompts = {{cb.bos, 0, 6, 1, 7}, {cb.bos, 2, 6, 2, 7}};
    Rng master(13);
    auto a = rollout_batch(m, cb, prompts, dc, 4, false, master.derive("x"));
    auto b = rollout_batch(m, cb, prompts, dc, 4, false, master.derive("x"));
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].trace.codes == b[i].trace.codes);
        CHECK(a[i].trace.logprobs == b[i].trace.logprobs);
        CHECK(a[i].answer.tokens == b[i].answer.tokens);
        CHECK(a[i].answer.logprobs == b[i].answer.logprobs);
    }
}

TEST_CASE("rollout sequences segment as [X][Z][Y] with empty C") {
    Codebook cb = small_cb();
    Rollout r;
    r.context = {cb.bos, 0, 6, 1, 7};
    r.trace.codes = {cb.abstract_id(1), cb.abstract_id(3)};
    r.trace.logprobs = {0, 0, 0};
    r.answer.tokens = {4};
    r.answer.logprobs = {0, 0};
    r.answer.hit_eos = true;

    SegmentedSequence s = rollout_sequence(cb, r);
    CHECK(s.x_end == 5);
    CHECK(s.c_end == 5);
    CHECK(s.z_end == 9);
    REQUIRE(s.ids.size() == 11);
    CHECK(s.ids[5] == cb.begin_abstract);
    CHECK(s.ids[6] == cb.abstract_id(1));
    CHECK(s.ids[8] == cb.end_abstract);
    CHECK(s.ids[9] == 4);
    CHECK(s.ids[10] == cb.eos);

    r.answer.hit_eos = false;  // truncated answers carry no <eos>
    CHECK(rollout_sequence(cb, r).ids.size() == 10);
}

TEST_CASE("trace records round-trip through JSON") {
    Codebook cb = small_cb();
    Rollout r;
    r.context = {cb.bos, 3, 6, 2, 7};
    r.trace.codes = {cb.abstract_id(0)};
    r.trace.logprobs = {-0.5, -1.25};
    r.trace.forced_end = false;
    r.answer.tokens = {1};
    r.answer.logprobs = {-0.25, -0.75};
    r.answer.hit_eos = true;
    auto j = nlohmann::json::parse(trace_record(cb, r, "rl", "ckpt-003"));
    CHECK(j["prompt"].get<std::vector<int>>() == r.context);
    CHECK(j["trace"].get<std::vector<int>>() == r.trace.codes);
    CHECK(j["trace_logprobs"].get<std::vector<double>>() == r.trace.logprobs);
    CHECK(j["answer"].get<std::vector<int>>() == r.answer.tokens);
    CHECK(j["forced_end"] == false);
    CHECK(j["stage"] == "rl");
    CHECK(j["checkpoint"] == "ckpt-003");
    CHECK(j["answer_text"] == "1");
}
