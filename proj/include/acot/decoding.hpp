#pragma once

// Constrained sampling of abstract traces and unconstrained answer decoding.
//
// There is no KV cache: each emitted token re-runs a full forward over the
// prefix. To keep the matmuls large anyway, generation is done in lockstep
// over batches of sequences (forward_batch), each with its own RNG stream,
// so batch composition never changes what an individual sequence samples.
//
// The scalar softmax arithmetic here mirrors log_softmax_rows exactly
// (same max shift, same summation order, disallowed entries contribute an
// exact 0.0), so sampled log-probs agree bit-for-bit with teacher-forced
// recomputation through the graph.

#include <acot/model.hpp>
#include <acot/rng.hpp>
#include <acot/segments.hpp>
#include <acot/vocab.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace acot {

struct DecodingConstraint {
    std::vector<int> allowed;  // V_abs plus the end delimiter
    int m_max = 16;
    double temperature = 1.0;
    bool greedy = false;  // temperature -> 0 limit: argmax over the allowed set
    uint64_t seed = 0;

    void validate() const {
        if (allowed.empty()) throw std::invalid_argument("DecodingConstraint: empty allowed set");
        if (m_max < 1) throw std::invalid_argument("DecodingConstraint: m_max must be >= 1");
        if (!(temperature > 0.0)) throw std::invalid_argument("DecodingConstraint: temperature must be > 0");
    }
};

struct Trace {
    std::vector<int> codes;         // codebook ids z_1..z_m, delimiters excluded
    std::vector<double> logprobs;   // codes plus the end delimiter, renormalized
    bool forced_end = false;
};

struct Answer {
    std::vector<int> tokens;        // answer ids, <eos> excluded
    std::vector<double> logprobs;   // tokens plus <eos> when it was emitted
    bool truncated = false;         // cap reached before <eos>
    bool hit_eos = false;
};

namespace detail {

// Renormalized distribution over `allowed` (ascending ids) at temperature T.
// lse is over scaled logits, so logprob(id) = logits[id]/T - lse.
struct RowDist {
    std::vector<double> probs;  // aligned with allowed
    double inv_t = 1.0;
    double lse = 0.0;
};

inline RowDist row_dist(const double* logits, const std::vector<int>& allowed, double temperature) {
    RowDist d;
    d.inv_t = 1.0 / temperature;
    double mx = logits[allowed[0]] * d.inv_t;
    for (int id : allowed) mx = std::max(mx, logits[id] * d.inv_t);
    double sum = 0.0;
    d.probs.resize(allowed.size());
    for (size_t i = 0; i < allowed.size(); ++i) {
        d.probs[i] = std::exp(logits[allowed[i]] * d.inv_t - mx);
        sum += d.probs[i];
    }
    if (!(sum > 0.0) || !std::isfinite(sum)) {
        throw std::runtime_error("constrain_distribution: no probability mass on allowed set");
    }
    d.lse = mx + std::log(sum);
    for (double& p : d.probs) p /= sum;
    return d;
}

struct StepChoice {
    int token = -1;
    double logprob = 0.0;
};

inline StepChoice pick_token(const double* logits, const std::vector<int>& allowed,
                             double temperature, bool greedy, Rng& rng) {
    RowDist d = row_dist(logits, allowed, temperature);
    size_t idx = 0;
    if (greedy) {
        for (size_t i = 1; i < allowed.size(); ++i) {
            if (logits[allowed[i]] > logits[allowed[idx]]) idx = i;
        }
    } else {
        double r = rng.uniform();
        double cum = 0.0;
        idx = allowed.size() - 1;
        for (size_t i = 0; i < allowed.size(); ++i) {
            cum += d.probs[i];
            if (r < cum) {
                idx = i;
                break;
            }
        }
    }
    return {allowed[idx], logits[allowed[idx]] * d.inv_t - d.lse};
}

inline std::vector<int> sorted_allowed(std::vector<int> ids) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

inline std::vector<int> full_vocab_ids(int vocab) {
    std::vector<int> ids(static_cast<size_t>(vocab));
    for (int i = 0; i < vocab; ++i) ids[static_cast<size_t>(i)] = i;
    return ids;
}

// One lockstep step: forward all listed sequences under causal masks and
// return each sequence's final-row logits (vocab-wide, copied out).
inline std::vector<std::vector<double>> last_row_logits(const Model& m,
                                                        const std::vector<const std::vector<int>*>& seqs) {
    PackedBatch batch;
    for (const auto* s : seqs) {
        batch.add(*s, build_causal_mask(static_cast<int>(s->size())));
    }
    NoGradScope ng;
    ForwardOutput out = forward_batch(m, batch);
    const int vocab = m.cfg.vocab_size;
    std::vector<std::vector<double>> rows;
    rows.reserve(seqs.size());
    int offset = 0;
    for (const auto* s : seqs) {
        offset += static_cast<int>(s->size());
        const double* lr = out.logits.values().data() + static_cast<size_t>(offset - 1) * vocab;
        rows.emplace_back(lr, lr + vocab);
    }
    return rows;
}

}  // namespace detail

// p(a) = softmax(logits)(a) / sum over allowed of softmax(logits)(u), zero
// elsewhere. Returns a vocab-wide vector.
inline std::vector<double> constrain_distribution(const std::vector<double>& logits,
                                                  const std::vector<int>& allowed) {
    if (allowed.empty()) throw std::invalid_argument("constrain_distribution: empty allowed set");
    for (int id : allowed) {
        if (id < 0 || id >= static_cast<int>(logits.size())) {
            throw std::out_of_range("constrain_distribution: allowed id " + std::to_string(id) +
                                    " outside vocab of " + std::to_string(logits.size()));
        }
    }
    std::vector<int> ids = detail::sorted_allowed(allowed);
    detail::RowDist d = detail::row_dist(logits.data(), ids, 1.0);
    std::vector<double> out(logits.size(), 0.0);
    for (size_t i = 0; i < ids.size(); ++i) out[static_cast<size_t>(ids[i])] = d.probs[i];
    return out;
}

namespace detail {

// Lockstep sampling of a delimiter-terminated segment. Each context must end
// with begin_id; generation stops per-sequence when end_id is sampled over
// `allowed`, or end_id is forced once caps[i] tokens have been emitted (its
// log-prob still recorded from the renormalized distribution at that step).
// Per-sequence caps keep each sequence's budget independent of batch
// composition.
inline std::vector<Trace> sample_delimited(const Model& m, int begin_id, int end_id,
                                           const std::vector<std::vector<int>>& contexts,
                                           const std::vector<int>& allowed_in,
                                           const std::vector<int>& caps, double temperature,
                                           bool greedy, std::vector<Rng>& rngs,
                                           const char* who) {
    if (contexts.size() != rngs.size()) {
        throw std::invalid_argument(std::string(who) + ": need one RNG stream per context");
    }
    if (contexts.size() != caps.size()) {
        throw std::invalid_argument(std::string(who) + ": need one cap per context");
    }
    if (!(temperature > 0.0)) {
        throw std::invalid_argument(std::string(who) + ": temperature must be > 0");
    }
    const std::vector<int> allowed = sorted_allowed(allowed_in);
    std::vector<std::vector<int>> seqs;
    seqs.reserve(contexts.size());
    for (size_t i = 0; i < contexts.size(); ++i) {
        const auto& ctx = contexts[i];
        if (ctx.empty() || ctx.back() != begin_id) {
            throw std::invalid_argument(std::string(who) +
                                        ": context must end with the begin delimiter");
        }
        if (caps[i] < 1) throw std::invalid_argument(std::string(who) + ": cap must be >= 1");
        if (static_cast<int>(ctx.size()) + caps[i] + 1 > m.cfg.max_context) {
            throw std::invalid_argument(std::string(who) + ": context overflow: " +
                                        std::to_string(ctx.size()) + " + " +
                                        std::to_string(caps[i] + 1) + " tokens exceed context " +
                                        std::to_string(m.cfg.max_context));
        }
        seqs.push_back(ctx);
    }

    std::vector<Trace> traces(contexts.size());
    std::vector<size_t> active(contexts.size());
    for (size_t i = 0; i < active.size(); ++i) active[i] = i;

    while (!active.empty()) {
        std::vector<const std::vector<int>*> batch;
        batch.reserve(active.size());
        for (size_t i : active) batch.push_back(&seqs[i]);
        auto logit_rows = last_row_logits(m, batch);

        std::vector<size_t> still;
        for (size_t bi = 0; bi < active.size(); ++bi) {
            const size_t i = active[bi];
            Trace& tr = traces[i];
            const double* logits = logit_rows[bi].data();
            if (static_cast<int>(tr.codes.size()) == caps[i]) {
                RowDist d = row_dist(logits, allowed, temperature);
                tr.logprobs.push_back(logits[end_id] * d.inv_t - d.lse);
                tr.forced_end = true;
                seqs[i].push_back(end_id);
                continue;
            }
            StepChoice ch = pick_token(logits, allowed, temperature, greedy, rngs[i]);
            tr.logprobs.push_back(ch.logprob);
            seqs[i].push_back(ch.token);
            if (ch.token == end_id) continue;
            tr.codes.push_back(ch.token);
            still.push_back(i);
        }
        active = std::move(still);
    }
    return traces;
}

}  // namespace detail

// Constrained trace sampling in lockstep over a batch of contexts. Each
// context must end with the begin delimiter; each sequence consumes only its
// own RNG stream. Generation stops per-sequence when the end delimiter is
// sampled, or it is forced once m_max codes have been emitted.
inline std::vector<Trace> sample_traces(const Model& m, const Codebook& cb,
                                        const std::vector<std::vector<int>>& contexts,
                                        const DecodingConstraint& dc, std::vector<Rng>& rngs) {
    dc.validate();
    const std::vector<int> caps(contexts.size(), dc.m_max);
    return detail::sample_delimited(m, cb.begin_abstract, cb.end_abstract, contexts, dc.allowed,
                                    caps, dc.temperature, dc.greedy, rngs, "sample_traces");
}

// Unconstrained think-segment sampling for the verbal baselines: full-vocab
// sampling until </think>, forced at the per-sequence cap. Caps are clamped
// to leave `answer_headroom` rows of context for the answer that follows.
inline std::vector<Trace> sample_think_segments(const Model& m, const Codebook& cb,
                                                const std::vector<std::vector<int>>& contexts,
                                                int cap, int answer_headroom, double temperature,
                                                bool greedy, std::vector<Rng>& rngs) {
    if (cap < 1) throw std::invalid_argument("sample_think_segments: cap must be >= 1");
    if (answer_headroom < 0) {
        throw std::invalid_argument("sample_think_segments: negative answer headroom");
    }
    std::vector<int> caps;
    caps.reserve(contexts.size());
    for (const auto& ctx : contexts) {
        const int room =
            m.cfg.max_context - static_cast<int>(ctx.size()) - 1 - answer_headroom;
        if (room < 1) {
            throw std::invalid_argument("sample_think_segments: no room for a think segment in "
                                        "context " + std::to_string(m.cfg.max_context));
        }
        caps.push_back(std::min(cap, room));
    }
    return detail::sample_delimited(m, cb.begin_think, cb.end_think, contexts,
                                    detail::full_vocab_ids(m.cfg.vocab_size), caps, temperature,
                                    greedy, rngs, "sample_think_segments");
}

inline Trace sample_trace(const Model& m, const Codebook& cb, const std::vector<int>& context,
                          const DecodingConstraint& dc, Rng& rng) {
    std::vector<Rng> rngs{rng};
    auto traces = sample_traces(m, cb, {context}, dc, rngs);
    rng = rngs[0];
    return traces[0];
}

// Unconstrained lockstep decoding until stop_id or the cap. Used for answer
// segments and for verbal baselines (which pass their own cap and contexts).
inline std::vector<Answer> sample_answers(const Model& m, const std::vector<std::vector<int>>& contexts,
                                          int stop_id, int cap, double temperature, bool greedy,
                                          std::vector<Rng>& rngs) {
    if (cap < 1) throw std::invalid_argument("sample_answers: cap must be >= 1");
    if (!(temperature > 0.0)) throw std::invalid_argument("sample_answers: temperature must be > 0");
    if (contexts.size() != rngs.size()) {
        throw std::invalid_argument("sample_answers: need one RNG stream per context");
    }
    for (const auto& ctx : contexts) {
        if (ctx.empty()) throw std::invalid_argument("sample_answers: empty context");
        if (static_cast<int>(ctx.size()) + cap + 1 > m.cfg.max_context) {
            throw std::invalid_argument("sample_answers: context overflow: " +
                                        std::to_string(ctx.size()) + " + " + std::to_string(cap + 1) +
                                        " tokens exceed context " + std::to_string(m.cfg.max_context));
        }
    }
    const std::vector<int> all_ids = detail::full_vocab_ids(m.cfg.vocab_size);
    std::vector<std::vector<int>> seqs(contexts.begin(), contexts.end());
    std::vector<Answer> answers(contexts.size());
    std::vector<size_t> active(contexts.size());
    for (size_t i = 0; i < active.size(); ++i) active[i] = i;

    while (!active.empty()) {
        std::vector<const std::vector<int>*> batch;
        batch.reserve(active.size());
        for (size_t i : active) batch.push_back(&seqs[i]);
        auto logit_rows = detail::last_row_logits(m, batch);

        std::vector<size_t> still;
        for (size_t bi = 0; bi < active.size(); ++bi) {
            const size_t i = active[bi];
            Answer& an = answers[i];
            detail::StepChoice ch =
                detail::pick_token(logit_rows[bi].data(), all_ids, temperature, greedy, rngs[i]);
            an.logprobs.push_back(ch.logprob);
            seqs[i].push_back(ch.token);
            if (ch.token == stop_id) {
                an.hit_eos = true;
                continue;
            }
            an.tokens.push_back(ch.token);
            if (static_cast<int>(an.tokens.size()) == cap) {
                an.truncated = true;
                continue;
            }
            still.push_back(i);
        }
        active = std::move(still);
    }
    return answers;
}

// Spec'd single-sequence form: context must already include the trace and end
// with the end delimiter.
inline Answer generate_answer(const Model& m, const Codebook& cb, const std::vector<int>& context,
                              int cap, double temperature, bool greedy, Rng& rng) {
    if (context.empty() || context.back() != cb.end_abstract) {
        throw std::invalid_argument("generate_answer: context must end with the end delimiter");
    }
    std::vector<Rng> rngs{rng};
    auto answers = sample_answers(m, {context}, cb.eos, cap, temperature, greedy, rngs);
    rng = rngs[0];
    return answers[0];
}

// A full constrained generation from one prompt: trace then answer.
struct Rollout {
    std::vector<int> context;  // [<bos> x ...] (proposals may also carry c)
    Trace trace;
    Answer answer;
};

// Token sequence [context <ba> z* <ea> answer* (<eos>)], with segment
// boundaries marking X = context, empty C, Z = delimited trace, Y = answer.
inline SegmentedSequence rollout_sequence(const Codebook& cb, const Rollout& r) {
    SegmentedSequence s;
    s.ids = r.context;
    s.x_end = static_cast<int>(s.ids.size());
    s.c_end = s.x_end;
    s.ids.push_back(cb.begin_abstract);
    s.ids.insert(s.ids.end(), r.trace.codes.begin(), r.trace.codes.end());
    s.ids.push_back(cb.end_abstract);
    s.z_end = static_cast<int>(s.ids.size());
    s.ids.insert(s.ids.end(), r.answer.tokens.begin(), r.answer.tokens.end());
    if (r.answer.hit_eos) s.ids.push_back(cb.eos);
    validate_segments(s, cb);
    return s;
}

// Verbal counterpart of rollout_sequence: [context <think> w* </think> y* (<eos>)],
// X = context, empty C, Z = delimited think segment, Y = answer.
inline SegmentedSequence verbal_rollout_sequence(const Codebook& cb, const Rollout& r) {
    SegmentedSequence s;
    s.ids = r.context;
    s.x_end = static_cast<int>(s.ids.size());
    s.c_end = s.x_end;
    s.ids.push_back(cb.begin_think);
    s.ids.insert(s.ids.end(), r.trace.codes.begin(), r.trace.codes.end());
    s.ids.push_back(cb.end_think);
    s.z_end = static_cast<int>(s.ids.size());
    s.ids.insert(s.ids.end(), r.answer.tokens.begin(), r.answer.tokens.end());
    if (r.answer.hit_eos) s.ids.push_back(cb.eos);
    validate_segments(s, cb, think_protocol(cb));
    return s;
}

// Lockstep trace+answer generation for a batch of prompts. Prompt i uses RNG
// streams rng.derive("trace", i) and rng.derive("answer", i), so results are
// independent of how the batch is composed.
inline std::vector<Rollout> rollout_batch(const Model& m, const Codebook& cb,
                                          const std::vector<std::vector<int>>& prompts,
                                          const DecodingConstraint& dc, int answer_cap,
                                          bool greedy_answer, const Rng& rng) {
    std::vector<std::vector<int>> trace_ctx;
    trace_ctx.reserve(prompts.size());
    std::vector<Rng> trace_rngs, answer_rngs;
    for (size_t i = 0; i < prompts.size(); ++i) {
        auto ctx = prompts[i];
        ctx.push_back(cb.begin_abstract);
        trace_ctx.push_back(std::move(ctx));
        trace_rngs.push_back(rng.derive("trace", i));
        answer_rngs.push_back(rng.derive("answer", i));
    }
    auto traces = sample_traces(m, cb, trace_ctx, dc, trace_rngs);

    std::vector<std::vector<int>> answer_ctx;
    answer_ctx.reserve(prompts.size());
    for (size_t i = 0; i < prompts.size(); ++i) {
        auto ctx = trace_ctx[i];
        ctx.insert(ctx.end(), traces[i].codes.begin(), traces[i].codes.end());
        ctx.push_back(cb.end_abstract);
        answer_ctx.push_back(std::move(ctx));
    }
    auto answers = sample_answers(m, answer_ctx, cb.eos, answer_cap, dc.temperature,
                                  greedy_answer, answer_rngs);

    std::vector<Rollout> out(prompts.size());
    for (size_t i = 0; i < prompts.size(); ++i) {
        out[i].context = prompts[i];
        out[i].trace = std::move(traces[i]);
        out[i].answer = std::move(answers[i]);
    }
    return out;
}

// Verbal counterpart of rollout_batch: think segment then answer, same RNG
// stream derivation, full-vocab think sampling capped at think_cap.
inline std::vector<Rollout> verbal_rollout_batch(const Model& m, const Codebook& cb,
                                                 const std::vector<std::vector<int>>& prompts,
                                                 int think_cap, int answer_cap, double temperature,
                                                 bool greedy_answer, const Rng& rng) {
    std::vector<std::vector<int>> think_ctx;
    think_ctx.reserve(prompts.size());
    std::vector<Rng> think_rngs, answer_rngs;
    for (size_t i = 0; i < prompts.size(); ++i) {
        auto ctx = prompts[i];
        ctx.push_back(cb.begin_think);
        think_ctx.push_back(std::move(ctx));
        think_rngs.push_back(rng.derive("trace", i));
        answer_rngs.push_back(rng.derive("answer", i));
    }
    auto thinks = sample_think_segments(m, cb, think_ctx, think_cap, answer_cap + 1, temperature,
                                        false, think_rngs);

    std::vector<std::vector<int>> answer_ctx;
    answer_ctx.reserve(prompts.size());
    for (size_t i = 0; i < prompts.size(); ++i) {
        auto ctx = think_ctx[i];
        ctx.insert(ctx.end(), thinks[i].codes.begin(), thinks[i].codes.end());
        ctx.push_back(cb.end_think);
        answer_ctx.push_back(std::move(ctx));
    }
    auto answers =
        sample_answers(m, answer_ctx, cb.eos, answer_cap, temperature, greedy_answer, answer_rngs);

    std::vector<Rollout> out(prompts.size());
    for (size_t i = 0; i < prompts.size(); ++i) {
        out[i].context = prompts[i];
        out[i].trace = std::move(thinks[i]);
        out[i].answer = std::move(answers[i]);
    }
    return out;
}

// Teacher-forced per-token log-probs of an assembled sequence under a causal
// mask: abstract rows (codes + end delimiter) renormalized over the allowed
// set, answer rows over the full vocabulary. Matches sampling bit-for-bit.
struct ScoreResult {
    std::vector<double> abstract_logprobs;
    std::vector<double> answer_logprobs;
};

inline ScoreResult score_sequence(const Model& m, const Codebook& cb, const SegmentedSequence& seq,
                                  const std::vector<int>& allowed_in, double temperature = 1.0,
                                  SegmentProtocol proto = {}) {
    validate_segments(seq, cb, proto);
    const std::vector<int> allowed = detail::sorted_allowed(allowed_in);
    NoGradScope ng;
    ForwardOutput out = forward(m, seq.ids, build_causal_mask(static_cast<int>(seq.ids.size())));
    const int vocab = m.cfg.vocab_size;
    const std::vector<int> all_ids = detail::full_vocab_ids(vocab);
    ScoreResult res;
    for (int row = seq.c_end; row + 1 < static_cast<int>(seq.ids.size()); ++row) {
        const double* logits = out.logits.values().data() + static_cast<size_t>(row) * vocab;
        const int target = seq.ids[static_cast<size_t>(row) + 1];
        const bool abstract_row = row < seq.z_end - 1;
        detail::RowDist d = detail::row_dist(logits, abstract_row ? allowed : all_ids, temperature);
        (abstract_row ? res.abstract_logprobs : res.answer_logprobs)
            .push_back(logits[target] * d.inv_t - d.lse);
    }
    return res;
}

// One JSONL record per generation.
inline std::string trace_record(const Codebook& cb, const Rollout& r, const std::string& stage,
                                const std::string& checkpoint_id) {
    nlohmann::json j;
    j["prompt"] = r.context;
    j["prompt_text"] = join_tokens(decode(cb, r.context));
    j["trace"] = r.trace.codes;
    j["trace_logprobs"] = r.trace.logprobs;
    j["forced_end"] = r.trace.forced_end;
    j["answer"] = r.answer.tokens;
    j["answer_text"] = join_tokens(decode(cb, r.answer.tokens));
    j["answer_logprobs"] = r.answer.logprobs;
    j["truncated"] = r.answer.truncated;
    j["stage"] = stage;
    j["checkpoint"] = checkpoint_id;
    return j.dump();
}

}  // namespace acot
