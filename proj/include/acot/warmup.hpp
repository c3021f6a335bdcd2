#pragma once

// Policy-iteration warm-up: per round t, propose traces on the SFT slice
// (random at t=1, on-policy from [x; c] afterwards), run bottlenecked SFT to
// theta-bar(t), generate distillation traces from x alone, and self-distill
// to theta(t). Phases are atomic: each starts a fresh optimizer and derives
// its own RNG streams, so a phase whose checkpoint already exists can be
// skipped on resume without disturbing anything downstream.

#include <acot/checkpoint.hpp>
#include <acot/decoding.hpp>
#include <acot/model.hpp>
#include <acot/optimizer.hpp>
#include <acot/taskgen.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace acot {

struct WarmupConfig {
    int T = 2;
    int epochs_sft = 8;
    int epochs_distill = 8;
    OptimizerConfig optim;
    int m_max = 16;
    std::string init_scheme = "uniform";  // uniform | alphabetical-cycle | power-law
    bool backprop_on_abstract = true;
    int batch_size = 16;  // sequences per optimizer step
    double temperature = 1.0;
    int proposal_batch = 32;  // sequences decoded in lockstep
    uint64_t seed = 0;

    void validate() const {
        if (T < 1) throw std::invalid_argument("WarmupConfig: T must be >= 1");
        if (m_max < 1) throw std::invalid_argument("WarmupConfig: m_max must be >= 1");
        if (batch_size < 1 || epochs_sft < 1 || epochs_distill < 1 || proposal_batch < 1) {
            throw std::invalid_argument("WarmupConfig: counts must be >= 1");
        }
        if (init_scheme != "uniform" && init_scheme != "alphabetical-cycle" &&
            init_scheme != "power-law") {
            throw std::invalid_argument("WarmupConfig: unknown init scheme '" + init_scheme + "'");
        }
    }
};

// Random trace proposal: for each CoT step of token length |l|, draw
// n_l ~ uniform[1, max(1, floor(|l|/2))] codebook tokens by the chosen
// scheme; concatenate in step order; clip end-biased to m_max.
inline Trace propose_trace_random(const Example& ex, const Codebook& cb, int m_max,
                                  const std::string& scheme, Rng& rng) {
    if (ex.cot_steps.empty()) {
        throw std::invalid_argument("propose_trace_random: example has no CoT steps");
    }
    std::vector<double> power_weights;
    if (scheme == "power-law") {
        for (int k = 0; k < cb.M; ++k) power_weights.push_back(1.0 / (k + 1));
    }
    int cycle = 0;
    Trace tr;
    for (const auto& step : ex.cot_steps) {
        const auto len = static_cast<int64_t>(split_tokens(step).size());
        const int64_t hi = std::max<int64_t>(1, len / 2);
        const int64_t n = rng.range(1, hi);
        for (int64_t i = 0; i < n; ++i) {
            int k;
            if (scheme == "alphabetical-cycle") {
                k = cycle++ % cb.M;
            } else if (scheme == "power-law") {
                k = static_cast<int>(rng.weighted_pick(power_weights));
            } else {
                k = static_cast<int>(rng.below(static_cast<uint64_t>(cb.M)));
            }
            tr.codes.push_back(cb.abstract_id(k));
        }
    }
    if (static_cast<int>(tr.codes.size()) > m_max) tr.codes.resize(static_cast<size_t>(m_max));
    return tr;
}

// On-policy proposal context [<bos> x c <beginabstract>].
inline std::vector<int> proposal_context(const Codebook& cb, const Example& ex) {
    std::vector<int> ctx{cb.bos};
    auto x = encode(cb, ex.prompt);
    auto c = cot_ids(cb, ex);
    ctx.insert(ctx.end(), x.begin(), x.end());
    ctx.insert(ctx.end(), c.begin(), c.end());
    ctx.push_back(cb.begin_abstract);
    return ctx;
}

inline Trace propose_trace_onpolicy(const Model& m, const Codebook& cb, const Example& ex,
                                    const DecodingConstraint& dc, Rng& rng) {
    return sample_trace(m, cb, proposal_context(cb, ex), dc, rng);
}

struct StepResult {
    double loss = 0.0;  // mean over kept sequences of the per-sequence sum NLL
    int kept = 0;
    int skipped = 0;
};

namespace detail {

struct SftItem {
    SegmentedSequence seq;
    AttentionMask mask;
};

inline StepResult train_step(Model& model, AdamW& opt, const std::vector<SftItem>& items,
                             bool supervise_abstract, std::ostream* warn) {
    StepResult res;
    PackedBatch batch;
    for (const auto& it : items) {
        if (it.seq.length() > model.cfg.max_context) {
            ++res.skipped;
            if (warn) {
                *warn << "warning: sequence of " << it.seq.length() << " tokens exceeds context "
                      << model.cfg.max_context << ", skipped\n";
            }
            continue;
        }
        batch.add(it.seq.ids, it.mask,
                  supervise_abstract ? it.seq.supervised_positions() : it.seq.y_positions());
        ++res.kept;
    }
    if (res.kept == 0) return res;

    model.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = scale(loss_batch_nll(model, batch), 1.0 / res.kept);
    tape.backward(loss);
    opt.step();
    res.loss = loss.item();
    return res;
}

}  // namespace detail

// One Eq. 3 step: assemble [x; c; z-tilde; y] under the bottleneck mask,
// supervise Z_abs and Y (Y only when backprop-on-abstract is off), apply one
// optimizer update. Oversized sequences are skipped and counted.
inline StepResult bottlenecked_sft_step(Model& model, AdamW& opt, const Codebook& cb,
                                        const std::vector<const Example*>& examples,
                                        const std::vector<const Trace*>& traces,
                                        bool backprop_on_abstract, std::ostream* warn = nullptr) {
    if (examples.size() != traces.size()) {
        throw std::invalid_argument("bottlenecked_sft_step: examples/traces size mismatch");
    }
    std::vector<detail::SftItem> items;
    for (size_t i = 0; i < examples.size(); ++i) {
        detail::SftItem it;
        it.seq = assemble_bottleneck(cb, encode(cb, examples[i]->prompt), cot_ids(cb, *examples[i]),
                                     traces[i]->codes, answer_ids(cb, *examples[i]));
        it.mask = build_bottleneck_mask(it.seq);
        items.push_back(std::move(it));
    }
    return detail::train_step(model, opt, items, backprop_on_abstract, warn);
}

// One Eq. 4 step: plain causal NLL on [x; z-tilde'; y] over Z_abs and Y.
inline StepResult self_distill_step(Model& model, AdamW& opt, const Codebook& cb,
                                    const std::vector<const Example*>& examples,
                                    const std::vector<const Trace*>& traces,
                                    std::ostream* warn = nullptr) {
    if (examples.size() != traces.size()) {
        throw std::invalid_argument("self_distill_step: examples/traces size mismatch");
    }
    std::vector<detail::SftItem> items;
    for (size_t i = 0; i < examples.size(); ++i) {
        detail::SftItem it;
        it.seq = assemble_bottleneck(cb, encode(cb, examples[i]->prompt), {}, traces[i]->codes,
                                     answer_ids(cb, *examples[i]));
        it.mask = build_causal_mask(it.seq.length());
        items.push_back(std::move(it));
    }
    return detail::train_step(model, opt, items, true, warn);
}

struct PhaseRecord {
    std::string stage;      // warmup-t or distill-t
    std::string lineage;    // stage this phase started from
    double final_loss = 0.0;
    int steps = 0;
    int skipped = 0;
    bool resumed = false;   // loaded from an existing checkpoint
};

struct WarmupResult {
    std::vector<PhaseRecord> phases;
};

namespace detail {

inline const DatasetSplit& find_split(const std::vector<DatasetSplit>& splits,
                                      const std::string& role) {
    for (const auto& s : splits)
        if (s.role == role) return s;
    throw std::invalid_argument("run_warmup: missing dataset split '" + role + "'");
}

inline void append_metrics(const std::string& path, const std::string& phase, int epoch, int step,
                           const StepResult& r) {
    if (path.empty()) return;
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream f(path, std::ios::app);
    f << (fresh ? "phase,epoch,step,loss,kept,skipped\n" : "");
    f << phase << "," << epoch << "," << step << "," << r.loss << "," << r.kept << ","
      << r.skipped << "\n";
}

inline void write_trace_log(const std::string& path, const Codebook& cb,
                            const std::vector<const Example*>& examples,
                            const std::vector<Trace>& traces, const std::string& stage) {
    if (path.empty()) return;
    std::ofstream f(path);
    for (size_t i = 0; i < traces.size(); ++i) {
        Rollout r;
        r.context = prompt_ids(cb, *examples[i]);
        r.trace = traces[i];
        f << trace_record(cb, r, stage, stage) << "\n";
    }
}

}  // namespace detail

// Algorithm-1 driver. Emits per-phase checkpoints (stage + lineage recorded),
// proposal/distill trace logs, and a metrics CSV when out_dir is non-empty.
inline WarmupResult run_warmup(Model& model, const Codebook& cb,
                               const std::vector<DatasetSplit>& splits, const WarmupConfig& cfg,
                               const std::string& out_dir = "", std::ostream* warn = nullptr) {
    cfg.validate();
    const uint64_t cb_hash = codebook_hash(cb);
    Rng master(cfg.seed);
    WarmupResult result;

    const std::string metrics = out_dir.empty() ? "" : out_dir + "/warmup_metrics.csv";
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    std::string lineage = "init";
    auto run_phase = [&](const std::string& stage, const DatasetSplit& split, int epochs,
                         bool bottleneck, int round) {
        PhaseRecord rec;
        rec.stage = stage;
        rec.lineage = lineage;
        const std::string ckpt = out_dir.empty() ? "" : out_dir + "/" + stage + ".ckpt";

        if (!ckpt.empty() && std::filesystem::exists(ckpt)) {
            CheckpointMeta meta;
            Model loaded = load_checkpoint(ckpt, &meta, cb_hash);
            if (!(loaded.cfg == model.cfg)) {
                throw std::runtime_error("run_warmup: checkpoint " + ckpt +
                                         " was trained with a different model config");
            }
            model = std::move(loaded);
            rec.resumed = true;
            result.phases.push_back(rec);
            lineage = stage;
            return;
        }

        // Propose traces once per phase, from the phase-entry parameters.
        Rng propose_rng = master.derive(stage + "/propose");
        std::vector<const Example*> exs;
        for (const auto& ex : split.examples) exs.push_back(&ex);
        std::vector<Trace> traces(exs.size());
        if (bottleneck && round == 1) {
            for (size_t i = 0; i < exs.size(); ++i) {
                Rng r = propose_rng.derive("ex", static_cast<uint64_t>(exs[i]->id));
                traces[i] = propose_trace_random(*exs[i], cb, cfg.m_max, cfg.init_scheme, r);
            }
        } else {
            DecodingConstraint dc;
            dc.allowed = allowed_set(cb);
            dc.m_max = cfg.m_max;
            dc.temperature = cfg.temperature;
            for (size_t at = 0; at < exs.size(); at += static_cast<size_t>(cfg.proposal_batch)) {
                const size_t hi = std::min(exs.size(), at + static_cast<size_t>(cfg.proposal_batch));
                std::vector<std::vector<int>> ctx;
                std::vector<Rng> rngs;
                for (size_t i = at; i < hi; ++i) {
                    std::vector<int> base = bottleneck ? proposal_context(cb, *exs[i])
                                                       : prompt_ids(cb, *exs[i]);
                    if (!bottleneck) base.push_back(cb.begin_abstract);
                    ctx.push_back(std::move(base));
                    rngs.push_back(propose_rng.derive("ex", static_cast<uint64_t>(exs[i]->id)));
                }
                auto got = sample_traces(model, cb, ctx, dc, rngs);
                for (size_t i = at; i < hi; ++i) traces[i] = std::move(got[i - at]);
            }
        }
        if (!out_dir.empty()) {
            detail::write_trace_log(out_dir + "/" + stage + "_traces.jsonl", cb, exs, traces, stage);
        }

        AdamW opt(model.params(), cfg.optim);
        Rng order_rng = master.derive(stage + "/order");
        int step = 0;
        for (int epoch = 1; epoch <= epochs; ++epoch) {
            std::vector<size_t> order(exs.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = i;
            order_rng.shuffle(order);
            for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
                const size_t hi = std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
                std::vector<const Example*> bex;
                std::vector<const Trace*> btr;
                for (size_t i = at; i < hi; ++i) {
                    bex.push_back(exs[order[i]]);
                    btr.push_back(&traces[order[i]]);
                }
                StepResult r = bottleneck
                                   ? bottlenecked_sft_step(model, opt, cb, bex, btr,
                                                           cfg.backprop_on_abstract, warn)
                                   : self_distill_step(model, opt, cb, bex, btr, warn);
                rec.final_loss = r.loss;
                rec.skipped += r.skipped;
                ++step;
                detail::append_metrics(metrics, stage, epoch, step, r);
            }
        }
        rec.steps = step;

        if (!ckpt.empty()) {
            CheckpointMeta meta;
            meta.stage = stage;
            meta.codebook_hash = cb_hash;
            meta.extra["lineage"] = rec.lineage;
            meta.extra["steps"] = std::to_string(rec.steps);
            save_checkpoint(ckpt, model, meta);
        }
        result.phases.push_back(rec);
        lineage = stage;
    };

    for (int t = 1; t <= cfg.T; ++t) {
        run_phase("warmup-" + std::to_string(t),
                  detail::find_split(splits, "sft-" + std::to_string(t)), cfg.epochs_sft, true, t);
        run_phase("distill-" + std::to_string(t),
                  detail::find_split(splits, "distill-" + std::to_string(t)), cfg.epochs_distill,
                  false, t);
    }
    return result;
}

}  // namespace acot
