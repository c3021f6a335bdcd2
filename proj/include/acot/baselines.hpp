#pragma once

// The comparison methods sharing one model, dataset, and evaluation: direct
// answering, SFT without CoT, SFT with verbal CoT (plus verbal RL), pause
// tokens, and stepwise internalization. All of these are plain causal LM
// training over method-specific sequence formats; none touch the bottleneck
// mask or the abstract codebook.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <acot/grpo.hpp>
#include <acot/warmup.hpp>

namespace acot {

struct BaselineSpec {
    std::string method;
    std::string train_format;
    std::string decode_format;
};

inline BaselineSpec baseline_spec(const std::string& method) {
    if (method == "direct") {
        return {method, "no training", "[x] -> answer"};
    }
    if (method == "sft-nocot") {
        return {method, "[x; y], y supervised", "[x] -> answer"};
    }
    if (method == "sft-cot") {
        return {method, "[x; <think> c </think>; y], c and y supervised",
                "[x; <think>] -> think segment, then answer"};
    }
    if (method == "sft-rl") {
        return {method, "sft-cot checkpoint, then GRPO over (think segment, answer)",
                "[x; <think>] -> think segment, then answer"};
    }
    if (method == "pause") {
        return {method, "[x; <pause> * m_max; y], y supervised, pauses never supervised",
                "[x; <pause> * m_max] -> answer"};
    }
    if (method == "icot-si") {
        return {method, "sft-cot checkpoint, then iterations deleting leading CoT steps",
                "[x; <think>] -> think segment, then answer"};
    }
    throw std::invalid_argument("baseline_spec: unknown method '" + method + "'");
}

struct BaselineConfig {
    std::string method = "sft-nocot";
    int epochs = 8;  // per stepwise-internalization iteration as well
    int batch_size = 16;
    int m_max = 16;  // pause-block length
    OptimizerConfig optim;
    uint64_t seed = 0;

    void validate() const {
        baseline_spec(method);
        if (epochs < 1 || batch_size < 1 || m_max < 1) {
            throw std::invalid_argument("BaselineConfig: counts must be >= 1");
        }
    }
};

// One training sequence in a baseline's format. Supervised entries are target
// positions (the predictor row is the position before), so delimiters or
// pauses are excluded simply by not listing them.
struct BaselineSequence {
    std::vector<int> ids;
    std::vector<int> supervised;
    int reasoning_tokens = 0;  // reasoning-column count under this format
};

// [<bos> x; y <eos>], y and <eos> supervised.
inline BaselineSequence build_nocot_sequence(const Codebook& cb, const Example& ex) {
    BaselineSequence s;
    s.ids = prompt_ids(cb, ex);
    const int x_end = static_cast<int>(s.ids.size());
    const auto y = answer_ids(cb, ex);
    s.ids.insert(s.ids.end(), y.begin(), y.end());
    s.ids.push_back(cb.eos);
    for (int j = x_end; j < static_cast<int>(s.ids.size()); ++j) s.supervised.push_back(j);
    return s;
}

// [<bos> x; <think> c </think>; y <eos>] with the first drop_steps CoT steps
// deleted (stepwise internalization trains on drop_steps = r). Everything
// after <think> is supervised: the CoT content, the closing delimiter the
// model must learn to emit, and the answer. Past the step count the think
// block is empty but keeps its delimiter pair.
inline BaselineSequence build_cot_sequence(const Codebook& cb, const Example& ex,
                                           int drop_steps = 0) {
    if (drop_steps < 0) throw std::invalid_argument("build_cot_sequence: negative drop_steps");
    BaselineSequence s;
    s.ids = prompt_ids(cb, ex);
    s.ids.push_back(cb.begin_think);
    const int think_pos = static_cast<int>(s.ids.size()) - 1;
    std::vector<std::string> toks;
    const size_t drop = static_cast<size_t>(drop_steps);
    for (size_t i = drop; i < ex.cot_steps.size(); ++i) {
        if (i > drop) toks.emplace_back(kNewlineToken);
        const auto step = split_tokens(ex.cot_steps[i]);
        toks.insert(toks.end(), step.begin(), step.end());
    }
    const auto c = encode(cb, toks);
    s.ids.insert(s.ids.end(), c.begin(), c.end());
    s.ids.push_back(cb.end_think);
    const auto y = answer_ids(cb, ex);
    s.ids.insert(s.ids.end(), y.begin(), y.end());
    s.ids.push_back(cb.eos);
    for (int j = think_pos + 1; j < static_cast<int>(s.ids.size()); ++j) s.supervised.push_back(j);
    s.reasoning_tokens = static_cast<int>(c.size());
    return s;
}

// The identical pause block is used at training and at eval time.
inline std::vector<int> pause_context(const Codebook& cb, const Example& ex, int m_max) {
    if (m_max < 1) throw std::invalid_argument("pause_context: m_max must be >= 1");
    auto ids = prompt_ids(cb, ex);
    ids.insert(ids.end(), static_cast<size_t>(m_max), cb.pause);
    return ids;
}

// [<bos> x; <pause> * m_max; y <eos>], y and <eos> supervised. The pauses are
// fixed inputs and never appear as targets; their embeddings still train
// through the answer loss.
inline BaselineSequence build_pause_sequence(const Codebook& cb, const Example& ex, int m_max) {
    BaselineSequence s;
    s.ids = pause_context(cb, ex, m_max);
    const int pause_end = static_cast<int>(s.ids.size());
    const auto y = answer_ids(cb, ex);
    s.ids.insert(s.ids.end(), y.begin(), y.end());
    s.ids.push_back(cb.eos);
    for (int j = pause_end; j < static_cast<int>(s.ids.size()); ++j) s.supervised.push_back(j);
    s.reasoning_tokens = m_max;
    return s;
}

struct BaselineResult {
    std::string method;
    double final_loss = 0.0;
    int steps = 0;
    int skipped = 0;
    int iterations = 0;  // stepwise-internalization rounds
    bool resumed = false;
    std::string checkpoint;
};

namespace detail {

inline StepResult baseline_train_step(Model& model, AdamW& opt,
                                      const std::vector<const BaselineSequence*>& batch,
                                      std::ostream* warn) {
    StepResult res;
    PackedBatch pb;
    for (const auto* s : batch) {
        const int n = static_cast<int>(s->ids.size());
        if (n > model.cfg.max_context) {
            ++res.skipped;
            if (warn) {
                *warn << "warning: sequence of " << n << " tokens exceeds context "
                      << model.cfg.max_context << ", skipped\n";
            }
            continue;
        }
        pb.add(s->ids, build_causal_mask(n), s->supervised);
        ++res.kept;
    }
    if (res.kept == 0) return res;

    model.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = scale(loss_batch_nll(model, pb), 1.0 / res.kept);
    tape.backward(loss);
    opt.step();
    res.loss = loss.item();
    return res;
}

// Shuffled epoch loop shared by every supervised baseline. Appends to the
// same phase,epoch,step metrics schema the warm-up stages use.
inline void baseline_epochs(Model& model, AdamW& opt, const std::vector<BaselineSequence>& seqs,
                            int epochs, int batch_size, Rng& order_rng, const std::string& tag,
                            const std::string& metrics_path, BaselineResult& out,
                            std::ostream* warn) {
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        std::vector<size_t> order(seqs.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
            const size_t hi = std::min(order.size(), at + static_cast<size_t>(batch_size));
            std::vector<const BaselineSequence*> batch;
            for (size_t i = at; i < hi; ++i) batch.push_back(&seqs[order[i]]);
            StepResult r = baseline_train_step(model, opt, batch, warn);
            out.final_loss = r.loss;
            out.skipped += r.skipped;
            ++out.steps;
            append_metrics(metrics_path, tag, epoch, out.steps, r);
        }
    }
}

// Checkpoint short-circuit shared by the baseline trainers; mirrors the
// phase-granular resume of the warm-up driver.
inline bool baseline_resume(Model& model, const Codebook& cb, const std::string& ckpt,
                            BaselineResult& res) {
    if (ckpt.empty() || !std::filesystem::exists(ckpt)) return false;
    CheckpointMeta meta;
    Model loaded = load_checkpoint(ckpt, &meta, codebook_hash(cb));
    if (!(loaded.cfg == model.cfg)) {
        throw std::runtime_error("baseline: checkpoint " + ckpt +
                                 " was trained with a different model config");
    }
    model = std::move(loaded);
    res.resumed = true;
    res.checkpoint = ckpt;
    return true;
}

inline void baseline_save(Model& model, const Codebook& cb, const std::string& ckpt,
                          const std::string& stage, const std::string& lineage,
                          BaselineResult& res) {
    if (ckpt.empty()) return;
    CheckpointMeta meta;
    meta.stage = stage;
    meta.codebook_hash = codebook_hash(cb);
    meta.extra["lineage"] = lineage;
    meta.extra["steps"] = std::to_string(res.steps);
    save_checkpoint(ckpt, model, meta);
    res.checkpoint = ckpt;
}

}  // namespace detail

// Causal SFT on (x, y) pairs or on (x, c, y) trajectories with the verbal CoT
// wrapped in think delimiters.
inline BaselineResult train_sft_baseline(Model& model, const Codebook& cb,
                                         const std::vector<Example>& split,
                                         const BaselineConfig& cfg,
                                         const std::string& out_dir = "",
                                         std::ostream* warn = nullptr) {
    cfg.validate();
    if (cfg.method != "sft-nocot" && cfg.method != "sft-cot") {
        throw std::invalid_argument("train_sft_baseline: method must be sft-nocot or sft-cot, got " +
                                    cfg.method);
    }
    if (split.empty()) throw std::invalid_argument("train_sft_baseline: empty split");

    BaselineResult res;
    res.method = cfg.method;
    const std::string ckpt = out_dir.empty() ? "" : out_dir + "/" + cfg.method + ".ckpt";
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    if (detail::baseline_resume(model, cb, ckpt, res)) return res;

    std::vector<BaselineSequence> seqs;
    seqs.reserve(split.size());
    for (const auto& ex : split) {
        seqs.push_back(cfg.method == "sft-cot" ? build_cot_sequence(cb, ex)
                                               : build_nocot_sequence(cb, ex));
    }

    AdamW opt(model.params(), cfg.optim);
    Rng order_rng = Rng(cfg.seed).derive(cfg.method + "/order");
    const std::string metrics = out_dir.empty() ? "" : out_dir + "/baseline_metrics.csv";
    detail::baseline_epochs(model, opt, seqs, cfg.epochs, cfg.batch_size, order_rng, cfg.method,
                            metrics, res, warn);
    detail::baseline_save(model, cb, ckpt, "baseline-" + cfg.method, "init", res);
    return res;
}

// [x; m_max pause tokens; y] with a deterministic pause block, answer
// supervised only.
inline BaselineResult train_pause_baseline(Model& model, const Codebook& cb,
                                           const std::vector<Example>& split,
                                           const BaselineConfig& cfg,
                                           const std::string& out_dir = "",
                                           std::ostream* warn = nullptr) {
    cfg.validate();
    if (split.empty()) throw std::invalid_argument("train_pause_baseline: empty split");

    BaselineResult res;
    res.method = "pause";
    const std::string ckpt = out_dir.empty() ? "" : out_dir + "/pause.ckpt";
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    if (detail::baseline_resume(model, cb, ckpt, res)) return res;

    std::vector<BaselineSequence> seqs;
    seqs.reserve(split.size());
    for (const auto& ex : split) seqs.push_back(build_pause_sequence(cb, ex, cfg.m_max));

    AdamW opt(model.params(), cfg.optim);
    Rng order_rng = Rng(cfg.seed).derive("pause/order");
    const std::string metrics = out_dir.empty() ? "" : out_dir + "/baseline_metrics.csv";
    detail::baseline_epochs(model, opt, seqs, cfg.epochs, cfg.batch_size, order_rng, "pause",
                            metrics, res, warn);
    detail::baseline_save(model, cb, ckpt, "baseline-pause", "init", res);
    return res;
}

// Stepwise internalization: `model` must hold the sft-cot weights on entry.
// Iteration r = 1..max_i |steps_i| trains on sequences with the first r CoT
// steps deleted (front-first), so the final iteration has no CoT left. One
// optimizer persists across iterations: it is a single training run whose
// data follows the deletion curriculum.
inline BaselineResult train_icot_si(Model& model, const Codebook& cb,
                                    const std::vector<Example>& split, const BaselineConfig& cfg,
                                    const std::string& out_dir = "", std::ostream* warn = nullptr) {
    cfg.validate();
    if (split.empty()) throw std::invalid_argument("train_icot_si: empty split");

    BaselineResult res;
    res.method = "icot-si";
    const std::string ckpt = out_dir.empty() ? "" : out_dir + "/icot-si.ckpt";
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    if (detail::baseline_resume(model, cb, ckpt, res)) return res;

    int max_steps = 0;
    for (const auto& ex : split) max_steps = std::max(max_steps, static_cast<int>(ex.cot_steps.size()));
    if (max_steps == 0) throw std::invalid_argument("train_icot_si: split has no CoT steps");

    AdamW opt(model.params(), cfg.optim);
    Rng master(cfg.seed);
    const std::string metrics = out_dir.empty() ? "" : out_dir + "/baseline_metrics.csv";
    for (int r = 1; r <= max_steps; ++r) {
        std::vector<BaselineSequence> seqs;
        seqs.reserve(split.size());
        for (const auto& ex : split) seqs.push_back(build_cot_sequence(cb, ex, r));
        Rng order_rng = master.derive("icot-si/order", static_cast<uint64_t>(r));
        detail::baseline_epochs(model, opt, seqs, cfg.epochs, cfg.batch_size, order_rng,
                                "icot-si-r" + std::to_string(r), metrics, res, warn);
        ++res.iterations;
    }
    detail::baseline_save(model, cb, ckpt, "baseline-icot-si", "baseline-sft-cot", res);
    return res;
}

// No training: records the incoming (typically freshly initialized) weights
// as the direct-answering arm so every method flows through one checkpoint
// and eval path.
inline BaselineResult train_direct_baseline(Model& model, const Codebook& cb,
                                            const BaselineConfig& cfg,
                                            const std::string& out_dir = "") {
    cfg.validate();
    BaselineResult res;
    res.method = "direct";
    const std::string ckpt = out_dir.empty() ? "" : out_dir + "/direct.ckpt";
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    if (detail::baseline_resume(model, cb, ckpt, res)) return res;
    detail::baseline_save(model, cb, ckpt, "baseline-direct", "init", res);
    return res;
}

// SFT with CoT followed by GRPO over the verbal action space: the same RL
// machinery with think-delimited, full-vocabulary trace generation. `model`
// must hold the sft-cot weights on entry; cfg.m_max is the think-segment cap.
inline RLResult train_verbal_rl(Model& model, const Codebook& cb,
                                const std::vector<Example>& rl_split, const RewardFn& reward,
                                RLConfig cfg, const std::string& out_dir = "",
                                std::ostream* warn = nullptr) {
    cfg.trace_mode = "verbal";
    if (cfg.reference == "warmup") cfg.reference = "baseline-sft-cot";
    return run_rl(model, cb, rl_split, reward, cfg, out_dir, warn);
}

}  // namespace acot
