#pragma once

// Table-1-style evaluation with the compression metric, token-frequency and
// power-law instrumentation, the permutation/truncation sensitivity
// harnesses, and the vocabulary-size sweep. Everything here is pure
// aggregation over checkpoints and logs; plots are static SVG files emitted
// next to their underlying CSVs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <acot/baselines.hpp>

namespace acot {

// Which decode geometry a method tag uses at eval time.
inline std::string eval_family(const std::string& method) {
    if (method == "abstract") return "abstract";
    if (method == "direct" || method == "sft-nocot") return "answer-only";
    if (method == "sft-cot" || method == "sft-rl" || method == "icot-si") return "verbal";
    if (method == "pause") return "pause";
    throw std::invalid_argument("eval_family: unknown method '" + method + "'");
}

struct EvalConfig {
    std::string method = "abstract";
    int m_max = 16;       // trace cap (abstract), think cap (verbal), pause-block length
    int answer_cap = 32;
    bool greedy = true;   // greedy decoding makes eval deterministic given the checkpoint
    double temperature = 1.0;
    uint64_t seed = 0;
    int64_t limit = 0;    // 0 = the whole split

    void validate() const {
        eval_family(method);
        if (m_max < 1 || answer_cap < 1) {
            throw std::invalid_argument("EvalConfig: caps must be >= 1");
        }
        if (!(temperature > 0.0)) throw std::invalid_argument("EvalConfig: temperature must be > 0");
        if (limit < 0) throw std::invalid_argument("EvalConfig: negative limit");
    }
};

struct EvalRecord {
    int64_t example_id = 0;
    bool correct = false;
    int reasoning_tokens = 0;
    int response_tokens = 0;
    std::vector<int> trace;   // intermediate token ids (codes / think tokens), delimiters excluded
    std::vector<int> answer;  // emitted answer ids, <eos> excluded
};

// Token accounting follows the reasoning + response convention: reasoning is
// the pause count, the think-segment length, or the codebook-trace length
// (zero for answer-only methods); response is the emitted answer length.
// Delimiters and <eos> are never counted.
struct EvalReport {
    std::string method;
    double accuracy = 0.0;
    double mean_reasoning_tokens = 0.0;
    double mean_response_tokens = 0.0;
    double mean_combined_tokens = 0.0;
    double compression_ratio = 0.0;  // vs compression_reference; 0 until attached
    std::string compression_reference;
    std::vector<EvalRecord> records;
};

// E[|c_verbal|] / E[m].
inline double compression_ratio(double mean_verbal_tokens, double mean_abstract_tokens) {
    if (!(mean_verbal_tokens > 0.0) || !(mean_abstract_tokens > 0.0)) {
        throw std::invalid_argument("compression_ratio: both token means must be > 0");
    }
    return mean_verbal_tokens / mean_abstract_tokens;
}

inline void attach_compression(EvalReport& report, double mean_verbal_tokens,
                               const std::string& reference) {
    report.compression_ratio = compression_ratio(mean_verbal_tokens, report.mean_reasoning_tokens);
    report.compression_reference = reference;
}

inline double mean_gold_cot_tokens(const std::vector<Example>& split) {
    if (split.empty()) throw std::invalid_argument("mean_gold_cot_tokens: empty split");
    double total = 0.0;
    for (const auto& ex : split) total += static_cast<double>(cot_tokens(ex).size());
    return total / static_cast<double>(split.size());
}

inline EvalReport evaluate(const Model& m, const Codebook& cb, const std::vector<Example>& split,
                           const RewardFn& reward, const EvalConfig& cfg) {
    cfg.validate();
    if (split.empty()) throw std::invalid_argument("evaluate: empty split");
    const std::string family = eval_family(cfg.method);

    std::vector<const Example*> chosen;
    for (const auto& ex : split) {
        chosen.push_back(&ex);
        if (cfg.limit > 0 && chosen.size() == static_cast<size_t>(cfg.limit)) break;
    }
    std::vector<std::vector<int>> prompts;
    prompts.reserve(chosen.size());
    for (const auto* ex : chosen) prompts.push_back(prompt_ids(cb, *ex));
    const Rng master = Rng(cfg.seed).derive("eval/" + cfg.method);

    EvalReport rep;
    rep.method = cfg.method;
    rep.records.resize(chosen.size());
    std::vector<Answer> answers;

    if (family == "abstract") {
        DecodingConstraint dc;
        dc.allowed = allowed_set(cb);
        dc.m_max = cfg.m_max;
        dc.temperature = cfg.temperature;
        dc.greedy = cfg.greedy;
        auto rollouts = rollout_batch(m, cb, prompts, dc, cfg.answer_cap, cfg.greedy, master);
        for (size_t i = 0; i < rollouts.size(); ++i) {
            rep.records[i].trace = std::move(rollouts[i].trace.codes);
            answers.push_back(std::move(rollouts[i].answer));
        }
    } else if (family == "verbal") {
        std::vector<std::vector<int>> tctx = prompts;
        std::vector<Rng> trngs, arngs;
        for (size_t i = 0; i < tctx.size(); ++i) {
            tctx[i].push_back(cb.begin_think);
            trngs.push_back(master.derive("trace", i));
            arngs.push_back(master.derive("answer", i));
        }
        auto thinks = sample_think_segments(m, cb, tctx, cfg.m_max, cfg.answer_cap + 1,
                                            cfg.temperature, cfg.greedy, trngs);
        std::vector<std::vector<int>> actx = std::move(tctx);
        for (size_t i = 0; i < actx.size(); ++i) {
            actx[i].insert(actx[i].end(), thinks[i].codes.begin(), thinks[i].codes.end());
            actx[i].push_back(cb.end_think);
            rep.records[i].trace = std::move(thinks[i].codes);
        }
        answers = sample_answers(m, actx, cb.eos, cfg.answer_cap, cfg.temperature, cfg.greedy,
                                 arngs);
    } else {  // answer-only or pause
        std::vector<std::vector<int>> actx;
        std::vector<Rng> arngs;
        for (size_t i = 0; i < chosen.size(); ++i) {
            actx.push_back(family == "pause" ? pause_context(cb, *chosen[i], cfg.m_max)
                                             : prompts[i]);
            arngs.push_back(master.derive("answer", i));
        }
        answers = sample_answers(m, actx, cb.eos, cfg.answer_cap, cfg.temperature, cfg.greedy,
                                 arngs);
    }

    double correct_sum = 0.0, reason_sum = 0.0, resp_sum = 0.0;
    for (size_t i = 0; i < chosen.size(); ++i) {
        EvalRecord& r = rep.records[i];
        r.example_id = chosen[i]->id;
        r.reasoning_tokens =
            family == "pause" ? cfg.m_max : static_cast<int>(r.trace.size());
        r.answer = std::move(answers[i].tokens);
        r.response_tokens = static_cast<int>(r.answer.size());
        const RewardResult rr = reward(*chosen[i], r.answer);
        r.correct = rr.ok && rr.score >= 0.5;
        correct_sum += r.correct ? 1.0 : 0.0;
        reason_sum += r.reasoning_tokens;
        resp_sum += r.response_tokens;
    }
    const auto n = static_cast<double>(chosen.size());
    rep.accuracy = correct_sum / n;
    rep.mean_reasoning_tokens = reason_sum / n;
    rep.mean_response_tokens = resp_sum / n;
    rep.mean_combined_tokens = (reason_sum + resp_sum) / n;
    return rep;
}

inline void write_eval_csv(const std::string& path, const Codebook& cb, const EvalReport& rep) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_eval_csv: cannot open " + path);
    f << "example_id,correct,reasoning_tokens,response_tokens,trace,answer\n";
    for (const auto& r : rep.records) {
        f << r.example_id << "," << (r.correct ? 1 : 0) << "," << r.reasoning_tokens << ","
          << r.response_tokens << "," << join_tokens(decode(cb, r.trace)) << ","
          << join_tokens(decode(cb, r.answer)) << "\n";
    }
}

inline void append_eval_summary(const std::string& path, const EvalReport& rep) {
    const bool fresh =
        !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream f(path, std::ios::app);
    if (!f) throw std::runtime_error("append_eval_summary: cannot open " + path);
    if (fresh) {
        f << "method,examples,accuracy,mean_reasoning_tokens,mean_response_tokens,"
             "mean_combined_tokens,compression_ratio,compression_reference\n";
    }
    f << rep.method << "," << rep.records.size() << "," << rep.accuracy << ","
      << rep.mean_reasoning_tokens << "," << rep.mean_response_tokens << ","
      << rep.mean_combined_tokens << "," << rep.compression_ratio << ","
      << rep.compression_reference << "\n";
}

// ---------------------------------------------------------------------------
// Token frequencies and the power-law fit.

struct FrequencyTable {
    std::string label;            // checkpoint id or episode marker
    int64_t episodes = 0;
    std::vector<int64_t> counts;  // one slot per codebook token, zeros included
    int64_t total = 0;            // always equals the sum of counts
};

// Exact counts over the codebook tokens in a set of traces. Delimiters and
// any non-codebook ids are excluded from both the counts and the total.
inline FrequencyTable frequency_table(const Codebook& cb,
                                      const std::vector<std::vector<int>>& traces,
                                      std::string label = "", int64_t episodes = 0) {
    if (traces.empty()) throw std::invalid_argument("frequency_table: no trace logs");
    FrequencyTable t;
    t.label = std::move(label);
    t.episodes = episodes;
    t.counts.assign(static_cast<size_t>(cb.M), 0);
    for (const auto& trace : traces) {
        for (int id : trace) {
            if (!cb.is_abstract(id)) continue;
            ++t.counts[static_cast<size_t>(id - cb.base_size)];
            ++t.total;
        }
    }
    return t;
}

inline void write_frequency_csv(const std::string& path, const Codebook& cb,
                                const FrequencyTable& t) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_frequency_csv: cannot open " + path);
    f << "episodes,token_id,token,count\n";
    for (int k = 0; k < cb.M; ++k) {
        f << t.episodes << "," << cb.abstract_id(k) << ","
          << cb.names[static_cast<size_t>(cb.abstract_id(k))] << ","
          << t.counts[static_cast<size_t>(k)] << "\n";
    }
}

// Reads the RL frequency log (one block of M rows per snapshot) back into
// per-snapshot tables, in episode order.
inline std::vector<FrequencyTable> read_frequency_csv(const std::string& path,
                                                      const Codebook& cb) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_frequency_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != "episodes,token_id,token,count") {
        throw std::runtime_error("read_frequency_csv: unexpected header in " + path);
    }
    std::map<int64_t, FrequencyTable> by_episode;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string episodes_s, id_s, token, count_s;
        if (!std::getline(row, episodes_s, ',') || !std::getline(row, id_s, ',') ||
            !std::getline(row, token, ',') || !std::getline(row, count_s)) {
            throw std::runtime_error("read_frequency_csv: malformed row '" + line + "'");
        }
        const int64_t ep = std::stoll(episodes_s);
        const int id = std::stoi(id_s);
        if (!cb.is_abstract(id)) {
            throw std::runtime_error("read_frequency_csv: token id " + id_s +
                                     " is not a codebook token");
        }
        FrequencyTable& t = by_episode[ep];
        if (t.counts.empty()) {
            t.counts.assign(static_cast<size_t>(cb.M), 0);
            t.episodes = ep;
            t.label = "episode-" + episodes_s;
        }
        const int64_t c = std::stoll(count_s);
        t.counts[static_cast<size_t>(id - cb.base_size)] += c;
        t.total += c;
    }
    std::vector<FrequencyTable> out;
    out.reserve(by_episode.size());
    for (auto& [ep, t] : by_episode) out.push_back(std::move(t));
    return out;
}

struct ZipfFit {
    double slope = 0.0;
    double intercept = 0.0;  // natural-log count at rank 1
    double r2 = 0.0;
    int ranks_used = 0;
    int zeros_excluded = 0;  // zero-count tokens dropped from the fit (log undefined)
};

// Least-squares line on (ln rank, ln count) over positive counts sorted
// descending. All-equal counts give slope exactly 0 and r2 = 1 (the
// horizontal fit has zero residual).
inline ZipfFit zipf_fit(const FrequencyTable& table) {
    ZipfFit fit;
    std::vector<int64_t> pos;
    for (int64_t c : table.counts) {
        if (c > 0) {
            pos.push_back(c);
        } else {
            ++fit.zeros_excluded;
        }
    }
    if (pos.size() < 2) {
        throw std::invalid_argument("zipf_fit: need at least 2 tokens with positive counts");
    }
    std::sort(pos.begin(), pos.end(), std::greater<>());
    const size_t n = pos.size();
    // Log-counts are anchored at the first point so equal counts cancel to
    // exactly zero deviation (slope exactly 0, r2 exactly 1).
    std::vector<double> xs(n), ys(n);
    const double y0 = std::log(static_cast<double>(pos[0]));
    double xm = 0.0, ym = 0.0;
    for (size_t i = 0; i < n; ++i) {
        xs[i] = std::log(static_cast<double>(i + 1));
        ys[i] = std::log(static_cast<double>(pos[i])) - y0;
        xm += xs[i];
        ym += ys[i];
    }
    xm /= static_cast<double>(n);
    ym /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (xs[i] - xm) * (ys[i] - ym);
        sxx += (xs[i] - xm) * (xs[i] - xm);
    }
    fit.slope = sxy / sxx;
    fit.intercept = (y0 + ym) - fit.slope * xm;
    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double resid = (ys[i] - ym) - fit.slope * (xs[i] - xm);
        ss_res += resid * resid;
        ss_tot += (ys[i] - ym) * (ys[i] - ym);
    }
    fit.r2 = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
    fit.ranks_used = static_cast<int>(n);
    return fit;
}

// ---------------------------------------------------------------------------
// Trace perturbations.

// Permutes the content between the delimiters (the caller keeps the
// delimiters in place). "abstract-token" shuffles individual tokens;
// "verbal-step" shuffles whole separator-delimited steps, leaving each
// step's internals intact.
inline std::vector<int> permute_trace(const std::vector<int>& tokens, const std::string& mode,
                                      Rng& rng, int step_separator = -1) {
    if (mode == "abstract-token") {
        std::vector<int> out = tokens;
        rng.shuffle(out);
        return out;
    }
    if (mode == "verbal-step") {
        if (step_separator < 0) {
            throw std::invalid_argument("permute_trace: verbal-step mode needs a separator id");
        }
        std::vector<std::vector<int>> steps(1);
        for (int id : tokens) {
            if (id == step_separator) {
                steps.emplace_back();
            } else {
                steps.back().push_back(id);
            }
        }
        rng.shuffle(steps);
        std::vector<int> out;
        out.reserve(tokens.size());
        for (size_t i = 0; i < steps.size(); ++i) {
            if (i > 0) out.push_back(step_separator);
            out.insert(out.end(), steps[i].begin(), steps[i].end());
        }
        return out;
    }
    throw std::invalid_argument("permute_trace: unknown mode '" + mode + "'");
}

// First min(k, m) intermediate tokens with the end delimiter appended.
inline std::vector<int> truncate_trace(const std::vector<int>& tokens, int k, int end_id) {
    if (k < 0) throw std::invalid_argument("truncate_trace: k must be >= 0");
    const auto keep = std::min<size_t>(static_cast<size_t>(k), tokens.size());
    std::vector<int> out(tokens.begin(), tokens.begin() + static_cast<long>(keep));
    out.push_back(end_id);
    return out;
}

// ---------------------------------------------------------------------------
// Sensitivity harnesses: generate a trace, perturb it, regenerate the answer
// from both versions, and report the accuracy delta.

struct SensitivityConfig {
    std::string harness = "permutation";  // permutation | truncation | identity
    std::string method = "abstract";      // abstract or a verbal baseline tag
    std::vector<int> k_values = {32, 48, 64};  // truncation depths
    int m_max = 16;
    int answer_cap = 32;
    bool greedy = true;
    double temperature = 1.0;
    uint64_t seed = 0;
    int64_t limit = 0;

    void validate() const {
        if (harness != "permutation" && harness != "truncation" && harness != "identity") {
            throw std::invalid_argument("SensitivityConfig: unknown harness '" + harness + "'");
        }
        const std::string fam = eval_family(method);
        if (fam != "abstract" && fam != "verbal") {
            throw std::invalid_argument(
                "SensitivityConfig: method '" + method + "' has no intermediate tokens to perturb");
        }
        if (harness == "truncation") {
            if (k_values.empty()) throw std::invalid_argument("SensitivityConfig: no k values");
            for (int k : k_values) {
                if (k < 0) throw std::invalid_argument("SensitivityConfig: negative k");
            }
        }
        if (m_max < 1 || answer_cap < 1) {
            throw std::invalid_argument("SensitivityConfig: caps must be >= 1");
        }
        if (!(temperature > 0.0)) {
            throw std::invalid_argument("SensitivityConfig: temperature must be > 0");
        }
        if (limit < 0) throw std::invalid_argument("SensitivityConfig: negative limit");
    }
};

struct SensitivityResult {
    std::string harness;
    std::string method;
    int k = -1;  // truncation depth; -1 for permutation / identity
    EvalReport original;
    EvalReport perturbed;
    double delta = 0.0;  // perturbed accuracy minus original accuracy
};

// The identity harness applies no perturbation at all: it is the null arm
// for the delta pipeline (both arms share answer RNG streams, so equal
// contexts give bit-equal answers and delta is exactly 0).
inline std::vector<SensitivityResult> run_sensitivity(const Model& m, const Codebook& cb,
                                                      const std::vector<Example>& split,
                                                      const RewardFn& reward,
                                                      const SensitivityConfig& cfg) {
    cfg.validate();
    if (split.empty()) throw std::invalid_argument("run_sensitivity: empty split");
    const bool abstract_mode = cfg.method == "abstract";
    const SegmentProtocol proto = abstract_mode ? abstract_protocol(cb) : think_protocol(cb);

    std::vector<const Example*> chosen;
    for (const auto& ex : split) {
        chosen.push_back(&ex);
        if (cfg.limit > 0 && chosen.size() == static_cast<size_t>(cfg.limit)) break;
    }
    const Rng master = Rng(cfg.seed).derive("sensitivity/" + cfg.harness + "/" + cfg.method);

    std::vector<std::vector<int>> tctx;
    std::vector<Rng> trngs;
    for (size_t i = 0; i < chosen.size(); ++i) {
        auto ctx = prompt_ids(cb, *chosen[i]);
        ctx.push_back(proto.begin);
        tctx.push_back(std::move(ctx));
        trngs.push_back(master.derive("trace", i));
    }
    std::vector<Trace> traces;
    if (abstract_mode) {
        DecodingConstraint dc;
        dc.allowed = allowed_set(cb);
        dc.m_max = cfg.m_max;
        dc.temperature = cfg.temperature;
        dc.greedy = cfg.greedy;
        traces = sample_traces(m, cb, tctx, dc, trngs);
    } else {
        traces = sample_think_segments(m, cb, tctx, cfg.m_max, cfg.answer_cap + 1,
                                       cfg.temperature, cfg.greedy, trngs);
    }

    // Scores one arm. z_with_end[i] is the intermediate segment including its
    // end delimiter; both arms reuse the same per-example answer streams so an
    // unchanged segment reproduces the identical answer.
    auto run_arm = [&](const std::vector<std::vector<int>>& z_with_end) {
        std::vector<std::vector<int>> actx;
        std::vector<Rng> arngs;
        for (size_t i = 0; i < chosen.size(); ++i) {
            auto ctx = tctx[i];
            ctx.insert(ctx.end(), z_with_end[i].begin(), z_with_end[i].end());
            actx.push_back(std::move(ctx));
            arngs.push_back(master.derive("answer", i));
        }
        auto answers = sample_answers(m, actx, cb.eos, cfg.answer_cap, cfg.temperature,
                                      cfg.greedy, arngs);
        EvalReport rep;
        rep.method = cfg.method;
        rep.records.resize(chosen.size());
        double correct_sum = 0.0, reason_sum = 0.0, resp_sum = 0.0;
        for (size_t i = 0; i < chosen.size(); ++i) {
            EvalRecord& r = rep.records[i];
            r.example_id = chosen[i]->id;
            r.trace.assign(z_with_end[i].begin(), z_with_end[i].end() - 1);
            r.reasoning_tokens = static_cast<int>(r.trace.size());
            r.answer = std::move(answers[i].tokens);
            r.response_tokens = static_cast<int>(r.answer.size());
            const RewardResult rr = reward(*chosen[i], r.answer);
            r.correct = rr.ok && rr.score >= 0.5;
            correct_sum += r.correct ? 1.0 : 0.0;
            reason_sum += r.reasoning_tokens;
            resp_sum += r.response_tokens;
        }
        const auto n = static_cast<double>(chosen.size());
        rep.accuracy = correct_sum / n;
        rep.mean_reasoning_tokens = reason_sum / n;
        rep.mean_response_tokens = resp_sum / n;
        rep.mean_combined_tokens = (reason_sum + resp_sum) / n;
        return rep;
    };

    std::vector<std::vector<int>> original;
    original.reserve(traces.size());
    for (const auto& t : traces) {
        auto z = t.codes;
        z.push_back(proto.end);
        original.push_back(std::move(z));
    }
    const EvalReport original_rep = run_arm(original);

    std::vector<SensitivityResult> out;
    auto finish = [&](int k, const std::vector<std::vector<int>>& perturbed) {
        SensitivityResult r;
        r.harness = cfg.harness;
        r.method = cfg.method;
        r.k = k;
        r.original = original_rep;
        r.perturbed = run_arm(perturbed);
        r.delta = r.perturbed.accuracy - r.original.accuracy;
        out.push_back(std::move(r));
    };

    if (cfg.harness == "truncation") {
        for (int k : cfg.k_values) {
            std::vector<std::vector<int>> perturbed;
            perturbed.reserve(traces.size());
            for (const auto& t : traces) perturbed.push_back(truncate_trace(t.codes, k, proto.end));
            finish(k, perturbed);
        }
    } else if (cfg.harness == "permutation") {
        const int separator = abstract_mode ? -1 : cb.id_of(kNewlineToken);
        std::vector<std::vector<int>> perturbed;
        perturbed.reserve(traces.size());
        for (size_t i = 0; i < traces.size(); ++i) {
            Rng prng = master.derive("permute", i);
            auto z = permute_trace(traces[i].codes,
                                   abstract_mode ? "abstract-token" : "verbal-step", prng,
                                   separator);
            z.push_back(proto.end);
            perturbed.push_back(std::move(z));
        }
        finish(-1, perturbed);
    } else {
        finish(-1, original);
    }
    return out;
}

inline void write_sensitivity_csv(const std::string& path,
                                  const std::vector<SensitivityResult>& results) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_sensitivity_csv: cannot open " + path);
    f << "harness,method,k,original_accuracy,perturbed_accuracy,delta,"
         "original_mean_reasoning,perturbed_mean_reasoning\n";
    for (const auto& r : results) {
        f << r.harness << "," << r.method << "," << r.k << "," << r.original.accuracy << ","
          << r.perturbed.accuracy << "," << r.delta << "," << r.original.mean_reasoning_tokens
          << "," << r.perturbed.mean_reasoning_tokens << "\n";
    }
}

// ---------------------------------------------------------------------------
// SVG plots (one polyline per series) with their underlying CSVs.

namespace detail {

struct PlotSeries {
    std::string label;
    std::vector<double> xs, ys;
};

inline std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

inline void write_svg_plot(const std::string& path, const std::string& title,
                           const std::string& xlabel, const std::string& ylabel,
                           const std::vector<PlotSeries>& series) {
    static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                     "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};
    constexpr int kColors = 8;
    const double W = 640, H = 400, L = 64, R = 20, T = 36, B = 52;
    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    bool any = false;
    for (const auto& s : series) {
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (!any) {
                xmin = xmax = s.xs[i];
                ymin = ymax = s.ys[i];
                any = true;
            }
            xmin = std::min(xmin, s.xs[i]);
            xmax = std::max(xmax, s.xs[i]);
            ymin = std::min(ymin, s.ys[i]);
            ymax = std::max(ymax, s.ys[i]);
        }
    }
    if (!any) throw std::invalid_argument("write_svg_plot: nothing to plot");
    if (xmax == xmin) {
        xmin -= 1;
        xmax += 1;
    }
    if (ymax == ymin) {
        ymin -= 1;
        ymax += 1;
    }
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_svg_plot: cannot open " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    f << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    f << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
      << "</text>\n";
    f << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        f << "<line x1=\"" << px(fx) << "\" y1=\"" << H - B << "\" x2=\"" << px(fx) << "\" y2=\""
          << H - B + 4 << "\" stroke=\"black\"/>\n";
        f << "<text x=\"" << px(fx) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
          << fmt_g(fx) << "</text>\n";
        f << "<line x1=\"" << L - 4 << "\" y1=\"" << py(fy) << "\" x2=\"" << L << "\" y2=\""
          << py(fy) << "\" stroke=\"black\"/>\n";
        f << "<text x=\"" << L - 8 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">"
          << fmt_g(fy) << "</text>\n";
    }
    f << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
      << xlabel << "</text>\n";
    f << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\">" << ylabel << "</text>\n";
    for (size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % kColors];
        if (series[s].xs.size() > 1) {
            f << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
            for (size_t i = 0; i < series[s].xs.size(); ++i) {
                f << px(series[s].xs[i]) << "," << py(series[s].ys[i]) << " ";
            }
            f << "\"/>\n";
        }
        for (size_t i = 0; i < series[s].xs.size(); ++i) {
            f << "<circle cx=\"" << px(series[s].xs[i]) << "\" cy=\"" << py(series[s].ys[i])
              << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
        }
        if (!series[s].label.empty()) {
            const double ly = T + 14 + 16 * static_cast<double>(s);
            f << "<rect x=\"" << W - R - 130 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
              << color << "\"/>\n";
            f << "<text x=\"" << W - R - 116 << "\" y=\"" << ly << "\">" << series[s].label
              << "</text>\n";
        }
    }
    f << "</svg>\n";
}

}  // namespace detail

// Rank-frequency plot on log-log axes with the fitted line overlaid.
// Writes <stem>.svg and <stem>.csv.
inline void write_rank_frequency_plot(const std::string& stem, const Codebook& cb,
                                      const FrequencyTable& table, const ZipfFit* fit = nullptr) {
    std::vector<std::pair<int64_t, int>> ranked;  // (count, slot), positive only
    for (int k = 0; k < cb.M; ++k) {
        const int64_t c = table.counts[static_cast<size_t>(k)];
        if (c > 0) ranked.emplace_back(c, k);
    }
    if (ranked.empty()) throw std::invalid_argument("write_rank_frequency_plot: all counts zero");
    std::sort(ranked.begin(), ranked.end(),
              [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });

    std::ofstream csv(stem + ".csv");
    if (!csv) throw std::runtime_error("write_rank_frequency_plot: cannot open " + stem + ".csv");
    csv << "rank,token_id,token,count\n";
    detail::PlotSeries counts{"counts", {}, {}};
    constexpr double kLn10 = 2.302585092994046;
    for (size_t i = 0; i < ranked.size(); ++i) {
        const int id = cb.abstract_id(ranked[i].second);
        csv << i + 1 << "," << id << "," << cb.names[static_cast<size_t>(id)] << ","
            << ranked[i].first << "\n";
        counts.xs.push_back(std::log10(static_cast<double>(i + 1)));
        counts.ys.push_back(std::log10(static_cast<double>(ranked[i].first)));
    }
    std::vector<detail::PlotSeries> series{counts};
    if (fit != nullptr) {
        detail::PlotSeries line{"fit", {}, {}};
        for (double x : {counts.xs.front(), counts.xs.back()}) {
            line.xs.push_back(x);
            line.ys.push_back((fit->intercept + fit->slope * (x * kLn10)) / kLn10);
        }
        series.push_back(std::move(line));
    }
    detail::write_svg_plot(stem + ".svg", "Rank-frequency (" + table.label + ")", "log10 rank",
                           "log10 count", series);
}

// Per-token frequency trajectories across snapshots. Writes <stem>.svg and
// <stem>.csv.
inline void write_frequency_evolution_plot(const std::string& stem, const Codebook& cb,
                                           const std::vector<FrequencyTable>& tables) {
    if (tables.empty()) {
        throw std::invalid_argument("write_frequency_evolution_plot: no snapshots");
    }
    std::ofstream csv(stem + ".csv");
    if (!csv) {
        throw std::runtime_error("write_frequency_evolution_plot: cannot open " + stem + ".csv");
    }
    csv << "episodes,token_id,token,count\n";
    std::vector<detail::PlotSeries> series(static_cast<size_t>(cb.M));
    for (int k = 0; k < cb.M; ++k) {
        series[static_cast<size_t>(k)].label = cb.names[static_cast<size_t>(cb.abstract_id(k))];
    }
    for (const auto& t : tables) {
        for (int k = 0; k < cb.M; ++k) {
            csv << t.episodes << "," << cb.abstract_id(k) << ","
                << cb.names[static_cast<size_t>(cb.abstract_id(k))] << ","
                << t.counts[static_cast<size_t>(k)] << "\n";
            series[static_cast<size_t>(k)].xs.push_back(static_cast<double>(t.episodes));
            series[static_cast<size_t>(k)].ys.push_back(
                static_cast<double>(t.counts[static_cast<size_t>(k)]));
        }
    }
    detail::write_svg_plot(stem + ".svg", "Codebook frequency evolution", "episodes", "count",
                           series);
}

// ---------------------------------------------------------------------------
// Vocabulary-size sweep: one warm arm (warm-up, then RL when budgeted) per M,
// plus an optional cold-start arm (random init, warm-up skipped) for the
// frequency-distribution comparison.

struct SweepConfig {
    std::vector<int> M_values = {2, 4, 8, 16};
    bool cold_start_arm = true;
    ModelConfig model;  // vocab_size is derived per arm from the codebook
    WarmupConfig warmup;
    RLConfig rl;  // rl.episodes = 0 turns warm arms into warm-up-only arms
    CorpusSpec corpus;
    SplitFractions fractions;
    EvalConfig eval;  // method is forced to "abstract"
    uint64_t seed = 0;
    std::string out_dir;
};

struct SweepArm {
    int M = 0;
    std::string variant;  // "warm" | "cold"
    bool ok = false;
    std::string error;
    double accuracy = 0.0;
    double mean_trace_tokens = 0.0;
    FrequencyTable freq;  // final eval-split distribution, exactly M slots
    ZipfFit fit;
    bool fit_ok = false;  // false when fewer than 2 tokens saw use
};

struct SweepReport {
    std::vector<SweepArm> arms;
};

namespace detail {

inline void run_sweep_arm(SweepArm& arm, const SweepConfig& cfg,
                          const std::vector<Example>& corpus, std::ostream* warn) {
    Codebook cb = build_codebook(arm.M, base_alphabet());
    ModelConfig mc = cfg.model;
    mc.vocab_size = cb.size();
    Rng init_rng = Rng(cfg.seed).derive("sweep/" + arm.variant, static_cast<uint64_t>(arm.M));
    Model model = Model::init(mc, init_rng);

    const auto splits = split_dataset(corpus, cfg.warmup.T, cfg.fractions);
    const std::string arm_dir =
        cfg.out_dir.empty()
            ? ""
            : cfg.out_dir + "/M" + std::to_string(arm.M) + "-" + arm.variant;
    if (arm.variant == "warm") {
        run_warmup(model, cb, splits, cfg.warmup, arm_dir, warn);
    }
    if (cfg.rl.episodes > 0) {
        RLConfig rc = cfg.rl;
        if (arm.variant == "cold") rc.reference = "cold-init";
        run_rl(model, cb, find_split(splits, "rl").examples, verifier_reward(cb), rc, arm_dir,
               warn);
    }

    EvalConfig ec = cfg.eval;
    ec.method = "abstract";
    const EvalReport rep =
        evaluate(model, cb, find_split(splits, "eval").examples, verifier_reward(cb), ec);
    arm.accuracy = rep.accuracy;
    arm.mean_trace_tokens = rep.mean_reasoning_tokens;

    std::vector<std::vector<int>> traces;
    traces.reserve(rep.records.size());
    for (const auto& r : rep.records) traces.push_back(r.trace);
    arm.freq = frequency_table(cb, traces, "M" + std::to_string(arm.M) + "-" + arm.variant);
    try {
        arm.fit = zipf_fit(arm.freq);
        arm.fit_ok = true;
    } catch (const std::invalid_argument&) {
        arm.fit_ok = false;
    }
    if (!cfg.out_dir.empty()) {
        write_frequency_csv(cfg.out_dir + "/freq-M" + std::to_string(arm.M) + "-" + arm.variant +
                                ".csv",
                            cb, arm.freq);
    }
    arm.ok = true;
}

}  // namespace detail

inline void write_sweep_summary(const std::string& path, const SweepReport& report) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_sweep_summary: cannot open " + path);
    f << "M,variant,ok,accuracy,mean_trace_tokens,freq_total,zipf_slope,zipf_r2,"
         "zipf_ranks,error\n";
    for (const auto& a : report.arms) {
        f << a.M << "," << a.variant << "," << (a.ok ? 1 : 0) << "," << a.accuracy << ","
          << a.mean_trace_tokens << "," << a.freq.total << ",";
        if (a.fit_ok) {
            f << a.fit.slope << "," << a.fit.r2 << "," << a.fit.ranks_used;
        } else {
            f << ",,";
        }
        f << "," << a.error << "\n";
    }
}

inline void write_sweep_plot(const std::string& stem, const SweepReport& report) {
    std::map<std::string, detail::PlotSeries> by_variant;
    for (const auto& a : report.arms) {
        if (!a.ok) continue;
        auto& s = by_variant[a.variant];
        s.label = a.variant;
        s.xs.push_back(static_cast<double>(a.M));
        s.ys.push_back(a.accuracy);
    }
    std::vector<detail::PlotSeries> series;
    for (auto& [variant, s] : by_variant) series.push_back(std::move(s));
    std::ofstream csv(stem + ".csv");
    if (!csv) throw std::runtime_error("write_sweep_plot: cannot open " + stem + ".csv");
    csv << "M,variant,accuracy\n";
    for (const auto& a : report.arms) {
        if (a.ok) csv << a.M << "," << a.variant << "," << a.accuracy << "\n";
    }
    detail::write_svg_plot(stem + ".svg", "Accuracy vs codebook size", "M", "accuracy", series);
}

// Arms are isolated: one arm failing (an invalid M, a codebook too large for
// the naming range) records its error and the sweep continues.
inline SweepReport run_vocab_sweep(const SweepConfig& cfg, std::ostream* warn = nullptr) {
    if (cfg.M_values.empty()) throw std::invalid_argument("run_vocab_sweep: no M values");
    if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);
    const std::vector<Example> corpus = gen_corpus(cfg.corpus);

    SweepReport report;
    for (int M : cfg.M_values) {
        std::vector<std::string> variants{"warm"};
        if (cfg.cold_start_arm) variants.emplace_back("cold");
        for (const auto& variant : variants) {
            SweepArm arm;
            arm.M = M;
            arm.variant = variant;
            try {
                detail::run_sweep_arm(arm, cfg, corpus, warn);
            } catch (const std::exception& e) {
                arm.ok = false;
                arm.error = e.what();
                if (warn != nullptr) {
                    *warn << "warning: sweep arm M=" << M << " (" << variant
                          << ") failed: " << e.what() << "\n";
                }
            }
            report.arms.push_back(std::move(arm));
        }
    }
    if (!cfg.out_dir.empty()) {
        write_sweep_summary(cfg.out_dir + "/sweep_summary.csv", report);
        bool any_ok = false;
        for (const auto& a : report.arms) any_ok = any_ok || a.ok;
        if (any_ok) write_sweep_plot(cfg.out_dir + "/sweep_accuracy", report);
    }
    return report;
}

}  // namespace acot
