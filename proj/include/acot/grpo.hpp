#pragma once

// Warm-started GRPO over (trace, answer) actions. Groups of K rollouts per
// prompt, reward-normalized advantages, and a policy-gradient update with an
// exact per-token KL penalty against the frozen warm-start reference.
//
// Updates are single-iteration on-policy: every batch is sampled from the
// current policy and used once, with no importance-ratio clipping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include <acot/checkpoint.hpp>
#include <acot/decoding.hpp>
#include <acot/optimizer.hpp>
#include <acot/reward.hpp>

namespace acot {

struct RLConfig {
    int group_size = 4;  // K rollouts per prompt
    double beta = 0.01;  // KL coefficient
    double advantage_eps = 1e-4;
    int64_t episodes = 20000;  // rollout budget (one episode = one rollout)
    OptimizerConfig optim;
    double temperature = 1.0;
    std::string update_scope = "abstract+answer";  // or "abstract-only"
    std::string reference = "warmup";              // checkpoint id recorded in lineage
    int m_max = 16;  // trace cap: codes in abstract mode, think tokens in verbal mode
    int answer_cap = 32;
    int groups_per_batch = 16;  // prompts per update, rolled out in lockstep
    std::string trace_mode = "abstract";  // or "verbal" (think-delimited, full vocab)
    int64_t snapshot_every = 2000;
    int64_t checkpoint_every = 5000;
    uint64_t seed = 0;

    void validate() const {
        if (group_size < 2) throw std::invalid_argument("RLConfig: group size must be >= 2");
        if (beta < 0.0) throw std::invalid_argument("RLConfig: KL coefficient must be >= 0");
        if (advantage_eps <= 0.0)
            throw std::invalid_argument("RLConfig: advantage epsilon must be > 0");
        if (episodes < 0) throw std::invalid_argument("RLConfig: negative episode budget");
        if (update_scope != "abstract+answer" && update_scope != "abstract-only") {
            throw std::invalid_argument("RLConfig: unknown update scope " + update_scope);
        }
        if (trace_mode != "abstract" && trace_mode != "verbal") {
            throw std::invalid_argument("RLConfig: unknown trace mode " + trace_mode);
        }
        if (temperature <= 0.0) throw std::invalid_argument("RLConfig: temperature must be > 0");
        if (m_max < 1 || answer_cap < 1 || groups_per_batch < 1 || snapshot_every < 1 ||
            checkpoint_every < 1) {
            throw std::invalid_argument("RLConfig: positive caps and intervals required");
        }
    }
};

// A_k = (R_k - mean) / (std + eps), population std. Shifting all rewards by a
// constant leaves every A_k unchanged.
inline std::vector<double> compute_advantages(const std::vector<double>& rewards, double eps) {
    if (rewards.size() < 2) throw std::invalid_argument("compute_advantages: need K >= 2 rewards");
    if (eps <= 0.0) throw std::invalid_argument("compute_advantages: eps must be > 0");
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double sd = std::sqrt(var / n);
    std::vector<double> adv(rewards.size());
    for (size_t k = 0; k < rewards.size(); ++k) adv[k] = (rewards[k] - mean) / (sd + eps);
    return adv;
}

struct ScoredRollout {
    int example_id = -1;
    Rollout sample;
    double reward = 0.0;
    double advantage = 0.0;
    bool scored = false;  // reward fn succeeded; unscored rollouts are dropped
    std::string fail_reason;
};

struct GroupBatch {
    int example_id = -1;
    std::vector<ScoredRollout> rollouts;
    double reward_mean = 0.0;
    double reward_std = 0.0;
};

// Fills mean/std/advantages from the rollouts' rewards.
inline void fill_advantages(GroupBatch& g, double eps) {
    std::vector<double> rewards;
    rewards.reserve(g.rollouts.size());
    for (const auto& r : g.rollouts) rewards.push_back(r.reward);
    std::vector<double> adv = compute_advantages(rewards, eps);
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    g.reward_mean = mean;
    g.reward_std = std::sqrt(var / static_cast<double>(rewards.size()));
    for (size_t k = 0; k < adv.size(); ++k) g.rollouts[k].advantage = adv[k];
}

struct GrpoStats {
    double policy_term = 0.0;  // the advantage-weighted log-prob part of J
    double kl = 0.0;           // mean over groups of per-token KL
    int abstract_tokens = 0;
    int answer_tokens = 0;
};

// Descent loss for Eq.-5-style GRPO:
//   loss = -(1/G) sum_g (1/K_g) sum_k A_k (sum_abs log pi + sum_y log pi)
//          + beta * (1/G) sum_g KL_g
// Abstract-segment log-probs use the renormalized constrained distribution
// (the same masked-softmax the sampler used); answer log-probs use the full
// vocabulary. KL_g is the exact per-token KL between policy and reference
// next-token distributions, averaged over the group's trajectory positions,
// with the same renormalization split. With "abstract-only" scope the answer
// terms are omitted entirely, so answer-row logits never enter the graph.
// Verbal trace mode swaps the delimiters for <think>..</think> and drops the
// renormalization (think actions are full-vocab), leaving the rest unchanged.
inline Tensor grpo_loss(const Model& policy, const Model& reference, const Codebook& cb,
                        const std::vector<GroupBatch>& groups, const RLConfig& cfg,
                        GrpoStats* stats = nullptr) {
    cfg.validate();
    if (groups.empty()) throw std::invalid_argument("grpo_loss: no groups");
    if (!(policy.cfg == reference.cfg))
        throw std::invalid_argument("grpo_loss: reference model config mismatch");
    const bool answers_in_scope = cfg.update_scope == "abstract+answer";
    const bool verbal = cfg.trace_mode == "verbal";
    const int vocab = policy.cfg.vocab_size;

    struct Placed {
        int off, c_end, z_end, n;
        double weight;
    };
    PackedBatch pb;
    std::vector<std::vector<Placed>> placed(groups.size());
    for (size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].rollouts.size() < 2)
            throw std::invalid_argument("grpo_loss: group with fewer than 2 rollouts");
        const double kg = static_cast<double>(groups[g].rollouts.size());
        for (const auto& r : groups[g].rollouts) {
            SegmentedSequence seq =
                verbal ? verbal_rollout_sequence(cb, r.sample) : rollout_sequence(cb, r.sample);
            const int n = seq.length();
            Placed p{pb.total_rows(), seq.c_end, seq.z_end, n,
                     r.advantage / (kg * static_cast<double>(groups.size()))};
            pb.add(seq.ids, build_causal_mask(n));
            placed[g].push_back(p);
        }
    }

    // One packed forward; abstract rows renormalize over the allowed set via
    // the same -1e9 fill the sampler applies, answer rows keep the full vocab.
    // Verbal mode has no constrained rows, so no fill is needed at all.
    Tensor logp, ref_logp;
    if (verbal) {
        logp = log_softmax_rows(forward_batch(policy, pb).logits);
        if (cfg.beta != 0.0) {
            NoGradScope ng;
            ref_logp = log_softmax_rows(forward_batch(reference, pb).logits);
        }
    } else {
        const std::vector<int> allowed = allowed_set(cb);
        std::vector<uint8_t> off_allowed(static_cast<size_t>(vocab), 1);
        for (int a : allowed) off_allowed[static_cast<size_t>(a)] = 0;
        std::vector<uint8_t> fill(static_cast<size_t>(pb.total_rows()) * vocab, 0);
        for (const auto& seq_list : placed) {
            for (const auto& p : seq_list) {
                for (int row = p.c_end; row < p.z_end - 1; ++row) {
                    uint8_t* dst = fill.data() + static_cast<size_t>(p.off + row) * vocab;
                    for (int v = 0; v < vocab; ++v) dst[v] = off_allowed[static_cast<size_t>(v)];
                }
            }
        }
        logp = log_softmax_rows(masked_fill(forward_batch(policy, pb).logits, fill, -1e9));
        if (cfg.beta != 0.0) {
            NoGradScope ng;
            ref_logp = log_softmax_rows(masked_fill(forward_batch(reference, pb).logits, fill, -1e9));
        }
    }

    std::vector<int> rows, cols;
    std::vector<double> weights;
    int abs_tokens = 0, ans_tokens = 0;
    for (const auto& seq_list : placed) {
        for (const auto& p : seq_list) {
            const int last = answers_in_scope ? p.n - 1 : p.z_end - 1;
            for (int row = p.c_end; row < last; ++row) {
                rows.push_back(p.off + row);
                cols.push_back(pb.ids[static_cast<size_t>(p.off + row) + 1]);
                weights.push_back(-p.weight);
                (row < p.z_end - 1 ? abs_tokens : ans_tokens)++;
            }
        }
    }
    Tensor wt({static_cast<int>(weights.size())}, weights);
    Tensor loss = sum(mul(pick(logp, rows, cols), wt));
    if (stats) {
        stats->policy_term = -loss.item();
        stats->abstract_tokens = abs_tokens;
        stats->answer_tokens = ans_tokens;
        stats->kl = 0.0;
    }

    if (cfg.beta != 0.0) {
        Tensor kl_mean_sum;
        bool first_group = true;
        for (const auto& seq_list : placed) {
            Tensor group_sum;
            int group_rows = 0;
            bool first_seq = true;
            for (const auto& p : seq_list) {
                const int last = answers_in_scope ? p.n - 1 : p.z_end - 1;
                const int count = last - p.c_end;
                if (count <= 0) continue;
                Tensor lp = slice_rows(logp, p.off + p.c_end, count);
                Tensor lq = slice_rows(ref_logp, p.off + p.c_end, count);
                Tensor piece = sum(mul(exp(lp), sub(lp, lq)));
                group_sum = first_seq ? piece : add(group_sum, piece);
                first_seq = false;
                group_rows += count;
            }
            Tensor group_kl = scale(group_sum, 1.0 / group_rows);
            kl_mean_sum = first_group ? group_kl : add(kl_mean_sum, group_kl);
            first_group = false;
        }
        Tensor kl_mean = scale(kl_mean_sum, 1.0 / static_cast<double>(groups.size()));
        if (stats) stats->kl = kl_mean.item();
        loss = add(loss, scale(kl_mean, cfg.beta));
    }
    return loss;
}

// Trace-log record plus the RL-specific fields.
inline std::string rollout_record(const Codebook& cb, const ScoredRollout& r, int64_t update,
                                  const std::string& stage, const std::string& checkpoint_id) {
    nlohmann::json j = nlohmann::json::parse(trace_record(cb, r.sample, stage, checkpoint_id));
    j["example_id"] = r.example_id;
    j["update"] = update;
    j["reward"] = r.reward;
    j["advantage"] = r.advantage;
    j["dropped"] = !r.scored;
    if (!r.scored) j["fail_reason"] = r.fail_reason;
    return j.dump();
}

struct RLMetricsRow {
    int64_t episodes = 0;
    double mean_reward = 0.0;
    double mean_trace_len = 0.0;
    double kl = 0.0;
    double policy_term = 0.0;
    double loss = 0.0;
    int groups_kept = 0;
    int rollouts_dropped = 0;
};

struct RLResult {
    int64_t episodes = 0;
    int64_t updates = 0;
    bool resumed = false;
    bool already_complete = false;
    std::vector<RLMetricsRow> history;
    std::string final_checkpoint;
};

namespace detail {

// Prompt order cycles through per-pass permutations so every example is
// visited once per pass; pass p's permutation is a pure function of the seed.
inline size_t rl_prompt_at(const Rng& master, size_t n, int64_t group_index) {
    const int64_t pass = group_index / static_cast<int64_t>(n);
    const size_t pos = static_cast<size_t>(group_index % static_cast<int64_t>(n));
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng r = master.derive("order", static_cast<uint64_t>(pass));
    r.shuffle(order);
    return order[pos];
}

// Drops rows of an episode-stamped CSV/JSONL that lie beyond the last durable
// state, so replayed updates regenerate them bit-identically.
inline void rl_truncate_file(const std::string& path, bool jsonl, int64_t episodes,
                             int64_t updates) {
    if (!std::filesystem::exists(path)) return;
    std::ifstream in(path);
    std::vector<std::string> kept;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        bool keep = true;
        if (jsonl) {
            keep = nlohmann::json::parse(line).at("update").get<int64_t>() < updates;
        } else if (!kept.empty()) {  // header row always kept
            keep = std::stoll(line.substr(0, line.find(','))) <= episodes;
        }
        if (keep) kept.push_back(line);
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : kept) out << l << "\n";
}

}  // namespace detail

// The RL stage. `policy` must hold the warm-started weights on entry (they
// also define the frozen reference); on exit it holds the trained policy.
// With a non-empty out_dir the run persists metrics, rollout logs, frequency
// snapshots, and periodic checkpoints, and resumes deterministically from the
// last checkpoint if one exists.
inline RLResult run_rl(Model& policy, const Codebook& cb, const std::vector<Example>& rl_split,
                       const RewardFn& reward, const RLConfig& cfg, const std::string& out_dir = "",
                       std::ostream* warn = nullptr) {
    cfg.validate();
    if (rl_split.empty()) throw std::invalid_argument("run_rl: empty RL split");
    RLResult result;
    if (cfg.episodes == 0) return result;

    const Model reference = policy.clone();
    AdamW opt(policy.params(), cfg.optim);
    Rng master(cfg.seed);
    const uint64_t cb_hash = codebook_hash(cb);

    const std::string state_path = out_dir + "/rl_state.json";
    const std::string latest_ckpt = out_dir + "/rl-latest.ckpt";
    const std::string latest_optim = out_dir + "/rl-latest.optim";
    const std::string metrics_path = out_dir + "/rl_metrics.csv";
    const std::string rollouts_path = out_dir + "/rl_rollouts.jsonl";
    const std::string freq_path = out_dir + "/rl_frequency.csv";

    int64_t episodes = 0, updates = 0, groups_done = 0, last_snapshot = 0, last_ckpt = 0;
    std::vector<int64_t> freq_since(static_cast<size_t>(cb.M), 0);

    if (!out_dir.empty() && std::filesystem::exists(state_path)) {
        std::ifstream f(state_path);
        nlohmann::json st = nlohmann::json::parse(f);
        if (st.at("codebook_hash").get<uint64_t>() != cb_hash)
            throw std::runtime_error("run_rl: resume state codebook hash mismatch");
        episodes = st.at("episodes").get<int64_t>();
        updates = st.at("updates").get<int64_t>();
        groups_done = st.at("groups").get<int64_t>();
        last_snapshot = st.at("last_snapshot").get<int64_t>();
        freq_since = st.at("freq_counts").get<std::vector<int64_t>>();
        if (freq_since.size() != static_cast<size_t>(cb.M))
            throw std::runtime_error("run_rl: resume state frequency size mismatch");
        result.resumed = true;
        if (episodes >= cfg.episodes) {
            result.already_complete = true;
            result.episodes = episodes;
            result.updates = updates;
            result.final_checkpoint = out_dir + "/rl-final.ckpt";
            return result;
        }
        Model loaded = load_checkpoint(latest_ckpt, nullptr, cb_hash);
        if (!(loaded.cfg == policy.cfg))
            throw std::runtime_error("run_rl: resume checkpoint has a different model config");
        auto src = loaded.named_params();
        auto dst = policy.named_params();
        for (size_t i = 0; i < src.size(); ++i) dst[i].second->values() = src[i].second->values();
        opt.load(latest_optim);
        detail::rl_truncate_file(metrics_path, false, episodes, updates);
        detail::rl_truncate_file(freq_path, false, episodes, updates);
        detail::rl_truncate_file(rollouts_path, true, episodes, updates);
        last_ckpt = episodes;
    }

    const bool verbal = cfg.trace_mode == "verbal";
    std::ofstream metrics, rollouts_log, freq_log;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const bool fresh = !std::filesystem::exists(metrics_path) ||
                           std::filesystem::file_size(metrics_path) == 0;
        metrics.open(metrics_path, std::ios::app);
        if (fresh)
            metrics << "episodes,mean_reward,mean_trace_len,kl,policy_term,loss,groups,dropped\n";
        rollouts_log.open(rollouts_path, std::ios::app);
        if (!verbal) {  // codebook frequency evolution is an abstract-mode artifact
            const bool freq_fresh =
                !std::filesystem::exists(freq_path) || std::filesystem::file_size(freq_path) == 0;
            freq_log.open(freq_path, std::ios::app);
            if (freq_fresh) freq_log << "episodes,token_id,token,count\n";
        }
    }

    DecodingConstraint dc;
    dc.allowed = allowed_set(cb);
    dc.m_max = cfg.m_max;
    dc.temperature = cfg.temperature;

    const int K = cfg.group_size;
    auto save_state = [&] {
        if (out_dir.empty()) return;
        CheckpointMeta meta;
        meta.stage = "rl";
        meta.codebook_hash = cb_hash;
        meta.extra["lineage"] = cfg.reference;
        meta.extra["trace_mode"] = cfg.trace_mode;
        meta.extra["episodes"] = std::to_string(episodes);
        save_checkpoint(latest_ckpt, policy, meta);
        opt.save(latest_optim);
        nlohmann::json st;
        st["episodes"] = episodes;
        st["updates"] = updates;
        st["groups"] = groups_done;
        st["last_snapshot"] = last_snapshot;
        st["freq_counts"] = freq_since;
        st["codebook_hash"] = cb_hash;
        std::ofstream f(state_path, std::ios::trunc);
        f << st.dump(2) << "\n";
        last_ckpt = episodes;
    };

    while (episodes < cfg.episodes) {
        const int64_t remaining = cfg.episodes - episodes;
        const int groups_this = static_cast<int>(
            std::min<int64_t>(cfg.groups_per_batch, (remaining + K - 1) / K));

        std::vector<const Example*> chosen(static_cast<size_t>(groups_this));
        std::vector<std::vector<int>> prompts;
        prompts.reserve(static_cast<size_t>(groups_this) * K);
        for (int g = 0; g < groups_this; ++g) {
            const size_t idx = detail::rl_prompt_at(master, rl_split.size(), groups_done + g);
            chosen[static_cast<size_t>(g)] = &rl_split[idx];
            for (int k = 0; k < K; ++k) prompts.push_back(prompt_ids(cb, rl_split[idx]));
        }
        const Rng update_rng = master.derive("update", static_cast<uint64_t>(updates));
        std::vector<Rollout> samples =
            verbal ? verbal_rollout_batch(policy, cb, prompts, cfg.m_max, cfg.answer_cap,
                                          cfg.temperature, false, update_rng)
                   : rollout_batch(policy, cb, prompts, dc, cfg.answer_cap, false, update_rng);

        std::vector<GroupBatch> kept;
        double reward_sum = 0.0, trace_len_sum = 0.0;
        int scored_count = 0, dropped = 0;
        for (int g = 0; g < groups_this; ++g) {
            GroupBatch group;
            group.example_id = chosen[static_cast<size_t>(g)]->id;
            std::vector<ScoredRollout> all;
            for (int k = 0; k < K; ++k) {
                ScoredRollout sr;
                sr.example_id = group.example_id;
                sr.sample = std::move(samples[static_cast<size_t>(g) * K + k]);
                RewardResult rr = reward(*chosen[static_cast<size_t>(g)], sr.sample.answer.tokens);
                sr.scored = rr.ok;
                if (rr.ok) {
                    sr.reward = rr.score;
                    reward_sum += rr.score;
                    ++scored_count;
                } else {
                    sr.fail_reason = rr.error;
                    ++dropped;
                    if (warn) *warn << "warning: reward failure (" << rr.error << "), rollout dropped\n";
                }
                trace_len_sum += static_cast<double>(sr.sample.trace.codes.size());
                if (!verbal) {
                    for (int c : sr.sample.trace.codes)
                        freq_since[static_cast<size_t>(c - cb.base_size)]++;
                }
                all.push_back(std::move(sr));
            }
            for (auto& sr : all)
                if (sr.scored) group.rollouts.push_back(std::move(sr));
            const auto survivors = group.rollouts.size();
            if (survivors >= 2) {
                fill_advantages(group, cfg.advantage_eps);
                kept.push_back(std::move(group));
            } else if (warn) {
                *warn << "warning: group for example " << group.example_id << " has " << survivors
                      << " surviving rollouts, skipped\n";
            }
            if (rollouts_log.is_open()) {
                const auto& src = survivors >= 2 ? kept.back().rollouts : group.rollouts;
                for (const auto& sr : src)
                    rollouts_log << rollout_record(cb, sr, updates, "rl", "rl-latest") << "\n";
                for (const auto& sr : all)
                    if (!sr.scored)
                        rollouts_log << rollout_record(cb, sr, updates, "rl", "rl-latest") << "\n";
            }
        }
        episodes += static_cast<int64_t>(groups_this) * K;
        groups_done += groups_this;

        RLMetricsRow row;
        row.episodes = episodes;
        row.mean_reward = scored_count > 0 ? reward_sum / scored_count : 0.0;
        row.mean_trace_len = trace_len_sum / (static_cast<double>(groups_this) * K);
        row.groups_kept = static_cast<int>(kept.size());
        row.rollouts_dropped = dropped;
        if (!kept.empty()) {
            GrpoStats stats;
            Tape tape;
            TapeScope scope(tape);
            policy.zero_grad();
            Tensor loss = grpo_loss(policy, reference, cb, kept, cfg, &stats);
            tape.backward(loss);
            opt.step();
            row.kl = stats.kl;
            row.policy_term = stats.policy_term;
            row.loss = loss.item();
        } else if (warn) {
            *warn << "warning: update " << updates << " had no usable groups, skipped\n";
        }
        ++updates;
        result.history.push_back(row);
        if (metrics.is_open()) {
            metrics << row.episodes << "," << row.mean_reward << "," << row.mean_trace_len << ","
                    << row.kl << "," << row.policy_term << "," << row.loss << ","
                    << row.groups_kept << "," << row.rollouts_dropped << "\n";
            metrics.flush();
        }

        if (episodes - last_snapshot >= cfg.snapshot_every || episodes >= cfg.episodes) {
            if (freq_log.is_open()) {
                for (int k = 0; k < cb.M; ++k) {
                    freq_log << episodes << "," << cb.abstract_id(k) << ","
                             << cb.names[static_cast<size_t>(cb.abstract_id(k))] << "," << freq_since[static_cast<size_t>(k)]
                             << "\n";
                }
                freq_log.flush();
            }
            std::fill(freq_since.begin(), freq_since.end(), 0);
            last_snapshot = episodes;
        }
        if (!out_dir.empty() && (episodes - last_ckpt >= cfg.checkpoint_every || episodes >= cfg.episodes)) {
            save_state();
        }
    }

    result.episodes = episodes;
    result.updates = updates;
    if (!out_dir.empty()) {
        CheckpointMeta meta;
        meta.stage = "rl";
        meta.codebook_hash = cb_hash;
        meta.extra["lineage"] = cfg.reference;
        meta.extra["trace_mode"] = cfg.trace_mode;
        meta.extra["episodes"] = std::to_string(episodes);
        save_checkpoint(out_dir + "/rl-final.ckpt", policy, meta);
        result.final_checkpoint = out_dir + "/rl-final.ckpt";
    }
    return result;
}

}  // namespace acot
