#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#ifdef _res
#undef _res  // glibc resolv.h macro; collides with Eigen parameter names
#endif
#include <nlohmann/json.hpp>

#include <acot/taskgen.hpp>

namespace acot {

struct RewardRequest {
    std::string conversation;
    std::string response;
};

struct RewardResult {
    double score = 0.0;  // normalized to [0,1]
    double raw = 0.0;    // {0,1} from the verifier, 0-10 from the RM
    std::string reasoning;
    std::string source;  // "verifier" | "rm"
    bool ok = true;
    std::string error;
};

// Canonical answer form: per-token whitespace trimmed, numeric tokens stripped
// of leading zeros ("007" -> "7", "-03" -> "-3", "000" -> "0"), joined by
// single spaces. Empty token lists canonicalize to "".
inline std::string normalize_answer(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& raw : tokens) {
        size_t a = raw.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) continue;
        size_t b = raw.find_last_not_of(" \t\r\n");
        std::string tok = raw.substr(a, b - a + 1);

        std::string body = tok;
        std::string sign;
        if (!body.empty() && (body[0] == '-' || body[0] == '+')) {
            sign = body.substr(0, 1);
            body = body.substr(1);
        }
        bool numeric = !body.empty();
        for (char c : body) numeric = numeric && c >= '0' && c <= '9';
        if (numeric) {
            size_t z = body.find_first_not_of('0');
            body = z == std::string::npos ? "0" : body.substr(z);
            tok = (sign == "-" && body != "0" ? "-" : "") + body;
        }
        if (!out.empty()) out += ' ';
        out += tok;
    }
    return out;
}

// Exact-match verifier: 1 when the generated answer canonicalizes to the gold
// answer, else 0. Pure in (gold, answer).
inline RewardResult verify(const Example& ex, const std::vector<std::string>& answer) {
    if (ex.answer.empty()) throw std::invalid_argument("verify: example has no gold answer");
    RewardResult r;
    r.source = "verifier";
    r.raw = normalize_answer(answer) == normalize_answer(ex.answer) ? 1.0 : 0.0;
    r.score = r.raw;
    return r;
}

inline RewardResult verify_ids(const Codebook& cb, const Example& ex, const std::vector<int>& ids) {
    return verify(ex, decode(cb, ids));
}

// Scoring prompt sent to a generative reward model, with the conversation and
// response substituted into the two placeholders.
inline std::string rm_prompt_template() {
    return R"(You are an expert evaluator assessing the quality of AI assistant responses.
Your task is to score a response on a scale from 0 to 10.

## Scoring Criteria

Evaluate the response across these dimensions:

**Helpfulness (Does it address the user's needs?)**
- Directly answers the question or completes the task
- Provides appropriate level of detail
- Anticipates follow-up needs

**Accuracy (Is the information correct?)**
- Factually correct information
- No hallucinations or fabrications
- Appropriate caveats when uncertain

**Clarity (Is it easy to understand?)**
- Well-organized and structured
- Clear language appropriate to context
- Proper formatting when needed

**Relevance (Does it stay on topic?)**
- Addresses the actual query
- Avoids unnecessary tangents
- Appropriate scope and focus

**Safety & Harmlessness**
- No harmful, offensive, or inappropriate content
- Respectful and unbiased
- Considers ethical implications

## Scoring Scale

**10 - Exceptional**: Perfect or near-perfect response that excels across all
criteria
**9 - Excellent**: Outstanding response with only trivial imperfections
**8 - Very Good**: Strong response that fully addresses the query with minor
areas for improvement
**7 - Good**: Solid response that meets expectations but has some room for
improvement
**6 - Above Average**: Decent response with noticeable limitations
**5 - Average**: Adequate response that addresses the query but has clear gaps
**4 - Below Average**: Partially helpful but with significant issues in one
or more criteria
**3 - Poor**: Minimally useful with major problems across multiple criteria
**2 - Very Poor**: Severe deficiencies, barely addresses the query
**1 - Extremely Poor**: Almost completely fails to address the query
**0 - Unacceptable**: Completely fails to address the query, contains harmful
content, or is entirely inappropriate

## Your Task

Provide your evaluation as a JSON object with the following structure:

```json
{
  "score": <number between 0-10>,
  "reasoning": "<2-4 sentences explaining your score, highlighting key strengths
  and weaknesses>"
}
```
---

## Conversation Context
{CONVERSATION_HISTORY}

## Assistant Response to Evaluate
{RESPONSE_TO_SCORE}
)";
}

inline std::string build_rm_prompt(const RewardRequest& req) {
    std::string out = rm_prompt_template();
    auto put = [&out](const std::string& key, const std::string& value) {
        size_t at = out.find(key);
        if (at == std::string::npos) throw std::logic_error("rm prompt missing " + key);
        out.replace(at, key.size(), value);
    };
    put("{CONVERSATION_HISTORY}", req.conversation);
    put("{RESPONSE_TO_SCORE}", req.response);
    return out;
}

struct RmConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string path = "/score";
    int timeout_s = 10;
    int max_retries = 3;
    int backoff_ms = 200;  // doubles per retry
};

// POST {"conversation", "response"} and parse {"score", "reasoning"}. The
// 0-10 score maps linearly to [0,1]. Retries with exponential backoff; any
// exhausted or malformed exchange comes back ok=false so the caller can drop
// the rollout instead of aborting the group.
inline RewardResult score_via_rm(const RmConfig& cfg, const RewardRequest& req) {
    if (req.response.empty()) throw std::invalid_argument("score_via_rm: empty response");
    RewardResult r;
    r.source = "rm";
    nlohmann::json body;
    body["conversation"] = req.conversation;
    body["response"] = req.response;
    const std::string payload = body.dump();

    std::string last_error = "no attempts made";
    for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(cfg.backoff_ms * (1LL << (attempt - 1))));
        }
        httplib::Client cli(cfg.host, cfg.port);
        cli.set_connection_timeout(cfg.timeout_s, 0);
        cli.set_read_timeout(cfg.timeout_s, 0);
        auto res = cli.Post(cfg.path, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "http status " + std::to_string(res->status);
            continue;
        }
        nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
        if (reply.is_discarded() || !reply.contains("score") ||
            !reply["score"].is_number()) {
            last_error = "non-parseable reply body";
            continue;
        }
        const double raw = reply["score"].get<double>();
        if (raw < 0.0 || raw > 10.0) {
            last_error = "score " + std::to_string(raw) + " outside [0,10]";
            continue;
        }
        r.raw = raw;
        r.score = raw / 10.0;
        if (reply.contains("reasoning") && reply["reasoning"].is_string())
            r.reasoning = reply["reasoning"].get<std::string>();
        return r;
    }
    r.ok = false;
    r.error = last_error;
    return r;
}

// Shared signature for anything that can score a rollout's answer.
using RewardFn = std::function<RewardResult(const Example&, const std::vector<int>&)>;

inline RewardFn verifier_reward(const Codebook& cb) {
    return [&cb](const Example& ex, const std::vector<int>& answer_ids) {
        return verify_ids(cb, ex, answer_ids);
    };
}

inline RewardFn rm_reward(const Codebook& cb, const RmConfig& cfg) {
    return [&cb, cfg](const Example& ex, const std::vector<int>& answer_ids) {
        RewardRequest req;
        req.conversation = join_tokens(ex.prompt);
        req.response = join_tokens(decode(cb, answer_ids));
        if (req.response.empty()) {
            RewardResult r;
            r.source = "rm";
            r.ok = false;
            r.error = "empty response";
            return r;
        }
        return score_via_rm(cfg, req);
    };
}

}  // namespace acot
