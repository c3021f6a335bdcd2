#pragma once

// Decoder-only transformer with a caller-supplied attention mask. Pre-LN
// blocks, learned absolute position embeddings, untied output head. A
// "packed" call concatenates several sequences into one row dimension with a
// block-diagonal mask and per-sequence position ids, which is how batching
// works throughout (there is no separate batch axis).

#include <acot/rng.hpp>
#include <acot/segments.hpp>
#include <acot/tensor.hpp>

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace acot {

struct ModelConfig {
    int n_layers = 4;
    int n_heads = 4;
    int d_model = 128;
    int d_ff = 512;
    int max_context = 256;
    int vocab_size = 0;
    std::string pos_scheme = "learned";

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || max_context < 1 ||
            vocab_size < 2) {
            throw std::invalid_argument("ModelConfig: non-positive dimension");
        }
        if (d_model % n_heads != 0) {
            throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) +
                                        " not divisible by n_heads " + std::to_string(n_heads));
        }
        if (pos_scheme != "learned") {
            throw std::invalid_argument("ModelConfig: unknown positional scheme " + pos_scheme);
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
};

struct Model {
    ModelConfig cfg;
    Tensor tok_emb;  // [V, d]
    Tensor pos_emb;  // [ctx, d]
    std::vector<LayerParams> layers;
    Tensor lnf_g, lnf_b;
    Tensor w_out;  // [V, d]; logits = h w_out^T

    static Model init(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        auto gauss = [&rng](Shape shape) {
            Tensor t(shape);
            for (auto& v : t.values()) v = rng.gaussian(0.0, 0.02);
            return t;
        };
        m.tok_emb = gauss({cfg.vocab_size, cfg.d_model});
        m.pos_emb = gauss({cfg.max_context, cfg.d_model});
        for (int l = 0; l < cfg.n_layers; ++l) {
            LayerParams p;
            p.ln1_g = Tensor({cfg.d_model}, 1.0);
            p.ln1_b = Tensor({cfg.d_model}, 0.0);
            p.wq = gauss({cfg.d_model, cfg.d_model});
            p.bq = Tensor({cfg.d_model}, 0.0);
            p.wk = gauss({cfg.d_model, cfg.d_model});
            p.bk = Tensor({cfg.d_model}, 0.0);
            p.wv = gauss({cfg.d_model, cfg.d_model});
            p.bv = Tensor({cfg.d_model}, 0.0);
            p.wo = gauss({cfg.d_model, cfg.d_model});
            p.bo = Tensor({cfg.d_model}, 0.0);
            p.ln2_g = Tensor({cfg.d_model}, 1.0);
            p.ln2_b = Tensor({cfg.d_model}, 0.0);
            p.w1 = gauss({cfg.d_model, cfg.d_ff});
            p.b1 = Tensor({cfg.d_ff}, 0.0);
            p.w2 = gauss({cfg.d_ff, cfg.d_model});
            p.b2 = Tensor({cfg.d_model}, 0.0);
            m.layers.push_back(std::move(p));
        }
        m.lnf_g = Tensor({cfg.d_model}, 1.0);
        m.lnf_b = Tensor({cfg.d_model}, 0.0);
        m.w_out = gauss({cfg.vocab_size, cfg.d_model});
        // Params are trainable out of the box; inference wraps forwards in
        // NoGradScope instead of toggling this per call.
        m.set_requires_grad(true);
        return m;
    }

    // Fixed traversal order; checkpoint layout and the optimizer state both
    // key off it.
    std::vector<std::pair<std::string, Tensor*>> named_params() {
        std::vector<std::pair<std::string, Tensor*>> out;
        out.emplace_back("tok_emb", &tok_emb);
        out.emplace_back("pos_emb", &pos_emb);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            auto& lp = layers[l];
            out.emplace_back(p + "ln1_g", &lp.ln1_g);
            out.emplace_back(p + "ln1_b", &lp.ln1_b);
            out.emplace_back(p + "wq", &lp.wq);
            out.emplace_back(p + "bq", &lp.bq);
            out.emplace_back(p + "wk", &lp.wk);
            out.emplace_back(p + "bk", &lp.bk);
            out.emplace_back(p + "wv", &lp.wv);
            out.emplace_back(p + "bv", &lp.bv);
            out.emplace_back(p + "wo", &lp.wo);
            out.emplace_back(p + "bo", &lp.bo);
            out.emplace_back(p + "ln2_g", &lp.ln2_g);
            out.emplace_back(p + "ln2_b", &lp.ln2_b);
            out.emplace_back(p + "w1", &lp.w1);
            out.emplace_back(p + "b1", &lp.b1);
            out.emplace_back(p + "w2", &lp.w2);
            out.emplace_back(p + "b2", &lp.b2);
        }
        out.emplace_back("lnf_g", &lnf_g);
        out.emplace_back("lnf_b", &lnf_b);
        out.emplace_back("w_out", &w_out);
        return out;
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        for (auto& [name, t] : named_params()) out.push_back(t);
        return out;
    }

    void set_requires_grad(bool rg) {
        for (Tensor* t : params()) t->set_requires_grad(rg);
    }

    void zero_grad() {
        for (Tensor* t : params()) t->zero_grad();
    }

    size_t param_count() {
        size_t n = 0;
        for (Tensor* t : params()) n += t->numel();
        return n;
    }

    Model clone() {
        Model copy;
        copy.cfg = cfg;
        auto src = named_params();
        copy.tok_emb = Tensor(tok_emb.shape(), tok_emb.values());
        copy.pos_emb = Tensor(pos_emb.shape(), pos_emb.values());
        copy.layers.resize(layers.size());
        copy.lnf_g = Tensor(lnf_g.shape(), lnf_g.values());
        copy.lnf_b = Tensor(lnf_b.shape(), lnf_b.values());
        copy.w_out = Tensor(w_out.shape(), w_out.values());
        auto dst = copy.named_params();
        for (size_t i = 0; i < src.size(); ++i) {
            *dst[i].second = Tensor(src[i].second->shape(), src[i].second->values());
            dst[i].second->set_requires_grad(src[i].second->requires_grad());
        }
        return copy;
    }
};

struct ForwardOutput {
    Tensor logits;  // [N, V]
    Tensor hidden;  // [N, d], after the final layer norm
};

// Several sequences packed along one row dimension. The token/position/FF
// work runs as single large matmuls over all rows; attention runs per
// sequence on its own L×L mask, so sequences can never see each other.
struct PackedBatch {
    std::vector<int> ids;                     // concatenated tokens
    std::vector<int> pos;                     // local position of each row
    std::vector<int> offsets = {0};           // B+1 row offsets
    std::vector<std::vector<uint8_t>> fills;  // per-sequence blocked-entry masks
    std::vector<int> sup_rows;                // predictor rows (global)
    std::vector<int> sup_targets;             // target token ids

    int batch_size() const { return static_cast<int>(fills.size()); }
    int total_rows() const { return offsets.back(); }
    int seq_len(int b) const { return offsets[b + 1] - offsets[b]; }

    // supervised = target positions within this sequence (each >= 1)
    void add(const std::vector<int>& seq_ids, const AttentionMask& mask,
             const std::vector<int>& supervised = {}) {
        const int n = static_cast<int>(seq_ids.size());
        if (n == 0) throw std::invalid_argument("PackedBatch: empty sequence");
        if (mask.n != n) {
            throw std::invalid_argument("PackedBatch: sequence length " + std::to_string(n) +
                                        " vs mask size " + std::to_string(mask.n));
        }
        const int base = offsets.back();
        for (int i = 0; i < n; ++i) {
            ids.push_back(seq_ids[i]);
            pos.push_back(i);
        }
        offsets.push_back(base + n);
        fills.push_back(mask.fill_mask());
        for (int j : supervised) {
            if (j < 1 || j >= n) {
                throw std::invalid_argument("PackedBatch: supervised position " +
                                            std::to_string(j) + " out of range");
            }
            sup_rows.push_back(base + j - 1);
            sup_targets.push_back(seq_ids[j]);
        }
    }
};

namespace detail {

inline void check_batch(const Model& m, const PackedBatch& batch) {
    if (batch.batch_size() == 0) throw std::invalid_argument("forward: empty batch");
    for (int b = 0; b < batch.batch_size(); ++b) {
        const int n = batch.seq_len(b);
        if (n > m.cfg.max_context) {
            throw std::invalid_argument("forward: context overflow, sequence length " +
                                        std::to_string(n) + " with max_context " +
                                        std::to_string(m.cfg.max_context));
        }
        const auto& fill = batch.fills[b];
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (!fill[static_cast<size_t>(i) * n + j]) {
                    throw std::invalid_argument("forward: mask permits future attention at (" +
                                                std::to_string(i) + "," + std::to_string(j) + ")");
                }
    }
}

}  // namespace detail

inline ForwardOutput forward_batch(const Model& m, const PackedBatch& batch) {
    detail::check_batch(m, batch);
    const int dh = m.cfg.d_model / m.cfg.n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int B = batch.batch_size();

    Tensor h = add(gather_rows(m.tok_emb, batch.ids), gather_rows(m.pos_emb, batch.pos));
    for (const auto& lp : m.layers) {
        Tensor a = layer_norm_rows(h, lp.ln1_g, lp.ln1_b);
        Tensor q = add_rowvec(matmul(a, lp.wq), lp.bq);
        Tensor k = add_rowvec(matmul(a, lp.wk), lp.bk);
        Tensor v = add_rowvec(matmul(a, lp.wv), lp.bv);
        std::vector<Tensor> seq_outs;
        for (int b = 0; b < B; ++b) {
            const int off = batch.offsets[b], n = batch.seq_len(b);
            Tensor qb = slice_rows(q, off, n);
            Tensor kb = slice_rows(k, off, n);
            Tensor vb = slice_rows(v, off, n);
            std::vector<Tensor> heads;
            for (int hd = 0; hd < m.cfg.n_heads; ++hd) {
                Tensor scores = scale(matmul_nt(slice_cols(qb, hd * dh, dh),
                                                slice_cols(kb, hd * dh, dh)),
                                      att_scale);
                Tensor probs = softmax_rows(masked_fill(scores, batch.fills[b], -1e9));
                heads.push_back(matmul(probs, slice_cols(vb, hd * dh, dh)));
            }
            seq_outs.push_back(concat_cols(heads));
        }
        Tensor cat = B == 1 ? seq_outs[0] : concat_rows(seq_outs);
        h = add(h, add_rowvec(matmul(cat, lp.wo), lp.bo));
        Tensor f = layer_norm_rows(h, lp.ln2_g, lp.ln2_b);
        f = add_rowvec(matmul(gelu(add_rowvec(matmul(f, lp.w1), lp.b1)), lp.w2), lp.b2);
        h = add(h, f);
    }
    ForwardOutput out;
    out.hidden = layer_norm_rows(h, m.lnf_g, m.lnf_b);
    out.logits = matmul_nt(out.hidden, m.w_out);
    return out;
}

inline ForwardOutput forward(const Model& m, const std::vector<int>& ids, const AttentionMask& mask) {
    PackedBatch batch;
    batch.add(ids, mask);
    return forward_batch(m, batch);
}

// -Σ over supervision pairs of log π(target | row context). Sum, not mean.
inline Tensor loss_batch_nll(const Model& m, const PackedBatch& batch) {
    if (batch.sup_rows.empty()) throw std::invalid_argument("loss_batch_nll: empty supervised set");
    ForwardOutput out = forward_batch(m, batch);
    Tensor logp = log_softmax_rows(out.logits);
    return scale(sum(pick(logp, batch.sup_rows, batch.sup_targets)), -1.0);
}

// -Σ_{j∈supervised} log π(s_j | s_<j; mask). Sum, not mean; callers that want
// a per-token average divide by supervised.size().
inline Tensor loss_masked_nll(const Model& m, const std::vector<int>& ids, const AttentionMask& mask,
                              const std::vector<int>& supervised) {
    if (supervised.empty()) throw std::invalid_argument("loss_masked_nll: empty supervised set");
    PackedBatch batch;
    batch.add(ids, mask, supervised);
    return loss_batch_nll(m, batch);
}

}  // namespace acot
