#pragma once

// Shared fixtures: a small codebook over the digits alphabet, tiny model
// configs, and rigged models with hand-picked constant logits.

#include <acot/model.hpp>
#include <acot/rng.hpp>
#include <acot/vocab.hpp>

#include <vector>

namespace testutil {

inline acot::Codebook small_cb(int M = 4) {
    return acot::build_codebook(M, {"0", "1", "2", "3", "4", "5", "+", "mod", "=", ";", "<nl>"});
}

inline acot::ModelConfig small_cfg(const acot::Codebook& cb, int n_layers = 1, int max_context = 48) {
    acot::ModelConfig cfg;
    cfg.n_layers = n_layers;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.max_context = max_context;
    cfg.vocab_size = cb.size();
    return cfg;
}

inline acot::Model random_model(const acot::Codebook& cb, int n_layers = 1, uint64_t seed = 0,
                                int max_context = 48) {
    acot::Rng rng(seed);
    return acot::Model::init(small_cfg(cb, n_layers, max_context), rng);
}

// All-zero model whose logits are a constant row L at every position (via
// the lnf bias and the first output-head column).
inline acot::Model rigged_model(const acot::Codebook& cb, const std::vector<double>& logit_row,
                                int max_context = 48) {
    acot::Rng rng(0);
    acot::ModelConfig cfg = small_cfg(cb, 1, max_context);
    cfg.vocab_size = static_cast<int>(logit_row.size());
    acot::Model m = acot::Model::init(cfg, rng);
    for (acot::Tensor* t : m.params())
        for (auto& v : t->values()) v = 0.0;
    m.lnf_b.values()[0] = 1.0;
    for (size_t t = 0; t < logit_row.size(); ++t)
        m.w_out.at(static_cast<int>(t), 0) = logit_row[t];
    return m;
}

}  // namespace testutil
