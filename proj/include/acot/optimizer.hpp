#pragma once

// AdamW with decoupled weight decay and a linear learning-rate warm-up.
// Moments live beside the parameters they track and serialize to a flat
// binary block so resumed runs continue bit-identically.

#include <acot/tensor.hpp>

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace acot {

struct OptimizerConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    int warmup_steps = 100;
};

class AdamW {
public:
    AdamW(std::vector<Tensor*> params, OptimizerConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (Tensor* p : params_) {
            m_.emplace_back(p->numel(), 0.0);
            v_.emplace_back(p->numel(), 0.0);
        }
    }

    double lr_at(int64_t step) const {
        if (cfg_.warmup_steps <= 0 || step >= cfg_.warmup_steps) return cfg_.lr;
        return cfg_.lr * static_cast<double>(step + 1) / cfg_.warmup_steps;
    }

    // One update from the gradients currently held in the parameters.
    // Parameters whose grad is unset are treated as zero-gradient (they still
    // decay and advance moments, keeping step counts uniform).
    void step() {
        const double lr = lr_at(step_count_);
        ++step_count_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor* p = params_[pi];
            auto& m = m_[pi];
            auto& v = v_[pi];
            const bool has_grad = p->has_grad();
            const std::vector<double>* g = has_grad ? &p->grad() : nullptr;
            for (size_t i = 0; i < m.size(); ++i) {
                const double gi = has_grad ? (*g)[i] : 0.0;
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                double& w = p->values()[i];
                w -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w);
            }
        }
    }

    int64_t step_count() const { return step_count_; }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("AdamW::save: cannot open " + path);
        f << "acot-optim v1 " << step_count_ << " " << params_.size() << "\n";
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            f.write(reinterpret_cast<const char*>(m_[pi].data()),
                    static_cast<std::streamsize>(m_[pi].size() * sizeof(double)));
            f.write(reinterpret_cast<const char*>(v_[pi].data()),
                    static_cast<std::streamsize>(v_[pi].size() * sizeof(double)));
        }
        if (!f) throw std::runtime_error("AdamW::save: write failed for " + path);
    }

    void load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("AdamW::load: cannot open " + path);
        std::string magic, version;
        size_t n_params = 0;
        f >> magic >> version >> step_count_ >> n_params;
        if (magic != "acot-optim" || version != "v1" || n_params != params_.size()) {
            throw std::runtime_error("AdamW::load: bad header in " + path);
        }
        f.get();  // newline
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            f.read(reinterpret_cast<char*>(m_[pi].data()),
                   static_cast<std::streamsize>(m_[pi].size() * sizeof(double)));
            f.read(reinterpret_cast<char*>(v_[pi].data()),
                   static_cast<std::streamsize>(v_[pi].size() * sizeof(double)));
        }
        if (!f) throw std::runtime_error("AdamW::load: truncated " + path);
    }

private:
    std::vector<Tensor*> params_;
    OptimizerConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int64_t step_count_ = 0;
};

}  // namespace acot
