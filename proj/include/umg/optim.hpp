#pragma once

#include "umg/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace umg {

enum class OptimizerKind { Lamb, AdamW };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Lamb;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.05;
    double trust_clip = 10.0;  // LAMB trust-ratio clamp [0, trust_clip]
    int64_t warmup_steps = 100; // linear warmup before cosine decay
    void validate() const {
        if (lr < 0) throw ContractError("optimizer: lr must be >= 0");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ContractError("optimizer: betas must be in [0,1)");
        if (weight_decay < 0) throw ContractError("optimizer: weight_decay must be >= 0");
    }
};

// Per-parameter moment state, kept in double regardless of the parameter
// dtype so long runs stay deterministic and well-conditioned.
struct ParamState {
    std::vector<double> m, v;
};

// Adam-family optimizer over a fixed parameter list. step() consumes the
// gradients accumulated by the tape; it never touches tensors without grads.
template <typename T>
class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, std::vector<Tensor<T>> params)
        : cfg_(cfg), params_(std::move(params)), state_(params_.size()) {
        cfg_.validate();
        for (size_t i = 0; i < params_.size(); ++i) {
            state_[i].m.assign(params_[i].data().size(), 0.0);
            state_[i].v.assign(params_[i].data().size(), 0.0);
        }
    }

    int64_t step_count() const { return t_; }

    // One update with the given effective learning rate (scheduling happens
    // outside). Throws NumericError on non-finite gradients; the parameters
    // are left untouched in that case.
    void step(double lr) {
        for (size_t i = 0; i < params_.size(); ++i) {
            const auto& g = params_[i].grad();
            for (double gv : g)
                if (!std::isfinite(gv))
                    throw NumericError("optimizer: non-finite gradient in parameter " +
                                       std::to_string(i));
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& w = params_[i].mutable_data();
            const auto& g = params_[i].grad();
            auto& st = state_[i];
            const size_t n = w.size();
            std::vector<double> update(n);
            for (size_t k = 0; k < n; ++k) {
                const double gv = static_cast<double>(g[k]);
                st.m[k] = cfg_.beta1 * st.m[k] + (1.0 - cfg_.beta1) * gv;
                st.v[k] = cfg_.beta2 * st.v[k] + (1.0 - cfg_.beta2) * gv * gv;
                const double mhat = st.m[k] / bc1;
                const double vhat = st.v[k] / bc2;
                update[k] = mhat / (std::sqrt(vhat) + cfg_.eps);
            }
            if (cfg_.kind == OptimizerKind::AdamW) {
                for (size_t k = 0; k < n; ++k)
                    w[k] = static_cast<T>(static_cast<double>(w[k]) -
                                          lr * (update[k] +
                                                cfg_.weight_decay * static_cast<double>(w[k])));
            } else {
                // LAMB: per-layer trust ratio ||w|| / ||update + wd*w||
                double wn = 0.0, un = 0.0;
                for (size_t k = 0; k < n; ++k) {
                    const double wv = static_cast<double>(w[k]);
                    const double uv = update[k] + cfg_.weight_decay * wv;
                    wn += wv * wv;
                    un += uv * uv;
                }
                wn = std::sqrt(wn);
                un = std::sqrt(un);
                double trust = un > 0.0 ? wn / un : 1.0;
                if (wn == 0.0) trust = 1.0;
                trust = std::min(trust, cfg_.trust_clip);
                for (size_t k = 0; k < n; ++k) {
                    const double wv = static_cast<double>(w[k]);
                    w[k] = static_cast<T>(wv - lr * trust *
                                                   (update[k] + cfg_.weight_decay * wv));
                }
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    // Flat views for checkpointing.
    const std::vector<ParamState>& state() const { return state_; }
    std::vector<ParamState>& state() { return state_; }
    void set_step_count(int64_t t) { t_ = t; }

private:
    OptimizerConfig cfg_;
    std::vector<Tensor<T>> params_;
    std::vector<ParamState> state_;
    int64_t t_ = 0;
};

// Linear warmup to `lr`, then cosine decay to zero over the remaining steps.
inline double lr_schedule(double lr, int64_t step, int64_t warmup, int64_t total) {
    if (total <= 0) return lr;
    if (warmup > 0 && step < warmup)
        return lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const double progress = total > warmup
                                ? static_cast<double>(step - warmup) /
                                      static_cast<double>(total - warmup)
                                : 1.0;
    return lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, progress)));
}

} // namespace umg
