#pragma once

#include "umg/objectives.hpp"

namespace umg {

enum class ParamRole { Backbone, Head, Adapter };

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
    ParamRole role;
};

enum class RunMode { Pretrain, Adapt };

// The full model: vision tower, text tower, projection heads, learnable
// temperature, optional adapters.
template <typename T>
struct Model {
    EncoderConfig cfg;
    VisionEncoder<T> vision;
    TextEncoder<T> text;
    ProjectionHead<T> visual_head;
    ProjectionHead<T> region_head; // used only when !cfg.share_visual_head
    ProjectionHead<T> text_head;
    Tensor<T> logit_scale; // 1/temperature = exp(logit_scale); init ln(1/0.07)
    std::optional<AdapterState<T>> adapters;

    static Model init(const EncoderConfig& cfg, uint64_t seed) {
        cfg.validate();
        std::mt19937_64 rng(seed);
        Model m;
        m.cfg = cfg;
        m.vision = VisionEncoder<T>::init(cfg, rng);
        m.text = TextEncoder<T>::init(cfg, rng);
        m.visual_head = ProjectionHead<T>::init(cfg.dim, cfg.embed_dim, rng);
        if (!cfg.share_visual_head)
            m.region_head = ProjectionHead<T>::init(cfg.dim, cfg.embed_dim, rng);
        m.text_head = ProjectionHead<T>::init(cfg.text_dim, cfg.embed_dim, rng);
        m.logit_scale = Tensor<T>::scalar(static_cast<T>(std::log(1.0 / 0.07)));
        return m;
    }

    void attach_adapters(const AdapterConfig& acfg, uint64_t seed) {
        std::mt19937_64 rng(seed);
        adapters = AdapterState<T>::init(acfg, cfg.depth, cfg.dim, cfg.text_depth, cfg.text_dim, rng);
    }

    const ProjectionHead<T>& region_projection() const {
        return cfg.share_visual_head ? visual_head : region_head;
    }

    Tensor<T> inv_temperature() const { return exp_op(logit_scale); }

    template <typename F>
    void visit_params(F&& f) {
        auto bb = [&](const std::string& n, Tensor<T>& t) { f(n, t, ParamRole::Backbone); };
        f("vision.patch_w", vision.patch_w, ParamRole::Backbone);
        f("vision.patch_b", vision.patch_b, ParamRole::Backbone);
        f("vision.cls_tok", vision.cls_tok, ParamRole::Backbone);
        f("vision.pos", vision.pos, ParamRole::Backbone);
        for (size_t i = 0; i < vision.blocks.size(); ++i)
            vision.blocks[i].visit("vision.block" + std::to_string(i), bb);
        f("vision.ln_f_g", vision.ln_f_g, ParamRole::Backbone);
        f("vision.ln_f_b", vision.ln_f_b, ParamRole::Backbone);
        f("text.tok_embed", text.tok_embed, ParamRole::Backbone);
        f("text.pos", text.pos, ParamRole::Backbone);
        for (size_t i = 0; i < text.blocks.size(); ++i)
            text.blocks[i].visit("text.block" + std::to_string(i), bb);
        f("text.ln_f_g", text.ln_f_g, ParamRole::Backbone);
        f("text.ln_f_b", text.ln_f_b, ParamRole::Backbone);
        f("head.visual.w", visual_head.w, ParamRole::Head);
        f("head.visual.b", visual_head.b, ParamRole::Head);
        if (!cfg.share_visual_head) {
            f("head.region.w", region_head.w, ParamRole::Head);
            f("head.region.b", region_head.b, ParamRole::Head);
        }
        f("head.text.w", text_head.w, ParamRole::Head);
        f("head.text.b", text_head.b, ParamRole::Head);
        f("logit_scale", logit_scale, ParamRole::Head);
        if (adapters)
            adapters->visit([&](const std::string& n, Tensor<T>& t) { f(n, t, ParamRole::Adapter); });
    }

    std::vector<NamedParam<T>> parameters() {
        std::vector<NamedParam<T>> out;
        visit_params([&](const std::string& n, Tensor<T>& t, ParamRole r) {
            out.push_back({n, t, r});
        });
        return out;
    }
};

// Splits parameters into (trainable, frozen) per run mode and marks
// requires_grad accordingly. Frozen parameters never materialize gradients
// and receive no optimizer state.
template <typename T>
std::pair<std::vector<NamedParam<T>>, std::vector<NamedParam<T>>> partition_parameters(
    Model<T>& model, RunMode mode) {
    if (mode == RunMode::Pretrain && model.adapters)
        throw ContractError("pretrain mode expects no adapters attached");
    std::vector<NamedParam<T>> trainable, frozen;
    model.visit_params([&](const std::string& n, Tensor<T>& t, ParamRole r) {
        bool train = mode == RunMode::Pretrain ? (r != ParamRole::Adapter)
                                               : (r != ParamRole::Backbone);
        t.set_requires_grad(train);
        (train ? trainable : frozen).push_back({n, t, r});
    });
    return {std::move(trainable), std::move(frozen)};
}

} // namespace umg
