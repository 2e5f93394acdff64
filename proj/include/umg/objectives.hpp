#pragma once

#include "umg/encoders.hpp"

namespace umg {

struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
    double temperature = 0.07; // used when no learnable inverse-temperature tensor is supplied
    void validate() const {
        if (alpha < 0 || beta < 0) throw ContractError("loss weights must be >= 0");
        if (temperature <= 0) throw ContractError("temperature must be > 0");
    }
};

template <typename T>
struct LossReport {
    Tensor<T> image_tag, image_caption, region_tag, region_caption, total;
};

// Mean elementwise smooth-L1 distance between matched normalized embeddings.
template <typename T>
Tensor<T> tag_loss(const EmbeddingSet<T>& visual, const EmbeddingSet<T>& target) {
    if (visual.vectors.dim(0) != target.vectors.dim(0) ||
        visual.vectors.dim(1) != target.vectors.dim(1))
        throw ContractError("tag_loss: row count mismatch " + shape_str(visual.vectors.shape()) +
                            " vs " + shape_str(target.vectors.shape()));
    return reduce_mean(smooth_l1(sub(visual.vectors, target.vectors)));
}

// Symmetric InfoNCE over temperature-scaled cosine similarities. inv_temp is
// 1/temperature as a (possibly learnable) scalar tensor.
template <typename T>
Tensor<T> caption_contrastive_loss(const EmbeddingSet<T>& visual, const EmbeddingSet<T>& text,
                                   const Tensor<T>& inv_temp) {
    const int64_t m = visual.vectors.dim(0);
    if (m < 2) throw ContractError("contrastive loss undefined for fewer than 2 pairs");
    if (text.vectors.dim(0) != m || text.vectors.dim(1) != visual.vectors.dim(1))
        throw ContractError("contrastive loss: embedding shapes do not match");
    auto logits = mul(matmul(visual.vectors, transpose(text.vectors)), inv_temp); // [m,m]
    std::vector<int64_t> diag;
    for (int64_t i = 0; i < m; ++i) diag.push_back(i * m + i);
    auto ce = [&](const Tensor<T>& l) {
        auto lse = logsumexp_last(l);                    // [m]
        auto pos = take(l, diag, {m});                   // matched logits
        return reduce_mean(sub(lse, pos));
    };
    return scale(add(ce(logits), ce(transpose(logits))), 0.5);
}

template <typename T>
Tensor<T> caption_contrastive_loss(const EmbeddingSet<T>& visual, const EmbeddingSet<T>& text,
                                   double temperature) {
    if (temperature <= 0) throw ContractError("temperature must be > 0");
    return caption_contrastive_loss(visual, text, Tensor<T>::scalar(static_cast<T>(1.0 / temperature)));
}

// Ablation switch for the tag terms: the default smooth-L1 distance or a
// contrastive variant that reuses the caption loss over tag targets.
enum class TagLossMode { SmoothL1, Contrastive };

// The four-term multi-granularity loss. Region streams may be empty; they
// then contribute zero.
template <typename T>
LossReport<T> total_loss(const EmbeddingSet<T>& cls_embed, const EmbeddingSet<T>& image_tag_target,
                         const EmbeddingSet<T>& image_caption_text,
                         const EmbeddingSet<T>& region_embed,
                         const EmbeddingSet<T>& region_tag_target,
                         const EmbeddingSet<T>& region_caption_text, const Tensor<T>& inv_temp,
                         const LossWeights& weights, TagLossMode tag_mode = TagLossMode::SmoothL1) {
    weights.validate();
    auto tags = [&](const EmbeddingSet<T>& v, const EmbeddingSet<T>& t) {
        if (tag_mode == TagLossMode::Contrastive && v.vectors.dim(0) >= 2)
            return caption_contrastive_loss(v, t, inv_temp);
        return tag_loss(v, t);
    };
    LossReport<T> r;
    r.image_tag = tags(cls_embed, image_tag_target);
    r.image_caption = caption_contrastive_loss(cls_embed, image_caption_text, inv_temp);
    const bool have_regions = region_embed.vectors.defined() && region_embed.vectors.dim(0) > 0;
    if (have_regions) {
        r.region_tag = tags(region_embed, region_tag_target);
        r.region_caption = region_embed.vectors.dim(0) >= 2
                               ? caption_contrastive_loss(region_embed, region_caption_text, inv_temp)
                               : Tensor<T>::scalar(T(0));
    } else {
        r.region_tag = Tensor<T>::scalar(T(0));
        r.region_caption = Tensor<T>::scalar(T(0));
    }
    r.total = add(scale(add(r.image_tag, r.image_caption), weights.alpha),
                  scale(add(r.region_tag, r.region_caption), weights.beta));
    return r;
}

// Fixed-temperature convenience overload using weights.temperature.
template <typename T>
LossReport<T> total_loss(const EmbeddingSet<T>& cls_embed, const EmbeddingSet<T>& image_tag_target,
                         const EmbeddingSet<T>& image_caption_text,
                         const EmbeddingSet<T>& region_embed,
                         const EmbeddingSet<T>& region_tag_target,
                         const EmbeddingSet<T>& region_caption_text, const LossWeights& weights,
                         TagLossMode tag_mode = TagLossMode::SmoothL1) {
    weights.validate();
    return total_loss(cls_embed, image_tag_target, image_caption_text, region_embed,
                      region_tag_target, region_caption_text,
                      Tensor<T>::scalar(static_cast<T>(1.0 / weights.temperature)), weights,
                      tag_mode);
}

} // namespace umg
