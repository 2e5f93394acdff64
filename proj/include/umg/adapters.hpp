#pragma once

#include "umg/ops.hpp"

#include <optional>
#include <random>

namespace umg {

struct AdapterConfig {
    double s = 0.1;             // contribution scale
    int bottleneck = 0;         // 0 -> max(8, d/4)
    std::vector<int> insertion; // block indices; empty -> all blocks
    bool adapt_text = false;    // also insert adapters into the text encoder
    void validate() const {
        if (s < 0) throw ContractError("adapter scale s must be >= 0");
        if (bottleneck < 0) throw ContractError("adapter bottleneck must be >= 1 (or 0 for default)");
    }
    int resolved_bottleneck(int dim) const {
        return bottleneck > 0 ? bottleneck : std::max(8, dim / 4);
    }
    bool inserted_at(int block) const {
        if (insertion.empty()) return true;
        return std::find(insertion.begin(), insertion.end(), block) != insertion.end();
    }
};

// One Convpass module: 1x1 down, 3x3 mid, 1x1 up with two GELUs. The up
// projection starts at zero so adaptation begins exactly at the frozen model.
template <typename T>
struct ConvpassParams {
    Tensor<T> down_w, down_b; // [h,d,1,1], [h]
    Tensor<T> mid_w, mid_b;   // [h,h,3,3], [h]
    Tensor<T> up_w, up_b;     // [d,h,1,1], [d]

    static ConvpassParams init(int dim, int hidden, std::mt19937_64& rng) {
        std::normal_distribution<double> nd(0.0, 0.02);
        auto randn = [&](Shape s) {
            std::vector<T> v(static_cast<size_t>(numel(s)));
            for (auto& x : v) x = static_cast<T>(nd(rng));
            return Tensor<T>(std::move(s), std::move(v));
        };
        ConvpassParams p;
        p.down_w = randn({hidden, dim, 1, 1});
        p.down_b = Tensor<T>::zeros({hidden});
        p.mid_w = randn({hidden, hidden, 3, 3});
        p.mid_b = Tensor<T>::zeros({hidden});
        p.up_w = Tensor<T>::zeros({dim, hidden, 1, 1});
        p.up_b = Tensor<T>::zeros({dim});
        return p;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".down_w", down_w);
        f(prefix + ".down_b", down_b);
        f(prefix + ".mid_w", mid_w);
        f(prefix + ".mid_b", mid_b);
        f(prefix + ".up_w", up_w);
        f(prefix + ".up_b", up_b);
    }
};

template <typename T>
struct BlockAdapters {
    ConvpassParams<T> mhsa;
    ConvpassParams<T> mlp;
};

template <typename T>
struct AdapterState {
    AdapterConfig cfg;
    std::vector<std::optional<BlockAdapters<T>>> vision_blocks;
    std::vector<std::optional<BlockAdapters<T>>> text_blocks;

    static AdapterState init(const AdapterConfig& cfg, int vision_depth, int vision_dim,
                             int text_depth, int text_dim, std::mt19937_64& rng) {
        cfg.validate();
        AdapterState st;
        st.cfg = cfg;
        for (int i = 0; i < vision_depth; ++i) {
            if (cfg.inserted_at(i))
                st.vision_blocks.push_back(BlockAdapters<T>{
                    ConvpassParams<T>::init(vision_dim, cfg.resolved_bottleneck(vision_dim), rng),
                    ConvpassParams<T>::init(vision_dim, cfg.resolved_bottleneck(vision_dim), rng)});
            else
                st.vision_blocks.push_back(std::nullopt);
        }
        for (int i = 0; i < text_depth; ++i) {
            if (cfg.adapt_text && cfg.inserted_at(i))
                st.text_blocks.push_back(BlockAdapters<T>{
                    ConvpassParams<T>::init(text_dim, cfg.resolved_bottleneck(text_dim), rng),
                    ConvpassParams<T>::init(text_dim, cfg.resolved_bottleneck(text_dim), rng)});
            else
                st.text_blocks.push_back(std::nullopt);
        }
        return st;
    }

    template <typename F>
    void visit(F&& f) {
        for (size_t i = 0; i < vision_blocks.size(); ++i)
            if (vision_blocks[i]) {
                vision_blocks[i]->mhsa.visit("adapter.vision" + std::to_string(i) + ".mhsa", f);
                vision_blocks[i]->mlp.visit("adapter.vision" + std::to_string(i) + ".mlp", f);
            }
        for (size_t i = 0; i < text_blocks.size(); ++i)
            if (text_blocks[i]) {
                text_blocks[i]->mhsa.visit("adapter.text" + std::to_string(i) + ".mhsa", f);
                text_blocks[i]->mlp.visit("adapter.text" + std::to_string(i) + ".mlp", f);
            }
    }
};

// Convpass over split token parts. The grid path runs the three convolutions
// over the square token layout; the class token takes the 1x1 down/up
// projections with the 3x3 stage as identity so it never mixes spatially.
// Token sets without a square layout (clustered representatives, text
// sequences of non-square length) have no spatial neighborhood, so they take
// the same pointwise path as the class token. Either part may be undefined.
// cls is [b,d], grid is [b,n,d].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> convpass_apply_parts(const Tensor<T>& cls, const Tensor<T>& grid,
                                                     const ConvpassParams<T>& p) {
    const int64_t hidden = p.down_w.dim(0), dim = p.down_w.dim(1);
    auto pointwise = [&](const Tensor<T>& x2d) {
        auto dw = transpose(reshape(p.down_w, {hidden, dim})); // [d,h]
        auto uw = transpose(reshape(p.up_w, {dim, hidden}));   // [h,d]
        auto h1 = gelu(add(matmul(x2d, dw), p.down_b));
        auto h2 = gelu(h1); // 3x3 stage replaced by identity between the GELUs
        return add(matmul(h2, uw), p.up_b);
    };
    Tensor<T> cls_out, grid_out;
    if (grid.defined()) {
        const int64_t b = grid.dim(0), n = grid.dim(1);
        const int64_t g = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(n))));
        if (g * g == n) {
            auto x = permute(reshape(grid, {b, g, g, dim}), {0, 3, 1, 2}); // [b,d,g,g]
            x = gelu(conv2d(x, p.down_w, p.down_b));
            x = gelu(conv2d(x, p.mid_w, p.mid_b));
            x = conv2d(x, p.up_w, p.up_b);
            grid_out = reshape(permute(x, {0, 2, 3, 1}), {b, n, dim});
        } else {
            grid_out = reshape(pointwise(reshape(grid, {b * n, dim})), {b, n, dim});
        }
    }
    if (cls.defined()) cls_out = pointwise(cls);
    return {cls_out, grid_out};
}

} // namespace umg
