#pragma once

#include "umg/adapters.hpp"
#include "umg/granularity.hpp"

#include <random>

namespace umg {

struct EncoderConfig {
    int image_size = 32;
    int patch_size = 4;
    int channels = 3;
    int depth = 6;
    int dim = 64;
    int heads = 4;
    int text_vocab = 64;
    int text_len = 16;
    int text_depth = 2;
    int text_dim = 64;
    int embed_dim = 64;
    int cluster_after = 2; // number of full-resolution leading blocks; -1 disables
    double keep_ratio = 0.25;
    bool share_visual_head = true; // image and region projections share parameters

    int grid_tokens() const {
        int side = image_size / patch_size;
        return side * side;
    }
    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
            throw ContractError("encoder config: image_size must be divisible by patch_size");
        if (dim % heads != 0) throw ContractError("encoder config: dim must be divisible by heads");
        if (text_dim <= 0 || text_vocab <= 0 || text_len <= 0)
            throw ContractError("encoder config: invalid text settings");
        if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
            throw ContractError("encoder config: keep_ratio must be in (0,1]");
        if (cluster_after >= depth)
            throw ContractError("encoder config: cluster_after must be < depth");
    }
};

// Class token plus grid tokens of one image batch.
template <typename T>
struct TokenSequence {
    Tensor<T> cls;  // [b,d]
    Tensor<T> grid; // [b,n,d]
    int64_t grid_side = 0;
};

struct TextBatch {
    std::vector<int> token_ids; // m * text_len, zero-padded
    std::vector<int> lengths;   // m

    int64_t count() const { return static_cast<int64_t>(lengths.size()); }
    void validate(int text_len, int vocab) const {
        if (token_ids.size() != lengths.size() * static_cast<size_t>(text_len))
            throw ContractError("text batch: token buffer does not match lengths");
        for (int l : lengths)
            if (l <= 0 || l > text_len)
                throw ContractError("text batch: empty or overlong string (length " +
                                    std::to_string(l) + ")");
        for (int id : token_ids)
            if (id < 0 || id >= vocab) throw ContractError("text batch: token id out of vocab");
    }
};

template <typename T>
struct EmbeddingSet {
    Tensor<T> vectors; // [m, embed_dim]
    bool normalized = false;
};

template <typename T>
struct ProjectionHead {
    Tensor<T> w; // [src_dim, embed_dim]
    Tensor<T> b; // [embed_dim]

    static ProjectionHead init(int src, int embed, std::mt19937_64& rng) {
        std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(src)));
        std::vector<T> v(static_cast<size_t>(src) * static_cast<size_t>(embed));
        for (auto& x : v) x = static_cast<T>(nd(rng));
        return {Tensor<T>({src, embed}, std::move(v)), Tensor<T>::zeros({embed})};
    }
};

// Linear projection to the shared embedding space followed by l2
// normalization.
template <typename T>
EmbeddingSet<T> project_embed(const Tensor<T>& raw, const ProjectionHead<T>& head) {
    if (raw.ndim() != 2 || raw.dim(1) != head.w.dim(0))
        throw ShapeError("project_embed: input " + shape_str(raw.shape()) +
                         " does not match head input dim " + std::to_string(head.w.dim(0)));
    return {l2_normalize_last(add(matmul(raw, head.w), head.b)), true};
}

template <typename T>
struct BlockParams {
    Tensor<T> ln1_g, ln1_b;
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<T> ln2_g, ln2_b;
    Tensor<T> w1, b1, w2, b2;

    static BlockParams init(int dim, std::mt19937_64& rng) {
        std::normal_distribution<double> nd(0.0, 0.02);
        auto randn = [&](Shape s) {
            std::vector<T> v(static_cast<size_t>(numel(s)));
            for (auto& x : v) x = static_cast<T>(nd(rng));
            return Tensor<T>(std::move(s), std::move(v));
        };
        BlockParams p;
        p.ln1_g = Tensor<T>::full({dim}, T(1));
        p.ln1_b = Tensor<T>::zeros({dim});
        p.wq = randn({dim, dim});
        p.bq = Tensor<T>::zeros({dim});
        p.wk = randn({dim, dim});
        p.bk = Tensor<T>::zeros({dim});
        p.wv = randn({dim, dim});
        p.bv = Tensor<T>::zeros({dim});
        p.wo = randn({dim, dim});
        p.bo = Tensor<T>::zeros({dim});
        p.ln2_g = Tensor<T>::full({dim}, T(1));
        p.ln2_b = Tensor<T>::zeros({dim});
        p.w1 = randn({dim, 4 * dim});
        p.b1 = Tensor<T>::zeros({4 * dim});
        p.w2 = randn({4 * dim, dim});
        p.b2 = Tensor<T>::zeros({dim});
        return p;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".ln1_g", ln1_g);
        f(prefix + ".ln1_b", ln1_b);
        f(prefix + ".wq", wq);
        f(prefix + ".bq", bq);
        f(prefix + ".wk", wk);
        f(prefix + ".bk", bk);
        f(prefix + ".wv", wv);
        f(prefix + ".bv", bv);
        f(prefix + ".wo", wo);
        f(prefix + ".bo", bo);
        f(prefix + ".ln2_g", ln2_g);
        f(prefix + ".ln2_b", ln2_b);
        f(prefix + ".w1", w1);
        f(prefix + ".b1", b1);
        f(prefix + ".w2", w2);
        f(prefix + ".b2", b2);
    }
};

namespace detail {

template <typename T>
Tensor<T> linear_tokens(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const int64_t bt = x.dim(0) * x.dim(1);
    auto y = add(matmul(reshape(x, {bt, x.dim(2)}), w), b);
    return reshape(y, {x.dim(0), x.dim(1), w.dim(1)});
}

template <typename T>
Tensor<T> ln_affine(const Tensor<T>& x, const Tensor<T>& g, const Tensor<T>& b) {
    return add(mul(layer_norm_last(x), g), b);
}

template <typename T>
Tensor<T> to_heads(const Tensor<T>& x, int heads) {
    const int64_t b = x.dim(0), t = x.dim(1), d = x.dim(2), hd = d / heads;
    return reshape(permute(reshape(x, {b, t, heads, hd}), {0, 2, 1, 3}), {b * heads, t, hd});
}

template <typename T>
Tensor<T> from_heads(const Tensor<T>& x, int64_t b, int heads) {
    const int64_t t = x.dim(1), hd = x.dim(2);
    return reshape(permute(reshape(x, {b, heads, t, hd}), {0, 2, 1, 3}), {b, t, heads * hd});
}

// Pre-LN transformer block with optional additive attention mask, optional
// key-side log-multiplicity bias (for clustered tokens) and optional Convpass
// adapters:
//   X'  = X + MHSA(LN1(X)) + s * PET_MHSA(X)
//   X'' = X' + MLP(LN2(X')) + s * PET_MLP(X')
// has_cls marks position 0 as the class token for the adapter path.
template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const BlockParams<T>& p, int heads,
                            const Tensor<T>& mask, const Tensor<T>& key_bias,
                            const BlockAdapters<T>* adapters, double s, bool has_cls) {
    const int64_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
    const int64_t hd = d / heads;

    auto attend = [&](const Tensor<T>& input) {
        auto h = ln_affine(input, p.ln1_g, p.ln1_b);
        auto q = to_heads(linear_tokens(h, p.wq, p.bq), heads);
        auto k = to_heads(linear_tokens(h, p.wk, p.bk), heads);
        auto v = to_heads(linear_tokens(h, p.wv, p.bv), heads);
        auto logits = scale(bmm(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(hd)));
        if (mask.defined()) logits = add(logits, mask);
        if (key_bias.defined()) logits = add(logits, key_bias);
        auto ctx = bmm(softmax_last(logits), v);
        return linear_tokens(from_heads(ctx, b, heads), p.wo, p.bo);
    };

    auto pet = [&](const Tensor<T>& input, const ConvpassParams<T>& cp) {
        if (has_cls) {
            auto cls = reshape(slice(input, 1, 0, 1), {b, d});
            auto grid = slice(input, 1, 1, t - 1);
            auto [co, go] = convpass_apply_parts(cls, grid, cp);
            return concat(std::vector<Tensor<T>>{reshape(co, {b, 1, d}), go}, 1);
        }
        auto [co, go] = convpass_apply_parts(Tensor<T>(), input, cp);
        (void)co;
        return go;
    };

    Tensor<T> x1 = add(x, attend(x));
    if (adapters && s != 0.0) x1 = add(x1, scale(pet(x, adapters->mhsa), s));

    auto h2 = ln_affine(x1, p.ln2_g, p.ln2_b);
    auto m = linear_tokens(gelu(linear_tokens(h2, p.w1, p.b1)), p.w2, p.b2);
    Tensor<T> x2 = add(x1, m);
    if (adapters && s != 0.0) x2 = add(x2, scale(pet(x1, adapters->mlp), s));
    return x2;
}

} // namespace detail

template <typename T>
struct VisionEncoder {
    EncoderConfig cfg;
    Tensor<T> patch_w, patch_b; // [C*p*p, d], [d]
    Tensor<T> cls_tok;          // [1, d]
    Tensor<T> pos;              // [n+1, d]
    std::vector<BlockParams<T>> blocks;
    Tensor<T> ln_f_g, ln_f_b;

    static VisionEncoder init(const EncoderConfig& cfg, std::mt19937_64& rng) {
        cfg.validate();
        VisionEncoder e;
        e.cfg = cfg;
        std::normal_distribution<double> nd(0.0, 0.02);
        auto randn = [&](Shape s) {
            std::vector<T> v(static_cast<size_t>(numel(s)));
            for (auto& x : v) x = static_cast<T>(nd(rng));
            return Tensor<T>(std::move(s), std::move(v));
        };
        const int pf = cfg.channels * cfg.patch_size * cfg.patch_size;
        e.patch_w = randn({pf, cfg.dim});
        e.patch_b = Tensor<T>::zeros({cfg.dim});
        e.cls_tok = randn({1, cfg.dim});
        e.pos = randn({cfg.grid_tokens() + 1, cfg.dim});
        for (int i = 0; i < cfg.depth; ++i) e.blocks.push_back(BlockParams<T>::init(cfg.dim, rng));
        e.ln_f_g = Tensor<T>::full({cfg.dim}, T(1));
        e.ln_f_b = Tensor<T>::zeros({cfg.dim});
        return e;
    }

    // Full forward pass. The returned grid always has full resolution n; when
    // clustering is active the representatives are unfolded at the end.
    TokenSequence<T> forward(const Tensor<T>& images, const AdapterState<T>* adapters,
                             bool cluster_on) const {
        const int64_t H = cfg.image_size, W = cfg.image_size, C = cfg.channels;
        if (images.ndim() != 4 || images.dim(1) != C || images.dim(2) != H || images.dim(3) != W)
            throw ShapeError("encode_image: expected [b," + std::to_string(C) + "," +
                             std::to_string(H) + "," + std::to_string(W) + "], got " +
                             shape_str(images.shape()));
        const int64_t b = images.dim(0);
        const int64_t p = cfg.patch_size, side = W / p, n = side * side, d = cfg.dim;

        std::vector<int64_t> idx;
        idx.reserve(static_cast<size_t>(b * n * C * p * p));
        for (int64_t img = 0; img < b; ++img)
            for (int64_t py = 0; py < side; ++py)
                for (int64_t px = 0; px < side; ++px)
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t dy = 0; dy < p; ++dy)
                            for (int64_t dx = 0; dx < p; ++dx)
                                idx.push_back(((img * C + c) * H + py * p + dy) * W + px * p + dx);
        auto patches = take(images, idx, {b * n, C * p * p});
        auto tokens = reshape(add(matmul(patches, patch_w), patch_b), {b, n, d});
        auto cls = reshape(matmul(Tensor<T>::full({b, 1}, T(1)), cls_tok), {b, 1, d});
        auto x = add(concat(std::vector<Tensor<T>>{cls, tokens}, 1), pos);

        const bool do_cluster = cluster_on && cfg.cluster_after >= 0 && cfg.keep_ratio < 1.0;
        std::vector<ClusterMap> maps;
        Tensor<T> key_bias; // log cluster-size bias makes clustered attention
                            // reproduce full attention on homogeneous clusters
        for (int i = 0; i < cfg.depth; ++i) {
            if (do_cluster && i == cfg.cluster_after) {
                auto cls_part = slice(x, 1, 0, 1);
                auto [reps, m] = cluster_tokens(slice(x, 1, 1, x.dim(1) - 1), cfg.keep_ratio);
                maps = std::move(m);
                x = concat(std::vector<Tensor<T>>{cls_part, reps}, 1);
                const int64_t k = reps.dim(1), t = k + 1;
                std::vector<T> bias(static_cast<size_t>(b * cfg.heads * t * t), T(0));
                for (int64_t bi = 0; bi < b; ++bi) {
                    std::vector<double> count(static_cast<size_t>(k), 0.0);
                    for (int a : maps[static_cast<size_t>(bi)].assignment)
                        count[static_cast<size_t>(a)] += 1.0;
                    for (int64_t h = 0; h < cfg.heads; ++h)
                        for (int64_t r = 0; r < t; ++r)
                            for (int64_t cidx = 1; cidx < t; ++cidx)
                                bias[static_cast<size_t>((((bi * cfg.heads + h) * t) + r) * t + cidx)] =
                                    static_cast<T>(std::log(count[static_cast<size_t>(cidx - 1)]));
                }
                key_bias = Tensor<T>({b * cfg.heads, t, t}, std::move(bias));
            }
            const BlockAdapters<T>* ba = nullptr;
            double s = 0.0;
            if (adapters && static_cast<size_t>(i) < adapters->vision_blocks.size() &&
                adapters->vision_blocks[static_cast<size_t>(i)]) {
                ba = &*adapters->vision_blocks[static_cast<size_t>(i)];
                s = adapters->cfg.s;
            }
            x = detail::transformer_block(x, blocks[static_cast<size_t>(i)], cfg.heads,
                                          Tensor<T>(), key_bias, ba, s, true);
        }
        x = detail::ln_affine(x, ln_f_g, ln_f_b);
        TokenSequence<T> out;
        out.cls = reshape(slice(x, 1, 0, 1), {b, d});
        auto grid = slice(x, 1, 1, x.dim(1) - 1);
        out.grid = maps.empty() ? grid : unfold_tokens(grid, maps);
        out.grid_side = side;
        return out;
    }
};

template <typename T>
struct TextEncoder {
    EncoderConfig cfg;
    Tensor<T> tok_embed; // [vocab, td]
    Tensor<T> pos;       // [L, td]
    std::vector<BlockParams<T>> blocks;
    Tensor<T> ln_f_g, ln_f_b;

    static TextEncoder init(const EncoderConfig& cfg, std::mt19937_64& rng) {
        cfg.validate();
        TextEncoder e;
        e.cfg = cfg;
        std::normal_distribution<double> nd(0.0, 0.02);
        auto randn = [&](Shape s) {
            std::vector<T> v(static_cast<size_t>(numel(s)));
            for (auto& x : v) x = static_cast<T>(nd(rng));
            return Tensor<T>(std::move(s), std::move(v));
        };
        e.tok_embed = randn({cfg.text_vocab, cfg.text_dim});
        e.pos = randn({cfg.text_len, cfg.text_dim});
        for (int i = 0; i < cfg.text_depth; ++i)
            e.blocks.push_back(BlockParams<T>::init(cfg.text_dim, rng));
        e.ln_f_g = Tensor<T>::full({cfg.text_dim}, T(1));
        e.ln_f_b = Tensor<T>::zeros({cfg.text_dim});
        return e;
    }

    // Returns the final-position token state per string (causal transformer,
    // unnormalized, [m, text_dim]).
    Tensor<T> forward(const TextBatch& batch, const AdapterState<T>* adapters) const {
        batch.validate(cfg.text_len, cfg.text_vocab);
        const int64_t m = batch.count(), L = cfg.text_len, td = cfg.text_dim;
        std::vector<int64_t> rows(batch.token_ids.begin(), batch.token_ids.end());
        auto x = add(reshape(gather_rows(tok_embed, rows), {m, L, td}), pos);

        std::vector<T> maskv(static_cast<size_t>(L * L), T(0));
        for (int64_t i = 0; i < L; ++i)
            for (int64_t j = i + 1; j < L; ++j)
                maskv[static_cast<size_t>(i * L + j)] = static_cast<T>(-1e9);
        Tensor<T> mask({L, L}, std::move(maskv));

        const int th = cfg.text_dim % cfg.heads == 0 ? cfg.heads : 1;
        for (int i = 0; i < cfg.text_depth; ++i) {
            const BlockAdapters<T>* ba = nullptr;
            double s = 0.0;
            if (adapters && static_cast<size_t>(i) < adapters->text_blocks.size() &&
                adapters->text_blocks[static_cast<size_t>(i)]) {
                ba = &*adapters->text_blocks[static_cast<size_t>(i)];
                s = adapters->cfg.s;
            }
            x = detail::transformer_block(x, blocks[static_cast<size_t>(i)], th, mask, Tensor<T>(),
                                          ba, s, false);
        }
        x = detail::ln_affine(x, ln_f_g, ln_f_b);
        std::vector<int64_t> last;
        last.reserve(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i)
            last.push_back(i * L + batch.lengths[static_cast<size_t>(i)] - 1);
        return gather_rows(reshape(x, {m * L, td}), last);
    }
};

// Spec-level op wrapper: Convpass over a TokenSequence.
template <typename T>
TokenSequence<T> convpass_apply(const TokenSequence<T>& ts, const ConvpassParams<T>& p) {
    auto [cls, grid] = convpass_apply_parts(ts.cls, ts.grid, p);
    return {cls, grid, ts.grid_side};
}

} // namespace umg
