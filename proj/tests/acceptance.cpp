// Acceptance suite: one pass/fail line per criterion. Trains real models;
// budget is stated per criterion and checked against wall time.
#include "umg/gradcheck.hpp"
#include "umg/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace umg;

namespace {

std::mt19937_64 g_rng(12345);

Tensor<double> randn(Shape s, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> v(static_cast<size_t>(numel(s)));
    for (auto& x : v) x = nd(g_rng);
    return Tensor<double>(std::move(s), std::move(v));
}

std::string tmp_dir(const std::string& leaf) {
    auto d = std::filesystem::temp_directory_path() / leaf;
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d.string();
}

// Collects failure descriptions; empty result = criterion passed.
struct Check {
    std::vector<std::string> failures;
    void expect(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
    template <typename A, typename B>
    void expect_near(A a, B b, double tol, const std::string& what) {
        const double d = std::abs(static_cast<double>(a) - static_cast<double>(b));
        if (!(d <= tol)) {
            std::ostringstream os;
            os << what << " (|" << static_cast<double>(a) << " - " << static_cast<double>(b)
               << "| = " << d << " > " << tol << ")";
            failures.push_back(os.str());
        }
    }
};

// ---------------------------------------------------------------------------
// 1. Gradient suite
// ---------------------------------------------------------------------------

void criterion_gradients(Check& c) {
    // every op, wrapped into a scalar by a fixed random mixer so no gradient
    // degenerates to a constant
    auto mix = [&](const Tensor<double>& out) {
        static std::unordered_map<int64_t, Tensor<double>> mixers;
        auto flat = reshape(out, {out.size()});
        auto it = mixers.find(out.size());
        if (it == mixers.end())
            it = mixers.emplace(out.size(), randn({out.size()}, 1.0)).first;
        return reduce_sum(mul(flat, it->second));
    };
    auto check_op = [&](const char* name, auto&& f, Tensor<double> point, double tol = 1e-5) {
        const double err = check_gradients([&](const Tensor<double>& p) { return mix(f(p)); },
                                           std::move(point));
        if (!(err < tol)) {
            std::ostringstream os;
            os << "op " << name << ": max relative error " << err;
            c.failures.push_back(os.str());
        }
    };

    auto a = randn({3, 4});
    auto b = randn({3, 4});
    auto v = randn({4});
    check_op("add", [&](const Tensor<double>& p) { return add(p, b); }, a);
    check_op("add_bcast", [&](const Tensor<double>& p) { return add(a, p); }, v);
    check_op("mul", [&](const Tensor<double>& p) { return mul(p, b); }, a);
    check_op("mul_bcast", [&](const Tensor<double>& p) { return mul(a, p); }, v);
    check_op("scale", [&](const Tensor<double>& p) { return scale(p, -1.7); }, a);
    check_op("sub", [&](const Tensor<double>& p) { return sub(p, b); }, a);
    auto mm_rhs = randn({4, 2});
    auto bmm_rhs = randn({2, 4, 3});
    check_op("matmul_a", [&](const Tensor<double>& p) { return matmul(p, mm_rhs); }, a);
    check_op("matmul_b", [&](const Tensor<double>& p) { return matmul(a, p); }, randn({4, 2}));
    check_op("bmm", [&](const Tensor<double>& p) { return bmm(p, bmm_rhs); },
             randn({2, 3, 4}));
    check_op("permute",
             [&](const Tensor<double>& p) { return permute(p, {2, 0, 1}); }, randn({2, 3, 4}));
    check_op("reshape", [&](const Tensor<double>& p) { return reshape(p, {12}); }, a);
    check_op("transpose", [&](const Tensor<double>& p) { return transpose(p); }, a);
    check_op("concat",
             [&](const Tensor<double>& p) {
                 return concat(std::vector<Tensor<double>>{p, b}, 0);
             },
             a);
    check_op("slice", [&](const Tensor<double>& p) { return slice(p, 1, 1, 2); }, a);
    check_op("take",
             [&](const Tensor<double>& p) { return take(p, {0, 5, 5, 11, 3}, {5}); }, a);
    check_op("gather_rows",
             [&](const Tensor<double>& p) { return gather_rows(p, {2, 0, 0, 1}); }, a);
    check_op("segment_mean",
             [&](const Tensor<double>& p) { return segment_mean(p, {1, 0, 1}, 2); }, a);
    check_op("reduce_sum", [&](const Tensor<double>& p) { return reduce_sum(p); }, a);
    check_op("reduce_mean", [&](const Tensor<double>& p) { return reduce_mean(p); }, a);
    check_op("softmax_last", [&](const Tensor<double>& p) { return softmax_last(p); }, a);
    check_op("logsumexp_last", [&](const Tensor<double>& p) { return logsumexp_last(p); }, a);
    check_op("layer_norm_last", [&](const Tensor<double>& p) { return layer_norm_last(p); }, a);
    check_op("l2_normalize_last",
             [&](const Tensor<double>& p) { return l2_normalize_last(p); }, a);
    check_op("gelu", [&](const Tensor<double>& p) { return gelu(p); }, a);
    check_op("exp", [&](const Tensor<double>& p) { return exp_op(p); }, a);
    check_op("log",
             [&](const Tensor<double>& p) { return log_op(p); },
             Tensor<double>({4}, {0.5, 1.5, 2.5, 0.25}));
    // keep points away from the |x|=1 kink where central differences straddle it
    check_op("smooth_l1",
             [&](const Tensor<double>& p) { return smooth_l1(p); },
             Tensor<double>({5}, {-2.3, -0.4, 0.1, 0.7, 1.8}));
    auto img = randn({2, 3, 5, 5});
    auto w1 = randn({4, 3, 1, 1});
    auto w3 = randn({4, 3, 3, 3});
    auto bias = randn({4});
    check_op("conv2d_x3",
             [&](const Tensor<double>& p) { return conv2d(p, w3, bias); }, img);
    check_op("conv2d_w3",
             [&](const Tensor<double>& p) { return conv2d(img, p, bias); }, w3);
    check_op("conv2d_w1",
             [&](const Tensor<double>& p) { return conv2d(img, p, bias); }, w1);
    check_op("conv2d_b",
             [&](const Tensor<double>& p) { return conv2d(img, w3, p); }, bias);
    std::vector<std::array<double, 2>> pts = {{0.3, 1.2}, {2.7, 0.4}, {1.5, 2.5}};
    check_op("bilinear_sample",
             [&](const Tensor<double>& p) { return bilinear_sample(p, pts); }, randn({4, 4, 3}));

    // full toy model total_loss, cluster disabled (the discrete assignment is
    // not differentiable through a finite-difference probe)
    EncoderConfig ecfg;
    ecfg.image_size = 16;
    ecfg.patch_size = 8;
    ecfg.depth = 2;
    ecfg.dim = 8;
    ecfg.heads = 2;
    ecfg.text_vocab = 32;
    ecfg.text_len = 8;
    ecfg.text_depth = 1;
    ecfg.text_dim = 8;
    ecfg.embed_dim = 4;
    ecfg.cluster_after = -1;
    auto model = Model<double>::init(ecfg, 99);
    Vocabulary vocab;
    auto images = randn({2, 3, 16, 16}, 0.5);
    auto captions = encode_strings(vocab, {"a red circle at the top left",
                                           "the blue circle at the bottom right"},
                                   ecfg.text_len);
    auto tag_prompts = encode_strings(vocab, {tag_prompt("red circle"),
                                              tag_prompt("blue circle")},
                                      ecfg.text_len);
    RegionBoxSet boxes;
    boxes.boxes.push_back({0.1, 0.15, 0.55, 0.6, 0});
    boxes.boxes.push_back({0.4, 0.35, 0.9, 0.85, 1});
    LossWeights weights;
    auto model_loss = [&]() {
        auto tokens = model.vision.forward(images, nullptr, false);
        auto cls = project_embed(tokens.cls, model.visual_head);
        auto caps = project_embed(model.text.forward(captions, nullptr), model.text_head);
        EmbeddingSet<double> tags{
            l2_normalize_last(project_embed(model.text.forward(tag_prompts, nullptr),
                                            model.text_head)
                                  .vectors),
            true};
        auto pooled = roi_align(tokens.grid, boxes);
        EmbeddingSet<double> regions = project_embed(pooled, model.region_projection());
        auto r = total_loss(cls, tags, caps, regions, tags, caps, model.inv_temperature(),
                            weights);
        return r.total;
    };
    auto check_param = [&](const char* name, Tensor<double> t) {
        const double err =
            check_gradients([&](const Tensor<double>&) { return model_loss(); }, std::move(t));
        if (!(err < 1e-5)) {
            std::ostringstream os;
            os << "model param " << name << ": max relative error " << err;
            c.failures.push_back(os.str());
        }
    };
    check_param("logit_scale", model.logit_scale);
    check_param("head.visual.w", model.visual_head.w);
    check_param("head.visual.b", model.visual_head.b);
    check_param("head.text.b", model.text_head.b);
    check_param("vision.cls_tok", model.vision.cls_tok);
    check_param("vision.block0.wq", model.vision.blocks[0].wq);
    check_param("text.block0.w1_row", model.text.blocks[0].b1);
}

// ---------------------------------------------------------------------------
// 2. Loss identities
// ---------------------------------------------------------------------------

void criterion_loss_identities(Check& c) {
    // uniform logits: every image embedding identical, every text embedding
    // identical -> both softmaxes are uniform -> loss = ln m
    for (int64_t m : {2, 4, 8}) {
        auto row = randn({1, 6});
        auto vrow = l2_normalize_last(row);
        auto trow = l2_normalize_last(randn({1, 6}));
        std::vector<double> vd, td;
        for (int64_t i = 0; i < m; ++i) {
            vd.insert(vd.end(), vrow.data().begin(), vrow.data().end());
            td.insert(td.end(), trow.data().begin(), trow.data().end());
        }
        EmbeddingSet<double> vis{Tensor<double>({m, 6}, std::move(vd)), true};
        EmbeddingSet<double> txt{Tensor<double>({m, 6}, std::move(td)), true};
        const double loss = caption_contrastive_loss(vis, txt, 0.07).item();
        c.expect_near(loss, std::log(static_cast<double>(m)), 1e-9,
                      "uniform-logit contrastive loss != ln m for m=" + std::to_string(m));
    }

    // smooth-L1 value and derivative continuity across |x| = 1
    for (double s : {1.0, -1.0}) {
        const double h = 1e-7;
        auto val = [&](double x) {
            return smooth_l1(Tensor<double>({1}, {x})).item();
        };
        auto deriv = [&](double x) {
            Tensor<double> t({1}, {x});
            t.set_requires_grad(true);
            Tape<double> tape;
            tape.backward(reduce_sum(smooth_l1(t)));
            return t.grad()[0];
        };
        // both one-sided limits of value and slope agree with the kink value
        // (0.5) and slope (sign(x)) up to O(h^2)
        c.expect_near(val(s * (1 + h)), 0.5 + h, 1e-8,
                      "smooth-L1 value discontinuous at x=" + std::to_string(s));
        c.expect_near(val(s * (1 - h)), 0.5 - h, 1e-8,
                      "smooth-L1 value discontinuous at x=" + std::to_string(s));
        c.expect_near(deriv(s * (1 + h)), s, 1e-6,
                      "smooth-L1 derivative discontinuous at x=" + std::to_string(s));
        c.expect_near(deriv(s * (1 - h)), s, 1e-6,
                      "smooth-L1 derivative discontinuous at x=" + std::to_string(s));
        c.expect_near(val(s), 0.5, 1e-12, "smooth-L1 value at the kink");
    }

    // report total recomposition for random alpha/beta
    std::uniform_real_distribution<double> u(0.0, 3.0);
    for (int trial = 0; trial < 5; ++trial) {
        LossWeights w;
        w.alpha = u(g_rng);
        w.beta = u(g_rng);
        const int64_t m = 5, r = 4, d = 6;
        EmbeddingSet<double> cls{l2_normalize_last(randn({m, d})), true};
        EmbeddingSet<double> itag{l2_normalize_last(randn({m, d})), true};
        EmbeddingSet<double> icap{l2_normalize_last(randn({m, d})), true};
        EmbeddingSet<double> reg{l2_normalize_last(randn({r, d})), true};
        EmbeddingSet<double> rtag{l2_normalize_last(randn({r, d})), true};
        EmbeddingSet<double> rcap{l2_normalize_last(randn({r, d})), true};
        auto rep = total_loss(cls, itag, icap, reg, rtag, rcap, w);
        const double expected =
            w.alpha * (rep.image_tag.item() + rep.image_caption.item()) +
            w.beta * (rep.region_tag.item() + rep.region_caption.item());
        c.expect_near(rep.total.item(), expected, 1e-6, "total != alpha*image + beta*region");
    }
}

// ---------------------------------------------------------------------------
// 3. Oracle equivalence
// ---------------------------------------------------------------------------

void criterion_oracles(Check& c) {
    // roi_align vs direct bilinear recomputation at the quadrant centers
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const int64_t bsz = 1 + static_cast<int64_t>(g_rng() % 3);
        const int64_t side = 4 + static_cast<int64_t>(g_rng() % 5);
        const int64_t d = 5;
        auto grid = randn({bsz, side * side, d});
        RegionBoxSet boxes;
        const int64_t nb = 1 + static_cast<int64_t>(g_rng() % 6);
        for (int64_t i = 0; i < nb; ++i) {
            double x0 = u01(g_rng) * 0.8, y0 = u01(g_rng) * 0.8;
            double x1 = x0 + 0.05 + u01(g_rng) * (1.0 - x0 - 0.05);
            double y1 = y0 + 0.05 + u01(g_rng) * (1.0 - y0 - 0.05);
            boxes.boxes.push_back({x0, y0, x1, y1,
                                   static_cast<int64_t>(g_rng() % static_cast<uint64_t>(bsz))});
        }
        auto pooled = roi_align(grid, boxes);
        for (int64_t i = 0; i < nb; ++i) {
            const auto& box = boxes.boxes[static_cast<size_t>(i)];
            const double* fm =
                grid.data().data() + box.image_index * side * side * d;
            for (int64_t ch = 0; ch < d; ++ch) {
                double acc = 0;
                for (const auto& p : roi_sample_points(box, side)) {
                    // clamped bilinear interpolation, written independently
                    double x = p[0], y = p[1];
                    auto clampi = [&](int64_t v) {
                        return std::max<int64_t>(0, std::min<int64_t>(side - 1, v));
                    };
                    int64_t xf = clampi(static_cast<int64_t>(std::floor(x)));
                    int64_t yf = clampi(static_cast<int64_t>(std::floor(y)));
                    int64_t xc = clampi(xf + 1), yc = clampi(yf + 1);
                    double wx = std::min(1.0, std::max(0.0, x - static_cast<double>(xf)));
                    double wy = std::min(1.0, std::max(0.0, y - static_cast<double>(yf)));
                    auto at = [&](int64_t yy, int64_t xx) {
                        return fm[(yy * side + xx) * d + ch];
                    };
                    acc += (1 - wy) * ((1 - wx) * at(yf, xf) + wx * at(yf, xc)) +
                           wy * ((1 - wx) * at(yc, xf) + wx * at(yc, xc));
                }
                c.expect_near(pooled.data()[static_cast<size_t>(i * d + ch)], acc / 4.0, 1e-6,
                              "roi_align trial " + std::to_string(trial));
                if (!c.failures.empty()) return;
            }
        }
    }

    // nms vs brute-force oracle
    std::uniform_real_distribution<double> conf(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const size_t n = 1 + g_rng() % 50;
        std::vector<Region> regions(n);
        for (auto& r : regions) {
            double x0 = u01(g_rng) * 80, y0 = u01(g_rng) * 80;
            r.box = {x0, y0, x0 + 2 + u01(g_rng) * 30, y0 + 2 + u01(g_rng) * 30};
            r.confidence = conf(g_rng);
            r.tag = "t" + std::to_string(g_rng() % 3);
        }
        const double thr = 0.2 + 0.5 * u01(g_rng);
        auto kept = nms_merge(regions, thr);
        // oracle: stable sort by confidence, greedy keep
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return regions[a].confidence > regions[b].confidence;
        });
        std::vector<const Region*> oracle;
        for (size_t id : order) {
            bool keep = true;
            for (const Region* k : oracle)
                if (box_iou(k->box, regions[id].box) > thr) keep = false;
            if (keep) oracle.push_back(&regions[id]);
        }
        bool same = kept.size() == oracle.size();
        if (same)
            for (size_t i = 0; i < kept.size(); ++i)
                same = same && kept[i].box.x0 == oracle[i]->box.x0 &&
                       kept[i].box.y0 == oracle[i]->box.y0 &&
                       kept[i].confidence == oracle[i]->confidence;
        c.expect(same, "nms_merge mismatch on trial " + std::to_string(trial));
        if (!same) return;
    }

    // cluster assignment on separated groups vs exhaustive nearest-rep oracle
    for (int trial = 0; trial < 10; ++trial) {
        const int64_t groups = 4, per = 4, d = 16, n = groups * per;
        std::vector<double> data;
        for (int64_t gi = 0; gi < groups; ++gi) {
            // orthogonal base directions, small within-group spread
            std::vector<double> base(static_cast<size_t>(d), 0.0);
            base[static_cast<size_t>(gi * 3)] = 1.0;
            for (int64_t j = 0; j < per; ++j)
                for (int64_t k = 0; k < d; ++k)
                    data.push_back(base[static_cast<size_t>(k)] * (4.0 + 0.1 * j) +
                                   0.01 * static_cast<double>((g_rng() % 100)) / 100.0);
        }
        Tensor<double> grid({1, n, d}, std::move(data));
        auto [reps, maps] = cluster_tokens(grid, 0.25);
        c.expect(reps.dim(1) == groups, "cluster count != ceil(n/4)");
        const auto& m = maps[0];
        auto cos = [&](int64_t a, int64_t b) {
            const double* x = grid.data().data();
            double dot = 0, na = 0, nb2 = 0;
            for (int64_t k = 0; k < d; ++k) {
                dot += x[a * d + k] * x[b * d + k];
                na += x[a * d + k] * x[a * d + k];
                nb2 += x[b * d + k] * x[b * d + k];
            }
            return dot / std::sqrt(na * nb2);
        };
        for (int64_t i = 0; i < n; ++i) {
            int best = 0;
            double best_s = -2;
            for (size_t r = 0; r < m.representative_ids.size(); ++r) {
                double s = m.representative_ids[r] == i ? 2.0
                                                        : cos(i, m.representative_ids[r]);
                if (s > best_s) {
                    best_s = s;
                    best = static_cast<int>(r);
                }
            }
            c.expect(m.assignment[static_cast<size_t>(i)] == best,
                     "cluster assignment differs from nearest-representative oracle");
            if (!c.failures.empty()) return;
        }
    }
}

// ---------------------------------------------------------------------------
// 4. Exactness contracts
// ---------------------------------------------------------------------------

EncoderConfig small_encoder() {
    EncoderConfig e;
    e.image_size = 32;
    e.patch_size = 8;
    e.depth = 3;
    e.dim = 32;
    e.heads = 2;
    e.text_vocab = 32;
    e.text_len = 12;
    e.text_depth = 1;
    e.text_dim = 32;
    e.embed_dim = 16;
    e.cluster_after = 1;
    e.keep_ratio = 0.5;
    return e;
}

void criterion_exactness(Check& c) {
    // zero-init adapters are a bit-exact no-op on the forward pass
    auto ecfg = small_encoder();
    auto plain = Model<float>::init(ecfg, 7);
    auto with = Model<float>::init(ecfg, 7);
    AdapterConfig acfg;
    with.attach_adapters(acfg, 8);
    std::normal_distribution<float> nd(0.0f, 0.5f);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<float> px(static_cast<size_t>(2 * 3 * 32 * 32));
        for (auto& v : px) v = nd(g_rng);
        Tensor<float> images({2, 3, 32, 32}, std::move(px));
        auto a = plain.vision.forward(images, nullptr, true);
        auto b = with.vision.forward(images, &*with.adapters, true);
        c.expect(a.cls.data() == b.cls.data() && a.grid.data() == b.grid.data(),
                 "zero-init adapters changed the forward pass (trial " + std::to_string(trial) +
                     ")");
        if (!c.failures.empty()) return;
    }
    // s = 0 with randomized adapter weights is also exact
    with.adapters->cfg.s = 0.0;
    for (auto& blk : with.adapters->vision_blocks)
        if (blk) {
            for (auto* t : {&blk->mhsa.up_w, &blk->mhsa.up_b, &blk->mlp.up_w, &blk->mlp.up_b})
                for (auto& v : t->mutable_data()) v = nd(g_rng);
        }
    {
        std::vector<float> px(static_cast<size_t>(2 * 3 * 32 * 32));
        for (auto& v : px) v = nd(g_rng);
        Tensor<float> images({2, 3, 32, 32}, std::move(px));
        auto a = plain.vision.forward(images, nullptr, true);
        auto b = with.vision.forward(images, &*with.adapters, true);
        c.expect(a.cls.data() == b.cls.data() && a.grid.data() == b.grid.data(),
                 "s=0 adapters changed the forward pass");
    }

    // checkpoint round trip is bit exact
    RunConfig cfg = default_run_config(RunMode::Pretrain);
    cfg.encoder = ecfg;
    cfg.steps = 5;
    cfg.batch_size = 4;
    cfg.data.n_images = 16;
    cfg.optimizer.warmup_steps = 1;
    auto model = Model<float>::init(ecfg, 21);
    auto ckpt = snapshot(model, nullptr, {}, cfg);
    const auto dir = tmp_dir("umg_acc_exact");
    save_checkpoint(ckpt, dir + "/m.umg");
    auto back = load_checkpoint(dir + "/m.umg");
    model.visit_params([&](const std::string& n, Tensor<float>& t, ParamRole) {
        c.expect(back.get_f32(n, t.shape()) == t.data(),
                 "checkpoint round trip not bit-exact for " + n);
    });

    // identically-seeded runs produce bit-identical checkpoint files
    CorpusSpec ds;
    ds.seed = cfg.seed;
    ds.n_images = cfg.data.n_images;
    auto scenes = gen_corpus(ds);
    cfg.out_dir = dir + "/run_a";
    auto ra = train_run(cfg, scenes);
    cfg.out_dir = dir + "/run_b";
    auto rb = train_run(cfg, scenes);
    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    c.expect(slurp(ra.checkpoint_path) == slurp(rb.checkpoint_path),
             "identically-seeded runs differ in checkpoint bytes");

    // adapt mode leaves backbone bytes untouched over 200 steps
    RunConfig ad = default_run_config(RunMode::Adapt);
    ad.encoder = ecfg;
    ad.steps = 200;
    ad.batch_size = 4;
    ad.data.n_images = 16;
    ad.base_checkpoint = ra.checkpoint_path;
    ad.out_dir = dir + "/run_adapt";
    ad.optimizer.warmup_steps = 10;
    CorpusSpec ds2 = ds;
    ds2.shifted = true;
    auto res = train_run(ad, gen_corpus(ds2));
    auto base_ck = load_checkpoint(ra.checkpoint_path);
    auto adapted = load_checkpoint(res.checkpoint_path);
    for (const auto& e : adapted.tensors)
        if (e.name.rfind("vision.", 0) == 0 || e.name.rfind("text.", 0) == 0) {
            const auto* b = base_ck.find(e.name);
            c.expect(b && e.bytes == b->bytes, "adapt run modified backbone tensor " + e.name);
        }
}

// ---------------------------------------------------------------------------
// 5. Token-reduction contract
// ---------------------------------------------------------------------------

void criterion_token_reduction(Check& c) {
    // exact representative counts at keep_ratio 0.25
    for (int64_t n : {64, 10, 16, 100}) {
        auto grid = randn({1, n, 8});
        auto [reps, maps] = cluster_tokens(grid, 0.25);
        const int64_t expect_k =
            static_cast<int64_t>(std::ceil(0.25 * static_cast<double>(n)));
        c.expect(reps.dim(1) == expect_k,
                 "keep_ratio 0.25 on n=" + std::to_string(n) + " gave k=" +
                     std::to_string(reps.dim(1)) + ", expected " + std::to_string(expect_k));
    }

    // unfold makes same-cluster positions bit-identical
    {
        auto grid = randn({2, 16, 8});
        auto [reps, maps] = cluster_tokens(grid, 0.25);
        auto full = unfold_tokens(reps, maps);
        for (int64_t b = 0; b < 2; ++b)
            for (int64_t i = 0; i < 16; ++i)
                for (int64_t j = 0; j < 16; ++j)
                    if (maps[static_cast<size_t>(b)].assignment[static_cast<size_t>(i)] ==
                        maps[static_cast<size_t>(b)].assignment[static_cast<size_t>(j)])
                        for (int64_t k = 0; k < 8; ++k)
                            c.expect(full.data()[static_cast<size_t>((b * 16 + i) * 8 + k)] ==
                                         full.data()[static_cast<size_t>((b * 16 + j) * 8 + k)],
                                     "unfolded same-cluster positions are not bit-identical");
        if (!c.failures.empty()) return;
    }

    // lossless reconstruction on cluster-homogeneous input
    {
        const int64_t groups = 4, per = 4, d = 8;
        std::vector<double> data;
        std::vector<std::vector<double>> protos;
        for (int64_t gi = 0; gi < groups; ++gi) {
            std::vector<double> p(static_cast<size_t>(d), 0.0);
            p[static_cast<size_t>(gi)] = 2.0 + static_cast<double>(gi);
            protos.push_back(p);
        }
        for (int64_t gi = 0; gi < groups; ++gi)
            for (int64_t j = 0; j < per; ++j)
                data.insert(data.end(), protos[static_cast<size_t>(gi)].begin(),
                            protos[static_cast<size_t>(gi)].end());
        Tensor<double> grid({1, groups * per, d}, std::move(data));
        auto [reps, maps] = cluster_tokens(grid, 0.25);
        auto full = unfold_tokens(reps, maps);
        for (size_t i = 0; i < full.data().size(); ++i)
            c.expect_near(full.data()[i], grid.data()[i], 1e-6,
                          "homogeneous clusters do not reconstruct losslessly");
    }

    // activation-memory proxy: >= 2x reduction with clustering at block 2/6
    {
        EncoderConfig e;
        e.image_size = 32;
        e.patch_size = 2;
        e.depth = 6;
        e.dim = 64;
        e.heads = 4;
        e.cluster_after = 2;
        e.keep_ratio = 0.25;
        auto model = Model<float>::init(e, 3);
        partition_parameters(model, RunMode::Pretrain);
        std::normal_distribution<float> nd(0.0f, 0.5f);
        std::vector<float> px(static_cast<size_t>(4 * 3 * 32 * 32));
        for (auto& v : px) v = nd(g_rng);
        Tensor<float> images({4, 3, 32, 32}, px);
        // measured under a tape: the retained activations are what clustering
        // is supposed to shrink
        auto peak_forward = [&](bool cluster_on) {
            const int64_t before = memory::live();
            memory::reset_peak();
            Tape<float> tape;
            auto out = model.vision.forward(images, nullptr, cluster_on);
            return memory::peak() - before;
        };
        const int64_t with_cluster = peak_forward(true);
        const int64_t without = peak_forward(false);
        if (!(without >= 2 * with_cluster)) {
            std::ostringstream os;
            os << "memory proxy reduction " << static_cast<double>(without) /
                        static_cast<double>(with_cluster)
               << "x < 2x (full " << without << ", clustered " << with_cluster << ")";
            c.failures.push_back(os.str());
        }
    }
}

// ---------------------------------------------------------------------------
// 6. Desk-scale learning
// ---------------------------------------------------------------------------

void criterion_learning(Check& c) {
    RunConfig cfg = default_run_config(RunMode::Pretrain);
    cfg.out_dir = tmp_dir("umg_acc_learn");
    CorpusSpec ds;
    ds.seed = cfg.seed;
    ds.n_images = cfg.data.n_images;
    ds.max_regions = cfg.data.max_regions;
    auto res = train_run(cfg, gen_corpus(ds));
    c.expect(!res.halted_nonfinite, "default pretrain halted on a non-finite loss");
    c.expect(res.metrics.size() == static_cast<size_t>(cfg.steps),
             "default pretrain did not complete all steps");

    // image_caption loss down >= 50% from its step-10 moving average
    if (res.metrics.size() >= 20) {
        double early = 0;
        for (int i = 0; i < 10; ++i) early += res.metrics[static_cast<size_t>(i)].loss_image_caption;
        early /= 10;
        double late = 0;
        for (size_t i = res.metrics.size() - 10; i < res.metrics.size(); ++i)
            late += res.metrics[i].loss_image_caption;
        late /= 10;
        c.expect(late <= 0.5 * early, "image_caption loss fell by less than 50%");
    }

    // eval scenes are single-region so each image caption is unambiguous
    CorpusSpec es;
    es.seed = cfg.seed + 1;
    es.n_images = 64;
    es.max_regions = 1;
    es.held_out_only = true;
    auto eval_scenes = gen_corpus(es);
    auto model = load_model(res.checkpoint_path, cfg);
    auto m = evaluate(model, eval_scenes, cfg);
    {
        std::ostringstream os;
        os << "learning metrics: i2t_r1=" << m.i2t_r1 << " i2t_r5=" << m.i2t_r5
           << " region_r1=" << m.region_r1 << " tag_acc=" << m.tag_accuracy;
        std::printf("    %s\n", os.str().c_str());
    }
    c.expect(m.i2t_r1 >= 0.90, "held-out image-text R@1 " + std::to_string(m.i2t_r1) + " < 0.90");
    c.expect(m.region_r1 >= 0.70, "held-out region R@1 " + std::to_string(m.region_r1) + " < 0.70");
}

// ---------------------------------------------------------------------------
// 7. Ablation directions
// ---------------------------------------------------------------------------

void criterion_ablations(Check& c) {
    // (a) region supervision improves region R@1 over image-only training
    auto region_r1_for = [&](uint64_t seed, double beta) {
        RunConfig cfg = default_run_config(RunMode::Pretrain);
        cfg.seed = seed;
        cfg.steps = 500;
        cfg.data.n_images = 512;
        cfg.loss.beta = beta;
        cfg.out_dir = tmp_dir("umg_acc_abl_" + std::to_string(seed) + "_" +
                              std::to_string(beta > 0));
        CorpusSpec ds;
        ds.seed = seed;
        ds.n_images = cfg.data.n_images;
        ds.max_regions = cfg.data.max_regions;
        auto res = train_run(cfg, gen_corpus(ds));
        CorpusSpec es;
        es.seed = seed + 1000;
        es.n_images = 48;
        es.max_regions = 1;
        es.held_out_only = true;
        auto model = load_model(res.checkpoint_path, cfg);
        return evaluate(model, gen_corpus(es), cfg).region_r1;
    };
    int region_wins = 0;
    for (uint64_t seed : {11ull, 22ull, 33ull}) {
        const double with_region = region_r1_for(seed, 1.0);
        const double image_only = region_r1_for(seed, 0.0);
        std::printf("    seed %llu: region R@1 with=%.3f without=%.3f\n",
                    static_cast<unsigned long long>(seed), with_region, image_only);
        if (with_region > image_only) ++region_wins;
    }
    c.expect(region_wins >= 2, "region supervision improved region R@1 in only " +
                                   std::to_string(region_wins) + "/3 seeds");

    // (b) adapters beat heads-only adaptation in final loss at fixed steps
    auto adapt_loss_for = [&](uint64_t seed, bool use_adapters, const std::string& base) {
        RunConfig cfg = default_run_config(RunMode::Adapt);
        cfg.seed = seed;
        cfg.steps = 150;
        cfg.data.n_images = 256;
        cfg.data.shifted = true;
        cfg.use_adapters = use_adapters;
        cfg.base_checkpoint = base;
        cfg.out_dir = tmp_dir("umg_acc_pet_" + std::to_string(seed) + "_" +
                              std::to_string(use_adapters));
        CorpusSpec ds;
        ds.seed = seed + 7;
        ds.n_images = cfg.data.n_images;
        ds.shifted = true;
        auto res = train_run(cfg, gen_corpus(ds));
        double tail = 0;
        const size_t k = 20;
        for (size_t i = res.metrics.size() - k; i < res.metrics.size(); ++i)
            tail += res.metrics[i].loss_total;
        return tail / static_cast<double>(k);
    };
    // one shared base checkpoint for all PET comparisons
    RunConfig base_cfg = default_run_config(RunMode::Pretrain);
    base_cfg.steps = 300;
    base_cfg.data.n_images = 512;
    base_cfg.out_dir = tmp_dir("umg_acc_pet_base");
    CorpusSpec bds;
    bds.seed = base_cfg.seed;
    bds.n_images = base_cfg.data.n_images;
    auto base_run = train_run(base_cfg, gen_corpus(bds));
    int pet_wins = 0;
    for (uint64_t seed : {101ull, 202ull, 303ull}) {
        const double with_pet = adapt_loss_for(seed, true, base_run.checkpoint_path);
        const double heads_only = adapt_loss_for(seed, false, base_run.checkpoint_path);
        std::printf("    seed %llu: adapt loss with=%.4f heads-only=%.4f\n",
                    static_cast<unsigned long long>(seed), with_pet, heads_only);
        if (with_pet < heads_only) ++pet_wins;
    }
    c.expect(pet_wins >= 2,
             "adapters beat heads-only in only " + std::to_string(pet_wins) + "/3 seeds");
}

// ---------------------------------------------------------------------------
// 8. Annotator contracts
// ---------------------------------------------------------------------------

void criterion_annotator(Check& c) {
    // confidence boundary: exactly 0.3 kept, 0.29 dropped
    Region keep;
    keep.box = {0, 0, 10, 10};
    keep.confidence = 0.3;
    Region drop = keep;
    drop.confidence = 0.29;
    auto kept = filter_by_confidence({keep, drop}, 0.3);
    c.expect(kept.size() == 1 && kept[0].confidence == 0.3,
             "confidence filter boundary behavior wrong at 0.3/0.29");

    // jitter stability on constant / disjoint oracles
    MaskOracle constant = [](const PixelBox&) { return std::vector<uint8_t>(100 * 100, 1); };
    c.expect_near(jitter_stability({40, 40, 60, 60}, constant, 100, 100), 1.0, 1e-12,
                  "constant oracle stability != 1");
    MaskOracle disjoint = [](const PixelBox& b) {
        std::vector<uint8_t> m(100 * 100, 0);
        // a unique pixel per distinct box position -> zero overlap
        int x = static_cast<int>(std::fabs(b.x0 * 7 + b.y0 * 13)) % 100;
        int y = static_cast<int>(std::fabs(b.x0 * 3 + b.y0 * 5)) % 100;
        m[static_cast<size_t>(y) * 100 + static_cast<size_t>(x)] = 1;
        return m;
    };
    c.expect_near(jitter_stability({40, 40, 60, 60}, disjoint, 100, 100), 0.0, 1e-12,
                  "disjoint oracle stability != 0");

    // translated filled box: IoU computable by pixel counting
    const int W = 40, H = 40;
    MaskOracle boxfill = [&](const PixelBox& b) {
        std::vector<uint8_t> m(static_cast<size_t>(W * H), 0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                if (x + 0.5 >= b.x0 && x + 0.5 < b.x1 && y + 0.5 >= b.y0 && y + 0.5 < b.y1)
                    m[static_cast<size_t>(y * W + x)] = 1;
        return m;
    };
    const PixelBox box{10, 10, 20, 20}; // the 10x10 case
    const double got = jitter_stability(box, boxfill, W, H, 4, 0.05);
    // pixel-count oracle over the library's jitter geometry
    auto mask_of = boxfill(box);
    double acc = 0;
    const double dirs[4][2] = {{1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
    for (int j = 0; j < 4; ++j) {
        const double mmag = 0.05 * (1.0 + j / 4); // integer step-per-cycle, as documented
        PixelBox moved{box.x0 + dirs[j][0] * mmag * box.width(),
                       box.y0 + dirs[j][1] * mmag * box.height(),
                       box.x1 + dirs[j][0] * mmag * box.width(),
                       box.y1 + dirs[j][1] * mmag * box.height()};
        auto m2 = boxfill(moved);
        double inter = 0, uni = 0;
        for (size_t i = 0; i < mask_of.size(); ++i) {
            inter += (mask_of[i] && m2[i]) ? 1 : 0;
            uni += (mask_of[i] || m2[i]) ? 1 : 0;
        }
        acc += uni == 0 ? 1.0 : inter / uni;
    }
    c.expect_near(got, acc / 4.0, 1e-9, "jitter stability != pixel-count oracle on 10x10 box");

    // stats bucket boundaries
    c.expect(area_bucket(399.999) == 0 && area_bucket(400.0) == 1, "bucket boundary 400");
    c.expect(area_bucket(1599.999) == 1 && area_bucket(1600.0) == 2, "bucket boundary 1600");
    c.expect(area_bucket(9999.999) == 2 && area_bucket(10000.0) == 3, "bucket boundary 10000");
    c.expect(area_bucket(39999.999) == 3 && area_bucket(40000.0) == 4, "bucket boundary 40000");

    // stats permutation invariance
    CorpusSpec ds;
    ds.n_images = 24;
    ds.max_regions = 3;
    auto scenes = gen_corpus(ds);
    std::vector<AnnotationRecord> recs;
    for (const auto& s : scenes) recs.push_back(s.record);
    auto forward = stats_to_json(compute_stats(recs));
    std::reverse(recs.begin(), recs.end());
    auto backward = stats_to_json(compute_stats(recs));
    c.expect(forward == backward, "corpus stats are not permutation-invariant");
}

struct CriterionSpec {
    int id;
    const char* name;
    void (*fn)(Check&);
    double budget_seconds;
};

} // namespace

int main(int argc, char** argv) {
    // optional arguments select a subset of criteria by number
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    const CriterionSpec criteria[] = {
        {1, "gradient suite", criterion_gradients, 120},
        {2, "loss identities", criterion_loss_identities, 10},
        {3, "oracle equivalence", criterion_oracles, 60},
        {4, "exactness contracts", criterion_exactness, 180},
        {5, "token-reduction contract", criterion_token_reduction, 30},
        {6, "desk-scale learning", criterion_learning, 1200},
        {7, "ablation directions", criterion_ablations, 3600},
        {8, "annotator contracts", criterion_annotator, 30},
    };
    int failed = 0;
    for (const auto& spec : criteria) {
        if (!only.empty() && !only.count(spec.id)) continue;
        Check check;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            spec.fn(check);
        } catch (const std::exception& e) {
            check.failures.push_back(std::string("exception: ") + e.what());
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > spec.budget_seconds) {
            std::ostringstream os;
            os << "over time budget (" << secs << "s > " << spec.budget_seconds << "s)";
            check.failures.push_back(os.str());
        }
        if (check.failures.empty()) {
            std::printf("criterion %d (%s): PASS (%.1fs)\n", spec.id, spec.name, secs);
        } else {
            std::printf("criterion %d (%s): FAIL (%.1fs) — %s\n", spec.id, spec.name, secs,
                        check.failures.front().c_str());
            for (size_t i = 1; i < check.failures.size() && i < 5; ++i)
                std::printf("    also: %s\n", check.failures[i].c_str());
            ++failed;
        }
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
