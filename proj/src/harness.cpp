#include "umg/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <unordered_map>

namespace umg {

using nlohmann::json;

namespace {

// Embeds each distinct string once and restores the requested multiplicity
// with a gather; the synthetic grammar repeats heavily inside a batch, so
// this removes most of the text-tower work without changing any value or
// gradient (gather accumulates into the shared rows on backward).
Tensor<float> embed_unique(Model<float>& model, const Vocabulary& vocab,
                           const std::vector<std::string>& texts, const RunConfig& cfg) {
    std::vector<std::string> unique;
    std::unordered_map<std::string, int64_t> seen;
    std::vector<int64_t> row_of(texts.size());
    for (size_t i = 0; i < texts.size(); ++i) {
        auto [it, inserted] = seen.emplace(texts[i], static_cast<int64_t>(unique.size()));
        if (inserted) unique.push_back(texts[i]);
        row_of[i] = it->second;
    }
    auto batch = encode_strings(vocab, unique, cfg.encoder.text_len);
    auto raw = model.text.forward(batch, model.adapters ? &*model.adapters : nullptr);
    auto embedded = project_embed(raw, model.text_head).vectors;
    if (unique.size() == texts.size()) return embedded;
    return gather_rows(embedded, row_of);
}

// Normalized mean of per-tag text embeddings grouped per image.
EmbeddingSet<float> tag_targets(Model<float>& model, const Vocabulary& vocab,
                                const std::vector<std::string>& tags,
                                const std::vector<int64_t>& offsets, const RunConfig& cfg) {
    std::vector<std::string> prompts;
    prompts.reserve(tags.size());
    for (const auto& t : tags) prompts.push_back(tag_prompt(t));
    auto embedded = embed_unique(model, vocab, prompts, cfg);
    const int64_t groups = static_cast<int64_t>(offsets.size()) - 1;
    std::vector<int> assign(tags.size());
    for (int64_t s = 0; s < groups; ++s)
        for (int64_t r = offsets[static_cast<size_t>(s)]; r < offsets[static_cast<size_t>(s + 1)];
             ++r)
            assign[static_cast<size_t>(r)] = static_cast<int>(s);
    auto pooled = segment_mean(embedded, assign, groups);
    return {l2_normalize_last(pooled), true};
}

EmbeddingSet<float> text_embed(Model<float>& model, const Vocabulary& vocab,
                               const std::vector<std::string>& texts, const RunConfig& cfg) {
    return {embed_unique(model, vocab, texts, cfg), true};
}

std::vector<std::string> model_param_names(Model<float>& model) {
    std::vector<std::string> names;
    model.visit_params(
        [&](const std::string& n, Tensor<float>&, ParamRole) { names.push_back(n); });
    return names;
}

} // namespace

LossReport<float> batch_loss(Model<float>& model, const TrainingBatch& batch,
                             const Vocabulary& vocab, const RunConfig& cfg) {
    const AdapterState<float>* ad = model.adapters ? &*model.adapters : nullptr;
    auto tokens = model.vision.forward(batch.images, ad, cfg.cluster);
    auto cls_embed = project_embed(tokens.cls, model.visual_head);
    auto image_tag_target =
        tag_targets(model, vocab, batch.image_tags, batch.image_tag_offsets, cfg);
    auto image_caption_text = text_embed(model, vocab, batch.image_captions, cfg);

    EmbeddingSet<float> region_embed, region_tag_target, region_caption_text;
    if (!batch.boxes.boxes.empty()) {
        auto pooled = roi_align(tokens.grid, batch.boxes);
        region_embed = project_embed(pooled, model.region_projection());
        std::vector<int64_t> offsets(batch.region_tags.size() + 1);
        for (size_t i = 0; i < offsets.size(); ++i) offsets[i] = static_cast<int64_t>(i);
        region_tag_target = tag_targets(model, vocab, batch.region_tags, offsets, cfg);
        region_caption_text = text_embed(model, vocab, batch.region_captions, cfg);
    }
    return total_loss(cls_embed, image_tag_target, image_caption_text, region_embed,
                      region_tag_target, region_caption_text, model.inv_temperature(), cfg.loss,
                      cfg.tag_loss_mode);
}

std::string step_metrics_json(const StepMetrics& m) {
    json j{{"step", m.step},
           {"loss_image_tag", m.loss_image_tag},
           {"loss_image_caption", m.loss_image_caption},
           {"loss_region_tag", m.loss_region_tag},
           {"loss_region_caption", m.loss_region_caption},
           {"loss_total", m.loss_total},
           {"lr", m.lr},
           {"temperature", m.temperature}};
    return j.dump();
}

std::string eval_metrics_json(const EvalMetrics& m) {
    json j{{"i2t_r1", m.i2t_r1},       {"i2t_r5", m.i2t_r5},
           {"t2i_r1", m.t2i_r1},       {"region_r1", m.region_r1},
           {"tag_accuracy", m.tag_accuracy}, {"pairs", m.pairs},
           {"regions", m.regions}};
    return j.dump(2);
}

Checkpoint snapshot(Model<float>& model, const Optimizer<float>* opt,
                    const std::vector<std::string>& opt_names, const RunConfig& cfg) {
    Checkpoint ckpt;
    ckpt.digest = cfg.config_digest();
    model.visit_params([&](const std::string& n, Tensor<float>& t, ParamRole) {
        ckpt.add_f32(n, t.shape(), t.data());
    });
    if (opt) {
        ckpt.step = opt->step_count();
        const auto& st = opt->state();
        for (size_t i = 0; i < opt_names.size(); ++i) {
            Shape s{static_cast<int64_t>(st[i].m.size())};
            ckpt.add_f64("opt." + opt_names[i] + ".m", s, st[i].m);
            ckpt.add_f64("opt." + opt_names[i] + ".v", s, st[i].v);
        }
    }
    return ckpt;
}

Model<float> load_model(const std::string& path, const RunConfig& cfg) {
    auto ckpt = load_checkpoint(path);
    if (ckpt.digest != cfg.config_digest())
        throw FormatError("checkpoint " + path + ": config digest mismatch (file " +
                          std::to_string(ckpt.digest) + ", config " +
                          std::to_string(cfg.config_digest()) + ")");
    auto model = Model<float>::init(cfg.encoder, cfg.seed);
    bool has_adapters = false;
    for (const auto& e : ckpt.tensors)
        if (e.name.rfind("adapter.", 0) == 0) has_adapters = true;
    if (has_adapters) model.attach_adapters(cfg.adapter, cfg.seed + 1);
    model.visit_params([&](const std::string& n, Tensor<float>& t, ParamRole) {
        t.mutable_data() = ckpt.get_f32(n, t.shape());
    });
    return model;
}

TrainResult train_run(const RunConfig& cfg, const std::vector<SyntheticScene>& scenes) {
    cfg.validate();
    if (scenes.size() < static_cast<size_t>(cfg.batch_size))
        throw ContractError("train_run: corpus smaller than one batch");
    std::filesystem::create_directories(cfg.out_dir);
    Vocabulary vocab;

    Model<float> model = cfg.mode == RunMode::Pretrain
                             ? Model<float>::init(cfg.encoder, cfg.seed)
                             : load_model(cfg.base_checkpoint, cfg);
    if (cfg.mode == RunMode::Adapt && cfg.use_adapters && !model.adapters)
        model.attach_adapters(cfg.adapter, cfg.seed + 1);
    if (cfg.mode == RunMode::Adapt && !cfg.use_adapters) model.adapters.reset();

    auto [trainable, frozen] = partition_parameters(model, cfg.mode);
    std::vector<Tensor<float>> train_tensors;
    std::vector<std::string> train_names;
    for (auto& p : trainable) {
        train_tensors.push_back(p.tensor);
        train_names.push_back(p.name);
    }
    Optimizer<float> opt(cfg.optimizer, train_tensors);

    std::mt19937_64 rng(cfg.seed);
    std::vector<size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), size_t{0});
    size_t cursor = order.size(); // forces an initial shuffle

    TrainResult result;
    const std::string ckpt_path = cfg.out_dir + "/checkpoint.umg";
    std::ofstream metrics_out(cfg.out_dir + "/metrics.jsonl");
    if (!metrics_out) throw IoError("cannot write metrics in " + cfg.out_dir);

    for (int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<size_t> idx;
        for (int i = 0; i < cfg.batch_size; ++i) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            idx.push_back(order[cursor++]);
        }
        auto batch = make_batch(scenes, idx, rng);
        const double lr =
            lr_schedule(cfg.optimizer.lr, step, cfg.optimizer.warmup_steps, cfg.steps);
        StepMetrics m;
        try {
            opt.zero_grad();
            LossReport<float> report;
            {
                Tape<float> tape;
                report = batch_loss(model, batch, vocab, cfg);
                tape.backward(report.total);
            }
            m.step = step;
            m.loss_image_tag = report.image_tag.item();
            m.loss_image_caption = report.image_caption.item();
            m.loss_region_tag = report.region_tag.item();
            m.loss_region_caption = report.region_caption.item();
            m.loss_total = report.total.item();
            m.lr = lr;
            m.temperature = 1.0 / static_cast<double>(model.inv_temperature().item());
            opt.step(lr);
        } catch (const NumericError&) {
            // halt, keeping the last good checkpoint on disk
            result.halted_nonfinite = true;
            break;
        }
        metrics_out << step_metrics_json(m) << '\n';
        result.metrics.push_back(m);
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(snapshot(model, &opt, train_names, cfg), ckpt_path);
    }
    if (!result.halted_nonfinite || !std::filesystem::exists(ckpt_path))
        save_checkpoint(snapshot(model, &opt, train_names, cfg), ckpt_path);
    result.checkpoint_path = ckpt_path;
    return result;
}

EvalMetrics evaluate(Model<float>& model, const std::vector<SyntheticScene>& scenes,
                     const RunConfig& cfg) {
    if (scenes.empty()) throw ContractError("evaluate: empty corpus");
    Vocabulary vocab;
    const AdapterState<float>* ad = model.adapters ? &*model.adapters : nullptr;
    const int img = cfg.encoder.image_size;

    // image + region embeddings in small forward-only batches
    std::vector<std::vector<float>> cls_rows, region_rows;
    std::vector<std::string> image_caps, region_caps, region_tags;
    const size_t chunk = 16;
    for (size_t start = 0; start < scenes.size(); start += chunk) {
        const size_t end = std::min(scenes.size(), start + chunk);
        std::vector<float> px;
        RegionBoxSet boxes;
        for (size_t i = start; i < end; ++i) {
            const auto& s = scenes[i];
            px.insert(px.end(), s.pixels.begin(), s.pixels.end());
            image_caps.push_back(s.record.image_captions.at(0).text);
            for (const auto& r : s.record.regions) {
                boxes.boxes.push_back({r.box.x0 / img, r.box.y0 / img, r.box.x1 / img,
                                       r.box.y1 / img, static_cast<int64_t>(i - start)});
                region_caps.push_back(r.captions.at(0));
                region_tags.push_back(r.tag);
            }
        }
        Tensor<float> images({static_cast<int64_t>(end - start), 3, img, img}, std::move(px));
        auto tokens = model.vision.forward(images, ad, cfg.cluster);
        auto cls = project_embed(tokens.cls, model.visual_head).vectors;
        for (int64_t r = 0; r < cls.dim(0); ++r)
            cls_rows.emplace_back(cls.data().begin() + r * cls.dim(1),
                                  cls.data().begin() + (r + 1) * cls.dim(1));
        if (!boxes.boxes.empty()) {
            auto pooled = roi_align(tokens.grid, boxes);
            auto reg = project_embed(pooled, model.region_projection()).vectors;
            for (int64_t r = 0; r < reg.dim(0); ++r)
                region_rows.emplace_back(reg.data().begin() + r * reg.dim(1),
                                         reg.data().begin() + (r + 1) * reg.dim(1));
        }
    }

    auto embed_texts = [&](const std::vector<std::string>& texts) {
        std::vector<std::vector<float>> rows;
        for (size_t start = 0; start < texts.size(); start += chunk) {
            const size_t end = std::min(texts.size(), start + chunk);
            auto e = text_embed(model, vocab,
                                {texts.begin() + static_cast<std::ptrdiff_t>(start),
                                 texts.begin() + static_cast<std::ptrdiff_t>(end)},
                                cfg)
                         .vectors;
            for (int64_t r = 0; r < e.dim(0); ++r)
                rows.emplace_back(e.data().begin() + r * e.dim(1),
                                  e.data().begin() + (r + 1) * e.dim(1));
        }
        return rows;
    };
    auto cap_rows = embed_texts(image_caps);

    auto dot = [](const std::vector<float>& a, const std::vector<float>& b) {
        double s = 0;
        for (size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
        return s;
    };
    auto rank_of = [&](const std::vector<float>& query,
                       const std::vector<std::vector<float>>& pool,
                       const std::vector<std::string>& labels, const std::string& truth) {
        // rank = number of pool rows strictly better than the best correct row
        double best_correct = -2.0;
        for (size_t j = 0; j < pool.size(); ++j)
            if (labels[j] == truth) best_correct = std::max(best_correct, dot(query, pool[j]));
        int rank = 0;
        for (size_t j = 0; j < pool.size(); ++j)
            if (labels[j] != truth && dot(query, pool[j]) > best_correct) ++rank;
        return rank;
    };

    EvalMetrics m;
    m.pairs = static_cast<int64_t>(cls_rows.size());
    int64_t r1 = 0, r5 = 0, t2i = 0;
    for (size_t i = 0; i < cls_rows.size(); ++i) {
        const int rank = rank_of(cls_rows[i], cap_rows, image_caps, image_caps[i]);
        r1 += rank < 1;
        r5 += rank < 5;
    }
    for (size_t i = 0; i < cap_rows.size(); ++i)
        t2i += rank_of(cap_rows[i], cls_rows, image_caps, image_caps[i]) < 1;
    m.i2t_r1 = static_cast<double>(r1) / static_cast<double>(cls_rows.size());
    m.i2t_r5 = static_cast<double>(r5) / static_cast<double>(cls_rows.size());
    m.t2i_r1 = static_cast<double>(t2i) / static_cast<double>(cap_rows.size());

    m.regions = static_cast<int64_t>(region_rows.size());
    if (!region_rows.empty()) {
        auto rcap_rows = embed_texts(region_caps);
        int64_t rr1 = 0;
        for (size_t i = 0; i < region_rows.size(); ++i)
            rr1 += rank_of(region_rows[i], rcap_rows, region_caps, region_caps[i]) < 1;
        m.region_r1 = static_cast<double>(rr1) / static_cast<double>(region_rows.size());

        // zero-shot tag classification over every color-shape prompt
        std::vector<std::string> all_tags;
        for (const auto& c : color_names())
            for (const auto& s : shape_names()) all_tags.push_back(c + " " + s);
        std::vector<std::string> prompts;
        for (const auto& t : all_tags) prompts.push_back(tag_prompt(t));
        auto prompt_rows = embed_texts(prompts);
        int64_t correct = 0;
        for (size_t i = 0; i < region_rows.size(); ++i) {
            size_t best = 0;
            double best_sim = -2.0;
            for (size_t j = 0; j < prompt_rows.size(); ++j) {
                const double s = dot(region_rows[i], prompt_rows[j]);
                if (s > best_sim) {
                    best_sim = s;
                    best = j;
                }
            }
            correct += all_tags[best] == region_tags[i];
        }
        m.tag_accuracy = static_cast<double>(correct) / static_cast<double>(region_rows.size());
    }
    return m;
}

} // namespace umg
