#include "umg_capi.h"

#include "umg/harness.hpp"

#include <json.hpp>

#include <cstring>
#include <string>

using namespace umg;

struct umg_config {
    RunConfig cfg;
};

struct umg_model {
    Model<float> model;
};

namespace {

thread_local std::string g_last_error = "no error";

char* dup_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

// Runs `fn`, translating the C++ error taxonomy into status codes.
template <typename F>
umg_status guarded(F&& fn) {
    try {
        fn();
        return UMG_OK;
    } catch (const ShapeError& e) {
        g_last_error = e.what();
        return UMG_ERR_SHAPE;
    } catch (const NumericError& e) {
        g_last_error = e.what();
        return UMG_ERR_NUMERIC;
    } catch (const ContractError& e) {
        g_last_error = e.what();
        return UMG_ERR_CONTRACT;
    } catch (const StateError& e) {
        g_last_error = e.what();
        return UMG_ERR_STATE;
    } catch (const FormatError& e) {
        g_last_error = e.what();
        return UMG_ERR_FORMAT;
    } catch (const IoError& e) {
        g_last_error = e.what();
        return UMG_ERR_IO;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return UMG_ERR_UNKNOWN;
    } catch (...) {
        g_last_error = "unknown error";
        return UMG_ERR_UNKNOWN;
    }
}

umg_status null_arg(const char* what) {
    g_last_error = std::string(what) + " must not be NULL";
    return UMG_ERR_ARGUMENT;
}

std::vector<SyntheticScene> scenes_for(const RunConfig& cfg, const char* corpus_dir,
                                       bool eval_split) {
    if (corpus_dir) return read_scene_corpus(corpus_dir, cfg.encoder.channels, cfg.encoder.image_size);
    CorpusSpec spec;
    spec.seed = eval_split ? cfg.seed + 1 : cfg.seed;
    spec.n_images = eval_split ? cfg.data.eval_images : cfg.data.n_images;
    // eval scenes are single-region: an image caption describes one region, so
    // multi-region scenes would make retrieval ambiguous (another image's
    // caption can correctly describe this image's second region)
    spec.max_regions = eval_split ? 1 : cfg.data.max_regions;
    spec.image_size = cfg.encoder.image_size;
    spec.held_out_only = eval_split;
    spec.shifted = cfg.data.shifted;
    return gen_corpus(spec);
}

} // namespace

extern "C" {

const char* umg_last_error(void) { return g_last_error.c_str(); }

const char* umg_version(void) { return "1.0.0"; }

void umg_string_free(char* s) { delete[] s; }

umg_status umg_config_create(const char* mode, umg_config** out) {
    if (!mode) return null_arg("mode");
    if (!out) return null_arg("out");
    return guarded([&] {
        RunMode m;
        if (std::strcmp(mode, "pretrain") == 0)
            m = RunMode::Pretrain;
        else if (std::strcmp(mode, "adapt") == 0)
            m = RunMode::Adapt;
        else
            throw FormatError("mode must be 'pretrain' or 'adapt', got '" + std::string(mode) +
                              "'");
        *out = new umg_config{default_run_config(m)};
    });
}

umg_status umg_config_parse(const char* json_text, umg_config** out) {
    if (!json_text) return null_arg("json_text");
    if (!out) return null_arg("out");
    return guarded([&] { *out = new umg_config{parse_run_config(json_text)}; });
}

umg_status umg_config_load(const char* path, umg_config** out) {
    if (!path) return null_arg("path");
    if (!out) return null_arg("out");
    return guarded([&] { *out = new umg_config{load_run_config(path)}; });
}

umg_status umg_config_to_json(const umg_config* cfg, char** out_json) {
    if (!cfg) return null_arg("cfg");
    if (!out_json) return null_arg("out_json");
    return guarded([&] { *out_json = dup_string(run_config_to_json(cfg->cfg)); });
}

void umg_config_free(umg_config* cfg) { delete cfg; }

umg_status umg_gen_corpus(uint64_t seed, int n_images, int max_regions, int held_out_only,
                          int shifted, const char* out_dir) {
    if (!out_dir) return null_arg("out_dir");
    return guarded([&] {
        CorpusSpec spec;
        spec.seed = seed;
        spec.n_images = n_images;
        spec.max_regions = max_regions;
        spec.held_out_only = held_out_only != 0;
        spec.shifted = shifted != 0;
        write_scene_corpus(out_dir, gen_corpus(spec));
    });
}

umg_status umg_train(const umg_config* cfg, const char* corpus_dir, char** out_summary_json) {
    if (!cfg) return null_arg("cfg");
    return guarded([&] {
        auto scenes = scenes_for(cfg->cfg, corpus_dir, false);
        auto res = train_run(cfg->cfg, scenes);
        if (out_summary_json) {
            nlohmann::json j;
            j["steps"] = static_cast<int64_t>(res.metrics.size());
            j["checkpoint"] = res.checkpoint_path;
            j["halted_nonfinite"] = res.halted_nonfinite;
            if (!res.metrics.empty())
                j["final"] = nlohmann::json::parse(step_metrics_json(res.metrics.back()));
            *out_summary_json = dup_string(j.dump(2));
        }
    });
}

umg_status umg_model_load(const umg_config* cfg, const char* checkpoint_path, umg_model** out) {
    if (!cfg) return null_arg("cfg");
    if (!checkpoint_path) return null_arg("checkpoint_path");
    if (!out) return null_arg("out");
    return guarded([&] { *out = new umg_model{load_model(checkpoint_path, cfg->cfg)}; });
}

void umg_model_free(umg_model* model) { delete model; }

umg_status umg_model_evaluate(umg_model* model, const umg_config* cfg, const char* corpus_dir,
                              char** out_metrics_json) {
    if (!model) return null_arg("model");
    if (!cfg) return null_arg("cfg");
    if (!out_metrics_json) return null_arg("out_metrics_json");
    return guarded([&] {
        auto scenes = scenes_for(cfg->cfg, corpus_dir, true);
        auto metrics = evaluate(model->model, scenes, cfg->cfg);
        *out_metrics_json = dup_string(eval_metrics_json(metrics));
    });
}

umg_status umg_annotate(const char* in_jsonl, const char* out_jsonl, double confidence,
                        double nms_iou, double stability_threshold, int use_box_oracle) {
    if (!in_jsonl) return null_arg("in_jsonl");
    if (!out_jsonl) return null_arg("out_jsonl");
    return guarded([&] {
        AnnotatePipelineConfig pcfg;
        pcfg.confidence = confidence;
        pcfg.nms_iou = nms_iou;
        pcfg.stability = stability_threshold;
        auto records = read_corpus(in_jsonl);
        std::vector<AnnotationRecord> out;
        out.reserve(records.size());
        for (const auto& rec : records) {
            if (use_box_oracle) {
                // filled-box mask: inside-the-box pixels are foreground
                MaskOracle oracle = [&rec](const PixelBox& box) {
                    std::vector<uint8_t> mask(
                        static_cast<size_t>(rec.width) * static_cast<size_t>(rec.height), 0);
                    for (int y = 0; y < rec.height; ++y)
                        for (int x = 0; x < rec.width; ++x)
                            if (x + 0.5 >= box.x0 && x + 0.5 < box.x1 && y + 0.5 >= box.y0 &&
                                y + 0.5 < box.y1)
                                mask[static_cast<size_t>(y) * static_cast<size_t>(rec.width) +
                                     static_cast<size_t>(x)] = 1;
                    return mask;
                };
                out.push_back(annotate_record(rec, pcfg, &oracle));
            } else {
                out.push_back(annotate_record(rec, pcfg, nullptr));
            }
        }
        write_corpus(out_jsonl, out);
    });
}

umg_status umg_corpus_stats(const char* in_jsonl, char** out_json) {
    if (!in_jsonl) return null_arg("in_jsonl");
    if (!out_json) return null_arg("out_json");
    return guarded(
        [&] { *out_json = dup_string(stats_to_json(compute_stats(read_corpus(in_jsonl)))); });
}

} // extern "C"
