// Command-line front end. Talks to the library exclusively through the C API.
#include <umg_capi.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>

namespace {

struct ConfigDeleter {
    void operator()(umg_config* c) const { umg_config_free(c); }
};
struct ModelDeleter {
    void operator()(umg_model* m) const { umg_model_free(m); }
};
using ConfigPtr = std::unique_ptr<umg_config, ConfigDeleter>;
using ModelPtr = std::unique_ptr<umg_model, ModelDeleter>;

int fail(umg_status st) {
    std::fprintf(stderr, "error (%d): %s\n", static_cast<int>(st), umg_last_error());
    return 1;
}

// Print-and-free for strings returned by the library.
void print_owned(char* s) {
    if (!s) return;
    std::printf("%s\n", s);
    umg_string_free(s);
}

// Resolves the run config from --config / mode default, then applies the
// common overrides.
ConfigPtr make_config(const std::string& mode, const std::string& config_path, uint64_t seed,
                      bool have_seed, const std::string& out_dir,
                      const std::string& base_checkpoint, umg_status* st) {
    umg_config* raw = nullptr;
    *st = config_path.empty() ? umg_config_create(mode.c_str(), &raw)
                              : umg_config_load(config_path.c_str(), &raw);
    ConfigPtr cfg(raw);
    if (*st != UMG_OK) return nullptr;
    // overrides are applied by round-tripping the config through its JSON form
    char* json = nullptr;
    *st = umg_config_to_json(cfg.get(), &json);
    if (*st != UMG_OK) return nullptr;
    auto j = nlohmann::json::parse(std::string(json));
    umg_string_free(json);
    j["mode"] = mode;
    if (have_seed) j["seed"] = seed;
    if (!out_dir.empty()) j["out_dir"] = out_dir;
    if (!base_checkpoint.empty()) j["base_checkpoint"] = base_checkpoint;
    raw = nullptr;
    *st = umg_config_parse(j.dump().c_str(), &raw);
    return ConfigPtr(raw);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-granularity image-text pretraining toolkit"};
    app.require_subcommand(1);
    app.fallthrough(); // global options may follow the subcommand

    std::string config_path, out_dir;
    uint64_t seed = 1;
    bool have_seed = false;
    app.add_option("--config", config_path, "JSON run config file")->capture_default_str();
    app.add_option("--seed", seed, "Override the run seed")->each([&](const std::string&) {
        have_seed = true;
    });
    app.add_option("--out", out_dir, "Output directory override");

    // gen-data -------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "Render a synthetic scene corpus");
    int gen_images = 256, gen_regions = 2;
    bool gen_held_out = false, gen_shifted = false;
    std::string gen_out = "corpus";
    gen->add_option("--images", gen_images, "Number of images")->capture_default_str();
    gen->add_option("--max-regions", gen_regions, "Maximum regions per image")
        ->capture_default_str();
    gen->add_flag("--held-out", gen_held_out, "Use only the held-out label combinations");
    gen->add_flag("--shifted", gen_shifted, "Render the shifted adaptation domain");
    gen->add_option("--dir", gen_out, "Corpus directory")->capture_default_str();

    // train / adapt --------------------------------------------------------
    auto* train = app.add_subcommand("train", "Pretrain a model from scratch");
    std::string train_corpus;
    train->add_option("--data", train_corpus, "Scene corpus directory (default: generated)");

    auto* adapt = app.add_subcommand("adapt", "Adapt a pretrained checkpoint with PET modules");
    std::string adapt_corpus, adapt_base;
    adapt->add_option("--data", adapt_corpus, "Scene corpus directory (default: generated)");
    adapt->add_option("--base", adapt_base, "Base checkpoint to adapt");

    // eval -----------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string eval_ckpt, eval_corpus;
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval->add_option("--data", eval_corpus, "Scene corpus directory (default: held-out split)");

    // annotate -------------------------------------------------------------
    auto* annotate = app.add_subcommand("annotate", "Clean an annotation corpus");
    std::string ann_in, ann_out;
    double ann_conf = 0.3, ann_nms = 0.5, ann_stab = 0.7;
    bool ann_no_stability = false;
    annotate->add_option("--in", ann_in, "Input records.jsonl")->required();
    annotate->add_option("--out", ann_out, "Output records.jsonl")->required();
    annotate->add_option("--conf", ann_conf, "Confidence threshold")->capture_default_str();
    annotate->add_option("--nms-iou", ann_nms, "NMS IoU threshold")->capture_default_str();
    annotate->add_option("--stability", ann_stab, "Jitter-stability cutoff")
        ->capture_default_str();
    annotate->add_flag("--no-stability", ann_no_stability,
                       "Skip mask-oracle stability scoring");

    // stats ----------------------------------------------------------------
    auto* stats = app.add_subcommand("stats", "Corpus statistics");
    std::string stats_in;
    stats->add_option("--in", stats_in, "Input records.jsonl")->required();

    CLI11_PARSE(app, argc, argv);

    umg_status st = UMG_OK;
    if (gen->parsed()) {
        st = umg_gen_corpus(seed, gen_images, gen_regions, gen_held_out ? 1 : 0,
                            gen_shifted ? 1 : 0, gen_out.c_str());
        if (st != UMG_OK) return fail(st);
        std::printf("wrote %d images to %s\n", gen_images, gen_out.c_str());
        return 0;
    }
    if (train->parsed() || adapt->parsed()) {
        const bool is_adapt = adapt->parsed();
        auto cfg = make_config(is_adapt ? "adapt" : "pretrain", config_path, seed, have_seed,
                               out_dir, is_adapt ? adapt_base : "", &st);
        if (!cfg) return fail(st);
        const std::string& corpus = is_adapt ? adapt_corpus : train_corpus;
        char* summary = nullptr;
        st = umg_train(cfg.get(), corpus.empty() ? nullptr : corpus.c_str(), &summary);
        if (st != UMG_OK) return fail(st);
        print_owned(summary);
        return 0;
    }
    if (eval->parsed()) {
        auto cfg = make_config("pretrain", config_path, seed, have_seed, out_dir, "", &st);
        if (!cfg) return fail(st);
        umg_model* raw = nullptr;
        st = umg_model_load(cfg.get(), eval_ckpt.c_str(), &raw);
        ModelPtr model(raw);
        if (st != UMG_OK) return fail(st);
        char* metrics = nullptr;
        st = umg_model_evaluate(model.get(), cfg.get(),
                                eval_corpus.empty() ? nullptr : eval_corpus.c_str(), &metrics);
        if (st != UMG_OK) return fail(st);
        print_owned(metrics);
        return 0;
    }
    if (annotate->parsed()) {
        st = umg_annotate(ann_in.c_str(), ann_out.c_str(), ann_conf, ann_nms, ann_stab,
                          ann_no_stability ? 0 : 1);
        if (st != UMG_OK) return fail(st);
        std::printf("wrote %s\n", ann_out.c_str());
        return 0;
    }
    if (stats->parsed()) {
        char* json = nullptr;
        st = umg_corpus_stats(stats_in.c_str(), &json);
        if (st != UMG_OK) return fail(st);
        print_owned(json);
        return 0;
    }
    return 0;
}
