#include "umg/runconfig.hpp"

#include "umg/checkpoint.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace umg {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& where,
                    std::initializer_list<const char*> known) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) ok = true;
        if (!ok) throw FormatError("config: unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

RunMode parse_mode(const std::string& s) {
    if (s == "pretrain") return RunMode::Pretrain;
    if (s == "adapt") return RunMode::Adapt;
    throw FormatError("config: mode must be 'pretrain' or 'adapt', got '" + s + "'");
}

OptimizerKind parse_kind(const std::string& s) {
    if (s == "lamb") return OptimizerKind::Lamb;
    if (s == "adamw") return OptimizerKind::AdamW;
    throw FormatError("config: optimizer kind must be 'lamb' or 'adamw', got '" + s + "'");
}

} // namespace

void RunConfig::validate() const {
    encoder.validate();
    adapter.validate();
    loss.validate();
    optimizer.validate();
    if (steps < 1) throw ContractError("config: steps must be >= 1");
    if (batch_size < 2) throw ContractError("config: batch_size must be >= 2");
    if (checkpoint_every < 0) throw ContractError("config: checkpoint_every must be >= 0");
    if (data.n_images < batch_size)
        throw ContractError("config: data.n_images must be >= batch_size");
    if (mode == RunMode::Adapt && base_checkpoint.empty())
        throw ContractError("config: adapt mode requires base_checkpoint");
}

uint64_t RunConfig::config_digest() const {
    std::ostringstream s;
    s << encoder.image_size << ',' << encoder.patch_size << ',' << encoder.channels << ','
      << encoder.depth << ',' << encoder.dim << ',' << encoder.heads << ',' << encoder.text_vocab
      << ',' << encoder.text_len << ',' << encoder.text_depth << ',' << encoder.text_dim << ','
      << encoder.embed_dim << ',' << encoder.share_visual_head;
    return fnv1a(s.str());
}

RunConfig default_run_config(RunMode mode) {
    RunConfig cfg;
    cfg.mode = mode;
    if (mode == RunMode::Pretrain) {
        cfg.optimizer.kind = OptimizerKind::Lamb;
        cfg.optimizer.lr = 2e-3;
        cfg.optimizer.beta1 = 0.9;
        cfg.optimizer.beta2 = 0.98;
        cfg.optimizer.weight_decay = 0.05;
    } else {
        cfg.optimizer.kind = OptimizerKind::AdamW;
        cfg.optimizer.lr = 1e-4;
        cfg.optimizer.beta1 = 0.9;
        cfg.optimizer.beta2 = 0.98;
        cfg.optimizer.weight_decay = 0.0;
        cfg.steps = 400;
    }
    return cfg;
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: bad JSON: ") + e.what());
    }
    try {
        reject_unknown(j, "top level",
                       {"mode", "encoder", "adapter", "loss", "optimizer", "steps", "batch_size",
                        "seed", "cluster", "use_adapters", "out_dir", "base_checkpoint",
                        "checkpoint_every", "data"});
        std::string mode_str = "pretrain";
        take(j, "mode", mode_str);
        RunConfig cfg = default_run_config(parse_mode(mode_str));
        if (j.contains("encoder")) {
            const auto& e = j["encoder"];
            reject_unknown(e, "encoder",
                           {"image_size", "patch_size", "channels", "depth", "dim", "heads",
                            "text_vocab", "text_len", "text_depth", "text_dim", "embed_dim",
                            "cluster_after", "keep_ratio", "share_visual_head"});
            take(e, "image_size", cfg.encoder.image_size);
            take(e, "patch_size", cfg.encoder.patch_size);
            take(e, "channels", cfg.encoder.channels);
            take(e, "depth", cfg.encoder.depth);
            take(e, "dim", cfg.encoder.dim);
            take(e, "heads", cfg.encoder.heads);
            take(e, "text_vocab", cfg.encoder.text_vocab);
            take(e, "text_len", cfg.encoder.text_len);
            take(e, "text_depth", cfg.encoder.text_depth);
            take(e, "text_dim", cfg.encoder.text_dim);
            take(e, "embed_dim", cfg.encoder.embed_dim);
            take(e, "cluster_after", cfg.encoder.cluster_after);
            take(e, "keep_ratio", cfg.encoder.keep_ratio);
            take(e, "share_visual_head", cfg.encoder.share_visual_head);
        }
        if (j.contains("adapter")) {
            const auto& a = j["adapter"];
            reject_unknown(a, "adapter", {"s", "bottleneck", "insertion", "adapt_text"});
            take(a, "s", cfg.adapter.s);
            take(a, "bottleneck", cfg.adapter.bottleneck);
            take(a, "insertion", cfg.adapter.insertion);
            take(a, "adapt_text", cfg.adapter.adapt_text);
        }
        if (j.contains("loss")) {
            const auto& l = j["loss"];
            reject_unknown(l, "loss", {"alpha", "beta", "temperature", "tag_mode"});
            take(l, "alpha", cfg.loss.alpha);
            take(l, "beta", cfg.loss.beta);
            take(l, "temperature", cfg.loss.temperature);
            if (l.contains("tag_mode")) {
                const auto m = l["tag_mode"].get<std::string>();
                if (m == "smooth_l1")
                    cfg.tag_loss_mode = TagLossMode::SmoothL1;
                else if (m == "contrastive")
                    cfg.tag_loss_mode = TagLossMode::Contrastive;
                else
                    throw FormatError("config: loss.tag_mode must be 'smooth_l1' or "
                                      "'contrastive'");
            }
        }
        if (j.contains("optimizer")) {
            const auto& o = j["optimizer"];
            reject_unknown(o, "optimizer",
                           {"kind", "lr", "beta1", "beta2", "eps", "weight_decay", "trust_clip",
                            "warmup_steps"});
            if (o.contains("kind")) cfg.optimizer.kind = parse_kind(o["kind"].get<std::string>());
            take(o, "lr", cfg.optimizer.lr);
            take(o, "beta1", cfg.optimizer.beta1);
            take(o, "beta2", cfg.optimizer.beta2);
            take(o, "eps", cfg.optimizer.eps);
            take(o, "weight_decay", cfg.optimizer.weight_decay);
            take(o, "trust_clip", cfg.optimizer.trust_clip);
            take(o, "warmup_steps", cfg.optimizer.warmup_steps);
        }
        take(j, "steps", cfg.steps);
        take(j, "batch_size", cfg.batch_size);
        take(j, "seed", cfg.seed);
        take(j, "cluster", cfg.cluster);
        take(j, "use_adapters", cfg.use_adapters);
        take(j, "out_dir", cfg.out_dir);
        take(j, "base_checkpoint", cfg.base_checkpoint);
        take(j, "checkpoint_every", cfg.checkpoint_every);
        if (j.contains("data")) {
            const auto& d = j["data"];
            reject_unknown(d, "data", {"n_images", "max_regions", "eval_images", "shifted"});
            take(d, "n_images", cfg.data.n_images);
            take(d, "max_regions", cfg.data.max_regions);
            take(d, "eval_images", cfg.data.eval_images);
            take(d, "shifted", cfg.data.shifted);
        }
        cfg.validate();
        return cfg;
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: bad field: ") + e.what());
    }
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["mode"] = cfg.mode == RunMode::Pretrain ? "pretrain" : "adapt";
    j["encoder"] = {{"image_size", cfg.encoder.image_size},
                    {"patch_size", cfg.encoder.patch_size},
                    {"channels", cfg.encoder.channels},
                    {"depth", cfg.encoder.depth},
                    {"dim", cfg.encoder.dim},
                    {"heads", cfg.encoder.heads},
                    {"text_vocab", cfg.encoder.text_vocab},
                    {"text_len", cfg.encoder.text_len},
                    {"text_depth", cfg.encoder.text_depth},
                    {"text_dim", cfg.encoder.text_dim},
                    {"embed_dim", cfg.encoder.embed_dim},
                    {"cluster_after", cfg.encoder.cluster_after},
                    {"keep_ratio", cfg.encoder.keep_ratio},
                    {"share_visual_head", cfg.encoder.share_visual_head}};
    j["adapter"] = {{"s", cfg.adapter.s},
                    {"bottleneck", cfg.adapter.bottleneck},
                    {"insertion", cfg.adapter.insertion},
                    {"adapt_text", cfg.adapter.adapt_text}};
    j["loss"] = {{"alpha", cfg.loss.alpha},
                 {"beta", cfg.loss.beta},
                 {"temperature", cfg.loss.temperature},
                 {"tag_mode",
                  cfg.tag_loss_mode == TagLossMode::SmoothL1 ? "smooth_l1" : "contrastive"}};
    j["optimizer"] = {{"kind", cfg.optimizer.kind == OptimizerKind::Lamb ? "lamb" : "adamw"},
                      {"lr", cfg.optimizer.lr},
                      {"beta1", cfg.optimizer.beta1},
                      {"beta2", cfg.optimizer.beta2},
                      {"eps", cfg.optimizer.eps},
                      {"weight_decay", cfg.optimizer.weight_decay},
                      {"trust_clip", cfg.optimizer.trust_clip},
                      {"warmup_steps", cfg.optimizer.warmup_steps}};
    j["steps"] = cfg.steps;
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    j["cluster"] = cfg.cluster;
    j["use_adapters"] = cfg.use_adapters;
    j["out_dir"] = cfg.out_dir;
    j["base_checkpoint"] = cfg.base_checkpoint;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["data"] = {{"n_images", cfg.data.n_images},
                 {"max_regions", cfg.data.max_regions},
                 {"eval_images", cfg.data.eval_images},
                 {"shifted", cfg.data.shifted}};
    return j.dump(2);
}

} // namespace umg
