#pragma once

#include "umg/model.hpp"
#include "umg/optim.hpp"

#include <string>

namespace umg {

struct DataConfig {
    int n_images = 2048;
    int max_regions = 2;
    int eval_images = 64;
    bool shifted = false; // adapt-domain visual style for generated corpora
};

// Full run description; the JSON config file mirrors these field names
// exactly and unknown keys are rejected.
struct RunConfig {
    RunMode mode = RunMode::Pretrain;
    EncoderConfig encoder;
    AdapterConfig adapter;
    LossWeights loss;
    TagLossMode tag_loss_mode = TagLossMode::SmoothL1;
    OptimizerConfig optimizer;
    int64_t steps = 2000;
    int batch_size = 32;
    uint64_t seed = 1;
    bool cluster = true;
    bool use_adapters = true; // adapt mode: false = heads-only adaptation
    std::string out_dir = "run";
    std::string base_checkpoint; // adapt mode input
    int64_t checkpoint_every = 0; // 0 = final checkpoint only
    DataConfig data;

    void validate() const;
    // Architecture fingerprint: digests only the fields a checkpoint must
    // agree on (encoder + adapter layout), not schedules or paths.
    uint64_t config_digest() const;
};

// Mode-specific defaults: pretrain = LAMB(beta1 0.9, beta2 0.98, wd 0.05);
// adapt = AdamW(lr 1e-4).
RunConfig default_run_config(RunMode mode);

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

} // namespace umg
