#pragma once

#include "umg/checkpoint.hpp"
#include "umg/corpus.hpp"
#include "umg/optim.hpp"
#include "umg/runconfig.hpp"

#include <string>
#include <vector>

namespace umg {

// Builds the four-stream loss for one batch (vision forward, text forwards,
// RoIAlign, projections, total_loss). Differentiable when a tape is active.
LossReport<float> batch_loss(Model<float>& model, const TrainingBatch& batch,
                             const Vocabulary& vocab, const RunConfig& cfg);

struct StepMetrics {
    int64_t step = 0;
    double loss_image_tag = 0, loss_image_caption = 0;
    double loss_region_tag = 0, loss_region_caption = 0;
    double loss_total = 0;
    double lr = 0;
    double temperature = 0;
};
std::string step_metrics_json(const StepMetrics& m);

struct TrainResult {
    std::vector<StepMetrics> metrics;
    std::string checkpoint_path;
    bool halted_nonfinite = false;
};

// Model/optimizer checkpoint bridge. The checkpoint stores every model
// parameter by its visit name plus optimizer moments as "opt.<name>.m/.v".
Checkpoint snapshot(Model<float>& model, const Optimizer<float>* opt,
                    const std::vector<std::string>& opt_names, const RunConfig& cfg);
// Rebuilds the model (and adapters for adapt-mode checkpoints) from a file;
// rejects digest mismatches.
Model<float> load_model(const std::string& path, const RunConfig& cfg);

// Full training loop. mode=pretrain trains everything from scratch;
// mode=adapt loads cfg.base_checkpoint, freezes the backbone and trains
// adapters (cfg.use_adapters) and heads. Writes metrics.jsonl and
// checkpoint.umg into cfg.out_dir.
TrainResult train_run(const RunConfig& cfg, const std::vector<SyntheticScene>& scenes);

struct EvalMetrics {
    double i2t_r1 = 0, i2t_r5 = 0;
    double t2i_r1 = 0;
    double region_r1 = 0;
    double tag_accuracy = 0;
    int64_t pairs = 0;
    int64_t regions = 0;
};
std::string eval_metrics_json(const EvalMetrics& m);

// Retrieval + zero-shot tag classification on an eval corpus. Correctness is
// judged by caption-text equality so duplicate captions cannot penalize.
EvalMetrics evaluate(Model<float>& model, const std::vector<SyntheticScene>& scenes,
                     const RunConfig& cfg);

} // namespace umg
