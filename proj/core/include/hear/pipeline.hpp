#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hear/checkpoint.hpp"
#include "hear/config.hpp"
#include "hear/downstream.hpp"
#include "hear/frontend.hpp"
#include "hear/mam.hpp"
#include "hear/manifest.hpp"
#include "hear/optim.hpp"
#include "hear/profiler.hpp"
#include "hear/teacher.hpp"
#include "hear/tokenizer.hpp"

namespace hear {

// RunConfig materialized into component configs.
struct PipelineConfig {
    uint64_t seed = 42;
    uint64_t config_hash = 0;
    uint64_t struct_hash = 0;
    FrontendConfig frontend;
    EncoderConfig acoustic;
    EncoderConfig task_base; // input_width resolved per mode at build time
    EncoderConfig teacher;
    TokenizerConfig tokenizer;
    int d_p = 128;
    int head_hidden = 512;
    LossWeights loss_w;
    TemperatureSchedule tau;
    double mask_ratio = 0.40;
    bool mask_bernoulli = false;
    AdamWConfig opt;

    struct Stage {
        double lr = 0;
        int batch = 0;
        int64_t steps = 0;
        int64_t warmup = 0;
        int64_t checkpoint_every = 0;
        LrSchedule schedule() const { return {lr, warmup, steps}; }
    };
    Stage stage1, stage2;

    struct Finetune {
        double lr = 2e-4;
        int batch = 16;
        int epochs = 80;
        FineTuneMode mode = FineTuneMode::base;
    };
    Finetune finetune;

    static PipelineConfig materialize(const RunConfig& rc);
};

// Pre-training corpus: every manifest clip cut into pretrain-layout segments
// (non-overlapping, <= chunk seconds, >= 1 s).
struct SegmentCorpus {
    std::vector<Tensorf> segments; // patch tokens per segment
    int patch_width() const { return segments.empty() ? 0 : segments[0].cols(); }
};

SegmentCorpus build_segment_corpus(const DatasetManifest& manifest, const FrontendConfig& cfg);

// Cached stage-3 features for one clip.
struct ClipData {
    Tensorf patches;
    Tensorf spectrum;
    int label = 0;
    std::string split;
    int fold = 0;
};

std::vector<ClipData> load_clips(const DatasetManifest& manifest, const FrontendConfig& cfg);

// deterministic batch membership as a pure function of the step index
std::vector<int> batch_indices(uint64_t seed, const std::string& stream, int64_t step, int batch,
                               int corpus_size);

// --- stage 1 ---

TokenizerLosses tokenizer_train_step(TokenizerWeights<float>& weights, const Teacher<float>& teacher,
                                     const std::vector<const Tensorf*>& batch, AdamW<float>& opt,
                                     const LrSchedule& schedule, int64_t step,
                                     const LossWeights& lw, const TemperatureSchedule& tau,
                                     uint64_t seed);

struct StageResult {
    std::string checkpoint_path;
    int64_t steps_run = 0;
};

// stop_after > 0 bounds the steps executed by this invocation (an
// interrupted run); the checkpoint then holds the partial state and a later
// call with resume_path continues it
StageResult run_train_tokenizer(const PipelineConfig& cfg, const SegmentCorpus& corpus,
                                const std::string& out_dir, const std::string& resume_path = "",
                                int64_t stop_after = 0);

// --- stage 2 ---

struct MamStepStats {
    double loss = 0.0;
    double masked_acc = 0.0;
    double tokenizer_grad_abs_sum = 0.0; // frozen contract: must stay exactly 0
};

MamStepStats pretrain_step(MamWeights<float>& weights, const TokenizerWeights<float>& tokenizer,
                           const std::vector<const Tensorf*>& batch, AdamW<float>& opt,
                           const LrSchedule& schedule, int64_t step, double mask_ratio,
                           bool bernoulli, uint64_t seed);

StageResult run_pretrain(const PipelineConfig& cfg, const SegmentCorpus& corpus,
                         const std::string& tokenizer_ckpt, const std::string& out_dir,
                         const std::string& resume_path = "", bool force_hash = false,
                         int64_t stop_after = 0);

// --- stage 3 ---

struct FinetuneResult {
    std::string checkpoint_path;
    std::vector<double> fold_accuracy; // eval accuracy per run (one entry when no folds)
    double mean_accuracy = 0.0;
    double final_train_loss = 0.0;
    double final_train_accuracy = 0.0;
};

// acoustic_ckpt empty -> scratch initialization regardless of mode
FinetuneResult run_finetune(const PipelineConfig& cfg, const DatasetManifest& manifest,
                            const std::string& acoustic_ckpt, const std::string& out_dir,
                            bool force_hash = false);

DownstreamWeights<float> build_downstream(const PipelineConfig& cfg, int classes,
                                          FineTuneMode mode, const std::string& acoustic_ckpt,
                                          bool force_hash = false);

// one optimization step over a clip batch; returns (mean loss, batch accuracy)
std::pair<double, double> finetune_step(DownstreamWeights<float>& weights,
                                        const std::vector<const ClipData*>& batch,
                                        AdamW<float>& opt, double lr, const FrontendConfig& fe);

// --- inference ---

struct InferResult {
    std::vector<double> probs;
    int top1 = -1;
    int chunks = 0;
};

InferResult infer_clip(DownstreamWeights<float>& weights, const ClipData& clip,
                       const FrontendConfig& fe);
InferResult infer_file(const PipelineConfig& cfg, const std::string& checkpoint_path,
                       const std::string& wav_path, bool force_hash = false);

DownstreamWeights<float> load_downstream_checkpoint(const PipelineConfig& cfg,
                                                    const std::string& path, bool force_hash);

} // namespace hear
