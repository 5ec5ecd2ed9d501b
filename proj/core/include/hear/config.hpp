#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hear/common.hpp"

namespace hear {

// Flat key=value run configuration. Defaults carry the published recipe
// (module sizes, loss weights, schedules, masking ratio, chunking);
// everything else is a recorded choice. Unknown keys are rejected.
struct RunConfig {
    uint64_t seed = 42;
    std::string data_root; // empty -> $HEAR_DATA_ROOT at use time
    std::string out_dir = "runs/out";

    // frontend
    int frontend_sample_rate = 16000;
    double frontend_window_ms = 25.0;
    double frontend_hop_ms = 10.0;
    int frontend_n_fft = 512;
    int frontend_n_mels = 128;
    double frontend_chunk_seconds = 6.0;
    double frontend_overlap_seconds = 1.0;

    // module dimensions (Hidden/Intermediate/Heads/Layers)
    int tokenizer_hidden = 128, tokenizer_intermediate = 512, tokenizer_heads = 4, tokenizer_layers = 6;
    int decoder_hidden = 128, decoder_intermediate = 512, decoder_heads = 4, decoder_layers = 2;
    int acoustic_hidden = 384, acoustic_intermediate = 1536, acoustic_heads = 4, acoustic_layers = 6;
    int task_hidden = 384, task_intermediate = 1536, task_heads = 4, task_layers = 1;
    int teacher_hidden = 256, teacher_intermediate = 1024, teacher_heads = 4, teacher_layers = 2;
    int relative_distance = 64;
    int codebook_size = 1024;
    int code_dim = 32;
    int d_p = 128;
    int head_hidden = 512;

    // losses / quantizer schedule
    double loss_alpha = 0.3, loss_beta = 0.7, loss_gamma = 0.1;
    double tau_start = 2.0, tau_decay = 0.999995, tau_floor = 0.5;

    // masking
    double mask_ratio = 0.40;
    bool mask_bernoulli = false;

    // optimizer
    double opt_beta1 = 0.9, opt_beta2 = 0.98, opt_eps = 1e-8, opt_weight_decay = 0.01;

    // stage 1 / stage 2 training
    double stage1_lr = 3e-4;
    int stage1_batch = 64;
    int64_t stage1_steps = 540000, stage1_warmup = 10000;
    int64_t stage1_checkpoint_every = 0; // 0 = only at completion
    double stage2_lr = 5e-4;
    int stage2_batch = 128;
    int64_t stage2_steps = 450000, stage2_warmup = 10000;
    int64_t stage2_checkpoint_every = 0;

    // stage 3
    std::string finetune_preset = "custom"; // esc50 | gscv1 | gscv2 | voxceleb | custom
    double finetune_lr = 2e-4;
    int finetune_batch = 16;
    int finetune_epochs = 80;
    std::string finetune_mode = "base";

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    std::vector<std::pair<std::string, std::string>> items() const; // sorted by key

    // canonical serialization ("key = value" per line, sorted)
    std::string serialize() const;
    // full-run identity (everything except environment paths): resume guard
    uint64_t hash() const;
    // frontend.* + model.* only: weight/pipeline compatibility across stages
    uint64_t structural_hash() const;

    static RunConfig from_file(const std::string& path);
    void load_file(const std::string& path); // with `include` support
    void apply_override(const std::string& key_eq_value);
    void apply_preset(); // expands finetune_preset into (batch, lr, epochs)
    void validate() const;
};

} // namespace hear
