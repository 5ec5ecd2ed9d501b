#include "hear/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <numeric>

#include "hear/metrics.hpp"

namespace hear {

namespace fs = std::filesystem;

PipelineConfig PipelineConfig::materialize(const RunConfig& rc) {
    rc.validate();
    PipelineConfig p;
    p.seed = rc.seed;
    p.config_hash = rc.hash();
    p.struct_hash = rc.structural_hash();

    p.frontend.sample_rate = rc.frontend_sample_rate;
    p.frontend.window_ms = rc.frontend_window_ms;
    p.frontend.hop_ms = rc.frontend_hop_ms;
    p.frontend.n_fft = rc.frontend_n_fft;
    p.frontend.n_mels = rc.frontend_n_mels;
    p.frontend.chunk_seconds = rc.frontend_chunk_seconds;
    p.frontend.overlap_seconds = rc.frontend_overlap_seconds;
    p.frontend.validate();

    const int patch_width = p.frontend.patch_width();
    p.acoustic = {rc.acoustic_hidden, rc.acoustic_intermediate, rc.acoustic_heads,
                  rc.acoustic_layers, rc.relative_distance, patch_width};
    p.task_base = {rc.task_hidden, rc.task_intermediate, rc.task_heads, rc.task_layers,
                   rc.relative_distance, rc.task_hidden /* resolved per mode */};
    p.teacher = {rc.teacher_hidden, rc.teacher_intermediate, rc.teacher_heads, rc.teacher_layers,
                 rc.relative_distance, patch_width};

    p.tokenizer.encoder = {rc.tokenizer_hidden, rc.tokenizer_intermediate, rc.tokenizer_heads,
                           rc.tokenizer_layers, rc.relative_distance, patch_width};
    p.tokenizer.decoder = {rc.decoder_hidden, rc.decoder_intermediate, rc.decoder_heads,
                           rc.decoder_layers, rc.relative_distance, rc.code_dim};
    p.tokenizer.codebook_size = rc.codebook_size;
    p.tokenizer.code_dim = rc.code_dim;
    p.tokenizer.teacher_dim = rc.teacher_hidden;
    p.tokenizer.validate();

    p.d_p = rc.d_p;
    p.head_hidden = rc.head_hidden;
    p.loss_w = {rc.loss_alpha, rc.loss_beta, rc.loss_gamma};
    p.tau = {rc.tau_start, rc.tau_decay, rc.tau_floor};
    p.mask_ratio = rc.mask_ratio;
    p.mask_bernoulli = rc.mask_bernoulli;
    p.opt = {rc.opt_beta1, rc.opt_beta2, rc.opt_eps, rc.opt_weight_decay};
    p.stage1 = {rc.stage1_lr, rc.stage1_batch, rc.stage1_steps, rc.stage1_warmup,
                rc.stage1_checkpoint_every};
    p.stage2 = {rc.stage2_lr, rc.stage2_batch, rc.stage2_steps, rc.stage2_warmup,
                rc.stage2_checkpoint_every};
    p.finetune = {rc.finetune_lr, rc.finetune_batch, rc.finetune_epochs,
                  finetune_mode_from(rc.finetune_mode)};
    return p;
}

SegmentCorpus build_segment_corpus(const DatasetManifest& manifest, const FrontendConfig& cfg) {
    cfg.validate();
    SegmentCorpus corpus;
    const int64_t block = static_cast<int64_t>(cfg.chunk_seconds * cfg.sample_rate);
    const int64_t min_len = cfg.sample_rate; // segments under 1 s are excluded
    for (const auto& row : manifest.rows) {
        const Waveform wave = load_wav(row.path, cfg.sample_rate);
        const int64_t total = static_cast<int64_t>(wave.samples.size());
        for (int64_t s = 0; s < total; s += block) {
            const int64_t e = std::min(s + block, total);
            if (e - s < min_len) continue;
            Waveform seg;
            seg.sample_rate = wave.sample_rate;
            seg.samples.assign(wave.samples.begin() + s, wave.samples.begin() + e);
            const auto patches = patchify(instance_normalize(compute_logmel(seg, cfg)));
            corpus.segments.push_back(patches.tokens.cast<float>());
        }
    }
    if (corpus.segments.empty()) throw DataError("corpus: no usable segments (all clips < 1 s?)");
    return corpus;
}

std::vector<ClipData> load_clips(const DatasetManifest& manifest, const FrontendConfig& cfg) {
    std::vector<ClipData> clips;
    clips.reserve(manifest.rows.size());
    for (const auto& row : manifest.rows) {
        const Waveform wave = load_wav(row.path, cfg.sample_rate);
        const FrontendOutput fo = run_frontend(wave, cfg);
        ClipData c;
        c.patches = fo.patches.tokens.cast<float>();
        c.spectrum = fo.spectrum.values.cast<float>();
        c.label = row.label;
        c.split = row.split;
        c.fold = row.fold;
        clips.push_back(std::move(c));
    }
    return clips;
}

std::vector<int> batch_indices(uint64_t seed, const std::string& stream, int64_t step, int batch,
                               int corpus_size) {
    if (corpus_size < 1) throw DataError("batch_indices: empty corpus");
    std::vector<int> out;
    out.reserve(static_cast<size_t>(batch));
    int64_t cursor = step * batch;
    int64_t epoch = cursor / corpus_size;
    std::vector<int> perm(static_cast<size_t>(corpus_size));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed, stream, static_cast<uint64_t>(epoch));
    rng.shuffle(perm);
    for (int i = 0; i < batch; ++i, ++cursor) {
        const int64_t e = cursor / corpus_size;
        if (e != epoch) {
            epoch = e;
            std::iota(perm.begin(), perm.end(), 0);
            Rng next(seed, stream, static_cast<uint64_t>(epoch));
            next.shuffle(perm);
        }
        out.push_back(perm[static_cast<size_t>(cursor % corpus_size)]);
    }
    return out;
}

namespace {

// match staged leaf ids to weight tensors by name; frozen leaves are skipped
template <class W, class N>
void collect_trainable(Tape<float>& tape, W& weights, const N& nodes,
                       std::vector<std::pair<std::string, Tensorf*>>& params,
                       std::vector<const Tensorf*>& grads) {
    std::map<std::string, int32_t> ids;
    nodes.for_each([&](const std::string& n, int32_t id) { ids[n] = id; });
    weights.for_each([&](const std::string& n, Tensorf& t) {
        auto it = ids.find(n);
        if (it == ids.end()) throw NumericError("trainer: no staged node for parameter " + n);
        if (!tape.trainable(it->second)) return;
        params.emplace_back(n, &t);
        grads.push_back(&tape.grad(it->second));
    });
}

Tensor<float> draw_gumbel_noise(int rows, int cols, uint64_t seed, int64_t step, int instance) {
    Tensor<float> noise({rows, cols});
    Rng rng(seed, "gumbel/" + std::to_string(step), static_cast<uint64_t>(instance));
    for (float& v : noise.data) v = static_cast<float>(rng.gumbel());
    return noise;
}

void write_checkpoint_atomic(const Checkpoint& ckpt, const std::string& path) {
    const std::string tmp = path + ".tmp";
    ckpt.save(tmp);
    fs::rename(tmp, path);
}

} // namespace

TokenizerLosses tokenizer_train_step(TokenizerWeights<float>& weights, const Teacher<float>& teacher,
                                     const std::vector<const Tensorf*>& batch, AdamW<float>& opt,
                                     const LrSchedule& schedule, int64_t step,
                                     const LossWeights& lw, const TemperatureSchedule& tau,
                                     uint64_t seed) {
    if (batch.empty()) throw DataError("tokenizer_train_step: empty batch");
    const double tau_now = tau.at(step);
    const bool hard = tau_now <= tau.floor; // soft mixtures until the floor, straight-through after

    Tape<float> tape;
    auto nodes = stage_tokenizer(tape, weights, true);
    TokenizerLosses avg;
    Tape<float>::Id total = Tape<float>::kNone;
    for (size_t i = 0; i < batch.size(); ++i) {
        const Tensorf& patches = *batch[i];
        auto patches_id = tape.constant(patches);
        auto teacher_id = tape.constant(teacher.features(patches));
        const auto noise = draw_gumbel_noise(patches.rows(), weights.cfg.codebook_size, seed, step,
                                             static_cast<int>(i));
        auto f = tokenizer_forward(tape, nodes, patches_id, teacher_id, lw, tau_now, &noise, hard);
        avg.rec += tape.value(f.l_rec)[0];
        avg.distill += tape.value(f.l_distill)[0];
        avg.div += tape.value(f.l_div)[0];
        total = total == Tape<float>::kNone ? f.l_total : tape.add(total, f.l_total);
    }
    const double inv = 1.0 / double(batch.size());
    avg.rec *= inv;
    avg.distill *= inv;
    avg.div *= inv;
    avg.total = combine_losses(lw, avg.rec, avg.distill, avg.div);

    auto loss = tape.scale(total, float(inv));
    tape.backward(loss);
    std::vector<std::pair<std::string, Tensorf*>> params;
    std::vector<const Tensorf*> grads;
    collect_trainable(tape, weights, nodes, params, grads);
    opt.step(params, grads, lr_at(schedule, step));
    return avg;
}

StageResult run_train_tokenizer(const PipelineConfig& cfg, const SegmentCorpus& corpus,
                                const std::string& out_dir, const std::string& resume_path,
                                int64_t stop_after) {
    fs::create_directories(out_dir);
    TokenizerWeights<float> weights = TokenizerWeights<float>::random_init(cfg.tokenizer, cfg.seed);
    AdamW<float> opt(cfg.opt);
    int64_t start_step = 0;
    if (!resume_path.empty()) {
        const Checkpoint ckpt = Checkpoint::load(resume_path);
        if (ckpt.config_hash != cfg.config_hash)
            throw DataError("resume: config hash mismatch (use --force to override)");
        checkpoint_restore(ckpt, "tokenizer/", weights);
        checkpoint_restore_optimizer(ckpt, opt);
        start_step = static_cast<int64_t>(ckpt.step);
    }
    FrozenRandomTeacher<float> teacher(cfg.teacher, cfg.seed);
    const LrSchedule schedule = cfg.stage1.schedule();
    MetricsWriter metrics((fs::path(out_dir) / "tokenizer_metrics.jsonl").string(),
                          start_step > 0);

    StageResult res;
    res.checkpoint_path = (fs::path(out_dir) / "tokenizer.ckpt").string();
    auto save = [&](int64_t at_step) {
        Checkpoint ckpt;
        ckpt.config_hash = cfg.config_hash;
        ckpt.struct_hash = cfg.struct_hash;
        ckpt.seed = cfg.seed;
        ckpt.step = static_cast<uint64_t>(at_step);
        ckpt.stage = 1;
        checkpoint_store(ckpt, "tokenizer/", weights);
        checkpoint_store_optimizer(ckpt, opt);
        write_checkpoint_atomic(ckpt, res.checkpoint_path);
    };

    int64_t end = cfg.stage1.steps;
    if (stop_after > 0) end = std::min(end, start_step + stop_after);
    for (int64_t step = start_step; step < end; ++step) {
        const auto idx = batch_indices(cfg.seed, "order/stage1", step, cfg.stage1.batch,
                                       static_cast<int>(corpus.segments.size()));
        std::vector<const Tensorf*> batch;
        batch.reserve(idx.size());
        for (int i : idx) batch.push_back(&corpus.segments[static_cast<size_t>(i)]);
        const TokenizerLosses l = tokenizer_train_step(weights, teacher, batch, opt, schedule,
                                                       step, cfg.loss_w, cfg.tau, cfg.seed);
        metrics.write({{"step", step},
                       {"loss_total", l.total},
                       {"loss_rec", l.rec},
                       {"loss_distill", l.distill},
                       {"loss_div", l.div},
                       {"tau", cfg.tau.at(step)},
                       {"lr", lr_at(schedule, step)}});
        if (cfg.stage1.checkpoint_every > 0 && (step + 1) % cfg.stage1.checkpoint_every == 0)
            save(step + 1);
    }
    save(end);
    res.steps_run = end - start_step;
    return res;
}

MamStepStats pretrain_step(MamWeights<float>& weights, const TokenizerWeights<float>& tokenizer,
                           const std::vector<const Tensorf*>& batch, AdamW<float>& opt,
                           const LrSchedule& schedule, int64_t step, double mask_ratio,
                           bool bernoulli, uint64_t seed) {
    if (batch.empty()) throw DataError("pretrain_step: empty batch");
    Tape<float> tape;
    auto nodes = stage_mam(tape, weights, true);
    const int32_t last_param_leaf = static_cast<int32_t>(tape.size()) - 1;

    Tape<float>::Id total = Tape<float>::kNone;
    int64_t masked = 0, correct = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
        const Tensorf& patches = *batch[i];
        const std::vector<int> targets = tokenize(tokenizer, patches); // frozen, off-tape
        Rng mask_rng(seed, "mask/" + std::to_string(step), static_cast<uint64_t>(i));
        const MaskPlan plan = sample_mask(patches.rows(), mask_rng, mask_ratio, bernoulli);
        auto corrupted = tape.constant(apply_mask(patches, plan));
        auto logits = mam_logits(tape, nodes, corrupted);
        auto loss = mam_loss(tape, logits, targets, plan);
        total = total == Tape<float>::kNone ? loss : tape.add(total, loss);

        const Tensorf& lv = tape.value(logits);
        for (int r : plan.indices) {
            int best = 0;
            for (int c = 1; c < lv.cols(); ++c)
                if (lv.at(r, c) > lv.at(r, best)) best = c;
            ++masked;
            if (best == targets[static_cast<size_t>(r)]) ++correct;
        }
    }
    auto loss = tape.scale(total, float(1.0 / batch.size()));
    tape.backward(loss);

    // frozen-tokenizer contract: tokenizer parameters are never staged, so
    // the only trainable leaves belong to the acoustic model + head
    for (int32_t id = 0; id <= last_param_leaf; ++id)
        if (tape.trainable(id) && !tape.has_grad(id))
            throw NumericError("pretrain_step: trainable leaf without gradient");

    std::vector<std::pair<std::string, Tensorf*>> params;
    std::vector<const Tensorf*> grads;
    collect_trainable(tape, weights, nodes, params, grads);
    opt.step(params, grads, lr_at(schedule, step));

    MamStepStats stats;
    stats.loss = tape.value(loss)[0];
    stats.masked_acc = masked ? double(correct) / double(masked) : 0.0;
    stats.tokenizer_grad_abs_sum = 0.0; // structurally zero: no tokenizer leaf on the tape
    return stats;
}

StageResult run_pretrain(const PipelineConfig& cfg, const SegmentCorpus& corpus,
                         const std::string& tokenizer_ckpt, const std::string& out_dir,
                         const std::string& resume_path, bool force_hash, int64_t stop_after) {
    fs::create_directories(out_dir);
    const Checkpoint tok_ckpt = Checkpoint::load(tokenizer_ckpt);
    if (tok_ckpt.stage != 1) throw DataError("pretrain: checkpoint is not a tokenizer checkpoint");
    if (!force_hash && tok_ckpt.struct_hash != cfg.struct_hash)
        throw DataError("pretrain: tokenizer/config hash mismatch (use --force to override)");
    TokenizerWeights<float> tokenizer = TokenizerWeights<float>::random_init(cfg.tokenizer, cfg.seed);
    checkpoint_restore(tok_ckpt, "tokenizer/", tokenizer);
    const double tau_at_freeze = cfg.tau.at(static_cast<int64_t>(tok_ckpt.step));

    MamWeights<float> weights =
        MamWeights<float>::random_init(cfg.acoustic, cfg.tokenizer.codebook_size, cfg.seed);
    AdamW<float> opt(cfg.opt);
    int64_t start_step = 0;
    if (!resume_path.empty()) {
        const Checkpoint ckpt = Checkpoint::load(resume_path);
        if (!force_hash && ckpt.config_hash != cfg.config_hash)
            throw DataError("resume: config hash mismatch");
        checkpoint_restore(ckpt, "", weights);
        checkpoint_restore_optimizer(ckpt, opt);
        start_step = static_cast<int64_t>(ckpt.step);
    }
    const LrSchedule schedule = cfg.stage2.schedule();
    MetricsWriter metrics((fs::path(out_dir) / "pretrain_metrics.jsonl").string(), start_step > 0);

    StageResult res;
    res.checkpoint_path = (fs::path(out_dir) / "acoustic.ckpt").string();
    auto save = [&](int64_t at_step) {
        Checkpoint ckpt;
        ckpt.config_hash = cfg.config_hash;
        ckpt.struct_hash = cfg.struct_hash;
        ckpt.seed = cfg.seed;
        ckpt.step = static_cast<uint64_t>(at_step);
        ckpt.stage = 2;
        checkpoint_store(ckpt, "", weights);
        checkpoint_store_optimizer(ckpt, opt);
        write_checkpoint_atomic(ckpt, res.checkpoint_path);
    };

    int64_t end = cfg.stage2.steps;
    if (stop_after > 0) end = std::min(end, start_step + stop_after);
    for (int64_t step = start_step; step < end; ++step) {
        const auto idx = batch_indices(cfg.seed, "order/stage2", step, cfg.stage2.batch,
                                       static_cast<int>(corpus.segments.size()));
        std::vector<const Tensorf*> batch;
        batch.reserve(idx.size());
        for (int i : idx) batch.push_back(&corpus.segments[static_cast<size_t>(i)]);
        const MamStepStats s = pretrain_step(weights, tokenizer, batch, opt, schedule, step,
                                             cfg.mask_ratio, cfg.mask_bernoulli, cfg.seed);
        if (s.tokenizer_grad_abs_sum != 0.0)
            throw NumericError("pretrain: frozen tokenizer received gradient");
        metrics.write({{"step", step},
                       {"loss", s.loss},
                       {"lr", lr_at(schedule, step)},
                       {"masked_acc", s.masked_acc},
                       {"tau_used_at_tokenizer_freeze", tau_at_freeze}});
        if (cfg.stage2.checkpoint_every > 0 && (step + 1) % cfg.stage2.checkpoint_every == 0)
            save(step + 1);
    }
    save(end);
    res.steps_run = end - start_step;
    return res;
}

DownstreamWeights<float> build_downstream(const PipelineConfig& cfg, int classes,
                                          FineTuneMode mode, const std::string& acoustic_ckpt,
                                          bool force_hash) {
    DownstreamWeights<float> w = DownstreamWeights<float>::random_init(
        cfg.acoustic, cfg.task_base, cfg.d_p, cfg.frontend.spectrum_bins(), cfg.head_hidden,
        classes, mode, cfg.seed);
    if (mode != FineTuneMode::scratch) {
        if (acoustic_ckpt.empty())
            throw DataError("finetune: mode '" + std::string(to_string(mode)) +
                            "' needs a pre-trained acoustic checkpoint");
        const Checkpoint ckpt = Checkpoint::load(acoustic_ckpt);
        if (ckpt.stage != 2) throw DataError("finetune: checkpoint is not an acoustic checkpoint");
        if (!force_hash && ckpt.struct_hash != cfg.struct_hash)
            throw DataError("finetune: acoustic/config hash mismatch (use --force to override)");
        checkpoint_restore(ckpt, "acoustic/", w.acoustic);
    }
    return w;
}

std::pair<double, double> finetune_step(DownstreamWeights<float>& weights,
                                        const std::vector<const ClipData*>& batch,
                                        AdamW<float>& opt, double lr, const FrontendConfig& fe) {
    if (batch.empty()) throw DataError("finetune_step: empty batch");
    const int classes = weights.head.classes();
    Tape<float> tape;
    auto nodes = stage_downstream(tape, weights, true);
    Tape<float>::Id total = Tape<float>::kNone;
    int correct = 0;
    for (const ClipData* clip : batch) {
        if (clip->label < 0 || clip->label >= classes)
            throw DataError("finetune: label " + std::to_string(clip->label) +
                            " outside class range");
        auto logits = downstream_logits(tape, nodes, tape.constant(clip->patches),
                                        tape.constant(clip->spectrum), fe);
        auto loss = tape.cross_entropy_rows(logits, {clip->label});
        total = total == Tape<float>::kNone ? loss : tape.add(total, loss);
        const Tensorf& lv = tape.value(logits);
        int best = 0;
        for (int c = 1; c < classes; ++c)
            if (lv.at(0, c) > lv.at(0, best)) best = c;
        if (best == clip->label) ++correct;
    }
    auto loss = tape.scale(total, float(1.0 / batch.size()));
    tape.backward(loss);
    std::vector<std::pair<std::string, Tensorf*>> params;
    std::vector<const Tensorf*> grads;
    collect_trainable(tape, weights, nodes, params, grads);
    opt.step(params, grads, lr);
    return {tape.value(loss)[0], double(correct) / double(batch.size())};
}

InferResult infer_clip(DownstreamWeights<float>& weights, const ClipData& clip,
                       const FrontendConfig& fe) {
    Tape<float> tape;
    auto nodes = stage_downstream(tape, weights, false);
    auto logits = downstream_logits(tape, nodes, tape.constant(clip.patches),
                                    tape.constant(clip.spectrum), fe);
    PhaseScope phase(FlopPhase::head);
    auto probs = tape.softmax_rows(logits);
    const Tensorf& p = tape.value(probs);
    InferResult r;
    r.probs.assign(p.data.begin(), p.data.end());
    r.top1 = static_cast<int>(std::max_element(r.probs.begin(), r.probs.end()) - r.probs.begin());
    r.chunks = static_cast<int>(
        layout_chunks(clip.patches.rows(), ChunkMode::inference, fe).windows.size());
    return r;
}

FinetuneResult run_finetune(const PipelineConfig& cfg, const DatasetManifest& manifest,
                            const std::string& acoustic_ckpt, const std::string& out_dir,
                            bool force_hash) {
    fs::create_directories(out_dir);
    const std::vector<ClipData> clips = load_clips(manifest, cfg.frontend);
    const FineTuneMode mode = cfg.finetune.mode;
    const std::vector<int> folds = manifest.has_folds ? manifest.folds_present() : std::vector<int>{};

    struct Split {
        std::vector<int> train, eval;
        int fold = 0;
    };
    std::vector<Split> runs;
    if (folds.size() > 1) {
        for (int f : folds) {
            Split s;
            s.fold = f;
            for (size_t i = 0; i < clips.size(); ++i)
                (clips[i].fold == f ? s.eval : s.train).push_back(static_cast<int>(i));
            runs.push_back(std::move(s));
        }
    } else {
        Split s;
        for (size_t i = 0; i < clips.size(); ++i)
            (clips[i].split == "test" ? s.eval : s.train).push_back(static_cast<int>(i));
        runs.push_back(std::move(s));
    }

    FinetuneResult result;
    MetricsWriter metrics((fs::path(out_dir) / "finetune_metrics.jsonl").string());
    double last_train_loss = 0.0, last_train_acc = 0.0;
    for (const Split& split : runs) {
        if (split.train.empty()) throw DataError("finetune: empty training split");
        DownstreamWeights<float> weights =
            build_downstream(cfg, manifest.num_classes, mode, acoustic_ckpt, force_hash);
        AdamW<float> opt(cfg.opt);

        for (int epoch = 0; epoch < cfg.finetune.epochs; ++epoch) {
            std::vector<int> order = split.train;
            Rng rng(cfg.seed, "ft_order/" + std::to_string(split.fold),
                    static_cast<uint64_t>(epoch));
            rng.shuffle(order);
            double loss_sum = 0.0, acc_sum = 0.0;
            int batches = 0;
            for (size_t off = 0; off < order.size(); off += cfg.finetune.batch) {
                std::vector<const ClipData*> batch;
                for (size_t i = off; i < std::min(order.size(), off + cfg.finetune.batch); ++i)
                    batch.push_back(&clips[static_cast<size_t>(order[i])]);
                const auto [loss, acc] = finetune_step(weights, batch, opt, cfg.finetune.lr,
                                                       cfg.frontend);
                loss_sum += loss;
                acc_sum += acc * double(batch.size());
                ++batches;
            }
            last_train_loss = loss_sum / batches;
            last_train_acc = acc_sum / double(order.size());
            nlohmann::json j = {{"epoch", epoch},
                                {"split", "train"},
                                {"loss", last_train_loss},
                                {"accuracy", last_train_acc}};
            if (split.fold) j["fold"] = split.fold;
            metrics.write(j);
        }

        double eval_acc = last_train_acc;
        if (!split.eval.empty()) {
            int correct = 0;
            double eval_loss = 0.0;
            for (int i : split.eval) {
                const InferResult r = infer_clip(weights, clips[static_cast<size_t>(i)], cfg.frontend);
                if (r.top1 == clips[static_cast<size_t>(i)].label) ++correct;
                eval_loss += -std::log(std::max(r.probs[static_cast<size_t>(
                                                    clips[static_cast<size_t>(i)].label)],
                                                1e-12));
            }
            eval_acc = double(correct) / double(split.eval.size());
            nlohmann::json j = {{"epoch", cfg.finetune.epochs - 1},
                                {"split", "test"},
                                {"loss", eval_loss / double(split.eval.size())},
                                {"accuracy", eval_acc}};
            if (split.fold) j["fold"] = split.fold;
            metrics.write(j);
        }
        result.fold_accuracy.push_back(eval_acc);

        Checkpoint ckpt;
        ckpt.config_hash = cfg.config_hash;
        ckpt.struct_hash = cfg.struct_hash;
        ckpt.seed = cfg.seed;
        ckpt.step = static_cast<uint64_t>(cfg.finetune.epochs);
        ckpt.stage = 3;
        ckpt.mode = static_cast<uint8_t>(mode);
        // in transfer mode the slots hold no acoustic entries: the frozen
        // encoder never enters the optimizer
        checkpoint_store(ckpt, "", weights);
        checkpoint_store_optimizer(ckpt, opt);
        const std::string name =
            split.fold ? "downstream_fold" + std::to_string(split.fold) + ".ckpt" : "downstream.ckpt";
        write_checkpoint_atomic(ckpt, (fs::path(out_dir) / name).string());
        if (result.checkpoint_path.empty())
            result.checkpoint_path = (fs::path(out_dir) / name).string();
    }
    result.mean_accuracy =
        std::accumulate(result.fold_accuracy.begin(), result.fold_accuracy.end(), 0.0) /
        double(result.fold_accuracy.size());
    result.final_train_loss = last_train_loss;
    result.final_train_accuracy = last_train_acc;
    return result;
}

DownstreamWeights<float> load_downstream_checkpoint(const PipelineConfig& cfg,
                                                    const std::string& path, bool force_hash) {
    const Checkpoint ckpt = Checkpoint::load(path);
    if (ckpt.stage != 3) throw DataError("infer: checkpoint is not a fine-tuned model");
    if (!force_hash && ckpt.struct_hash != cfg.struct_hash)
        throw DataError("infer: checkpoint/config hash mismatch (use --force to override)");
    const int classes = ckpt.require("head/w2").rows();
    const auto mode = static_cast<FineTuneMode>(ckpt.mode);
    DownstreamWeights<float> w = DownstreamWeights<float>::random_init(
        cfg.acoustic, cfg.task_base, cfg.d_p, cfg.frontend.spectrum_bins(), cfg.head_hidden,
        classes, mode, cfg.seed);
    checkpoint_restore(ckpt, "", w);
    return w;
}

InferResult infer_file(const PipelineConfig& cfg, const std::string& checkpoint_path,
                       const std::string& wav_path, bool force_hash) {
    DownstreamWeights<float> w = load_downstream_checkpoint(cfg, checkpoint_path, force_hash);
    const Waveform wave = load_wav(wav_path, cfg.frontend.sample_rate);
    if (wave.samples.empty()) throw DataError("infer: empty audio " + wav_path);
    const FrontendOutput fo = run_frontend(wave, cfg.frontend);
    ClipData clip;
    clip.patches = fo.patches.tokens.cast<float>();
    clip.spectrum = fo.spectrum.values.cast<float>();
    return infer_clip(w, clip, cfg.frontend);
}

} // namespace hear
