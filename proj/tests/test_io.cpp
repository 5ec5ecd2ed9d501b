#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hear/checkpoint.hpp"
#include "hear/config.hpp"
#include "hear/frontend.hpp"
#include "hear/metrics.hpp"
#include "hear/pipeline.hpp"
#include "hear/synth.hpp"
#include "test_util.hpp"

using namespace hear;
using namespace hear::testutil;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// tiny end-to-end configuration used by the trainer tests
RunConfig desk_config(const std::string& out_dir) {
    RunConfig rc;
    rc.seed = 123;
    rc.out_dir = out_dir;
    rc.frontend_window_ms = 8;
    rc.frontend_n_fft = 128;
    rc.frontend_n_mels = 8;
    rc.frontend_chunk_seconds = 1.0;
    rc.frontend_overlap_seconds = 0.2;
    rc.tokenizer_hidden = 16; rc.tokenizer_intermediate = 32; rc.tokenizer_heads = 2; rc.tokenizer_layers = 1;
    rc.decoder_hidden = 16; rc.decoder_intermediate = 32; rc.decoder_heads = 2; rc.decoder_layers = 1;
    rc.acoustic_hidden = 16; rc.acoustic_intermediate = 32; rc.acoustic_heads = 2; rc.acoustic_layers = 1;
    rc.task_hidden = 16; rc.task_intermediate = 32; rc.task_heads = 2; rc.task_layers = 1;
    rc.teacher_hidden = 8; rc.teacher_intermediate = 16; rc.teacher_heads = 2; rc.teacher_layers = 1;
    rc.relative_distance = 8;
    rc.codebook_size = 64;
    rc.code_dim = 8;
    rc.d_p = 4;
    rc.head_hidden = 8;
    rc.stage1_lr = 1e-3; rc.stage1_batch = 2; rc.stage1_steps = 8; rc.stage1_warmup = 2;
    rc.stage2_lr = 1e-3; rc.stage2_batch = 2; rc.stage2_steps = 6; rc.stage2_warmup = 2;
    rc.finetune_lr = 1e-3; rc.finetune_batch = 4; rc.finetune_epochs = 2;
    rc.finetune_mode = "scratch";
    return rc;
}

SynthSpec tiny_corpus_spec(uint64_t seed = 77) {
    SynthSpec spec;
    spec.classes = 2;
    spec.clips_per_class = 3;
    spec.min_seconds = 1.0;
    spec.max_seconds = 2.0;
    spec.seed = seed;
    return spec;
}

} // namespace

TEST_CASE("config defaults carry the published values") {
    RunConfig rc;
    CHECK(rc.loss_alpha == 0.3);
    CHECK(rc.loss_beta == 0.7);
    CHECK(rc.loss_gamma == 0.1);
    CHECK(rc.tau_start == 2.0);
    CHECK(rc.tau_decay == 0.999995);
    CHECK(rc.tau_floor == 0.5);
    CHECK(rc.codebook_size == 1024);
    CHECK(rc.code_dim == 32);
    CHECK(rc.mask_ratio == 0.40);
    CHECK(rc.frontend_chunk_seconds == 6.0);
    CHECK(rc.frontend_overlap_seconds == 1.0);
    CHECK(rc.frontend_sample_rate == 16000);

    // module table
    CHECK(rc.tokenizer_hidden == 128);
    CHECK(rc.tokenizer_intermediate == 512);
    CHECK(rc.tokenizer_heads == 4);
    CHECK(rc.tokenizer_layers == 6);
    CHECK(rc.decoder_layers == 2);
    CHECK(rc.acoustic_hidden == 384);
    CHECK(rc.acoustic_intermediate == 1536);
    CHECK(rc.acoustic_layers == 6);
    CHECK(rc.task_layers == 1);

    // optimization
    CHECK(rc.stage1_lr == 3e-4);
    CHECK(rc.stage1_batch == 64);
    CHECK(rc.stage1_steps == 540000);
    CHECK(rc.stage1_warmup == 10000);
    CHECK(rc.stage2_lr == 5e-4);
    CHECK(rc.stage2_batch == 128);
    CHECK(rc.stage2_steps == 450000);
    CHECK(rc.stage2_warmup == 10000);
}

TEST_CASE("fine-tune presets expand the published table") {
    RunConfig rc;
    rc.set("finetune.preset", "esc50");
    CHECK(rc.finetune_batch == 16);
    CHECK(rc.finetune_lr == 2e-4);
    CHECK(rc.finetune_epochs == 80);
    rc.set("finetune.preset", "gscv1");
    CHECK(rc.finetune_batch == 64);
    CHECK(rc.finetune_lr == 3e-4);
    CHECK(rc.finetune_epochs == 30);
    rc.set("finetune.preset", "gscv2");
    CHECK(rc.finetune_batch == 64);
    CHECK(rc.finetune_epochs == 30);
    rc.set("finetune.preset", "voxceleb");
    CHECK(rc.finetune_batch == 16);
    CHECK(rc.finetune_lr == 1e-4);
    CHECK(rc.finetune_epochs == 15);
    CHECK_THROWS_AS(rc.set("finetune.preset", "esc-50"), ConfigError);

    // explicit keys after the preset still win
    rc.set("finetune.preset", "esc50");
    rc.set("finetune.lr", "5e-4");
    CHECK(rc.finetune_lr == 5e-4);
}

TEST_CASE("config parsing") {
    TempDir dir("hear_cfg_test");
    SUBCASE("unknown keys are rejected") {
        RunConfig rc;
        CHECK_THROWS_AS(rc.set("model.acoustic.width", "10"), ConfigError);
        CHECK_THROWS_AS(rc.set("stage3.lr", "1"), ConfigError);
    }
    SUBCASE("bad values are rejected") {
        RunConfig rc;
        CHECK_THROWS_AS(rc.set("stage1.lr", "fast"), ConfigError);
        CHECK_THROWS_AS(rc.set("stage1.batch", "many"), ConfigError);
        CHECK_THROWS_AS(rc.set("mask.bernoulli", "maybe"), ConfigError);
    }
    SUBCASE("files parse with comments and includes") {
        const auto base = (dir.path / "base.cfg").string();
        const auto main = (dir.path / "main.cfg").string();
        std::ofstream(base) << "loss.alpha = 0.25\nmodel.d_p = 96\n";
        std::ofstream(main) << "# comment line\ninclude base.cfg\nseed = 7  # trailing comment\n"
                            << "loss.alpha = 0.5\n";
        const auto rc = RunConfig::from_file(main);
        CHECK(rc.seed == 7);
        CHECK(rc.d_p == 96);
        CHECK(rc.loss_alpha == 0.5); // later keys override includes
        CHECK_THROWS_AS(RunConfig::from_file((dir.path / "missing.cfg").string()), ConfigError);

        const auto broken = (dir.path / "broken.cfg").string();
        std::ofstream(broken) << "seed 7\n";
        CHECK_THROWS_AS(RunConfig::from_file(broken), ConfigError);
    }
    SUBCASE("overrides and hashing") {
        RunConfig a, b;
        CHECK(a.hash() == b.hash());
        b.apply_override("mask.ratio=0.25");
        CHECK(a.hash() != b.hash());
        CHECK(b.mask_ratio == 0.25);
        CHECK_THROWS_AS(a.apply_override("no_equals_sign"), ConfigError);

        // serialize -> parse round trip preserves the hash
        TempDir rt("hear_cfg_rt");
        const auto path = (rt.path / "round.cfg").string();
        std::ofstream(path) << b.serialize();
        CHECK(RunConfig::from_file(path).hash() == b.hash());
    }
    SUBCASE("validation") {
        RunConfig rc;
        rc.stage1_warmup = rc.stage1_steps + 1;
        CHECK_THROWS_AS(rc.validate(), ConfigError);
    }
}

TEST_CASE("manifest loading and validation") {
    TempDir dir("hear_manifest_test");
    const auto corpus = synth_corpus(tiny_corpus_spec(), dir.str());
    CHECK(corpus.rows.size() == 6);
    CHECK(corpus.num_classes == 2);
    CHECK(corpus.has_folds);

    const auto loaded = load_manifest((dir.path / "manifest.csv").string());
    CHECK(loaded.rows.size() == 6);
    CHECK(loaded.num_classes == 2);
    CHECK(loaded.has_folds);
    const auto folds = loaded.folds_present();
    CHECK(!folds.empty());

    SUBCASE("missing audio file") {
        auto rows = corpus;
        rows.rows[0].path = (dir.path / "nope.wav").string();
        const auto bad = (dir.path / "bad.csv").string();
        save_manifest(bad, rows);
        CHECK_THROWS_AS(load_manifest(bad), DataError);
    }
    SUBCASE("labels must be dense") {
        auto rows = corpus;
        for (auto& r : rows.rows) r.label = r.label == 0 ? 0 : 2; // missing class 1
        const auto bad = (dir.path / "sparse.csv").string();
        save_manifest(bad, rows);
        CHECK_THROWS_AS(load_manifest(bad), DataError);
    }
    SUBCASE("header is checked") {
        const auto bad = (dir.path / "hdr.csv").string();
        std::ofstream(bad) << "file,label,split\nx.wav,0,train\n";
        CHECK_THROWS_AS(load_manifest(bad), DataError);
    }
}

TEST_CASE("metrics jsonl write and read back") {
    TempDir dir("hear_metrics_test");
    const auto path = (dir.path / "m.jsonl").string();
    {
        MetricsWriter w(path);
        w.write({{"step", 0}, {"loss", 1.5}});
        w.write({{"step", 1}, {"loss", 0.75}});
    }
    {
        MetricsWriter w(path, /*append=*/true);
        w.write({{"step", 2}, {"loss", 0.5}});
    }
    const auto rows = read_metrics(path);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0]["loss"] == 1.5);
    CHECK(rows[2]["step"] == 2);
    CHECK_THROWS_AS(read_metrics((dir.path / "missing.jsonl").string()), DataError);
}

TEST_CASE("checkpoint round trip is byte identical") {
    TempDir dir("hear_ckpt_test");
    Checkpoint ckpt;
    ckpt.config_hash = 0xabcdef;
    ckpt.seed = 42;
    ckpt.step = 1234;
    ckpt.stage = 2;
    ckpt.add("acoustic/embed_w", random_matrix<float>(4, 6, 1));
    ckpt.add("acoustic/embed_b", random_matrix<float>(1, 4, 2));
    ckpt.add("zebra", random_matrix<float>(2, 2, 3));

    const auto p1 = (dir.path / "a.ckpt").string();
    const auto p2 = (dir.path / "b.ckpt").string();
    ckpt.save(p1);
    const auto loaded = Checkpoint::load(p1);
    CHECK(loaded.config_hash == ckpt.config_hash);
    CHECK(loaded.step == 1234);
    CHECK(loaded.stage == 2);
    loaded.save(p2);
    CHECK(slurp(p1) == slurp(p2));

    CHECK(loaded.require("zebra").data == ckpt.require("zebra").data);
    CHECK(loaded.find("missing") == nullptr);
    CHECK_THROWS_AS(loaded.require("missing"), DataError);
    Checkpoint dup;
    dup.add("x", random_matrix<float>(1, 1, 4));
    CHECK_THROWS_AS(dup.add("x", random_matrix<float>(1, 1, 5)), NumericError);
    CHECK_THROWS_AS(Checkpoint::load((dir.path / "none.ckpt").string()), DataError);

    // optimizer state round trip
    AdamW<float> opt;
    Tensorf p({3}, 1.0f);
    Tensorf g({3}, 0.5f);
    std::vector<std::pair<std::string, Tensorf*>> params{{"p", &p}};
    opt.step(params, {&g}, 1e-3);
    opt.step(params, {&g}, 1e-3);
    Checkpoint with_opt;
    checkpoint_store_optimizer(with_opt, opt);
    AdamW<float> restored;
    checkpoint_restore_optimizer(with_opt, restored);
    CHECK(restored.step_count() == 2);
    CHECK(restored.slots().at("p").m.data == opt.slots().at("p").m.data);
    CHECK(restored.slots().at("p").v.data == opt.slots().at("p").v.data);
}

TEST_CASE("synthetic corpus") {
    SUBCASE("fixed seed reproduces byte-identical audio") {
        TempDir dir("hear_synth_det");
        const auto spec = tiny_corpus_spec(5);
        const auto m1 = synth_corpus(spec, dir.str());
        const auto bytes1 = slurp(m1.rows[0].path);
        const auto manifest1 = slurp((dir.path / "manifest.csv").string());
        const auto m2 = synth_corpus(spec, dir.str()); // regenerate in place
        CHECK(slurp(m2.rows[0].path) == bytes1);
        CHECK(slurp((dir.path / "manifest.csv").string()) == manifest1);
    }
    SUBCASE("4 classes x 50 clips gives 200 manifest rows") {
        TempDir dir("hear_synth_200");
        SynthSpec spec;
        spec.classes = 4;
        spec.clips_per_class = 50;
        spec.min_seconds = 1.0;
        spec.max_seconds = 1.5;
        spec.seed = 9;
        const auto m = synth_corpus(spec, dir.str());
        CHECK(m.rows.size() == 200);
        CHECK(m.num_classes == 4);
        int train = 0;
        for (const auto& r : m.rows) {
            CHECK(r.fold >= 1);
            CHECK(r.fold <= 5);
            train += r.split == "train";
        }
        CHECK(train == 160); // 80/20 split
    }
    SUBCASE("durations respect the configured range") {
        TempDir dir("hear_synth_dur");
        const auto m = synth_corpus(tiny_corpus_spec(11), dir.str());
        for (const auto& r : m.rows) {
            const auto w = load_wav(r.path);
            CHECK(w.seconds() >= 1.0 - 1e-6);
            CHECK(w.seconds() <= 2.0 + 1e-6);
        }
    }
    SUBCASE("classes separate under a nearest-centroid mel classifier") {
        TempDir dir("hear_synth_sep");
        SynthSpec spec;
        spec.classes = 4;
        spec.clips_per_class = 12;
        spec.min_seconds = 1.0;
        spec.max_seconds = 2.0;
        spec.seed = 21;
        const auto m = synth_corpus(spec, dir.str());
        FrontendConfig fe;

        auto mel_profile = [&](const std::string& path) {
            const auto w = load_wav(path);
            const auto mel = compute_logmel(w, fe);
            std::vector<double> mean(static_cast<size_t>(fe.n_mels), 0.0);
            for (int f = 0; f < mel.frames.rows(); ++f)
                for (int b = 0; b < fe.n_mels; ++b) mean[size_t(b)] += mel.frames.at(f, b);
            for (double& v : mean) v /= mel.frames.rows();
            return mean;
        };

        std::vector<std::vector<double>> centroids(4, std::vector<double>(size_t(fe.n_mels), 0.0));
        std::vector<int> counts(4, 0);
        std::vector<std::pair<std::vector<double>, int>> test_set;
        for (const auto& r : m.rows) {
            auto prof = mel_profile(r.path);
            if (r.split == "train") {
                for (int b = 0; b < fe.n_mels; ++b) centroids[size_t(r.label)][size_t(b)] += prof[size_t(b)];
                ++counts[size_t(r.label)];
            } else {
                test_set.emplace_back(std::move(prof), r.label);
            }
        }
        for (int c = 0; c < 4; ++c)
            for (double& v : centroids[size_t(c)]) v /= counts[size_t(c)];

        int correct = 0;
        for (const auto& [prof, label] : test_set) {
            int best = 0;
            double best_d = 1e300;
            for (int c = 0; c < 4; ++c) {
                double d = 0;
                for (int b = 0; b < fe.n_mels; ++b) {
                    const double diff = prof[size_t(b)] - centroids[size_t(c)][size_t(b)];
                    d += diff * diff;
                }
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            correct += best == label;
        }
        CHECK(double(correct) / double(test_set.size()) > 0.9);
    }
}

TEST_CASE("segment corpus honors the pretrain layout rules") {
    TempDir dir("hear_segments");
    // 7 s clip -> 6 s + 1 s segments; 6.5 s clip -> the 0.5 s tail is dropped
    save_wav((dir.path / "a.wav").string(), noise_wave(7.0, 1));
    save_wav((dir.path / "b.wav").string(), noise_wave(6.5, 2));
    DatasetManifest m;
    m.num_classes = 1;
    m.rows = {{(dir.path / "a.wav").string(), 0, "train", 0},
              {(dir.path / "b.wav").string(), 0, "train", 0}};
    FrontendConfig fe;
    const auto corpus = build_segment_corpus(m, fe);
    REQUIRE(corpus.segments.size() == 3);
    CHECK(corpus.segments[0].rows() == 300); // 6 s at 50 tokens/s
    CHECK(corpus.segments[1].rows() == 50);  // 1 s tail kept
    CHECK(corpus.segments[2].rows() == 300); // 6.5 s keeps only the full block
    CHECK(corpus.patch_width() == fe.patch_width());
}

TEST_CASE("batch membership is a pure function of the step index") {
    const auto a = batch_indices(5, "order", 7, 4, 10);
    const auto b = batch_indices(5, "order", 7, 4, 10);
    CHECK(a == b);
    CHECK(a.size() == 4);

    // one epoch = each item exactly once
    std::vector<int> seen(10, 0);
    for (int64_t step = 0; step < 5; ++step)
        for (int i : batch_indices(5, "order", step, 2, 10)) ++seen[size_t(i)];
    for (int s : seen) CHECK(s == 1);

    // crossing an epoch boundary reshuffles deterministically
    const auto wrap = batch_indices(5, "order", 4, 4, 10);
    CHECK(wrap.size() == 4);
}

TEST_CASE("trainer resume equivalence at the library level") {
    TempDir data("hear_resume_data");
    TempDir run_a("hear_resume_a");
    TempDir run_b("hear_resume_b");
    const auto corpus_manifest = synth_corpus(tiny_corpus_spec(31), data.str());

    auto rc_a = desk_config(run_a.str());
    const auto cfg = PipelineConfig::materialize(rc_a);
    const auto segments = build_segment_corpus(corpus_manifest, cfg.frontend);

    // uninterrupted 8-step run
    const auto full = run_train_tokenizer(cfg, segments, run_a.str());
    CHECK(full.steps_run == 8);

    // identical config: interrupt after 4 steps, then resume to completion
    const auto part = run_train_tokenizer(cfg, segments, run_b.str(), "", /*stop_after=*/4);
    CHECK(part.steps_run == 4);
    CHECK(Checkpoint::load(part.checkpoint_path).step == 4);
    const auto resumed = run_train_tokenizer(cfg, segments, run_b.str(), part.checkpoint_path);
    CHECK(resumed.steps_run == 4);

    // metric streams and final checkpoints are byte-identical
    CHECK(slurp((run_a.path / "tokenizer_metrics.jsonl").string()) ==
          slurp((run_b.path / "tokenizer_metrics.jsonl").string()));
    CHECK(slurp(full.checkpoint_path) == slurp(resumed.checkpoint_path));

    // a stale checkpoint from a different config is refused
    auto rc_other = desk_config(run_b.str());
    rc_other.stage1_steps = 16;
    const auto cfg_other = PipelineConfig::materialize(rc_other);
    CHECK_THROWS_AS(run_train_tokenizer(cfg_other, segments, run_b.str(), part.checkpoint_path),
                    DataError);

    // save -> load -> save byte identity on the final checkpoint
    const auto again = Checkpoint::load(full.checkpoint_path);
    const auto copy_path = (run_a.path / "copy.ckpt").string();
    again.save(copy_path);
    CHECK(slurp(full.checkpoint_path) == slurp(copy_path));
}

TEST_CASE("scratch fine-tuning, checkpointing and inference round trip") {
    TempDir data("hear_ft_data");
    TempDir run("hear_ft_run");
    const auto manifest = synth_corpus(tiny_corpus_spec(41), data.str());

    auto rc = desk_config(run.str());
    const auto cfg = PipelineConfig::materialize(rc);
    // folds in the manifest would trigger 5 runs; strip them for speed
    DatasetManifest flat = manifest;
    flat.has_folds = false;
    for (auto& r : flat.rows) r.fold = 0;

    const auto result = run_finetune(cfg, flat, "", run.str());
    CHECK(result.fold_accuracy.size() == 1);
    CHECK(result.mean_accuracy >= 0.0);
    CHECK(result.mean_accuracy <= 1.0);
    CHECK(fs::exists(result.checkpoint_path));

    const auto wav = flat.rows[0].path;
    const auto r1 = infer_file(cfg, result.checkpoint_path, wav);
    const auto r2 = infer_file(cfg, result.checkpoint_path, wav);
    REQUIRE(r1.probs.size() == 2);
    double sum = 0;
    for (double p : r1.probs) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r1.probs == r2.probs);
    CHECK(r1.top1 == r2.top1);
    const auto wave = load_wav(wav, cfg.frontend.sample_rate);
    const int tokens = static_cast<int>(run_frontend(wave, cfg.frontend).patches.count());
    CHECK(r1.chunks ==
          static_cast<int>(layout_chunks(tokens, ChunkMode::inference, cfg.frontend).windows.size()));

    // config-hash guard on checkpoint loads
    auto other = desk_config(run.str());
    other.d_p = 8;
    const auto other_cfg = PipelineConfig::materialize(other);
    CHECK_THROWS_AS(infer_file(other_cfg, result.checkpoint_path, wav), DataError);
}

TEST_CASE("all four fine-tune modes complete and emit comparable metrics") {
    TempDir data("hear_modes_data");
    TempDir run("hear_modes_run");
    const auto manifest = synth_corpus(tiny_corpus_spec(51), data.str());
    DatasetManifest flat = manifest;
    flat.has_folds = false;
    for (auto& r : flat.rows) r.fold = 0;

    auto rc = desk_config(run.str());
    rc.stage1_steps = 3;
    rc.stage2_steps = 3;
    rc.finetune_epochs = 1;
    const auto cfg = PipelineConfig::materialize(rc);
    const auto segments = build_segment_corpus(flat, cfg.frontend);
    const auto tok = run_train_tokenizer(cfg, segments, (run.path / "s1").string());
    const auto mam = run_pretrain(cfg, segments, tok.checkpoint_path, (run.path / "s2").string());

    for (const std::string mode : {"base", "scratch", "no_spectrum", "transfer"}) {
        auto rc_mode = rc;
        rc_mode.finetune_mode = mode;
        const auto dir = (run.path / mode).string();
        const auto cfg_mode = PipelineConfig::materialize(rc_mode);
        const auto res = run_finetune(cfg_mode, flat,
                                      mode == "scratch" ? "" : mam.checkpoint_path, dir);
        CHECK(fs::exists(res.checkpoint_path));
        const auto rows = read_metrics(dir + "/finetune_metrics.jsonl");
        REQUIRE(!rows.empty());
        for (const char* key : {"epoch", "split", "loss", "accuracy"})
            CHECK(rows.front().contains(key));
    }
}
