// hear - decoupled audio representation pipeline CLI
//
// subcommands: synth, train-tokenizer, pretrain, finetune, infer, profile, report
// exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hear/config.hpp"
#include "hear/metrics.hpp"
#include "hear/pipeline.hpp"
#include "hear/profiler.hpp"
#include "hear/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    int64_t seed = -1;
    std::string out_dir;
    std::string data_root;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "run configuration file (key = value lines)");
    cmd->add_option("--set", o.overrides, "override a config key (key=value, repeatable)");
    cmd->add_option("--seed", o.seed, "override the run seed");
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--data-root", o.data_root, "dataset root (default $HEAR_DATA_ROOT)");
    cmd->add_flag("--force", o.force, "ignore checkpoint/config hash mismatches");
}

hear::RunConfig build_config(const CommonOpts& o) {
    hear::RunConfig rc;
    if (!o.config_path.empty()) rc.load_file(o.config_path);
    for (const auto& kv : o.overrides) rc.apply_override(kv);
    if (o.seed >= 0) rc.seed = static_cast<uint64_t>(o.seed);
    if (!o.out_dir.empty()) rc.out_dir = o.out_dir;
    if (!o.data_root.empty()) {
        rc.data_root = o.data_root;
    } else if (rc.data_root.empty()) {
        if (const char* env = std::getenv("HEAR_DATA_ROOT")) rc.data_root = env;
    }
    rc.validate();
    return rc;
}

std::string resolve_manifest(const hear::RunConfig& rc, const std::string& manifest) {
    fs::path p(manifest);
    if (p.is_absolute() || rc.data_root.empty()) return manifest;
    const fs::path joined = fs::path(rc.data_root) / p;
    return fs::exists(joined) ? joined.string() : manifest;
}

void cmd_report(const std::vector<std::string>& files) {
    for (const auto& f : files) {
        const auto rows = hear::read_metrics(f);
        std::cout << f << " (" << rows.size() << " records)\n";
        if (rows.empty()) continue;
        if (rows.front().contains("step")) {
            auto pick = [&](const json& j) {
                return j.contains("loss") ? j["loss"].get<double>()
                                          : j["loss_total"].get<double>();
            };
            double first = pick(rows.front()), last = pick(rows.back()), best = first;
            for (const auto& r : rows) best = std::min(best, pick(r));
            std::cout << "  steps " << rows.front()["step"] << ".." << rows.back()["step"]
                      << "  loss first/best/last = " << first << " / " << best << " / " << last
                      << "\n";
            if (rows.back().contains("masked_acc"))
                std::cout << "  final masked_acc = " << rows.back()["masked_acc"] << "\n";
        } else if (rows.front().contains("epoch")) {
            std::map<std::string, json> last_by_split;
            std::map<int, double> fold_acc;
            for (const auto& r : rows) {
                last_by_split[r["split"].get<std::string>()] = r;
                if (r.contains("fold") && r["split"] == "test")
                    fold_acc[r["fold"].get<int>()] = r["accuracy"].get<double>();
            }
            for (const auto& [split, r] : last_by_split)
                std::cout << "  " << split << ": epoch " << r["epoch"] << " loss " << r["loss"]
                          << " accuracy " << r["accuracy"] << "\n";
            if (!fold_acc.empty()) {
                double mean = 0;
                std::cout << "  per-fold accuracy:";
                for (const auto& [f2, a] : fold_acc) {
                    std::cout << " fold" << f2 << "=" << a;
                    mean += a;
                }
                std::cout << "  mean=" << mean / double(fold_acc.size()) << "\n";
            }
        }
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"HEAR decoupled audio representation pipeline"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a deterministic synthetic corpus");
    CommonOpts synth_opts;
    add_common(synth, synth_opts);
    hear::SynthSpec synth_spec;
    synth->add_option("--classes", synth_spec.classes, "number of classes");
    synth->add_option("--clips", synth_spec.clips_per_class, "clips per class");
    synth->add_option("--min-seconds", synth_spec.min_seconds, "minimum clip duration");
    synth->add_option("--max-seconds", synth_spec.max_seconds, "maximum clip duration");

    // train-tokenizer
    auto* train_tok = app.add_subcommand("train-tokenizer", "stage 1: knowledge-distilled tokenizer");
    CommonOpts tok_opts;
    add_common(train_tok, tok_opts);
    std::string tok_manifest, tok_resume;
    int64_t tok_steps = -1;
    train_tok->add_option("--manifest", tok_manifest, "training corpus manifest")->required();
    train_tok->add_option("--steps", tok_steps, "override stage1.steps");
    train_tok->add_option("--resume", tok_resume, "resume from checkpoint");

    // pretrain
    auto* pretrain = app.add_subcommand("pretrain", "stage 2: masked audio modeling");
    CommonOpts pre_opts;
    add_common(pretrain, pre_opts);
    std::string pre_manifest, pre_tokenizer, pre_resume;
    int64_t pre_steps = -1;
    pretrain->add_option("--manifest", pre_manifest, "training corpus manifest")->required();
    pretrain->add_option("--tokenizer", pre_tokenizer, "stage-1 checkpoint")->required();
    pretrain->add_option("--steps", pre_steps, "override stage2.steps");
    pretrain->add_option("--resume", pre_resume, "resume from checkpoint");

    // finetune
    auto* finetune = app.add_subcommand("finetune", "stage 3: downstream adaptation");
    CommonOpts ft_opts;
    add_common(finetune, ft_opts);
    std::string ft_manifest, ft_acoustic, ft_mode, ft_preset;
    int ft_epochs = -1;
    finetune->add_option("--manifest", ft_manifest, "labeled dataset manifest")->required();
    finetune->add_option("--acoustic", ft_acoustic, "stage-2 checkpoint (omit for scratch)");
    finetune->add_option("--mode", ft_mode, "base | scratch | no_spectrum | transfer");
    finetune->add_option("--preset", ft_preset, "esc50 | gscv1 | gscv2 | voxceleb");
    finetune->add_option("--epochs", ft_epochs, "override finetune.epochs");

    // infer
    auto* infer = app.add_subcommand("infer", "classify one audio file");
    CommonOpts infer_opts;
    add_common(infer, infer_opts);
    std::string infer_ckpt, infer_wav;
    infer->add_option("--checkpoint", infer_ckpt, "fine-tuned checkpoint")->required();
    infer->add_option("wav", infer_wav, "input WAV file")->required();

    // profile
    auto* profile = app.add_subcommand("profile", "parameter/FLOPs audit and RTF measurement");
    CommonOpts prof_opts;
    add_common(profile, prof_opts);
    double prof_duration = 10.0;
    int prof_classes = 50;
    bool prof_rtf = false, prof_json = false, prof_monolithic = false;
    profile->add_option("--duration", prof_duration, "workload audio seconds");
    profile->add_option("--classes", prof_classes, "classifier width for the audit");
    profile->add_flag("--rtf", prof_rtf, "measure wall-clock real-time factor");
    profile->add_flag("--json", prof_json, "emit JSON instead of a table");
    profile->add_flag("--monolithic", prof_monolithic, "no chunking: full-length attention comparator");

    // report
    auto* report = app.add_subcommand("report", "summarize metrics JSONL files");
    std::vector<std::string> report_files;
    report->add_option("files", report_files, "metrics files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1; // usage errors are exit code 1
    }

    try {
        if (*synth) {
            auto rc = build_config(synth_opts);
            synth_spec.seed = rc.seed;
            const std::string dir = rc.out_dir;
            const auto manifest = hear::synth_corpus(synth_spec, dir);
            std::cout << "wrote " << manifest.rows.size() << " clips ("
                      << manifest.num_classes << " classes) under " << dir << "\n";
            std::cout << "manifest: " << (fs::path(dir) / "manifest.csv").string() << "\n";
        } else if (*train_tok) {
            auto rc = build_config(tok_opts);
            if (tok_steps >= 0) rc.stage1_steps = tok_steps;
            rc.validate();
            const auto cfg = hear::PipelineConfig::materialize(rc);
            const auto manifest =
                hear::load_manifest(resolve_manifest(rc, tok_manifest), rc.data_root);
            const auto corpus = hear::build_segment_corpus(manifest, cfg.frontend);
            std::cout << "corpus: " << corpus.segments.size() << " segments\n";
            const auto res = hear::run_train_tokenizer(cfg, corpus, rc.out_dir, tok_resume);
            std::cout << "tokenizer checkpoint: " << res.checkpoint_path << "\n";
        } else if (*pretrain) {
            auto rc = build_config(pre_opts);
            if (pre_steps >= 0) rc.stage2_steps = pre_steps;
            rc.validate();
            const auto cfg = hear::PipelineConfig::materialize(rc);
            const auto manifest =
                hear::load_manifest(resolve_manifest(rc, pre_manifest), rc.data_root);
            const auto corpus = hear::build_segment_corpus(manifest, cfg.frontend);
            std::cout << "corpus: " << corpus.segments.size() << " segments\n";
            const auto res = hear::run_pretrain(cfg, corpus, pre_tokenizer, rc.out_dir,
                                                pre_resume, pre_opts.force);
            std::cout << "acoustic checkpoint: " << res.checkpoint_path << "\n";
        } else if (*finetune) {
            auto rc = build_config(ft_opts);
            if (!ft_preset.empty()) rc.set("finetune.preset", ft_preset);
            if (!ft_mode.empty()) rc.set("finetune.mode", ft_mode);
            if (ft_epochs >= 0) rc.finetune_epochs = ft_epochs;
            rc.validate();
            const auto cfg = hear::PipelineConfig::materialize(rc);
            const auto manifest =
                hear::load_manifest(resolve_manifest(rc, ft_manifest), rc.data_root);
            if (cfg.finetune.mode != hear::FineTuneMode::scratch && ft_acoustic.empty())
                throw hear::ConfigError("finetune: --acoustic required unless mode=scratch");
            const auto res =
                hear::run_finetune(cfg, manifest, ft_acoustic, rc.out_dir, ft_opts.force);
            if (res.fold_accuracy.size() > 1) {
                std::cout << "per-fold accuracy:";
                for (size_t f = 0; f < res.fold_accuracy.size(); ++f)
                    std::cout << " " << res.fold_accuracy[f];
                std::cout << "\n";
            }
            std::cout << "mean accuracy: " << res.mean_accuracy << "\n";
            std::cout << "checkpoint: " << res.checkpoint_path << "\n";
        } else if (*infer) {
            auto rc = build_config(infer_opts);
            const auto cfg = hear::PipelineConfig::materialize(rc);
            const auto res = hear::infer_file(cfg, infer_ckpt, infer_wav, infer_opts.force);
            std::cout << "chunks processed: " << res.chunks << "\n";
            json j;
            j["probabilities"] = res.probs;
            j["top1"] = res.top1;
            std::cout << j.dump(2) << "\n";
        } else if (*profile) {
            auto rc = build_config(prof_opts);
            const auto cfg = hear::PipelineConfig::materialize(rc);
            hear::ProfileModelSpec spec;
            spec.acoustic = cfg.acoustic;
            spec.task = cfg.task_base;
            spec.task.input_width = cfg.acoustic.hidden + cfg.d_p;
            spec.d_p = cfg.d_p;
            spec.head_hidden = cfg.head_hidden;
            spec.classes = prof_classes;
            hear::WorkloadSpec work;
            work.audio_seconds = prof_duration;
            work.frontend = cfg.frontend;

            hear::CostReport rep;
            rep.audio_seconds = prof_duration;
            rep.flops = hear::estimate_flops(spec, work, prof_monolithic);
            rep.gflops = double(rep.flops.total()) / 1e9;
            auto weights = hear::DownstreamWeights<float>::random_init(
                cfg.acoustic, cfg.task_base, cfg.d_p, cfg.frontend.spectrum_bins(),
                cfg.head_hidden, prof_classes, hear::FineTuneMode::base, rc.seed);
            rep.params = hear::count_params(weights);
            {
                auto tok = hear::TokenizerWeights<float>::random_init(cfg.tokenizer, rc.seed);
                rep.params["tokenizer_stage1_only"] = hear::count_params(tok);
            }
            if (prof_monolithic) rep.note = "monolithic comparator: one full-length attention window";
            if (prof_rtf) {
                rep.run_seconds = hear::time_inference_runs(weights, work);
                rep.rtf = hear::real_time_factor(rep.run_seconds, prof_duration);
            }
            std::cout << (prof_json ? rep.to_json() : rep.to_table()) << "\n";
        } else if (*report) {
            cmd_report(report_files);
        }
    } catch (const hear::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const hear::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const hear::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
