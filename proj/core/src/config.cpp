#include "hear/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "hear/rng.hpp"

namespace hear {

namespace {

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: bad numeric value '" + v + "' for " + key);
    }
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const int64_t i = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer value '" + v + "' for " + key);
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: bad boolean value '" + v + "' for " + key);
}

const std::map<std::string, Field>& registry() {
    static const std::map<std::string, Field> fields = [] {
        std::map<std::string, Field> r;
        auto add_int = [&r](const std::string& key, auto member) {
            r[key] = {[member](const RunConfig& c) { return std::to_string(c.*member); },
                      [member, key](RunConfig& c, const std::string& v) {
                          c.*member = static_cast<std::remove_reference_t<decltype(std::declval<RunConfig>().*member)>>(
                              parse_int(key, v));
                      }};
        };
        auto add_double = [&r](const std::string& key, auto member) {
            r[key] = {[member](const RunConfig& c) { return fmt_double(c.*member); },
                      [member, key](RunConfig& c, const std::string& v) {
                          c.*member = parse_double(key, v);
                      }};
        };
        auto add_string = [&r](const std::string& key, auto member) {
            r[key] = {[member](const RunConfig& c) { return c.*member; },
                      [member](RunConfig& c, const std::string& v) { c.*member = v; }};
        };
        auto add_bool = [&r](const std::string& key, auto member) {
            r[key] = {[member](const RunConfig& c) { return c.*member ? "true" : "false"; },
                      [member, key](RunConfig& c, const std::string& v) {
                          c.*member = parse_bool(key, v);
                      }};
        };

        add_int("seed", &RunConfig::seed);
        add_string("data_root", &RunConfig::data_root);
        add_string("out_dir", &RunConfig::out_dir);

        add_int("frontend.sample_rate", &RunConfig::frontend_sample_rate);
        add_double("frontend.window_ms", &RunConfig::frontend_window_ms);
        add_double("frontend.hop_ms", &RunConfig::frontend_hop_ms);
        add_int("frontend.n_fft", &RunConfig::frontend_n_fft);
        add_int("frontend.n_mels", &RunConfig::frontend_n_mels);
        add_double("frontend.chunk_seconds", &RunConfig::frontend_chunk_seconds);
        add_double("frontend.overlap_seconds", &RunConfig::frontend_overlap_seconds);

        add_int("model.tokenizer.hidden", &RunConfig::tokenizer_hidden);
        add_int("model.tokenizer.intermediate", &RunConfig::tokenizer_intermediate);
        add_int("model.tokenizer.heads", &RunConfig::tokenizer_heads);
        add_int("model.tokenizer.layers", &RunConfig::tokenizer_layers);
        add_int("model.decoder.hidden", &RunConfig::decoder_hidden);
        add_int("model.decoder.intermediate", &RunConfig::decoder_intermediate);
        add_int("model.decoder.heads", &RunConfig::decoder_heads);
        add_int("model.decoder.layers", &RunConfig::decoder_layers);
        add_int("model.acoustic.hidden", &RunConfig::acoustic_hidden);
        add_int("model.acoustic.intermediate", &RunConfig::acoustic_intermediate);
        add_int("model.acoustic.heads", &RunConfig::acoustic_heads);
        add_int("model.acoustic.layers", &RunConfig::acoustic_layers);
        add_int("model.task.hidden", &RunConfig::task_hidden);
        add_int("model.task.intermediate", &RunConfig::task_intermediate);
        add_int("model.task.heads", &RunConfig::task_heads);
        add_int("model.task.layers", &RunConfig::task_layers);
        add_int("model.teacher.hidden", &RunConfig::teacher_hidden);
        add_int("model.teacher.intermediate", &RunConfig::teacher_intermediate);
        add_int("model.teacher.heads", &RunConfig::teacher_heads);
        add_int("model.teacher.layers", &RunConfig::teacher_layers);
        add_int("model.relative_distance", &RunConfig::relative_distance);
        add_int("model.codebook_size", &RunConfig::codebook_size);
        add_int("model.code_dim", &RunConfig::code_dim);
        add_int("model.d_p", &RunConfig::d_p);
        add_int("model.head_hidden", &RunConfig::head_hidden);

        add_double("loss.alpha", &RunConfig::loss_alpha);
        add_double("loss.beta", &RunConfig::loss_beta);
        add_double("loss.gamma", &RunConfig::loss_gamma);
        add_double("tau.start", &RunConfig::tau_start);
        add_double("tau.decay", &RunConfig::tau_decay);
        add_double("tau.floor", &RunConfig::tau_floor);

        add_double("mask.ratio", &RunConfig::mask_ratio);
        add_bool("mask.bernoulli", &RunConfig::mask_bernoulli);

        add_double("opt.beta1", &RunConfig::opt_beta1);
        add_double("opt.beta2", &RunConfig::opt_beta2);
        add_double("opt.eps", &RunConfig::opt_eps);
        add_double("opt.weight_decay", &RunConfig::opt_weight_decay);

        add_double("stage1.lr", &RunConfig::stage1_lr);
        add_int("stage1.batch", &RunConfig::stage1_batch);
        add_int("stage1.steps", &RunConfig::stage1_steps);
        add_int("stage1.warmup", &RunConfig::stage1_warmup);
        add_int("stage1.checkpoint_every", &RunConfig::stage1_checkpoint_every);
        add_double("stage2.lr", &RunConfig::stage2_lr);
        add_int("stage2.batch", &RunConfig::stage2_batch);
        add_int("stage2.steps", &RunConfig::stage2_steps);
        add_int("stage2.warmup", &RunConfig::stage2_warmup);
        add_int("stage2.checkpoint_every", &RunConfig::stage2_checkpoint_every);

        add_string("finetune.preset", &RunConfig::finetune_preset);
        add_double("finetune.lr", &RunConfig::finetune_lr);
        add_int("finetune.batch", &RunConfig::finetune_batch);
        add_int("finetune.epochs", &RunConfig::finetune_epochs);
        add_string("finetune.mode", &RunConfig::finetune_mode);
        return r;
    }();
    return fields;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

} // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto& r = registry();
    auto it = r.find(key);
    if (it == r.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second.set(*this, value);
    // presets expand in place; later explicit keys still win
    if (key == "finetune.preset") apply_preset();
}

std::string RunConfig::get(const std::string& key) const {
    const auto& r = registry();
    auto it = r.find(key);
    if (it == r.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second.get(*this);
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [key, field] : registry()) out.emplace_back(key, field.get(*this));
    return out;
}

std::string RunConfig::serialize() const {
    std::string out;
    for (const auto& [k, v] : items()) out += k + " = " + v + "\n";
    return out;
}

uint64_t RunConfig::hash() const {
    // environment keys (where things live) do not change what was trained;
    // checkpoints stay valid when a run directory moves
    std::string canonical;
    for (const auto& [k, v] : items())
        if (k != "out_dir" && k != "data_root") canonical += k + " = " + v + "\n";
    return fnv1a64(canonical);
}

uint64_t RunConfig::structural_hash() const {
    std::string canonical;
    for (const auto& [k, v] : items())
        if (k.rfind("frontend.", 0) == 0 || k.rfind("model.", 0) == 0)
            canonical += k + " = " + v + "\n";
    return fnv1a64(canonical);
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line.substr(0, line.find('#')));
        if (stripped.empty()) continue;
        if (stripped.rfind("include ", 0) == 0) {
            const std::string inc = trim(stripped.substr(8));
            const auto base = std::filesystem::path(path).parent_path();
            load_file((base / inc).string());
            continue;
        }
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: " + path + ":" + std::to_string(line_no) +
                              ": expected 'key = value'");
        set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }
}

RunConfig RunConfig::from_file(const std::string& path) {
    RunConfig c;
    c.load_file(path);
    return c;
}

void RunConfig::apply_override(const std::string& key_eq_value) {
    const size_t eq = key_eq_value.find('=');
    if (eq == std::string::npos)
        throw ConfigError("config: override must be key=value, got '" + key_eq_value + "'");
    set(trim(key_eq_value.substr(0, eq)), trim(key_eq_value.substr(eq + 1)));
}

void RunConfig::apply_preset() {
    if (finetune_preset == "custom") return;
    struct Preset {
        int batch;
        double lr;
        int epochs;
    };
    static const std::map<std::string, Preset> presets = {
        {"esc50", {16, 2e-4, 80}},
        {"gscv1", {64, 3e-4, 30}},
        {"gscv2", {64, 3e-4, 30}},
        {"voxceleb", {16, 1e-4, 15}},
    };
    auto it = presets.find(finetune_preset);
    if (it == presets.end())
        throw ConfigError("config: unknown finetune preset '" + finetune_preset + "'");
    finetune_batch = it->second.batch;
    finetune_lr = it->second.lr;
    finetune_epochs = it->second.epochs;
}

void RunConfig::validate() const {
    if (loss_alpha < 0 || loss_beta < 0 || loss_gamma < 0)
        throw ConfigError("config: loss weights must be non-negative");
    if (tau_start <= 0 || tau_floor <= 0 || tau_decay <= 0 || tau_decay > 1)
        throw ConfigError("config: bad temperature schedule");
    if (mask_ratio < 0 || mask_ratio > 1) throw ConfigError("config: mask ratio outside [0,1]");
    if (stage1_warmup >= stage1_steps || stage2_warmup >= stage2_steps)
        throw ConfigError("config: warmup must be < total steps");
    if (codebook_size < 2 || code_dim < 1) throw ConfigError("config: bad codebook dimensions");
}

} // namespace hear
