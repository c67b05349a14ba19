#include "config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace digpt {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<KeySpec> build_registry() {
    std::vector<KeySpec> r;
    auto add = [&](const std::string& name, KeyType type, const std::string& def, const std::string& doc,
                   std::vector<std::string> choices = {}) {
        r.push_back({name, type, def, doc, std::move(choices)});
    };

    const char* env_root = std::getenv("DIGPT_DATA_ROOT");

    add("seed", KeyType::integer, "0", "global random seed; every stream is derived from it");
    add("data.root", KeyType::text, env_root ? env_root : "",
        "base directory for relative dataset paths (env DIGPT_DATA_ROOT)");
    add("data.train", KeyType::text, "", "training dataset: a directory of per-class folders or a synthetic:// spec");
    add("data.val", KeyType::text, "", "evaluation dataset; empty reuses the test split of data.train");
    add("data.image_size", KeyType::integer, "32", "square input size in pixels");
    add("data.patch_size", KeyType::integer, "4", "patch side in pixels; must divide data.image_size");
    add("clusters.rows", KeyType::integer, "2", "cluster grid rows; must divide the patch grid rows");
    add("clusters.cols", KeyType::integer, "2", "cluster grid cols; must divide the patch grid cols");

    add("model.depth", KeyType::integer, "6", "encoder transformer blocks");
    add("model.dim", KeyType::integer, "192", "encoder width");
    add("model.heads", KeyType::integer, "3", "encoder attention heads; must divide model.dim");
    add("model.mlp_ratio", KeyType::real, "4.0", "mlp hidden size as a multiple of width");
    add("decoder.depth", KeyType::integer, "2", "decoder blocks per decoder");
    add("decoder.dim", KeyType::integer, "0", "decoder width; 0 matches model.dim");
    add("decoder.heads", KeyType::integer, "0", "decoder attention heads; 0 matches model.heads");

    add("teacher.kind", KeyType::choice, "pixel", "semantic token source", {"pixel", "frozen", "cache"});
    add("teacher.path", KeyType::text, "", "frozen-teacher checkpoint or feature-cache file");

    add("paradigm", KeyType::choice, "digpt", "pretraining objective family", {"digpt", "fd", "mim"});
    add("loss.gen", KeyType::flag, "on", "next-cluster prediction loss (generative decoder)");
    add("loss.dis_mode", KeyType::choice, "latest", "visible-cluster supervision schedule",
        {"off", "latest", "all"});
    add("loss.fd", KeyType::flag, "off", "extra encoder-level distillation term in the digpt paradigm");
    add("loss.lambda_dis", KeyType::real, "1.0", "weight of the visible-cluster loss");
    add("loss.lambda_fd", KeyType::real, "1.0", "weight of the encoder-level distillation term");
    add("mim.mask_ratio", KeyType::real, "0.5", "fraction of clusters masked by the mim comparator");

    add("train.batch_size", KeyType::integer, "32", "samples per optimization step");
    add("train.epochs", KeyType::integer, "10", "pretraining epochs");
    add("train.warmup_epochs", KeyType::integer, "1", "linear warmup; must be < train.epochs");
    add("train.base_lr", KeyType::real, "1.5e-4", "peak lr = base_lr * batch_size / 256");
    add("train.abs_lr", KeyType::real, "0", "absolute peak lr; 0 uses the base_lr scaling rule");
    add("train.min_lr", KeyType::real, "0", "cosine decay floor");
    add("train.weight_decay", KeyType::real, "0.05", "decoupled weight decay");
    add("train.beta1", KeyType::real, "0.9", "adam first-moment decay");
    add("train.beta2", KeyType::real, "0.95", "adam second-moment decay");
    add("train.threads", KeyType::integer, "0", "worker threads over the batch; 0 = hardware count");
    add("train.checkpoint_every", KeyType::integer, "0", "checkpoint every N steps; 0 = final only");

    add("augment.crop", KeyType::flag, "on", "random resized crop");
    add("augment.crop_scale_min", KeyType::real, "0.2", "lower area fraction of the random crop");
    add("augment.crop_scale_max", KeyType::real, "1.0", "upper area fraction of the random crop");
    add("augment.flip", KeyType::flag, "on", "random horizontal flip (p = 0.5)");

    add("probe.epochs", KeyType::integer, "40", "linear-probe classifier epochs");
    add("probe.lr", KeyType::real, "0.01", "linear-probe learning rate");
    add("probe.batch_size", KeyType::integer, "128", "linear-probe batch size");
    add("probe.weight_decay", KeyType::real, "0", "linear-probe weight decay");
    add("finetune.epochs", KeyType::integer, "5", "fine-tuning epochs");
    add("finetune.lr", KeyType::real, "1e-3", "fine-tuning peak learning rate");
    add("finetune.batch_size", KeyType::integer, "32", "fine-tuning batch size");
    add("finetune.weight_decay", KeyType::real, "0.05", "fine-tuning weight decay");

    add("out.dir", KeyType::text, "runs/default", "output directory for checkpoints, logs and tables");
    return r;
}

void check_type(const KeySpec& spec, const std::string& value) {
    switch (spec.type) {
        case KeyType::integer: {
            char* end = nullptr;
            (void)std::strtol(value.c_str(), &end, 10);
            if (end == value.c_str() || *end != '\0')
                throw ConfigError("key '" + spec.name + "' expects an integer, got '" + value + "'");
            break;
        }
        case KeyType::real: {
            char* end = nullptr;
            (void)std::strtod(value.c_str(), &end);
            if (end == value.c_str() || *end != '\0')
                throw ConfigError("key '" + spec.name + "' expects a number, got '" + value + "'");
            break;
        }
        case KeyType::flag:
            if (value != "on" && value != "off" && value != "true" && value != "false" && value != "1" &&
                value != "0")
                throw ConfigError("key '" + spec.name + "' expects on|off, got '" + value + "'");
            break;
        case KeyType::choice:
            if (std::find(spec.choices.begin(), spec.choices.end(), value) == spec.choices.end()) {
                std::string opts;
                for (const auto& c : spec.choices) opts += (opts.empty() ? "" : "|") + c;
                throw ConfigError("key '" + spec.name + "' expects " + opts + ", got '" + value + "'");
            }
            break;
        case KeyType::text: break;
    }
}

}  // namespace

const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::fallback: return "default";
        case Provenance::file: return "file";
        case Provenance::override_: return "override";
    }
    return "?";
}

const std::vector<KeySpec>& Config::registry() {
    static const std::vector<KeySpec> r = build_registry();
    return r;
}

const std::vector<std::string>& Config::preset_names() {
    static const std::vector<std::string> names = {"desk", "in1k", "in21k"};
    return names;
}

Config::Config() {
    for (const auto& spec : registry()) {
        values_[spec.name] = spec.def;
        provenance_[spec.name] = Provenance::fallback;
    }
}

const KeySpec& Config::spec_for(const std::string& key) const {
    for (const auto& spec : registry())
        if (spec.name == key) return spec;
    throw ConfigError("unknown config key '" + key + "'");
}

void Config::set_value(const std::string& key, const std::string& value, Provenance prov) {
    const KeySpec& spec = spec_for(key);
    check_type(spec, value);
    // override > file > default; equal levels overwrite (later wins)
    if (provenance_[key] == Provenance::override_ && prov != Provenance::override_) return;
    values_[key] = value;
    provenance_[key] = prov;
}

void Config::load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
        set_value(trim(t.substr(0, eq)), trim(t.substr(eq + 1)), Provenance::file);
    }
}

void Config::apply_preset(const std::string& name) {
    auto set = [&](const std::string& k, const std::string& v) { set_value(k, v, Provenance::file); };
    if (name == "desk" || name.empty()) {
        return;  // desk scale is the registry default
    } else if (name == "in1k") {
        set("data.image_size", "224");
        set("data.patch_size", "16");
        set("clusters.rows", "2");
        set("clusters.cols", "2");
        set("model.depth", "12");
        set("model.dim", "768");
        set("model.heads", "12");
        set("decoder.depth", "2");
        set("decoder.dim", "1024");
        set("decoder.heads", "16");
        set("train.batch_size", "4096");
        set("train.epochs", "300");
        set("train.warmup_epochs", "40");
        set("train.base_lr", "1.5e-4");
    } else if (name == "in21k") {
        apply_preset("in1k");
        set("train.epochs", "150");
        set("train.warmup_epochs", "5");
        set("train.abs_lr", "1.5e-3");
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected desk|in1k|in21k)");
    }
}

void Config::set_override(const std::string& key, const std::string& value) {
    set_value(key, value, Provenance::override_);
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

const std::string& Config::get_raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

int Config::get_int(const std::string& key) const { return static_cast<int>(std::strtol(get_raw(key).c_str(), nullptr, 10)); }

double Config::get_float(const std::string& key) const { return std::strtod(get_raw(key).c_str(), nullptr); }

bool Config::get_flag(const std::string& key) const {
    const std::string& v = get_raw(key);
    return v == "on" || v == "true" || v == "1";
}

const std::string& Config::get_string(const std::string& key) const { return get_raw(key); }

Provenance Config::provenance(const std::string& key) const {
    const auto it = provenance_.find(key);
    if (it == provenance_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

void Config::validate() const {
    model_config().validate();
    loss_spec().validate();

    if (get_int("train.batch_size") < 1) throw ConfigError("train.batch_size must be >= 1");
    const int epochs = get_int("train.epochs");
    const int warmup = get_int("train.warmup_epochs");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (warmup < 0 || warmup >= epochs)
        throw ConfigError("train.warmup_epochs (" + std::to_string(warmup) + ") must be < train.epochs (" +
                          std::to_string(epochs) + ")");
    if (get_float("train.base_lr") < 0 || get_float("train.min_lr") < 0)
        throw ConfigError("train.base_lr and train.min_lr must be >= 0");

    const std::string teacher = get_string("teacher.kind");
    if (teacher == "cache" && (get_flag("augment.crop") || get_flag("augment.flip")))
        throw ConfigError(
            "teacher.kind = cache requires deterministic preprocessing: set augment.crop = off and "
            "augment.flip = off (cached targets cannot follow random views)");
    if ((teacher == "cache" || teacher == "frozen") && get_string("teacher.path").empty())
        throw ConfigError("teacher.kind = " + teacher + " requires teacher.path");

    const double smin = get_float("augment.crop_scale_min");
    const double smax = get_float("augment.crop_scale_max");
    if (!(smin > 0 && smin <= smax && smax <= 1.0))
        throw ConfigError("augment.crop_scale_min/max must satisfy 0 < min <= max <= 1");
}

std::string Config::snapshot() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    return os.str();
}

uint64_t Config::hash() const { return fnv1a64(snapshot()); }

ModelConfig Config::model_config() const {
    ModelConfig m;
    m.image_h = get_int("data.image_size");
    m.image_w = get_int("data.image_size");
    m.patch_size = get_int("data.patch_size");
    m.cluster_rows = get_int("clusters.rows");
    m.cluster_cols = get_int("clusters.cols");
    m.width = get_int("model.dim");
    m.depth = get_int("model.depth");
    m.heads = get_int("model.heads");
    m.mlp_ratio = get_float("model.mlp_ratio");
    m.dec_depth = get_int("decoder.depth");
    m.dec_dim = get_int("decoder.dim") > 0 ? get_int("decoder.dim") : m.width;
    m.dec_heads = get_int("decoder.heads") > 0 ? get_int("decoder.heads") : m.heads;
    const LossSpec spec = loss_spec();
    m.with_gen = spec.paradigm == Paradigm::digpt && spec.gen_on;
    m.with_dis = spec.paradigm == Paradigm::digpt && spec.dis_mode != DisMode::off;
    m.with_fd = spec.paradigm != Paradigm::digpt || spec.fd_on;
    m.with_mask_token = spec.paradigm == Paradigm::mim;
    m.teacher_dim = 0;
    return m;
}

LossSpec Config::loss_spec() const {
    LossSpec s;
    s.paradigm = parse_paradigm(get_string("paradigm"));
    s.gen_on = get_flag("loss.gen");
    s.dis_mode = parse_dis_mode(get_string("loss.dis_mode"));
    s.fd_on = get_flag("loss.fd");
    s.lambda_dis = get_float("loss.lambda_dis");
    s.lambda_fd = get_float("loss.lambda_fd");
    s.mim_mask_ratio = get_float("mim.mask_ratio");
    return s;
}

Config Config::assemble(const std::string& file_path, const std::string& preset,
                        const std::vector<std::string>& overrides) {
    Config cfg;
    if (!preset.empty()) cfg.apply_preset(preset);
    if (!file_path.empty()) cfg.load_file(file_path);
    for (const auto& ov : overrides) {
        const size_t eq = ov.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be key=value, got '" + ov + "'");
        std::string k = trim(ov.substr(0, eq));
        std::string v = trim(ov.substr(eq + 1));
        cfg.set_override(k, v);
    }
    return cfg;
}

}  // namespace digpt
