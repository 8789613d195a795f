#include "sspain/config.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sspain/error.hpp"

namespace sspain {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void type_error(const std::string& path, const char* want) {
    throw ConfigError("expected " + std::string(want) + " at " + path);
}

int get_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) type_error(path, "integer");
    return v.get<int>();
}

std::uint64_t get_u64(const json& v, const std::string& path) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        type_error(path, "non-negative integer");
    return v.get<std::uint64_t>();
}

double get_num(const json& v, const std::string& path) {
    if (!v.is_number()) type_error(path, "number");
    return v.get<double>();
}

bool get_bool(const json& v, const std::string& path) {
    if (!v.is_boolean()) type_error(path, "boolean");
    return v.get<bool>();
}

std::string get_str(const json& v, const std::string& path) {
    if (!v.is_string()) type_error(path, "string");
    return v.get<std::string>();
}

std::vector<int> get_int_list(const json& v, const std::string& path) {
    if (!v.is_array()) type_error(path, "array of integers");
    std::vector<int> out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(get_int(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

std::vector<double> get_num_list(const json& v, const std::string& path) {
    if (!v.is_array()) type_error(path, "array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(get_num(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

void require_positive(int v, const std::string& path) {
    if (v <= 0) throw ConfigError(path + " must be positive");
}

void require_positive(double v, const std::string& path) {
    if (!(v > 0.0)) throw ConfigError(path + " must be positive");
}

void parse_synth(const json& obj, SynthConfig& s) {
    for (const auto& [key, val] : obj.items()) {
        const std::string path = "$.synth." + key;
        if (key == "image_size") {
            s.image_size = get_int(val, path);
            if (s.image_size < 16) throw ConfigError(path + " must be at least 16");
        } else if (key == "n_subjects") {
            s.n_subjects = get_int(val, path);
            require_positive(s.n_subjects, path);
        } else if (key == "frames_per_subject") {
            s.frames_per_subject = get_int(val, path);
            require_positive(s.frames_per_subject, path);
        } else if (key == "relevant_au_ids") {
            s.relevant_au_ids = get_int_list(val, path);
        } else if (key == "noise_sigma") {
            s.noise_sigma = get_num(val, path);
            if (s.noise_sigma < 0.0) throw ConfigError(path + " must be non-negative");
        } else if (key == "seed") {
            s.seed = get_u64(val, path);
        } else {
            throw ConfigError("unknown config key: " + path);
        }
    }
}

void parse_model(const json& obj, ModelConfig& m) {
    for (const auto& [key, val] : obj.items()) {
        const std::string path = "$.model." + key;
        if (key == "conv_channels") {
            m.conv_channels = get_int_list(val, path);
            if (m.conv_channels.empty()) throw ConfigError(path + " must be non-empty");
            for (int c : m.conv_channels)
                if (c <= 0) throw ConfigError(path + " entries must be positive");
        } else if (key == "kernel") {
            m.kernel = get_int(val, path);
            if (m.kernel <= 0 || m.kernel % 2 == 0)
                throw ConfigError(path + " must be a positive odd integer");
        } else if (key == "stride") {
            m.stride = get_int(val, path);
            require_positive(m.stride, path);
        } else if (key == "bottleneck_dim") {
            m.bottleneck_dim = get_int(val, path);
            if (m.bottleneck_dim < 8) throw ConfigError(path + " must be at least 8");
        } else if (key == "image_h") {
            m.image_h = get_int(val, path);
            require_positive(m.image_h, path);
        } else if (key == "image_w") {
            m.image_w = get_int(val, path);
            require_positive(m.image_w, path);
        } else {
            throw ConfigError("unknown config key: " + path);
        }
    }
}

void parse_train(const json& obj, TrainConfig& t) {
    for (const auto& [key, val] : obj.items()) {
        const std::string path = "$.train." + key;
        if (key == "lr_global") {
            t.lr_global = get_num(val, path);
            require_positive(t.lr_global, path);
        } else if (key == "lr_local") {
            t.lr_local = get_num(val, path);
            require_positive(t.lr_local, path);
        } else if (key == "lr_finetune") {
            t.lr_finetune = get_num(val, path);
            require_positive(t.lr_finetune, path);
        } else if (key == "beta") {
            t.beta = get_num(val, path);
            require_positive(t.beta, path);
        } else if (key == "alpha") {
            t.alpha = get_num(val, path);
            require_positive(t.alpha, path);
        } else if (key == "batch_size") {
            t.batch_size = get_int(val, path);
            if (t.batch_size < 2) throw ConfigError(path + " must be at least 2");
        } else if (key == "alt_steps") {
            t.alt_steps = get_int(val, path);
            if (t.alt_steps < 0) throw ConfigError(path + " must be non-negative");
        } else if (key == "finetune_steps") {
            t.finetune_steps = get_int(val, path);
            if (t.finetune_steps < 0) throw ConfigError(path + " must be non-negative");
        } else if (key == "seed") {
            t.seed = get_u64(val, path);
        } else if (key == "emd_bins") {
            t.emd_bins = get_int(val, path);
            if (t.emd_bins < 2) throw ConfigError(path + " must be at least 2");
        } else if (key == "patch_half") {
            t.patch_half = get_int(val, path);
            if (t.patch_half < 0) throw ConfigError(path + " must be non-negative");
        } else if (key == "lambda_center") {
            t.lambda_center = get_num(val, path);
            if (t.lambda_center < 0.0) throw ConfigError(path + " must be non-negative");
        } else if (key == "verbatim_loss_signs") {
            t.verbatim_loss_signs = get_bool(val, path);
        } else if (key == "finetune_all") {
            t.finetune_all = get_bool(val, path);
        } else {
            throw ConfigError("unknown config key: " + path);
        }
    }
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("expected object at $");

    RunConfig cfg;
    for (const auto& [key, val] : doc.items()) {
        const std::string path = "$." + key;
        if (key == "synth") {
            if (!val.is_object()) type_error(path, "object");
            parse_synth(val, cfg.synth);
        } else if (key == "model") {
            if (!val.is_object()) type_error(path, "object");
            parse_model(val, cfg.model);
        } else if (key == "train") {
            if (!val.is_object()) type_error(path, "object");
            parse_train(val, cfg.train);
        } else if (key == "data") {
            cfg.data_dir = get_str(val, path);
        } else if (key == "out") {
            cfg.out_dir = get_str(val, path);
            if (cfg.out_dir.empty()) throw ConfigError(path + " must be non-empty");
        } else if (key == "variant") {
            cfg.variant = get_str(val, path);
            if (cfg.variant != "regression_only" && cfg.variant != "method1" && cfg.variant != "method2")
                throw ConfigError(path + " must be one of regression_only, method1, method2");
        } else if (key == "rescale_table") {
            cfg.rescale_table = get_num_list(val, path);
            if (cfg.rescale_table.size() != 6)
                throw ConfigError(path + " must have 6 entries");
            if (cfg.rescale_table[0] != 0.0)
                throw ConfigError(path + " must start at 0");
            for (std::size_t i = 1; i < cfg.rescale_table.size(); ++i)
                if (!(cfg.rescale_table[i] > cfg.rescale_table[i - 1]))
                    throw ConfigError(path + " must be strictly increasing");
        } else {
            throw ConfigError("unknown config key: " + path);
        }
    }
    validate_train_config(cfg.train);
    compute_geometry(cfg.model);  // rejects unusable model shapes up front
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string config_echo(const RunConfig& cfg) {
    ordered_json j;
    j["data"] = cfg.data_dir;
    j["out"] = cfg.out_dir;
    j["variant"] = cfg.variant;
    j["rescale_table"] = cfg.rescale_table;

    ordered_json s;
    s["image_size"] = cfg.synth.image_size;
    s["n_subjects"] = cfg.synth.n_subjects;
    s["frames_per_subject"] = cfg.synth.frames_per_subject;
    s["relevant_au_ids"] = cfg.synth.relevant_au_ids;
    s["noise_sigma"] = cfg.synth.noise_sigma;
    s["seed"] = cfg.synth.seed;
    j["synth"] = s;

    ordered_json m;
    m["conv_channels"] = cfg.model.conv_channels;
    m["kernel"] = cfg.model.kernel;
    m["stride"] = cfg.model.stride;
    m["bottleneck_dim"] = cfg.model.bottleneck_dim;
    m["image_h"] = cfg.model.image_h;
    m["image_w"] = cfg.model.image_w;
    j["model"] = m;

    ordered_json t;
    t["lr_global"] = cfg.train.lr_global;
    t["lr_local"] = cfg.train.lr_local;
    t["lr_finetune"] = cfg.train.lr_finetune;
    t["beta"] = cfg.train.beta;
    t["alpha"] = cfg.train.alpha;
    t["batch_size"] = cfg.train.batch_size;
    t["alt_steps"] = cfg.train.alt_steps;
    t["finetune_steps"] = cfg.train.finetune_steps;
    t["seed"] = cfg.train.seed;
    t["emd_bins"] = cfg.train.emd_bins;
    t["patch_half"] = cfg.train.patch_half;
    t["lambda_center"] = cfg.train.lambda_center;
    t["verbatim_loss_signs"] = cfg.train.verbatim_loss_signs;
    t["finetune_all"] = cfg.train.finetune_all;
    j["train"] = t;

    return j.dump(2) + "\n";
}

void write_config_echo(const std::string& out_dir, const RunConfig& cfg) {
    std::filesystem::create_directories(out_dir);
    const std::string path = out_dir + "/config.echo.json";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write config echo: " + path);
    out << config_echo(cfg);
}

}  // namespace sspain
