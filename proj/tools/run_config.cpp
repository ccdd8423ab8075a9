#include "run_config.hpp"

#include <fstream>

#include "json.hpp"
#include "pedcross/error.hpp"

namespace pedcross::cli {

namespace {

using nlohmann::ordered_json;

void check_keys(const ordered_json& j, const std::vector<std::string>& allowed,
                const std::string& section) {
    for (const auto& kv : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), kv.key()) == allowed.end()) {
            throw ConfigError("unknown config key '" + (section.empty() ? kv.key() : section + "." + kv.key()) + "'");
        }
    }
}

template <typename T>
void maybe(const ordered_json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const ordered_json::exception&) {
            throw ConfigError(std::string("config key '") + key + "' has the wrong type");
        }
    }
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    ordered_json j = ordered_json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("config file '" + path + "' is not a JSON object");
    check_keys(j, {"seed", "model", "train", "data"}, "");

    RunConfig cfg;
    maybe(j, "seed", cfg.seed);

    if (j.contains("model")) {
        const ordered_json& m = j.at("model");
        check_keys(m,
                   {"arch", "d_model", "n_heads", "n_layers", "d_ffn", "d_cls", "obs_len",
                    "pool_window", "pool_stride", "min_pooled_len", "pe_len", "ln_eps", "dropout",
                    "separate_decoder_embedding"},
                   "model");
        std::string arch = arch_name(cfg.model.arch);
        maybe(m, "arch", arch);
        cfg.model.arch = arch_from_name(arch);
        maybe(m, "d_model", cfg.model.d_model);
        maybe(m, "n_heads", cfg.model.n_heads);
        maybe(m, "n_layers", cfg.model.n_layers);
        maybe(m, "d_ffn", cfg.model.d_ffn);
        maybe(m, "d_cls", cfg.model.d_cls);
        maybe(m, "obs_len", cfg.model.obs_len);
        maybe(m, "pool_window", cfg.model.pool_window);
        maybe(m, "pool_stride", cfg.model.pool_stride);
        maybe(m, "min_pooled_len", cfg.model.min_pooled_len);
        maybe(m, "pe_len", cfg.model.pe_len);
        maybe(m, "ln_eps", cfg.model.ln_eps);
        maybe(m, "dropout", cfg.model.dropout);
        maybe(m, "separate_decoder_embedding", cfg.model.separate_decoder_embedding);
    }

    if (j.contains("train")) {
        const ordered_json& t = j.at("train");
        check_keys(t,
                   {"epochs", "batch_size", "lr", "beta1", "beta2", "adam_eps", "lambda_cls",
                    "lambda_reg", "clip_norm", "patience", "threshold", "freeze_layers"},
                   "train");
        maybe(t, "epochs", cfg.train.epochs);
        maybe(t, "batch_size", cfg.train.batch_size);
        maybe(t, "lr", cfg.train.lr);
        maybe(t, "beta1", cfg.train.beta1);
        maybe(t, "beta2", cfg.train.beta2);
        maybe(t, "adam_eps", cfg.train.adam_eps);
        maybe(t, "lambda_cls", cfg.train.lambda_cls);
        maybe(t, "lambda_reg", cfg.train.lambda_reg);
        maybe(t, "clip_norm", cfg.train.clip_norm);
        maybe(t, "patience", cfg.train.patience);
        maybe(t, "threshold", cfg.train.threshold);
        maybe(t, "freeze_layers", cfg.train.freeze_layers);
    }

    if (j.contains("data")) {
        const ordered_json& d = j.at("data");
        check_keys(d,
                   {"overlap", "tte_min", "tte_max", "train_fraction", "val_fraction",
                    "n_pedestrians", "crossing_fraction", "domain"},
                   "data");
        maybe(d, "overlap", cfg.data.overlap);
        maybe(d, "tte_min", cfg.data.tte_min);
        maybe(d, "tte_max", cfg.data.tte_max);
        maybe(d, "train_fraction", cfg.data.train_fraction);
        maybe(d, "val_fraction", cfg.data.val_fraction);
        maybe(d, "n_pedestrians", cfg.data.n_pedestrians);
        maybe(d, "crossing_fraction", cfg.data.crossing_fraction);
        maybe(d, "domain", cfg.data.domain);
    }
    return cfg;
}

std::string run_config_json(const RunConfig& cfg) {
    ordered_json j;
    j["seed"] = cfg.seed;
    ordered_json m;
    m["arch"] = arch_name(cfg.model.arch);
    m["d_model"] = cfg.model.d_model;
    m["n_heads"] = cfg.model.n_heads;
    m["n_layers"] = cfg.model.n_layers;
    m["d_ffn"] = cfg.model.d_ffn;
    m["d_cls"] = cfg.model.d_cls;
    m["obs_len"] = cfg.model.obs_len;
    m["pool_window"] = cfg.model.pool_window;
    m["pool_stride"] = cfg.model.pool_stride;
    m["min_pooled_len"] = cfg.model.min_pooled_len;
    m["pe_len"] = cfg.model.pe_len;
    m["ln_eps"] = cfg.model.ln_eps;
    m["dropout"] = cfg.model.dropout;
    m["separate_decoder_embedding"] = cfg.model.separate_decoder_embedding;
    j["model"] = m;
    ordered_json t;
    t["epochs"] = cfg.train.epochs;
    t["batch_size"] = cfg.train.batch_size;
    t["lr"] = cfg.train.lr;
    t["beta1"] = cfg.train.beta1;
    t["beta2"] = cfg.train.beta2;
    t["adam_eps"] = cfg.train.adam_eps;
    t["lambda_cls"] = cfg.train.lambda_cls;
    t["lambda_reg"] = cfg.train.lambda_reg;
    t["clip_norm"] = cfg.train.clip_norm;
    t["patience"] = cfg.train.patience;
    t["threshold"] = cfg.train.threshold;
    t["freeze_layers"] = cfg.train.freeze_layers;
    j["train"] = t;
    ordered_json d;
    d["overlap"] = cfg.data.overlap;
    d["tte_min"] = cfg.data.tte_min;
    d["tte_max"] = cfg.data.tte_max;
    d["train_fraction"] = cfg.data.train_fraction;
    d["val_fraction"] = cfg.data.val_fraction;
    d["n_pedestrians"] = cfg.data.n_pedestrians;
    d["crossing_fraction"] = cfg.data.crossing_fraction;
    d["domain"] = cfg.data.domain;
    j["data"] = d;
    return j.dump();
}

}  // namespace pedcross::cli
