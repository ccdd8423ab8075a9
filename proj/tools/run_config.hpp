#pragma once

#include <cstdint>
#include <string>

#include "pedcross/model.hpp"

namespace pedcross::cli {

struct DataConfig {
    double overlap = 0.6;
    int tte_min = 30, tte_max = 60;
    double train_fraction = 0.7, val_fraction = 0.15;
    int n_pedestrians = 1000;
    double crossing_fraction = 0.25;
    std::string domain = "A";
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double lambda_cls = 0.8, lambda_reg = 1.8;
    double clip_norm = 1.0;
    int patience = 10;
    double threshold = 0.5;
    int freeze_layers = 0;
};

// One structured file drives a whole run; command-line flags override
// individual fields afterwards. Unknown keys are a hard error.
struct RunConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
};

RunConfig load_run_config(const std::string& path);
RunConfig default_run_config();
std::string run_config_json(const RunConfig& cfg);

}  // namespace pedcross::cli
