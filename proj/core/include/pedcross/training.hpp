#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pedcross/data.hpp"
#include "pedcross/metrics.hpp"
#include "pedcross/model.hpp"

namespace pedcross {

struct LossWeights {
    double lambda_cls = 0.8;
    double lambda_reg = 1.8;
};

// -[y log p + (1-y) log(1-p)] with p clamped to [1e-7, 1 - 1e-7].
Tensor bce_loss(const Tensor& p, int y, Tape* tape = nullptr);

// Mean squared error over all entries, so loss weights do not depend on
// the target sequence length.
Tensor l2_traj_loss(const Tensor& pred, const Tensor& target, Tape* tape = nullptr);

Tensor ted_loss(const Tensor& p, int y, const Tensor& pred, const Tensor& target,
                const LossWeights& w, Tape* tape = nullptr);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a fixed set of parameter tensors. The moment
// buffers are addressable by parameter index for checkpointing.
class AdamState {
public:
    AdamState() = default;
    AdamState(std::vector<Tensor> params, AdamConfig cfg);

    void step();  // applies one update from the accumulated grads
    long step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

    struct Moments {
        std::vector<double> m, v;
    };
    std::vector<Moments>& moments() { return moments_; }
    const std::vector<Moments>& moments() const { return moments_; }
    void set_step_count(long t) { step_ = t; }

private:
    std::vector<Tensor> params_;
    std::vector<Moments> moments_;
    AdamConfig cfg_;
    long step_ = 0;
};

// Scales all grads so their global L2 norm is at most max_norm; returns
// the pre-clip norm.
double clip_global_norm(const std::vector<Tensor>& params, double max_norm);

// Model input [obs_len x 4] from a window, normalizing on the fly.
Tensor window_input_tensor(const ObservationWindow& w);

// Teacher-forcing pair for the decoder: y_in is the normalized target
// sequence (boxes M+1..A) and `aligned` the same sequence shifted one
// step, so trajectory row c lines up with aligned row c. Empty aligned
// tensors (tte < 2) mean the regression term is skipped.
struct TeacherPair {
    Tensor y_in;     // [C x 4]
    Tensor aligned;  // [C-1 x 4] or undefined
};
TeacherPair ted_teacher_pair(const ObservationWindow& w);

struct TrainLogEntry {
    int epoch = 0;
    std::string split;  // "train" | "val"
    double loss = 0, accuracy = 0, f1 = 0;
    std::optional<double> auc;
    std::int64_t wall_ms = 0;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_f1 = 0.0;
    long clip_events = 0;
};

struct TrainOptions {
    int epochs = 30;
    int batch_size = 32;
    std::uint64_t seed = 0;
    AdamConfig adam;
    LossWeights loss_weights;
    double clip_norm = 1.0;
    int patience = 10;  // epochs without val-F1 improvement
    double threshold = 0.5;
    int freeze_first_k = 0;  // encoder layers excluded from updates
    bool verbose = false;
    // Optional extra stop condition, checked after each epoch's val pass.
    std::function<bool(int epoch, const TrainResult& so_far)> stop_after_epoch;
};

// Seeded mini-batch training with gradient clipping and best-validation
// parameter retention: on return the model carries the best epoch's
// parameters. Identical (seed, config, data) reproduce identical
// parameters and metric fields; only wall_ms varies.
TrainResult train(ModelParams& model, const std::vector<ObservationWindow>& train_windows,
                  const std::vector<ObservationWindow>& val_windows, const TrainOptions& opt);

// Probabilities and labels over a window set, in order.
struct Predictions {
    std::vector<double> probs;
    std::vector<int> labels;
};
Predictions predict_all(const ModelParams& model, const std::vector<ObservationWindow>& windows);

MetricsReport evaluate(const ModelParams& model, const std::vector<ObservationWindow>& windows,
                       double threshold = 0.5);

// Versioned binary container: manifest (names, shapes, offsets) plus raw
// little-endian 64-bit payloads. Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const ModelParams& model,
                     const AdamState* opt = nullptr, std::uint64_t seed = 0, long step = 0);

struct LoadedCheckpoint {
    ModelParams model;
    std::uint64_t seed = 0;
    long step = 0;
    std::optional<AdamState> optimizer;  // moments restored, unattached config
    std::vector<AdamState::Moments> optimizer_moments;
    bool has_optimizer = false;
    long optimizer_step = 0;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

// Builds a model with target_cfg and transplants every matching-named
// parameter from the source. Mismatches outside the classification head
// raise CheckpointError listing the offending names.
ModelParams transplant_parameters(const ModelParams& source, const ModelConfig& target_cfg,
                                  std::uint64_t init_seed);

// Transfer-learning workflow: transplant then train on the new data.
// With opt.epochs == 0 the returned model reproduces the source outputs.
struct FineTuneResult {
    ModelParams model;
    TrainResult train_result;
};
FineTuneResult fine_tune(const LoadedCheckpoint& source,
                         const std::vector<ObservationWindow>& train_windows,
                         const std::vector<ObservationWindow>& val_windows,
                         const TrainOptions& opt);

// Training log I/O: a header record (the only place timestamps live)
// followed by one record per epoch/split.
void write_training_log(const std::string& path, const std::string& header_json,
                        const std::vector<TrainLogEntry>& entries);

}  // namespace pedcross
