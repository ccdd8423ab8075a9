#include "pedcross/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

namespace pedcross {

namespace {
namespace op = pedcross::ops;
using nlohmann::ordered_json;

constexpr double kProbClamp = 1e-7;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

}  // namespace

Tensor bce_loss(const Tensor& p, int y, Tape* tape) {
    if (p.size() != 1) throw ShapeError("bce_loss expects a scalar probability, got " + p.shape_str());
    if (y != 0 && y != 1) throw DataError("bce_loss label must be 0 or 1");
    const double raw = p.values()[0];
    if (!std::isfinite(raw)) throw NumericError("bce_loss given a non-finite probability");
    const double pc = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    Tensor out = Tensor::scalar(-(y * std::log(pc) + (1 - y) * std::log(1.0 - pc)));
    if (tape) {
        tape->record([p, out, y, raw, pc] {
            if (!out.has_grad()) return;
            // Zero slope in the clamped region.
            if (raw != pc) return;
            p.grad()[0] += out.grad()[0] * (-(y / pc) + (1 - y) / (1.0 - pc));
        });
    }
    return out;
}

Tensor l2_traj_loss(const Tensor& pred, const Tensor& target, Tape* tape) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("l2_traj_loss shape mismatch: " + pred.shape_str() + " vs " +
                         target.shape_str());
    }
    Tensor diff = op::sub(pred, target, tape);
    return op::scale(op::sum(op::mul(diff, diff, tape), tape), 1.0 / pred.size(), tape);
}

Tensor ted_loss(const Tensor& p, int y, const Tensor& pred, const Tensor& target,
                const LossWeights& w, Tape* tape) {
    if (w.lambda_cls < 0 || w.lambda_reg < 0) throw ConfigError("loss weights must be >= 0");
    Tensor cls = op::scale(bce_loss(p, y, tape), w.lambda_cls, tape);
    Tensor reg = op::scale(l2_traj_loss(pred, target, tape), w.lambda_reg, tape);
    return op::add(cls, reg, tape);
}

AdamState::AdamState(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    moments_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto n = params_[i].values().size();
        moments_[i].m.assign(n, 0.0);
        moments_[i].v.assign(n, 0.0);
    }
}

void AdamState::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;
        auto& vals = p.values();
        const auto& g = p.grad();
        auto& m = moments_[i].m;
        auto& v = moments_[i].v;
        for (std::size_t k = 0; k < vals.size(); ++k) {
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            const double m_hat = m[k] / bc1;
            const double v_hat = v[k] / bc2;
            vals[k] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
    }
}

double clip_global_norm(const std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const Tensor& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double factor = max_norm / norm;
        for (const Tensor& p : params) {
            if (!p.has_grad()) continue;
            for (double& g : p.grad()) g *= factor;
        }
    }
    return norm;
}

Tensor window_input_tensor(const ObservationWindow& w) {
    const ObservationWindow* src = &w;
    ObservationWindow scratch;
    if (!w.normalized) {
        scratch = normalize(w, w.image_w, w.image_h);
        src = &scratch;
    }
    Tensor x({static_cast<int>(src->obs.size()), 4});
    for (std::size_t i = 0; i < src->obs.size(); ++i) {
        const BoundingBox& b = src->obs[i];
        x.at(static_cast<int>(i), 0) = b.x1;
        x.at(static_cast<int>(i), 1) = b.y1;
        x.at(static_cast<int>(i), 2) = b.x2;
        x.at(static_cast<int>(i), 3) = b.y2;
    }
    return x;
}

TeacherPair ted_teacher_pair(const ObservationWindow& w) {
    if (w.target.empty()) throw DataError("window has no target sequence for the decoder");
    const ObservationWindow* src = &w;
    ObservationWindow scratch;
    if (!w.normalized) {
        scratch = normalize(w, w.image_w, w.image_h);
        src = &scratch;
    }
    const int c = static_cast<int>(src->target.size());
    TeacherPair pair;
    pair.y_in = Tensor({c, 4});
    for (int i = 0; i < c; ++i) {
        const BoundingBox& b = src->target[static_cast<std::size_t>(i)];
        pair.y_in.at(i, 0) = b.x1;
        pair.y_in.at(i, 1) = b.y1;
        pair.y_in.at(i, 2) = b.x2;
        pair.y_in.at(i, 3) = b.y2;
    }
    if (c >= 2) {
        pair.aligned = Tensor({c - 1, 4});
        for (int i = 1; i < c; ++i) {
            const BoundingBox& b = src->target[static_cast<std::size_t>(i)];
            pair.aligned.at(i - 1, 0) = b.x1;
            pair.aligned.at(i - 1, 1) = b.y1;
            pair.aligned.at(i - 1, 2) = b.x2;
            pair.aligned.at(i - 1, 3) = b.y2;
        }
    }
    return pair;
}

namespace {

int window_label(const ObservationWindow& w) {
    return w.label == CrossingLabel::kCrossing ? 1 : 0;
}

// Forward + loss for one window; returns (probability, loss).
std::pair<Tensor, Tensor> window_loss(const ModelParams& model, const ObservationWindow& w,
                                      const LossWeights& lw, Tape* tape) {
    Tensor x = window_input_tensor(w);
    const int y = window_label(w);
    if (model.config.arch == Arch::kTed) {
        TeacherPair pair = ted_teacher_pair(w);
        TedOutput out = forward_ted(model, x, pair.y_in, tape);
        if (pair.aligned.defined()) {
            Tensor pred = op::slice_rows(out.trajectory, 0, pair.aligned.rows(), tape);
            return {out.probability, ted_loss(out.probability, y, pred, pair.aligned, lw, tape)};
        }
        return {out.probability, op::scale(bce_loss(out.probability, y, tape), lw.lambda_cls, tape)};
    }
    Tensor p = forward_probability(model, x, tape);
    return {p, bce_loss(p, y, tape)};
}

double validation_loss(const ModelParams& model, const ObservationWindow& w,
                       const LossWeights& lw) {
    if (model.config.arch == Arch::kTed && w.target.empty()) {
        Tensor p = forward_probability(model, window_input_tensor(w), nullptr);
        return bce_loss(p, window_label(w), nullptr).item() * lw.lambda_cls;
    }
    return window_loss(model, w, lw, nullptr).second.item();
}

std::vector<Tensor> trainable_parameters(const ModelParams& model, int freeze_first_k) {
    std::vector<Tensor> out;
    for (const auto& [name, t] : model.named_parameters()) {
        bool frozen = false;
        for (int k = 0; k < freeze_first_k; ++k) {
            if (name.rfind("enc." + std::to_string(k) + ".", 0) == 0) {
                frozen = true;
                break;
            }
        }
        if (!frozen) out.push_back(t);
    }
    return out;
}

TrainLogEntry make_entry(int epoch, const std::string& split, double loss,
                         const MetricsReport& report, std::int64_t wall_ms) {
    TrainLogEntry e;
    e.epoch = epoch;
    e.split = split;
    e.loss = loss;
    e.accuracy = report.accuracy;
    e.f1 = report.f1;
    e.auc = report.auc;
    e.wall_ms = wall_ms;
    return e;
}

}  // namespace

Predictions predict_all(const ModelParams& model, const std::vector<ObservationWindow>& windows) {
    Predictions out;
    out.probs.reserve(windows.size());
    out.labels.reserve(windows.size());
    for (const ObservationWindow& w : windows) {
        out.probs.push_back(forward_probability(model, window_input_tensor(w), nullptr).item());
        out.labels.push_back(window_label(w));
    }
    return out;
}

MetricsReport evaluate(const ModelParams& model, const std::vector<ObservationWindow>& windows,
                       double threshold) {
    Predictions pred = predict_all(model, windows);
    return classification_metrics(pred.probs, pred.labels, threshold);
}

TrainResult train(ModelParams& model, const std::vector<ObservationWindow>& train_windows,
                  const std::vector<ObservationWindow>& val_windows, const TrainOptions& opt) {
    if (opt.epochs < 0 || opt.batch_size < 1) throw ConfigError("bad epoch/batch configuration");
    if (opt.freeze_first_k < 0 || opt.freeze_first_k > model.config.n_layers) {
        throw ConfigError("freeze_first_k must be within the encoder depth");
    }
    TrainResult result;
    if (opt.epochs == 0) return result;
    if (train_windows.empty()) throw DataError("empty training split");

    const auto all_params = model.named_parameters();
    std::vector<Tensor> all_tensors;
    for (const auto& [name, t] : all_params) all_tensors.push_back(t);
    std::vector<Tensor> trainable = trainable_parameters(model, opt.freeze_first_k);
    AdamState adam(trainable, opt.adam);

    std::mt19937_64 shuffle_rng(opt.seed);
    std::mt19937_64 dropout_rng(opt.seed ^ 0x64726f70ULL);
    std::vector<std::size_t> order(train_windows.size());
    std::iota(order.begin(), order.end(), 0);

    auto best_snapshot = snapshot_values(model);
    double best_f1 = -1.0;
    int best_epoch = 0;
    int epochs_since_best = 0;

    Tape tape;
    if (model.config.dropout > 0.0) tape.set_rng(&dropout_rng);

    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        std::vector<double> probs;
        std::vector<int> labels;
        probs.reserve(order.size());
        labels.reserve(order.size());
        double loss_sum = 0.0;

        std::size_t pos = 0;
        while (pos < order.size()) {
            const std::size_t batch_end =
                std::min(order.size(), pos + static_cast<std::size_t>(opt.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(batch_end - pos);
            for (std::size_t b = pos; b < batch_end; ++b) {
                const ObservationWindow& w = train_windows[order[b]];
                auto [p, loss] = window_loss(model, w, opt.loss_weights, &tape);
                tape.backward(op::scale(loss, inv_batch, &tape));
                tape.clear();
                probs.push_back(p.item());
                labels.push_back(window_label(w));
                loss_sum += loss.item();
            }
            const double norm = clip_global_norm(trainable, opt.clip_norm);
            if (norm > opt.clip_norm) ++result.clip_events;
            adam.step();
            for (const Tensor& t : all_tensors) t.zero_grad();
            pos = batch_end;
        }

        const auto t1 = std::chrono::steady_clock::now();
        const auto train_ms =
            std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
        MetricsReport train_report = classification_metrics(probs, labels, opt.threshold);
        result.log.push_back(make_entry(epoch, "train", loss_sum / static_cast<double>(order.size()),
                                        train_report, train_ms));

        double val_f1 = train_report.f1;
        if (!val_windows.empty()) {
            double val_loss = 0.0;
            for (const ObservationWindow& w : val_windows) {
                val_loss += validation_loss(model, w, opt.loss_weights);
            }
            val_loss /= static_cast<double>(val_windows.size());
            MetricsReport val_report = evaluate(model, val_windows, opt.threshold);
            const auto t2 = std::chrono::steady_clock::now();
            result.log.push_back(make_entry(
                epoch, "val", val_loss, val_report,
                std::chrono::duration_cast<std::chrono::milliseconds>(t2 - t1).count()));
            val_f1 = val_report.f1;
        }

        if (opt.verbose) {
            const TrainLogEntry& last = result.log.back();
            std::fprintf(stderr, "epoch %3d %-5s loss %.4f acc %.4f f1 %.4f\n", epoch,
                         last.split.c_str(), last.loss, last.accuracy, last.f1);
        }

        result.epochs_run = epoch;
        if (val_f1 > best_f1) {
            best_f1 = val_f1;
            best_epoch = epoch;
            best_snapshot = snapshot_values(model);
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
        }
        if (opt.stop_after_epoch && opt.stop_after_epoch(epoch, result)) break;
        if (epochs_since_best >= opt.patience) break;
    }

    restore_values(model, best_snapshot);
    result.best_epoch = best_epoch;
    result.best_val_f1 = best_f1;
    return result;
}

namespace {

ordered_json config_to_json(const ModelConfig& cfg) {
    ordered_json j;
    j["arch"] = arch_name(cfg.arch);
    j["d_model"] = cfg.d_model;
    j["n_heads"] = cfg.n_heads;
    j["n_layers"] = cfg.n_layers;
    j["d_ffn"] = cfg.d_ffn;
    j["d_cls"] = cfg.d_cls;
    j["obs_len"] = cfg.obs_len;
    j["pool_window"] = cfg.pool_window;
    j["pool_stride"] = cfg.pool_stride;
    j["min_pooled_len"] = cfg.min_pooled_len;
    j["pe_len"] = cfg.pe_len;
    j["ln_eps"] = cfg.ln_eps;
    j["dropout"] = cfg.dropout;
    j["separate_decoder_embedding"] = cfg.separate_decoder_embedding;
    return j;
}

ModelConfig config_from_json(const ordered_json& j) {
    ModelConfig cfg;
    cfg.arch = arch_from_name(j.at("arch").get<std::string>());
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.d_ffn = j.at("d_ffn").get<int>();
    cfg.d_cls = j.at("d_cls").get<int>();
    cfg.obs_len = j.at("obs_len").get<int>();
    cfg.pool_window = j.at("pool_window").get<int>();
    cfg.pool_stride = j.at("pool_stride").get<int>();
    cfg.min_pooled_len = j.at("min_pooled_len").get<int>();
    cfg.pe_len = j.at("pe_len").get<int>();
    cfg.ln_eps = j.at("ln_eps").get<double>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.separate_decoder_embedding = j.at("separate_decoder_embedding").get<bool>();
    cfg.validate();
    return cfg;
}

constexpr char kCheckpointMagic[4] = {'P', 'X', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& model, const AdamState* opt,
                     std::uint64_t seed, long step) {
    const auto params = model.named_parameters();

    ordered_json manifest;
    manifest["version"] = kCheckpointVersion;
    manifest["seed"] = seed;
    manifest["step"] = step;
    manifest["config"] = config_to_json(model.config);
    ordered_json names = ordered_json::array();
    std::uint64_t offset = 0;  // in doubles
    for (const auto& [name, t] : params) {
        ordered_json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        entry["offset"] = offset;
        offset += static_cast<std::uint64_t>(t.size());
        names.push_back(entry);
    }
    manifest["params"] = names;
    if (opt) {
        ordered_json oj;
        oj["step"] = opt->step_count();
        oj["moment_offset"] = offset;
        manifest["optimizer"] = oj;
    } else {
        manifest["optimizer"] = nullptr;
    }

    const std::string mtext = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
    out.write(kCheckpointMagic, 4);
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t mlen = mtext.size();
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const auto& [name, t] : params) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.values().size() * sizeof(double)));
    }
    if (opt) {
        for (const auto& mom : opt->moments()) {
            out.write(reinterpret_cast<const char*>(mom.m.data()),
                      static_cast<std::streamsize>(mom.m.size() * sizeof(double)));
            out.write(reinterpret_cast<const char*>(mom.v.data()),
                      static_cast<std::streamsize>(mom.v.size() * sizeof(double)));
        }
    }
    if (!out) throw CheckpointError("write failed for '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kCheckpointMagic, 4)) {
        throw CheckpointError("'" + path + "' is not a checkpoint file");
    }
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    std::uint64_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    std::string mtext(mlen, '\0');
    in.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (!in) throw CheckpointError("truncated checkpoint manifest");
    ordered_json manifest = ordered_json::parse(mtext, nullptr, false);
    if (manifest.is_discarded()) throw CheckpointError("corrupt checkpoint manifest");

    LoadedCheckpoint loaded;
    loaded.seed = manifest.at("seed").get<std::uint64_t>();
    loaded.step = manifest.at("step").get<long>();
    const ModelConfig cfg = config_from_json(manifest.at("config"));
    loaded.model = init_model(cfg, 0);

    const auto params = loaded.model.named_parameters();
    const auto& entries = manifest.at("params");
    if (entries.size() != params.size()) {
        throw CheckpointError("checkpoint parameter count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = entries[i];
        if (entry.at("name").get<std::string>() != params[i].first) {
            throw CheckpointError("checkpoint manifest order mismatch at '" + params[i].first + "'");
        }
        const auto shape = entry.at("shape").get<std::vector<int>>();
        if (shape != params[i].second.shape()) {
            throw CheckpointError("checkpoint shape mismatch for '" + params[i].first + "'");
        }
        auto& vals = params[i].second.values();
        in.read(reinterpret_cast<char*>(vals.data()),
                static_cast<std::streamsize>(vals.size() * sizeof(double)));
        if (!in) throw CheckpointError("truncated checkpoint payload at '" + params[i].first + "'");
    }
    for (const auto& [name, t] : params) check_finite(t, "checkpoint parameter");

    if (!manifest.at("optimizer").is_null()) {
        loaded.has_optimizer = true;
        loaded.optimizer_step = manifest.at("optimizer").at("step").get<long>();
        loaded.optimizer_moments.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto n = params[i].second.values().size();
            loaded.optimizer_moments[i].m.resize(n);
            loaded.optimizer_moments[i].v.resize(n);
            in.read(reinterpret_cast<char*>(loaded.optimizer_moments[i].m.data()),
                    static_cast<std::streamsize>(n * sizeof(double)));
            in.read(reinterpret_cast<char*>(loaded.optimizer_moments[i].v.data()),
                    static_cast<std::streamsize>(n * sizeof(double)));
            if (!in) throw CheckpointError("truncated optimizer payload");
        }
    }
    return loaded;
}

ModelParams transplant_parameters(const ModelParams& source, const ModelConfig& target_cfg,
                                  std::uint64_t init_seed) {
    ModelParams target = init_model(target_cfg, init_seed);
    const auto src = source.named_parameters();
    const auto dst = target.named_parameters();

    std::vector<std::string> mismatched;
    auto is_head = [](const std::string& name) { return name.rfind("head.", 0) == 0; };
    auto find_src = [&](const std::string& name) -> const Tensor* {
        for (const auto& [sname, st] : src) {
            if (sname == name) return &st;
        }
        return nullptr;
    };

    for (const auto& [name, t] : dst) {
        const Tensor* s = find_src(name);
        if (s == nullptr || s->shape() != t.shape()) {
            if (!is_head(name)) mismatched.push_back(name);
            continue;  // head stays freshly initialized
        }
        t.values() = s->values();
    }
    for (const auto& [name, st] : src) {
        (void)st;
        const bool present = std::any_of(dst.begin(), dst.end(),
                                         [&](const auto& d) { return d.first == name; });
        if (!present && !is_head(name)) mismatched.push_back(name);
    }

    if (!mismatched.empty()) {
        std::string list;
        for (const std::string& name : mismatched) {
            if (!list.empty()) list += ", ";
            list += name;
        }
        throw CheckpointError("incompatible architectures; mismatched parameters: " + list);
    }
    return target;
}

FineTuneResult fine_tune(const LoadedCheckpoint& source,
                         const std::vector<ObservationWindow>& train_windows,
                         const std::vector<ObservationWindow>& val_windows,
                         const TrainOptions& opt) {
    FineTuneResult result;
    result.model = transplant_parameters(source.model, source.model.config, opt.seed);
    result.train_result = train(result.model, train_windows, val_windows, opt);
    return result;
}

void write_training_log(const std::string& path, const std::string& header_json,
                        const std::vector<TrainLogEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << header_json << "\n";
    for (const TrainLogEntry& e : entries) {
        out << "{\"epoch\":" << e.epoch << ",\"split\":\"" << e.split << "\",\"loss\":" << fmt6(e.loss)
            << ",\"acc\":" << fmt6(e.accuracy) << ",\"f1\":" << fmt6(e.f1)
            << ",\"auc\":" << (e.auc ? fmt6(*e.auc) : "null") << ",\"wall_ms\":" << e.wall_ms
            << "}\n";
    }
}

}  // namespace pedcross
