#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pedcross/data.hpp"
#include "pedcross/gradcheck_gate.hpp"
#include "pedcross/metrics.hpp"
#include "pedcross/model.hpp"
#include "pedcross/training.hpp"
#include "run_config.hpp"

namespace {

namespace fs = std::filesystem;
using namespace pedcross;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitGradGate = 5;
constexpr double kGradGateThreshold = 1e-3;

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
};

cli::RunConfig resolve_config(const CommonArgs& args) {
    cli::RunConfig cfg =
        args.config_path.empty() ? cli::default_run_config() : cli::load_run_config(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    return cfg;
}

void echo_config(const cli::RunConfig& cfg) {
    std::cout << "run-config: " << cli::run_config_json(cfg) << "\n";
}

std::string iso_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

TrainOptions train_options(const cli::RunConfig& cfg) {
    TrainOptions opt;
    opt.epochs = cfg.train.epochs;
    opt.batch_size = cfg.train.batch_size;
    opt.seed = cfg.seed;
    opt.adam = {cfg.train.lr, cfg.train.beta1, cfg.train.beta2, cfg.train.adam_eps};
    opt.loss_weights = {cfg.train.lambda_cls, cfg.train.lambda_reg};
    opt.clip_norm = cfg.train.clip_norm;
    opt.patience = cfg.train.patience;
    opt.threshold = cfg.train.threshold;
    opt.freeze_first_k = cfg.train.freeze_layers;
    opt.verbose = true;
    return opt;
}

void check_window_length(const std::vector<ObservationWindow>& windows, int obs_len,
                         const std::string& what) {
    for (const ObservationWindow& w : windows) {
        if (static_cast<int>(w.obs.size()) != obs_len) {
            throw DataError(what + " window length " + std::to_string(w.obs.size()) +
                            " does not match the model's obs_len " + std::to_string(obs_len));
        }
    }
}

int cmd_gen_data(const CommonArgs& common, const std::string& out_dir,
                 const std::optional<std::string>& domain, const std::optional<int>& n) {
    cli::RunConfig cfg = resolve_config(common);
    if (domain) cfg.data.domain = *domain;
    if (n) cfg.data.n_pedestrians = *n;
    echo_config(cfg);

    ScenarioConfig scenario = domain_from_name(cfg.data.domain) == Domain::kA
                                  ? ScenarioConfig::domain_a(cfg.data.n_pedestrians, cfg.seed)
                                  : ScenarioConfig::domain_b(cfg.data.n_pedestrians, cfg.seed);
    scenario.crossing_fraction = cfg.data.crossing_fraction;

    const std::vector<Track> tracks = generate_synthetic(scenario);
    TrackSplit split = split_tracks(tracks, {cfg.data.train_fraction, cfg.data.val_fraction},
                                    cfg.seed);

    SliceOptions train_slice{cfg.model.obs_len, cfg.data.overlap, cfg.data.tte_min,
                             cfg.data.tte_max, true};
    SliceOptions eval_slice{cfg.model.obs_len, 0.0, cfg.data.tte_min, cfg.data.tte_max, true};
    SliceOptions test_slice{cfg.model.obs_len, 0.0, cfg.data.tte_min, cfg.data.tte_max, false};

    auto slice_all = [](const std::vector<Track>& ts, const SliceOptions& opt) {
        std::vector<ObservationWindow> windows;
        for (const Track& t : ts) {
            auto sliced = slice_track(t, opt);
            std::move(sliced.begin(), sliced.end(), std::back_inserter(windows));
        }
        return windows;
    };

    std::vector<ObservationWindow> train_windows =
        balance_training_split(slice_all(split.train, train_slice), cfg.seed);
    std::vector<ObservationWindow> val_windows = slice_all(split.val, eval_slice);
    std::vector<ObservationWindow> test_windows = slice_all(split.test, test_slice);

    fs::create_directories(out_dir);
    write_tracks((fs::path(out_dir) / "tracks.jsonl").string(), tracks);
    write_tracks((fs::path(out_dir) / "test_tracks.jsonl").string(), split.test);
    write_dataset((fs::path(out_dir) / "train.jsonl").string(), train_windows);
    write_dataset((fs::path(out_dir) / "val.jsonl").string(), val_windows);
    write_dataset((fs::path(out_dir) / "test.jsonl").string(), test_windows);

    std::printf("generated %zu tracks -> %zu train / %zu val / %zu test windows in %s\n",
                tracks.size(), train_windows.size(), val_windows.size(), test_windows.size(),
                out_dir.c_str());
    return kExitOk;
}

int cmd_train(const CommonArgs& common, const std::optional<std::string>& arch,
              const std::string& data_dir, const std::string& out_checkpoint,
              std::string log_path, const std::optional<int>& epochs) {
    cli::RunConfig cfg = resolve_config(common);
    if (arch) cfg.model.arch = arch_from_name(*arch);
    if (epochs) cfg.train.epochs = *epochs;
    echo_config(cfg);

    const auto train_windows = read_dataset((fs::path(data_dir) / "train.jsonl").string());
    const auto val_windows = read_dataset((fs::path(data_dir) / "val.jsonl").string());
    check_window_length(train_windows, cfg.model.obs_len, "train");
    check_window_length(val_windows, cfg.model.obs_len, "val");

    ModelParams model = init_model(cfg.model, cfg.seed);
    TrainResult result = train(model, train_windows, val_windows, train_options(cfg));

    save_checkpoint(out_checkpoint, model, nullptr, cfg.seed, result.epochs_run);
    if (log_path.empty()) log_path = out_checkpoint + ".log.jsonl";
    const std::string header = "{\"type\":\"header\",\"started_at\":\"" + iso_now() +
                               "\",\"config\":" + cli::run_config_json(cfg) + "}";
    write_training_log(log_path, header, result.log);

    std::printf("trained %s for %d epochs (best epoch %d, val f1 %.4f, %ld clip events)\n",
                arch_name(cfg.model.arch).c_str(), result.epochs_run, result.best_epoch,
                result.best_val_f1, result.clip_events);
    std::printf("checkpoint: %s\nlog: %s\n", out_checkpoint.c_str(), log_path.c_str());
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_file,
             const std::string& report_path, double threshold) {
    LoadedCheckpoint loaded = load_checkpoint(checkpoint);
    const auto windows = read_dataset(data_file);
    check_window_length(windows, loaded.model.config.obs_len, "eval");

    MetricsReport report = evaluate(loaded.model, windows, threshold);
    if (!report.auc) {
        throw DataError("evaluation set contains a single class; AUC is undefined");
    }
    if (!report_path.empty()) write_metrics_report(report_path, report);
    std::printf("eval %s on %s\n%s", arch_name(loaded.model.config.arch).c_str(),
                data_file.c_str(), metrics_table(report).c_str());
    if (!report_path.empty()) std::printf("report: %s\n", report_path.c_str());
    return kExitOk;
}

int cmd_finetune(const CommonArgs& common, const std::string& checkpoint,
                 const std::string& data_dir, int freeze_layers,
                 const std::string& out_checkpoint, std::string log_path,
                 const std::optional<int>& epochs) {
    cli::RunConfig cfg = resolve_config(common);
    if (epochs) cfg.train.epochs = *epochs;
    cfg.train.freeze_layers = freeze_layers;

    LoadedCheckpoint source = load_checkpoint(checkpoint);
    cfg.model = source.model.config;
    echo_config(cfg);

    const auto train_windows = read_dataset((fs::path(data_dir) / "train.jsonl").string());
    const auto val_windows = read_dataset((fs::path(data_dir) / "val.jsonl").string());
    check_window_length(train_windows, cfg.model.obs_len, "train");
    check_window_length(val_windows, cfg.model.obs_len, "val");

    FineTuneResult result = fine_tune(source, train_windows, val_windows, train_options(cfg));

    save_checkpoint(out_checkpoint, result.model, nullptr, cfg.seed,
                    result.train_result.epochs_run);
    if (log_path.empty()) log_path = out_checkpoint + ".log.jsonl";
    const std::string header = "{\"type\":\"header\",\"started_at\":\"" + iso_now() +
                               "\",\"config\":" + cli::run_config_json(cfg) + "}";
    write_training_log(log_path, header, result.train_result.log);

    std::printf("fine-tuned for %d epochs (best epoch %d, val f1 %.4f)\ncheckpoint: %s\n",
                result.train_result.epochs_run, result.train_result.best_epoch,
                result.train_result.best_val_f1, out_checkpoint.c_str());
    return kExitOk;
}

int cmd_tte_sweep(const std::string& checkpoint, const std::string& tracks_file,
                  const std::string& bands_spec, const std::string& report_path) {
    LoadedCheckpoint loaded = load_checkpoint(checkpoint);
    const auto tracks = read_tracks(tracks_file);
    const auto bands = parse_bands(bands_spec);

    std::vector<HorizonRow> rows;
    for (auto& [band, windows] : tte_sweep_slices(tracks, loaded.model.config.obs_len, bands)) {
        HorizonRow row;
        row.tte_lo = band.lo;
        row.tte_hi = band.hi;
        if (!windows.empty()) {
            row.report = evaluate(loaded.model, windows, 0.5);
        }
        rows.push_back(std::move(row));
    }
    if (!report_path.empty()) write_horizon_report(report_path, rows);
    std::printf("tte-sweep over %zu tracks\n%s", tracks.size(), horizon_table(rows).c_str());
    if (!report_path.empty()) std::printf("report: %s\n", report_path.c_str());
    return kExitOk;
}

int cmd_gradcheck(const std::string& arch, std::uint64_t seed, double eps, int coords) {
    GradCheckReport report = run_gradcheck_gate(arch_from_name(arch), seed, eps, coords);
    std::printf("%s", gradcheck_report_text(report).c_str());
    if (report.max_rel_err > kGradGateThreshold) {
        std::printf("FAIL: max relative error %.3e exceeds %.0e\n", report.max_rel_err,
                    kGradGateThreshold);
        return kExitGradGate;
    }
    std::printf("OK: max relative error %.3e within %.0e\n", report.max_rel_err,
                kGradGateThreshold);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pedestrian crossing anticipation toolchain"};
    app.require_subcommand(1);

    CommonArgs common;
    int rc = kExitOk;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate synthetic tracks and window datasets");
    std::string gen_out;
    std::optional<std::string> gen_domain;
    std::optional<int> gen_n;
    gen->add_option("--config", common.config_path, "run config JSON");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--domain", gen_domain, "scenario domain (A or B)");
    gen->add_option("--seed", common.seed, "seed override");
    gen->add_option("--n", gen_n, "number of pedestrians override");
    gen->callback([&] { rc = cmd_gen_data(common, gen_out, gen_domain, gen_n); });

    // train
    auto* tr = app.add_subcommand("train", "train a model on a window dataset");
    std::optional<std::string> tr_arch;
    std::string tr_data, tr_out, tr_log;
    std::optional<int> tr_epochs;
    tr->add_option("--config", common.config_path, "run config JSON");
    tr->add_option("--arch", tr_arch, "architecture (teo, tep, ted)");
    tr->add_option("--data", tr_data, "dataset directory with train.jsonl/val.jsonl")->required();
    tr->add_option("--out-checkpoint", tr_out, "checkpoint output path")->required();
    tr->add_option("--log", tr_log, "training log path");
    tr->add_option("--seed", common.seed, "seed override");
    tr->add_option("--epochs", tr_epochs, "epoch override");
    tr->callback([&] { rc = cmd_train(common, tr_arch, tr_data, tr_out, tr_log, tr_epochs); });

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a window file");
    std::string ev_ckpt, ev_data, ev_report;
    double ev_threshold = 0.5;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "window dataset file")->required();
    ev->add_option("--report", ev_report, "metrics report output path");
    ev->add_option("--threshold", ev_threshold, "decision threshold");
    ev->callback([&] { rc = cmd_eval(ev_ckpt, ev_data, ev_report, ev_threshold); });

    // finetune
    auto* ft = app.add_subcommand("finetune", "fine-tune a checkpoint on a new dataset");
    std::string ft_ckpt, ft_data, ft_out, ft_log;
    int ft_freeze = 0;
    std::optional<int> ft_epochs;
    ft->add_option("--config", common.config_path, "run config JSON");
    ft->add_option("--checkpoint", ft_ckpt, "source checkpoint")->required();
    ft->add_option("--data", ft_data, "dataset directory")->required();
    ft->add_option("--freeze-layers", ft_freeze, "freeze the first k encoder layers");
    ft->add_option("--out-checkpoint", ft_out, "checkpoint output path")->required();
    ft->add_option("--log", ft_log, "training log path");
    ft->add_option("--seed", common.seed, "seed override");
    ft->add_option("--epochs", ft_epochs, "epoch override");
    ft->callback(
        [&] { rc = cmd_finetune(common, ft_ckpt, ft_data, ft_freeze, ft_out, ft_log, ft_epochs); });

    // tte-sweep
    auto* sw = app.add_subcommand("tte-sweep", "evaluate a checkpoint over TTE horizon bands");
    std::string sw_ckpt, sw_tracks, sw_report;
    std::string sw_bands = "15-30,30-45,45-60,60-75,75-90";
    sw->add_option("--checkpoint", sw_ckpt, "checkpoint path")->required();
    sw->add_option("--tracks", sw_tracks, "track file to slice per band")->required();
    sw->add_option("--bands", sw_bands, "comma-separated lo-hi frame bands");
    sw->add_option("--report", sw_report, "horizon report output path");
    sw->callback([&] { rc = cmd_tte_sweep(sw_ckpt, sw_tracks, sw_bands, sw_report); });

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient gate");
    std::string gc_arch;
    std::uint64_t gc_seed = 1;
    double gc_eps = 1e-5;
    int gc_coords = 3;
    gc->add_option("--arch", gc_arch, "architecture (teo, tep, ted)")->required();
    gc->add_option("--seed", gc_seed, "seed");
    gc->add_option("--eps", gc_eps, "finite-difference step");
    gc->add_option("--coords", gc_coords, "coordinates probed per tensor (0 = all)");
    gc->callback([&] { rc = cmd_gradcheck(gc_arch, gc_seed, gc_eps, gc_coords); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitData;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return rc;
}
