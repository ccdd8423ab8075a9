#include "pedcross/gradcheck_gate.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <sstream>

#include "pedcross/gradcheck.hpp"
#include "pedcross/training.hpp"

namespace pedcross {

namespace {

Tensor random_boxes(int rows, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> corner(0.05, 0.6);
    std::uniform_real_distribution<double> extent(0.05, 0.3);
    Tensor t({rows, 4});
    for (int i = 0; i < rows; ++i) {
        const double x1 = corner(rng), y1 = corner(rng);
        t.at(i, 0) = x1;
        t.at(i, 1) = y1;
        t.at(i, 2) = x1 + extent(rng);
        t.at(i, 3) = y1 + extent(rng);
    }
    return t;
}

std::string group_of(const std::string& name) {
    const auto first = name.find('.');
    if (name.rfind("enc.", 0) == 0 || name.rfind("dec.", 0) == 0) {
        const auto second = name.find('.', first + 1);
        return name.substr(0, second);
    }
    return name.substr(0, first);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    return z ^ (z >> 31);
}

}  // namespace

ModelConfig gradcheck_config(Arch arch) {
    ModelConfig cfg;
    cfg.arch = arch;
    cfg.d_model = 32;
    cfg.d_ffn = 64;
    cfg.d_cls = 32;
    cfg.obs_len = 16;
    cfg.pe_len = 32;
    switch (arch) {
        case Arch::kTeo:
            cfg.n_layers = 4;
            cfg.n_heads = 8;
            break;
        case Arch::kTep:
            cfg.n_layers = 4;
            cfg.n_heads = 8;
            cfg.pool_window = 2;
            cfg.pool_stride = 2;
            cfg.min_pooled_len = 2;
            break;
        case Arch::kTed:
            cfg.n_layers = 2;  // 2 encoder + 2 decoder layers
            cfg.n_heads = 8;
            break;
    }
    return cfg;
}

GradCheckReport run_gradcheck_gate(Arch arch, std::uint64_t seed, double eps,
                                   int coords_per_tensor) {
    const ModelConfig cfg = gradcheck_config(arch);
    ModelParams model = init_model(cfg, seed);

    std::mt19937_64 rng(mix(seed, 0x67636bULL));
    Tensor x = random_boxes(cfg.obs_len, rng);
    const int target_len = 8;
    Tensor y_in, aligned;
    if (arch == Arch::kTed) {
        y_in = random_boxes(target_len, rng);
        aligned = random_boxes(target_len - 1, rng);
    }
    const LossWeights lw;

    auto loss_fn = [&](const Tensor&, Tape* tape) -> Tensor {
        if (arch == Arch::kTed) {
            TedOutput out = forward_ted(model, x, y_in, tape);
            Tensor pred = ops::slice_rows(out.trajectory, 0, target_len - 1, tape);
            return ted_loss(out.probability, 1, pred, aligned, lw, tape);
        }
        return bce_loss(forward_probability(model, x, tape), 1, tape);
    };

    const auto params = model.named_parameters();
    for (const auto& [name, t] : params) t.zero_grad();
    Tape tape;
    tape.backward(loss_fn(x, &tape));
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, t] : params) analytic.push_back(t.grad());
    for (const auto& [name, t] : params) t.zero_grad();

    GradCheckReport report;
    report.arch = arch;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = params[i];
        const double err =
            grad_check_coords(loss_fn, t, eps, analytic[i], coords_per_tensor, mix(seed, i));
        const std::string group = group_of(name);
        auto it = std::find_if(report.groups.begin(), report.groups.end(),
                               [&](const GradCheckGroup& g) { return g.name == group; });
        if (it == report.groups.end()) {
            report.groups.push_back({group, err, 0});
            it = report.groups.end() - 1;
        }
        it->max_rel_err = std::max(it->max_rel_err, err);
        it->coords_checked +=
            coords_per_tensor > 0 ? std::min(coords_per_tensor, t.size()) : t.size();
        report.max_rel_err = std::max(report.max_rel_err, err);
    }
    return report;
}

std::string gradcheck_report_text(const GradCheckReport& report) {
    std::ostringstream os;
    os << "gradcheck " << arch_name(report.arch) << "\n";
    for (const GradCheckGroup& g : report.groups) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "  %-10s max_rel_err %.3e  (%d coords)\n", g.name.c_str(),
                      g.max_rel_err, g.coords_checked);
        os << buf;
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "  overall    max_rel_err %.3e\n", report.max_rel_err);
    os << buf;
    return os.str();
}

}  // namespace pedcross
