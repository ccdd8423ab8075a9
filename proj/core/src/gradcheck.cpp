#include "pedcross/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace pedcross {

namespace {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
    return std::fabs(analytic - numeric) / denom;
}

double probe(const ScalarFn& f, const Tensor& x, int coord, double eps, double analytic) {
    double& slot = x.values()[static_cast<std::size_t>(coord)];
    const double saved = slot;
    slot = saved + eps;
    const double up = f(x, nullptr).item();
    slot = saved - eps;
    const double down = f(x, nullptr).item();
    slot = saved;
    const double numeric = (up - down) / (2.0 * eps);
    return relative_error(analytic, numeric);
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
    x.zero_grad();
    Tape tape;
    Tensor loss = f(x, &tape);
    tape.backward(loss);
    const std::vector<double> analytic = x.grad();

    double worst = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        worst = std::max(worst, probe(f, x, i, eps, analytic[static_cast<std::size_t>(i)]));
    }
    return worst;
}

double grad_check_coords(const ScalarFn& f, const Tensor& x, double eps,
                         const std::vector<double>& analytic, int max_coords,
                         std::uint64_t salt) {
    std::vector<int> coords(static_cast<std::size_t>(x.size()));
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords > 0 && max_coords < x.size()) {
        std::mt19937_64 rng(salt);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(static_cast<std::size_t>(max_coords));
    }
    double worst = 0.0;
    for (int i : coords) {
        worst = std::max(worst, probe(f, x, i, eps, analytic[static_cast<std::size_t>(i)]));
    }
    return worst;
}

}  // namespace pedcross
