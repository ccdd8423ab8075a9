#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "pedcross/gradcheck.hpp"
#include "pedcross/ops.hpp"
#include "pedcross/tensor.hpp"

using namespace pedcross;
namespace op = pedcross::ops;

namespace {
const double kInf = std::numeric_limits<double>::infinity();
}

TEST_CASE("matmul identity and scalar cases") {
    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    std::mt19937_64 rng(11);
    Tensor b = oracles::random_tensor({3, 2}, rng);
    Tensor c = op::matmul(eye, b);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) CHECK(c.at(i, j) == b.at(i, j));

    Tensor two({1, 1}, {2.0});
    Tensor three({1, 1}, {3.0});
    CHECK(op::matmul(two, three).item() == 6.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
    std::mt19937_64 rng(42);
    Tensor a = oracles::random_tensor({5, 4}, rng);
    Tensor b = oracles::random_tensor({4, 3}, rng);
    Tensor c = op::matmul(a, b);
    Tensor ref = oracles::naive_matmul(a, b);
    for (int i = 0; i < c.size(); ++i) CHECK(std::fabs(c.at(i) - ref.at(i)) < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes with both shapes named") {
    Tensor a({2, 3});
    Tensor b({2, 3});
    CHECK_THROWS_WITH_AS(op::matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("matmul backward rules") {
    std::mt19937_64 rng(7);
    Tensor a = oracles::random_tensor({3, 4}, rng);
    Tensor b = oracles::random_tensor({4, 2}, rng);
    Tape tape;
    Tensor c = op::matmul(a, b, &tape);
    tape.backward(op::sum(c, &tape));
    // dA = 1 * B^T summed over output columns, dB likewise
    for (int i = 0; i < 3; ++i)
        for (int t = 0; t < 4; ++t) {
            double expect = 0.0;
            for (int j = 0; j < 2; ++j) expect += b.at(t, j);
            CHECK(a.grad()[static_cast<std::size_t>(i * 4 + t)] == doctest::Approx(expect));
        }
}

TEST_CASE("masked_softmax uniform, survivor, and oracle rows") {
    Tensor flat({4}, {0, 0, 0, 0});
    Tensor out = op::masked_softmax(flat, Tensor());
    for (int i = 0; i < 4; ++i) CHECK(out.at(i) == doctest::Approx(0.25));

    Tensor x({2}, {5, 1});
    Tensor mask({2}, {0, -kInf});
    Tensor surv = op::masked_softmax(x, mask);
    CHECK(surv.at(0) == 1.0);
    CHECK(surv.at(1) == 0.0);

    Tensor probe({3}, {1, 2, 3});
    Tensor ref_in = op::masked_softmax(probe, Tensor());
    const auto ref = oracles::direct_softmax({1, 2, 3});
    for (int i = 0; i < 3; ++i) CHECK(std::fabs(ref_in.at(i) - ref[static_cast<std::size_t>(i)]) < 1e-12);
}

TEST_CASE("masked_softmax properties: row sums, exact zeros, full mask error") {
    std::mt19937_64 rng(3);
    Tensor x = oracles::random_tensor({6, 9}, rng, -4, 4);
    Tensor mask({6, 9});
    std::uniform_int_distribution<int> coin(0, 3);
    for (int i = 0; i < 6; ++i)
        for (int j = 1; j < 9; ++j)
            if (coin(rng) == 0) mask.at(i, j) = -kInf;
    Tensor out = op::masked_softmax(x, mask);
    for (int i = 0; i < 6; ++i) {
        double total = 0.0;
        for (int j = 0; j < 9; ++j) {
            if (mask.at(i, j) == -kInf) CHECK(out.at(i, j) == 0.0);
            total += out.at(i, j);
        }
        CHECK(std::fabs(total - 1.0) <= 1e-9);
    }

    Tensor all_masked({1, 2}, {1, 2});
    Tensor full({1, 2}, {-kInf, -kInf});
    CHECK_THROWS_AS(op::masked_softmax(all_masked, full), NumericError);

    Tensor bad_mask({1, 2}, {0.5, 0});
    CHECK_THROWS_AS(op::masked_softmax(all_masked, bad_mask), ShapeError);
}

TEST_CASE("layer_norm closed forms") {
    Tensor gain({3}, {1, 1, 1});
    Tensor bias({3});
    Tensor constant({1, 3}, {5, 5, 5});
    Tensor zeroed = op::layer_norm(constant, gain, bias, 1e-5);
    for (int j = 0; j < 3; ++j) CHECK(zeroed.at(0, j) == doctest::Approx(0.0));

    // x = [1, 3]: mean 2, var 1, so entries are +-1/sqrt(1 + eps)
    Tensor g2({2}, {1, 1});
    Tensor b2({2});
    Tensor x({1, 2}, {1, 3});
    const double eps = 1e-5;
    Tensor out = op::layer_norm(x, g2, b2, eps);
    const double expect = 1.0 / std::sqrt(1.0 + eps);
    CHECK(out.at(0, 0) == doctest::Approx(-expect).epsilon(1e-12));
    CHECK(out.at(0, 1) == doctest::Approx(expect).epsilon(1e-12));

    // gain 0 broadcasts the bias
    Tensor g0({2}, {0, 0});
    Tensor bb({2}, {7, -2});
    std::mt19937_64 rng(5);
    Tensor any = oracles::random_tensor({4, 2}, rng);
    Tensor biased = op::layer_norm(any, g0, bb, eps);
    for (int i = 0; i < 4; ++i) {
        CHECK(biased.at(i, 0) == 7.0);
        CHECK(biased.at(i, 1) == -2.0);
    }
}

TEST_CASE("linear identity and affine example") {
    Tensor eye({2, 2});
    eye.at(0, 0) = eye.at(1, 1) = 1.0;
    Tensor zero({2});
    std::mt19937_64 rng(9);
    Tensor x = oracles::random_tensor({3, 2}, rng);
    Tensor out = op::linear(x, eye, zero);
    for (int i = 0; i < out.size(); ++i) CHECK(out.at(i) == x.at(i));

    Tensor x2({1, 2}, {1, 2});
    Tensor w({2, 1}, {1, 1});
    Tensor b({1}, {3});
    CHECK(op::linear(x2, w, b).item() == 6.0);

    Tensor wr = oracles::random_tensor({2, 5}, rng);
    Tensor br = oracles::random_tensor({5}, rng);
    Tensor got = op::linear(x, wr, br);
    Tensor ref = oracles::naive_matmul(x, wr);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j) {
            CHECK(std::fabs(got.at(i, j) - (ref.at(i, j) + br.at(j))) < 1e-12);
        }
}

TEST_CASE("pooling examples and loop oracle") {
    Tensor col({4, 1}, {1, 2, 3, 4});
    Tensor pooled = op::strided_mean_pool(col, 2, 2);
    CHECK(pooled.rows() == 2);
    CHECK(pooled.at(0, 0) == 1.5);
    CHECK(pooled.at(1, 0) == 3.5);

    Tensor constant({5, 3});
    for (int i = 0; i < constant.size(); ++i) constant.at(i) = 2.5;
    Tensor mean = op::mean_pool_time(constant);
    CHECK(mean.rows() == 1);
    for (int j = 0; j < 3; ++j) CHECK(mean.at(0, j) == doctest::Approx(2.5));

    std::mt19937_64 rng(13);
    Tensor x = oracles::random_tensor({16, 8}, rng);
    Tensor got = op::strided_mean_pool(x, 2, 2);
    CHECK(got.rows() == 8);
    for (int o = 0; o < 8; ++o)
        for (int j = 0; j < 8; ++j) {
            const double expect = 0.5 * (x.at(2 * o, j) + x.at(2 * o + 1, j));
            CHECK(std::fabs(got.at(o, j) - expect) < 1e-12);
        }

    CHECK_THROWS_AS(op::strided_mean_pool(Tensor({1, 2}), 2, 1), ShapeError);
}

TEST_CASE("grad_check trivial closed forms") {
    std::mt19937_64 rng(21);
    Tensor x = oracles::random_tensor({2, 3}, rng);
    const double sum_err =
        grad_check([](const Tensor& t, Tape* tape) { return op::sum(t, tape); }, x, 1e-5);
    CHECK(sum_err < 1e-10);

    Tensor x2({2}, {1, 2});
    const double sq_err = grad_check(
        [](const Tensor& t, Tape* tape) { return op::sum(op::mul(t, t, tape), tape); }, x2, 1e-5);
    CHECK(sq_err < 1e-8);
    // grad of sum(x^2) at [1, 2] is [2, 4]
    Tape tape;
    x2.zero_grad();
    tape.backward(op::sum(op::mul(x2, x2, &tape), &tape));
    CHECK(x2.grad()[0] == doctest::Approx(2.0));
    CHECK(x2.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("primitive ops pass gradient checks at 1e-6") {
    std::mt19937_64 rng(77);
    auto check = [&](const char* name, const ScalarFn& f, Tensor x) {
        INFO(name);
        CHECK(grad_check(f, x, 1e-5) <= 1e-6);
    };

    Tensor rhs = oracles::random_tensor({4, 3}, rng);
    check(
        "matmul",
        [&](const Tensor& t, Tape* tape) { return op::sum(op::matmul(t, rhs, tape), tape); },
        oracles::random_tensor({3, 4}, rng));

    check(
        "transpose+mul",
        [&](const Tensor& t, Tape* tape) {
            Tensor tr = op::transpose(t, tape);
            return op::sum(op::mul(tr, tr, tape), tape);
        },
        oracles::random_tensor({3, 5}, rng));

    Tensor mask({4, 4});
    mask.at(0, 3) = -kInf;
    mask.at(2, 1) = -kInf;
    check(
        "masked_softmax",
        [&](const Tensor& t, Tape* tape) {
            Tensor sm = op::masked_softmax(t, mask, tape);
            return op::sum(op::mul(sm, sm, tape), tape);
        },
        oracles::random_tensor({4, 4}, rng));

    Tensor gain = oracles::random_tensor({6}, rng, 0.5, 1.5);
    Tensor bias = oracles::random_tensor({6}, rng);
    check(
        "layer_norm",
        [&](const Tensor& t, Tape* tape) {
            Tensor ln = op::layer_norm(t, gain, bias, 1e-5, tape);
            return op::sum(op::mul(ln, ln, tape), tape);
        },
        oracles::random_tensor({3, 6}, rng));
    check(
        "layer_norm gain/bias",
        [&](const Tensor& g, Tape* tape) {
            Tensor x_fixed({2, 6}, {1, 2, 3, 4, 5, 6, -1, 0, 2, 1, 4, 2});
            Tensor ln = op::layer_norm(x_fixed, g, bias, 1e-5, tape);
            return op::sum(op::mul(ln, ln, tape), tape);
        },
        gain.clone());

    // keep relu probes away from the kink at zero
    Tensor relu_in = oracles::random_tensor({3, 4}, rng);
    for (double& v : relu_in.values()) v += v > 0 ? 0.5 : -0.5;
    check("relu", [&](const Tensor& t, Tape* tape) { return op::sum(op::relu(t, tape), tape); },
          relu_in);

    check(
        "sigmoid",
        [&](const Tensor& t, Tape* tape) {
            Tensor s = op::sigmoid(t, tape);
            return op::sum(op::mul(s, s, tape), tape);
        },
        oracles::random_tensor({2, 3}, rng, -2, 2));

    check(
        "strided_mean_pool",
        [&](const Tensor& t, Tape* tape) {
            Tensor p = op::strided_mean_pool(t, 3, 2, tape);
            return op::sum(op::mul(p, p, tape), tape);
        },
        oracles::random_tensor({9, 4}, rng));

    check(
        "mean_pool_time",
        [&](const Tensor& t, Tape* tape) {
            Tensor p = op::mean_pool_time(t, tape);
            return op::sum(op::mul(p, p, tape), tape);
        },
        oracles::random_tensor({5, 4}, rng));

    Tensor bias_x = oracles::random_tensor({4, 3}, rng);
    check(
        "add_row_bias (bias side)",
        [&](const Tensor& b, Tape* tape) {
            Tensor y = op::add_row_bias(bias_x, b, tape);
            return op::sum(op::mul(y, y, tape), tape);
        },
        oracles::random_tensor({3}, rng));

    check(
        "concat+slice",
        [&](const Tensor& t, Tape* tape) {
            Tensor other = Tensor::full({3, 2}, 0.5);
            Tensor cat = op::concat_cols({t, other}, tape);
            Tensor sl = op::slice_rows(cat, 1, 3, tape);
            return op::sum(op::mul(sl, sl, tape), tape);
        },
        oracles::random_tensor({3, 4}, rng));
}

TEST_CASE("gradient accumulation sums branch contributions") {
    std::mt19937_64 rng(31);
    Tensor x = oracles::random_tensor({2, 2}, rng);
    Tensor w = oracles::random_tensor({2, 2}, rng);

    // combined graph: loss = sum(x w) + sum(x * x)
    x.zero_grad();
    w.zero_grad();
    Tape tape;
    Tensor combined = op::add(op::sum(op::matmul(x, w, &tape), &tape),
                              op::sum(op::mul(x, x, &tape), &tape), &tape);
    tape.backward(combined);
    const std::vector<double> combined_grad = x.grad();

    // branch-by-branch on fresh tapes
    x.zero_grad();
    Tape t1;
    t1.backward(op::sum(op::matmul(x, w, &t1), &t1));
    std::vector<double> g1 = x.grad();
    x.zero_grad();
    Tape t2;
    t2.backward(op::sum(op::mul(x, x, &t2), &t2));
    std::vector<double> g2 = x.grad();

    for (std::size_t i = 0; i < combined_grad.size(); ++i) {
        CHECK(combined_grad[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
    }
}

TEST_CASE("shared parameters receive summed gradients across uses") {
    Tensor w({1, 1}, {3.0});
    Tape tape;
    w.zero_grad();
    // loss = sum(w * w) twice through separate ops -> d/dw = 4w per branch pair
    Tensor a = op::mul(w, w, &tape);
    Tensor b = op::mul(w, w, &tape);
    tape.backward(op::add(op::sum(a, &tape), op::sum(b, &tape), &tape));
    CHECK(w.grad()[0] == doctest::Approx(12.0));  // 2w + 2w at w=3
}

TEST_CASE("non-finite op outputs raise NumericError") {
    Tensor huge({1, 1}, {1e308});
    Tensor two({1, 1}, {2.0});
    CHECK_THROWS_AS(op::matmul(huge, two), NumericError);
    CHECK_THROWS_AS(op::scale(huge, 1e10), NumericError);
}

TEST_CASE("tape clearing and grad zeroing between steps") {
    Tensor w({2}, {1.0, 2.0});
    Tape tape;
    tape.backward(op::sum(op::mul(w, w, &tape), &tape));
    CHECK(tape.size() == 2);
    tape.clear();
    CHECK(tape.size() == 0);
    CHECK(w.grad()[0] == doctest::Approx(2.0));
    w.zero_grad();
    CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("dropout is identity without an RNG and scales with one") {
    std::mt19937_64 rng(17);
    Tensor x = oracles::random_tensor({4, 4}, rng);
    Tape plain;
    Tensor same = op::dropout(x, 0.5, &plain);
    CHECK(same.same_storage(x));

    Tape with_rng;
    std::mt19937_64 drop_rng(5);
    with_rng.set_rng(&drop_rng);
    Tensor dropped = op::dropout(x, 0.5, &with_rng);
    int zeros = 0;
    for (int i = 0; i < dropped.size(); ++i) {
        if (dropped.at(i) == 0.0) {
            ++zeros;
        } else {
            CHECK(dropped.at(i) == doctest::Approx(2.0 * x.at(i)));
        }
    }
    CHECK(zeros > 0);
}
