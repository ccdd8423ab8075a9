#include "pedcross/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace pedcross::ops {

namespace {

extern "C" void openblas_set_num_threads(int);

// One forward/backward pass is single-threaded by contract; pin the BLAS
// to one thread so runs stay deterministic and never oversubscribe.
struct BlasInit {
    BlasInit() { openblas_set_num_threads(1); }
};
const BlasInit blas_init;

// C[m x n] (+)= op(A) * op(B) with row-major storage.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b,
          double beta, double* c) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a,
                trans_a ? m : k, b, trans_b ? k : n, beta, c, n);
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + " requires a rank-2 tensor, got " + t.shape_str());
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + " shape mismatch: " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul inner dimensions differ: " + a.shape_str() + " vs " +
                         b.shape_str());
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    gemm(false, false, m, n, k, a.data(), b.data(), 0.0, out.data());
    check_finite(out, "matmul");
    if (tape) {
        tape->record([a, b, out, m, n, k] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            gemm(false, true, m, k, n, g, b.data(), 1.0, a.grad_data());
            gemm(true, false, k, n, m, a.data(), g, 1.0, b.grad_data());
        });
    }
    return out;
}

Tensor transpose(const Tensor& a, Tape* tape) {
    require_rank2(a, "transpose");
    const int r = a.rows(), c = a.cols();
    Tensor out({c, r});
    const double* src = a.data();
    double* dst = out.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    if (tape) {
        tape->record([a, out, r, c] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            double* ga = a.grad_data();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "add");
    const int n = a.size();
    Tensor out(a.shape());
    const double *pa = a.data(), *pb = b.data();
    double* po = out.data();
    for (int i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    check_finite(out, "add");
    if (tape) {
        tape->record([a, b, out, n] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            double *ga = a.grad_data(), *gb = b.grad_data();
            for (int i = 0; i < n; ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "sub");
    const int n = a.size();
    Tensor out(a.shape());
    const double *pa = a.data(), *pb = b.data();
    double* po = out.data();
    for (int i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    check_finite(out, "sub");
    if (tape) {
        tape->record([a, b, out, n] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            double *ga = a.grad_data(), *gb = b.grad_data();
            for (int i = 0; i < n; ++i) {
                ga[i] += g[i];
                gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "mul");
    const int n = a.size();
    Tensor out(a.shape());
    const double *pa = a.data(), *pb = b.data();
    double* po = out.data();
    for (int i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    check_finite(out, "mul");
    if (tape) {
        tape->record([a, b, out, n] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            double *ga = a.grad_data(), *gb = b.grad_data();
            const double *pa = a.data(), *pb = b.data();
            for (int i = 0; i < n; ++i) {
                ga[i] += g[i] * pb[i];
                gb[i] += g[i] * pa[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double s, Tape* tape) {
    const int n = a.size();
    Tensor out(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    for (int i = 0; i < n; ++i) po[i] = pa[i] * s;
    check_finite(out, "scale");
    if (tape) {
        tape->record([a, out, s, n] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            double* ga = a.grad_data();
            for (int i = 0; i < n; ++i) ga[i] += g[i] * s;
        });
    }
    return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& b, Tape* tape) {
    require_rank2(x, "add_row_bias");
    if (b.rank() != 1 || b.cols() != x.cols()) {
        throw ShapeError("add_row_bias needs bias [" + std::to_string(x.cols()) + "], got " +
                         b.shape_str());
    }
    const int r = x.rows(), c = x.cols();
    Tensor out({r, c});
    const double *px = x.data(), *pb = b.data();
    double* po = out.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) po[i * c + j] = px[i * c + j] + pb[j];
    check_finite(out, "add_row_bias");
    if (tape) {
        tape->record([x, b, out, r, c] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            double *gx = x.grad_data(), *gb = b.grad_data();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) {
                    gx[i * c + j] += g[i * c + j];
                    gb[j] += g[i * c + j];
                }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
    return add_row_bias(matmul(x, w, tape), b, tape);
}

Tensor relu(const Tensor& x, Tape* tape) {
    const int n = x.size();
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (int i = 0; i < n; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
    check_finite(out, "relu");
    if (tape) {
        tape->record([x, out, n] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            const double* px = x.data();
            double* gx = x.grad_data();
            for (int i = 0; i < n; ++i)
                if (px[i] > 0.0) gx[i] += g[i];
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x, Tape* tape) {
    const int n = x.size();
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (int i = 0; i < n; ++i) {
        const double v = px[i];
        po[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    check_finite(out, "sigmoid");
    if (tape) {
        tape->record([x, out, n] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            const double* po = out.data();
            double* gx = x.grad_data();
            for (int i = 0; i < n; ++i) gx[i] += g[i] * po[i] * (1.0 - po[i]);
        });
    }
    return out;
}

Tensor masked_softmax(const Tensor& x, const Tensor& mask, Tape* tape) {
    if (x.rank() > 2) throw ShapeError("masked_softmax requires rank 1 or 2, got " + x.shape_str());
    const int r = x.rows(), c = x.cols();
    const double neg_inf = -std::numeric_limits<double>::infinity();

    bool mask_rows = false;  // mask has one row per x row (vs broadcast)
    if (mask.defined()) {
        if (mask.shape() == x.shape()) {
            mask_rows = mask.rank() == 2;
        } else if (mask.rank() == 1 && mask.cols() == c) {
            mask_rows = false;
        } else {
            throw ShapeError("mask " + mask.shape_str() + " not broadcastable to " + x.shape_str());
        }
        for (double v : mask.values()) {
            if (v != 0.0 && v != neg_inf) throw ShapeError("mask entries must be 0 or -inf");
        }
    }

    Tensor out(x.shape());
    const double* px = x.data();
    const double* pm = mask.defined() ? mask.data() : nullptr;
    double* po = out.data();
    for (int i = 0; i < r; ++i) {
        const double* mrow = pm ? (mask_rows ? pm + i * c : pm) : nullptr;
        double hi = neg_inf;
        for (int j = 0; j < c; ++j) {
            const double z = mrow && mrow[j] == neg_inf ? neg_inf : px[i * c + j];
            hi = std::max(hi, z);
        }
        if (hi == neg_inf) {
            throw NumericError("masked_softmax: fully masked row " + std::to_string(i));
        }
        double total = 0.0;
        for (int j = 0; j < c; ++j) {
            const bool masked = mrow && mrow[j] == neg_inf;
            const double e = masked ? 0.0 : std::exp(px[i * c + j] - hi);
            po[i * c + j] = e;
            total += e;
        }
        for (int j = 0; j < c; ++j) po[i * c + j] /= total;
    }
    check_finite(out, "masked_softmax");
    if (tape) {
        tape->record([x, out, r, c] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            const double* p = out.data();
            double* gx = x.grad_data();
            for (int i = 0; i < r; ++i) {
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += g[i * c + j] * p[i * c + j];
                for (int j = 0; j < c; ++j) gx[i * c + j] += p[i * c + j] * (g[i * c + j] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                  Tape* tape) {
    require_rank2(x, "layer_norm");
    const int r = x.rows(), c = x.cols();
    if (c < 2) throw ShapeError("layer_norm requires at least 2 features, got " + x.shape_str());
    if (gain.rank() != 1 || gain.cols() != c || bias.rank() != 1 || bias.cols() != c) {
        throw ShapeError("layer_norm gain/bias must be [" + std::to_string(c) + "], got " +
                         gain.shape_str() + " and " + bias.shape_str());
    }

    Tensor out({r, c});
    // Standardized rows and per-row 1/sqrt(var + eps), both needed in backward.
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r) * c);
    auto inv_sd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r));
    const double *px = x.data(), *pg = gain.data(), *pb = bias.data();
    double* po = out.data();
    for (int i = 0; i < r; ++i) {
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += px[i * c + j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = px[i * c + j] - mean;
            var += d * d;
        }
        var /= c;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_sd)[static_cast<std::size_t>(i)] = inv;
        for (int j = 0; j < c; ++j) {
            const double h = (px[i * c + j] - mean) * inv;
            (*xhat)[static_cast<std::size_t>(i) * c + j] = h;
            po[i * c + j] = pg[j] * h + pb[j];
        }
    }
    check_finite(out, "layer_norm");
    if (tape) {
        tape->record([x, gain, bias, out, xhat, inv_sd, r, c] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            const double* pg = gain.data();
            double* gx = x.grad_data();
            double* ggain = gain.grad_data();
            double* gbias = bias.grad_data();
            for (int i = 0; i < r; ++i) {
                const double inv = (*inv_sd)[static_cast<std::size_t>(i)];
                double sum_dh = 0.0, sum_dh_h = 0.0;
                for (int j = 0; j < c; ++j) {
                    const double h = (*xhat)[static_cast<std::size_t>(i) * c + j];
                    const double dh = g[i * c + j] * pg[j];
                    sum_dh += dh;
                    sum_dh_h += dh * h;
                    ggain[j] += g[i * c + j] * h;
                    gbias[j] += g[i * c + j];
                }
                for (int j = 0; j < c; ++j) {
                    const double h = (*xhat)[static_cast<std::size_t>(i) * c + j];
                    const double dh = g[i * c + j] * pg[j];
                    gx[i * c + j] += inv * (dh - sum_dh / c - h * sum_dh_h / c);
                }
            }
        });
    }
    return out;
}

Tensor mean_pool_time(const Tensor& x, Tape* tape) {
    require_rank2(x, "mean_pool_time");
    const int r = x.rows(), c = x.cols();
    Tensor out({1, c});
    const double* px = x.data();
    double* po = out.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) po[j] += px[i * c + j];
    for (int j = 0; j < c; ++j) po[j] /= r;
    check_finite(out, "mean_pool_time");
    if (tape) {
        tape->record([x, out, r, c] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            double* gx = x.grad_data();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gx[i * c + j] += g[j] / r;
        });
    }
    return out;
}

Tensor strided_mean_pool(const Tensor& x, int window, int stride, Tape* tape) {
    require_rank2(x, "strided_mean_pool");
    if (window < 1 || stride < 1) throw ShapeError("strided_mean_pool window/stride must be >= 1");
    const int r = x.rows(), c = x.cols();
    if (r < window) {
        throw ShapeError("strided_mean_pool window " + std::to_string(window) +
                         " exceeds sequence length " + std::to_string(r));
    }
    const int out_rows = (r - window) / stride + 1;
    Tensor out({out_rows, c});
    const double* px = x.data();
    double* po = out.data();
    for (int o = 0; o < out_rows; ++o) {
        for (int w = 0; w < window; ++w) {
            const int i = o * stride + w;
            for (int j = 0; j < c; ++j) po[o * c + j] += px[i * c + j];
        }
        for (int j = 0; j < c; ++j) po[o * c + j] /= window;
    }
    check_finite(out, "strided_mean_pool");
    if (tape) {
        tape->record([x, out, out_rows, window, stride, c] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            double* gx = x.grad_data();
            for (int o = 0; o < out_rows; ++o)
                for (int w = 0; w < window; ++w) {
                    const int i = o * stride + w;
                    for (int j = 0; j < c; ++j) gx[i * c + j] += g[o * c + j] / window;
                }
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape) {
    if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
    const int r = parts.front().rows();
    int total = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.rows() != r) {
            throw ShapeError("concat_cols row mismatch: " + parts.front().shape_str() + " vs " +
                             p.shape_str());
        }
        total += p.cols();
    }
    Tensor out({r, total});
    double* po = out.data();
    int col0 = 0;
    for (const Tensor& p : parts) {
        const int pc = p.cols();
        const double* pp = p.data();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < pc; ++j) po[i * total + col0 + j] = pp[i * pc + j];
        col0 += pc;
    }
    if (tape) {
        tape->record([parts, out, r, total] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            int col0 = 0;
            for (const Tensor& p : parts) {
                const int pc = p.cols();
                double* gp = p.grad_data();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < pc; ++j) gp[i * pc + j] += g[i * total + col0 + j];
                col0 += pc;
            }
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, int begin, int end, Tape* tape) {
    require_rank2(x, "slice_rows");
    const int r = x.rows(), c = x.cols();
    if (begin < 0 || end > r || begin >= end) {
        throw ShapeError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + x.shape_str());
    }
    const int out_rows = end - begin;
    Tensor out({out_rows, c});
    std::copy_n(x.data() + static_cast<std::size_t>(begin) * c,
                static_cast<std::size_t>(out_rows) * c, out.data());
    if (tape) {
        tape->record([x, out, begin, out_rows, c] {
            if (!out.has_grad()) return;
            const double* g = out.grad_data();
            double* gx = x.grad_data();
            for (int i = 0; i < out_rows; ++i)
                for (int j = 0; j < c; ++j) gx[(begin + i) * c + j] += g[i * c + j];
        });
    }
    return out;
}

Tensor sum(const Tensor& x, Tape* tape) {
    double total = 0.0;
    for (double v : x.values()) total += v;
    Tensor out = Tensor::scalar(total);
    check_finite(out, "sum");
    if (tape) {
        tape->record([x, out] {
            if (!out.has_grad()) return;
            const double g = out.grad()[0];
            double* gx = x.grad_data();
            const int n = x.size();
            for (int i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor dropout(const Tensor& x, double rate, Tape* tape) {
    if (rate < 0.0 || rate >= 1.0) throw ShapeError("dropout rate must be in [0, 1)");
    if (rate == 0.0 || tape == nullptr || tape->rng() == nullptr) return x;
    const int n = x.size();
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    std::bernoulli_distribution keep_dist(keep);
    for (double& m : *mask) m = keep_dist(*tape->rng()) ? 1.0 / keep : 0.0;
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (int i = 0; i < n; ++i) po[i] = px[i] * (*mask)[static_cast<std::size_t>(i)];
    check_finite(out, "dropout");
    tape->record([x, out, mask, n] {
        if (!out.has_grad()) return;
        const double* g = out.grad_data();
        double* gx = x.grad_data();
        for (int i = 0; i < n; ++i) gx[i] += g[i] * (*mask)[static_cast<std::size_t>(i)];
    });
    return out;
}

}  // namespace pedcross::ops
