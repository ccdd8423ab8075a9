#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pedcross/error.hpp"

namespace pedcross {

// Dense row-major tensor of doubles with an optional gradient buffer.
//
// Tensor is a shared handle: copies alias the same storage and `const`
// applies to the handle, not the buffers (like std::span). That is what
// lets tape closures, captured by value, accumulate gradients into the
// same parameter storage the optimizer updates.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);  // zero-filled
    Tensor(std::vector<int> shape, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor full(std::vector<int> shape, double v);

    bool defined() const { return static_cast<bool>(impl_); }
    const std::vector<int>& shape() const;
    int rank() const;
    int dim(int i) const;
    int size() const;

    // rank-1 tensors count as a single row
    int rows() const;
    int cols() const;

    std::vector<double>& values() const;
    double* data() const;
    double& at(int i) const;
    double& at(int r, int c) const;
    double item() const;  // requires size() == 1

    bool has_grad() const;
    std::vector<double>& grad() const;  // allocates zeroed on first use
    double* grad_data() const;
    void zero_grad() const;  // zeroes in place if allocated

    bool same_storage(const Tensor& other) const;
    Tensor clone() const;  // deep copy of values, no grad
    std::string shape_str() const;

private:
    struct Impl {
        std::vector<int> shape;
        std::vector<double> values;
        std::vector<double> grad;  // empty until first grad() call
    };
    std::shared_ptr<Impl> impl_;
    Impl& impl() const;
};

// Throws NumericError if any entry of `t` is NaN or infinite.
void check_finite(const Tensor& t, const char* op);

// Ordered record of forward operations. Replaying the backward closures
// in reverse recording order accumulates dLoss/dX (always +=, never =)
// into every tensor reachable from the loss, so parameters shared
// between graph branches receive summed contributions.
class Tape {
public:
    void record(std::function<void()> backward);

    // Seeds grad(loss) = 1 on a scalar loss and replays all closures in
    // reverse. The records stay in place; call clear() between steps.
    void backward(const Tensor& loss);

    void clear();
    std::size_t size() const { return records_.size(); }

    // Optional RNG for dropout; unset means dropout is a no-op.
    std::mt19937_64* rng() const { return rng_; }
    void set_rng(std::mt19937_64* rng) { rng_ = rng; }

private:
    std::vector<std::function<void()>> records_;
    std::mt19937_64* rng_ = nullptr;
};

}  // namespace pedcross
