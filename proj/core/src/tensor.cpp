#include "pedcross/tensor.hpp"

#include <cmath>
#include <sstream>

namespace pedcross {

namespace {

int checked_size(const std::vector<int>& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    long long n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive");
        n *= d;
        if (n > (1LL << 31)) throw ShapeError("tensor too large");
    }
    return static_cast<int>(n);
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) {
    int n = checked_size(shape);
    impl_ = std::make_shared<Impl>();
    impl_->shape = std::move(shape);
    impl_->values.assign(static_cast<std::size_t>(n), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) {
    int n = checked_size(shape);
    if (static_cast<std::size_t>(n) != values.size()) {
        throw ShapeError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_to_string(shape));
    }
    impl_ = std::make_shared<Impl>();
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.values()) x = v;
    return t;
}

Tensor::Impl& Tensor::impl() const {
    if (!impl_) throw ShapeError("operation on an undefined tensor");
    return *impl_;
}

const std::vector<int>& Tensor::shape() const { return impl().shape; }

int Tensor::rank() const { return static_cast<int>(impl().shape.size()); }

int Tensor::dim(int i) const {
    const auto& s = impl().shape;
    if (i < 0 || i >= static_cast<int>(s.size())) throw ShapeError("dimension index out of range");
    return s[static_cast<std::size_t>(i)];
}

int Tensor::size() const { return static_cast<int>(impl().values.size()); }

int Tensor::rows() const {
    const auto& s = impl().shape;
    if (s.size() == 1) return 1;
    if (s.size() == 2) return s[0];
    throw ShapeError("rows() requires rank 1 or 2, got " + shape_str());
}

int Tensor::cols() const {
    const auto& s = impl().shape;
    if (s.size() == 1) return s[0];
    if (s.size() == 2) return s[1];
    throw ShapeError("cols() requires rank 1 or 2, got " + shape_str());
}

std::vector<double>& Tensor::values() const { return impl().values; }

double* Tensor::data() const { return impl().values.data(); }

double& Tensor::at(int i) const {
    auto& v = impl().values;
    if (i < 0 || static_cast<std::size_t>(i) >= v.size()) throw ShapeError("index out of range");
    return v[static_cast<std::size_t>(i)];
}

double& Tensor::at(int r, int c) const {
    int nr = rows(), nc = cols();
    if (r < 0 || r >= nr || c < 0 || c >= nc) throw ShapeError("index out of range");
    return impl().values[static_cast<std::size_t>(r) * nc + c];
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() requires a scalar tensor, got " + shape_str());
    return impl().values[0];
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::vector<double>& Tensor::grad() const {
    auto& im = impl();
    if (im.grad.empty()) im.grad.assign(im.values.size(), 0.0);
    return im.grad;
}

double* Tensor::grad_data() const { return grad().data(); }

void Tensor::zero_grad() const {
    auto& im = impl();
    if (!im.grad.empty()) im.grad.assign(im.values.size(), 0.0);
}

bool Tensor::same_storage(const Tensor& other) const { return impl_ == other.impl_; }

Tensor Tensor::clone() const {
    const auto& im = impl();
    return Tensor(im.shape, im.values);
}

std::string Tensor::shape_str() const { return shape_to_string(impl().shape); }

void check_finite(const Tensor& t, const char* op) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + " produced a non-finite value");
        }
    }
}

void Tape::record(std::function<void()> backward) { records_.push_back(std::move(backward)); }

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ShapeError("backward() requires a scalar loss, got " + loss.shape_str());
    }
    loss.grad()[0] = 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

void Tape::clear() { records_.clear(); }

}  // namespace pedcross
