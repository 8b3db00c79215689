#include "dcp/tensor.hpp"

#include <cmath>
#include <sstream>

#include "dcp/error.hpp"

namespace dcp {

std::string shape_string(const std::vector<std::size_t>& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << 'x';
        os << dims[i];
    }
    os << ']';
    return os.str();
}

ShapeError::ShapeError(const std::string& what, std::vector<std::size_t> lhs, std::vector<std::size_t> rhs)
    : Error(what + ": " + shape_string(lhs) + " vs " + shape_string(rhs)), lhs_(std::move(lhs)), rhs_(std::move(rhs)) {}

FormatError::FormatError(const std::string& what, std::size_t offset)
    : Error("at byte offset " + std::to_string(offset) + ": " + what), offset_(offset) {}

std::size_t shape_size(const Shape& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

Tensor::Tensor(Shape dims, double fill) : dims_(std::move(dims)), data_(shape_size(dims_), fill) {}

Tensor::Tensor(Shape dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (shape_size(dims_) != data_.size()) {
        throw ShapeError("tensor data length does not match extents", dims_, {data_.size()});
    }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& r : rows) {
        if (r.size() != n) throw ShapeError("ragged row", {n}, {r.size()});
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({m, n}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= dims_.size()) throw ShapeError("axis out of range", dims_, {axis});
    return dims_[axis];
}

double& Tensor::at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }
double& Tensor::at(std::size_t i, std::size_t j, std::size_t k) { return data_[(i * dims_[1] + j) * dims_[2] + k]; }
double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
}

Tensor Tensor::reshaped(Shape dims) const {
    if (shape_size(dims) != data_.size()) throw ShapeError("reshape changes element count", dims_, dims);
    return Tensor(std::move(dims), data_);
}

std::size_t Tensor::cols() const { return dims_.empty() ? 1 : dims_.back(); }
std::size_t Tensor::rows() const { return cols() == 0 ? 0 : data_.size() / cols(); }

void Tensor::fill(double value) {
    for (auto& x : data_) x = value;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

ParamTensor::ParamTensor(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.dims()) {}

void ParamTensor::zero_grad() {
    if (grad.dims() != value.dims()) grad = Tensor(value.dims());
    grad.fill(0.0);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.dims() != b.dims()) throw ShapeError("max_abs_diff", a.dims(), b.dims());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace dcp
