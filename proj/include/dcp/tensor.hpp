#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dcp {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& dims);

/// Dense row-major tensor of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape dims, double fill = 0.0);
    Tensor(Shape dims, std::vector<double> data);

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::initializer_list<double> values);

    const Shape& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;
    double& at(std::size_t i, std::size_t j, std::size_t k);
    double at(std::size_t i, std::size_t j, std::size_t k) const;

    /// Same data, new extents. Total size must be preserved.
    Tensor reshaped(Shape dims) const;

    /// Rows of a rank-2 view where the last axis is the row width.
    std::size_t rows() const;
    std::size_t cols() const;

    void fill(double value);
    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape dims_;
    std::vector<double> data_;
};

/// Parameter with its accumulated gradient.
struct ParamTensor {
    std::string name;
    Tensor value;
    Tensor grad;

    ParamTensor() = default;
    ParamTensor(std::string n, Tensor v);

    void zero_grad();
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace dcp
