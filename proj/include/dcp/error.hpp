#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcp {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents. Carries both offending shapes.
class ShapeError : public Error {
public:
    ShapeError(const std::string& what, std::vector<std::size_t> lhs, std::vector<std::size_t> rhs);

    const std::vector<std::size_t>& lhs() const noexcept { return lhs_; }
    const std::vector<std::size_t>& rhs() const noexcept { return rhs_; }

private:
    std::vector<std::size_t> lhs_;
    std::vector<std::size_t> rhs_;
};

/// A value outside its documented domain (zero-norm rows, empty masks, bad names...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration: rejected before any computation starts.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed feature/checkpoint file. `offset` is the byte position where decoding failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset);

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// NaN/Inf encountered where a finite value is required.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

std::string shape_string(const std::vector<std::size_t>& dims);

}  // namespace dcp
