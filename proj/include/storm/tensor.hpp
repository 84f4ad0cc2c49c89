// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace storm {

//! Thrown when tensor extents do not line up; the message names both shapes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

//! Thrown when a run configuration is internally inconsistent.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

//! Dense row-major tensor of doubles. product(shape) == data.size() always.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);
    Tensor(std::initializer_list<std::size_t> shape) : Tensor(std::vector<std::size_t>(shape)) {}

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor identity(std::size_t n);
    //! 2-D tensor from nested braces, row by row.
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    //! 2-D element access; bounds are the caller's responsibility.
    double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    //! 3-D element access.
    double& at3(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at3(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    //! Reinterpret the extents without touching the payload.
    Tensor reshaped(std::vector<std::size_t> shape) const;

    bool all_finite() const;
    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::string shape_str(const std::vector<std::size_t>& shape);
std::size_t shape_numel(const std::vector<std::size_t>& shape);

//! Value plus a same-shape cotangent accumulated during backward passes.
struct DualTensor {
    Tensor value;
    Tensor gradient;

    explicit DualTensor(Tensor v) : value(std::move(v)), gradient(Tensor::zeros(value.shape())) {}
    void zero_grad();
};

// --- binary fixture format -------------------------------------------------
// 8-byte magic "STRMTNSR", u32 rank, rank x u64 extents, then little-endian
// f64 payload, row-major.

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

} // namespace storm
