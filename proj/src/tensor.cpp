// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include "storm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace storm {

namespace {
constexpr char kMagic[8] = {'S', 'T', 'R', 'M', 'T', 'N', 'S', 'R'};
} // namespace

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
    for (std::size_t e : shape_) {
        if (e == 0) throw ShapeError("tensor extent must be positive, got " + storm::shape_str(shape_));
    }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("tensor payload of " + std::to_string(data_.size()) +
                         " values does not fill shape " + storm::shape_str(shape_));
    }
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at2(i, i) = 1.0;
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = rows.begin()->size();
    Tensor t({r, c});
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged initializer for 2-D tensor");
        for (double v : row) t.data_[i++] = v;
    }
    return t;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_str() + " into " + storm::shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const { return storm::shape_str(shape_); }

void DualTensor::zero_grad() {
    std::fill(gradient.data(), gradient.data() + gradient.size(), 0.0);
}

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write(kMagic, sizeof(kMagic));
    const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
    os.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (std::size_t e : t.shape()) {
        const std::uint64_t e64 = e;
        os.write(reinterpret_cast<const char*>(&e64), sizeof(e64));
    }
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a STRMTNSR stream");
    }
    std::uint32_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::uint64_t e = 0;
        is.read(reinterpret_cast<char*>(&e), sizeof(e));
        shape[i] = static_cast<std::size_t>(e);
    }
    std::vector<double> data(shape_numel(shape));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated STRMTNSR stream");
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    write_tensor(os, t);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    return read_tensor(is);
}

} // namespace storm
