// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include "storm/ops.hpp"

#include "storm/kernels.hpp"
#include "storm/opcount.hpp"

#include <cmath>
#include <stdexcept>

namespace storm {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

// Below this op volume the OpenMP fork costs more than the math.
constexpr std::size_t kSmallMatmul = 32768;

void require_2d(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError(std::string(op) + ": expects 2-D operands, got " + a.shape_str() +
                         " and " + b.shape_str());
    }
}

void record(std::size_t m, std::size_t k, std::size_t n) {
    if (OpCounter* counter = active_op_counter()) counter->record_matmul(m, k, n);
}

struct SliceIter {
    // Walks a 2-D tensor along `axis`: `count` slices of `len` elements with
    // stride `stride` between consecutive elements of one slice.
    std::size_t count, len, stride, slice_step;
};

SliceIter slices(const Tensor& x, std::size_t axis, const char* op) {
    if (x.rank() != 2) {
        throw ShapeError(std::string(op) + ": expects a 2-D tensor, got " + x.shape_str());
    }
    if (axis > 1) throw ShapeError(std::string(op) + ": axis out of range");
    const std::size_t r = x.extent(0), c = x.extent(1);
    if (axis == 0) return {c, r, c, 1};  // columns
    return {r, c, 1, c};                 // rows
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, b, "matmul");
    if (a.extent(1) != b.extent(0)) {
        throw ShapeError("matmul: inner extents differ, lhs " + a.shape_str() + ", rhs " +
                         b.shape_str());
    }
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor c({m, n});
    record(m, k, n);
    if (exec_mode() == ExecMode::Parallel && m * k * n >= kSmallMatmul) {
        matmul_parallel(a.data(), b.data(), c.data(), m, k, n);
    } else {
        matmul_serial(a.data(), b.data(), c.data(), m, k, n);
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d(a, b, "matmul_nt");
    if (a.extent(1) != b.extent(1)) {
        throw ShapeError("matmul_nt: inner extents differ, lhs " + a.shape_str() + ", rhs " +
                         b.shape_str());
    }
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
    Tensor c({m, n});
    record(m, k, n);
    if (exec_mode() == ExecMode::Parallel && m * k * n >= kSmallMatmul) {
        matmul_nt_parallel(a.data(), b.data(), c.data(), m, k, n);
    } else {
        matmul_nt_serial(a.data(), b.data(), c.data(), m, k, n);
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_2d(a, b, "matmul_tn");
    if (a.extent(0) != b.extent(0)) {
        throw ShapeError("matmul_tn: inner extents differ, lhs " + a.shape_str() + ", rhs " +
                         b.shape_str());
    }
    const std::size_t m = a.extent(1), k = a.extent(0), n = b.extent(1);
    Tensor c({m, n});
    record(m, k, n);
    if (exec_mode() == ExecMode::Parallel && m * k * n >= kSmallMatmul) {
        matmul_tn_parallel(a.data(), b.data(), c.data(), m, k, n);
    } else {
        matmul_tn_serial(a.data(), b.data(), c.data(), m, k, n);
    }
    return c;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expects a 2-D tensor, got " + a.shape_str());
    const std::size_t r = a.extent(0), c = a.extent(1);
    Tensor t({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) t.at2(j, i) = a.at2(i, j);
    return t;
}

Tensor layer_norm(const Tensor& x, LayerNormCache* cache) {
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    if (d < 2) {
        throw ShapeError("layer_norm: degenerate last axis of extent " + std::to_string(d) +
                         " in " + x.shape_str());
    }
    const std::size_t rows = x.size() / d;
    Tensor y(x.shape());
    std::vector<double> inv_std(rows);
    const double* in = x.data();
    double* out = y.data();
    double* istd = inv_std.data();
    for_each_index(rows, [&](std::size_t r) {
        const double* xr = in + r * d;
        double* yr = out + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dv = xr[j] - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double s = 1.0 / std::sqrt(var + kLayerNormEps);
        istd[r] = s;
        for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * s;
    });
    if (cache) {
        cache->normalized = y;
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Tensor layer_norm_backward(const Tensor& grad_out, const LayerNormCache& cache) {
    const Tensor& y = cache.normalized;
    if (!grad_out.same_shape(y)) {
        throw ShapeError("layer_norm_backward: cotangent " + grad_out.shape_str() +
                         " does not match forward output " + y.shape_str());
    }
    const std::size_t d = y.shape().back();
    const std::size_t rows = y.size() / d;
    Tensor dx(y.shape());
    const double* g = grad_out.data();
    const double* yv = y.data();
    double* out = dx.data();
    const double* istd = cache.inv_std.data();
    for_each_index(rows, [&](std::size_t r) {
        const double* gr = g + r * d;
        const double* yr = yv + r * d;
        double* dr = out + r * d;
        double g_mean = 0.0, gy_mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            g_mean += gr[j];
            gy_mean += gr[j] * yr[j];
        }
        g_mean /= static_cast<double>(d);
        gy_mean /= static_cast<double>(d);
        const double s = istd[r];
        for (std::size_t j = 0; j < d; ++j) {
            dr[j] = s * (gr[j] - g_mean - yr[j] * gy_mean);
        }
    });
    return dx;
}

Tensor gelu(const Tensor& x) {
    Tensor y(x.shape());
    const double* in = x.data();
    double* out = y.data();
    const std::size_t n = x.size();
    for_each_index(n, [&](std::size_t i) {
        out[i] = 0.5 * in[i] * (1.0 + std::erf(in[i] * kInvSqrt2));
    });
    return y;
}

Tensor gelu_backward(const Tensor& grad_out, const Tensor& x) {
    if (!grad_out.same_shape(x)) {
        throw ShapeError("gelu_backward: cotangent " + grad_out.shape_str() +
                         " does not match input " + x.shape_str());
    }
    Tensor dx(x.shape());
    const double* g = grad_out.data();
    const double* in = x.data();
    double* out = dx.data();
    const std::size_t n = x.size();
    for_each_index(n, [&](std::size_t i) {
        const double v = in[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        out[i] = g[i] * (cdf + v * pdf);
    });
    return dx;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const SliceIter it = slices(x, axis, "softmax");
    Tensor y(x.shape());
    const double* in = x.data();
    double* out = y.data();
    for_each_index(it.count, [&](std::size_t s) {
        const double* xs = in + s * it.slice_step;
        double* ys = out + s * it.slice_step;
        double mx = xs[0];
        for (std::size_t j = 1; j < it.len; ++j) mx = std::max(mx, xs[j * it.stride]);
        double sum = 0.0;
        for (std::size_t j = 0; j < it.len; ++j) {
            const double e = std::exp(xs[j * it.stride] - mx);
            ys[j * it.stride] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < it.len; ++j) ys[j * it.stride] *= inv;
    });
    return y;
}

Tensor softmax_backward(const Tensor& grad_out, const Tensor& y, std::size_t axis) {
    if (!grad_out.same_shape(y)) {
        throw ShapeError("softmax_backward: cotangent " + grad_out.shape_str() +
                         " does not match output " + y.shape_str());
    }
    const SliceIter it = slices(y, axis, "softmax_backward");
    Tensor dx(y.shape());
    const double* g = grad_out.data();
    const double* yv = y.data();
    double* out = dx.data();
    for_each_index(it.count, [&](std::size_t s) {
        const double* gs = g + s * it.slice_step;
        const double* ys = yv + s * it.slice_step;
        double* ds = out + s * it.slice_step;
        double dot = 0.0;
        for (std::size_t j = 0; j < it.len; ++j) dot += gs[j * it.stride] * ys[j * it.stride];
        for (std::size_t j = 0; j < it.len; ++j) {
            ds[j * it.stride] = ys[j * it.stride] * (gs[j * it.stride] - dot);
        }
    });
    return dx;
}

Tensor gumbel_softmax(const Tensor& logits, double temperature, RngState* rng, std::size_t axis) {
    if (!(temperature > 0.0)) {
        throw std::domain_error("gumbel_softmax: temperature must be positive, got " +
                                std::to_string(temperature));
    }
    const SliceIter it = slices(logits, axis, "gumbel_softmax");
    Tensor perturbed(logits.shape());
    const double* in = logits.data();
    double* out = perturbed.data();
    const double inv_t = 1.0 / temperature;
    // Noise is drawn slice by slice in slice order so a given rng state
    // always produces the same assignment, independent of thread count.
    for (std::size_t s = 0; s < it.count; ++s) {
        for (std::size_t j = 0; j < it.len; ++j) {
            const std::size_t idx = s * it.slice_step + j * it.stride;
            const double g = rng ? rng->next_gumbel() : 0.0;
            out[idx] = (in[idx] + g) * inv_t;
        }
    }
    return softmax(perturbed, axis);
}

Tensor gumbel_softmax_backward(const Tensor& grad_out, const Tensor& y, double temperature,
                               std::size_t axis) {
    Tensor d = softmax_backward(grad_out, y, axis);
    scale_inplace(d, 1.0 / temperature);
    return d;
}

Tensor ste_harden(const Tensor& soft) {
    if (soft.rank() != 2) {
        throw ShapeError("ste_harden: expects a 2-D tensor, got " + soft.shape_str());
    }
    const std::size_t rows = soft.extent(0), cols = soft.extent(1);
    Tensor hard({rows, cols});
    for (std::size_t c = 0; c < cols; ++c) {
        std::size_t best = 0;
        double best_v = soft.at2(0, c);
        for (std::size_t r = 1; r < rows; ++r) {
            if (soft.at2(r, c) > best_v) {  // strict: ties keep the lowest index
                best_v = soft.at2(r, c);
                best = r;
            }
        }
        hard.at2(best, c) = 1.0;
    }
    return hard;
}

double l1_loss(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target)) {
        throw ShapeError("l1_loss: shapes differ, pred " + pred.shape_str() + ", target " +
                         target.shape_str());
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - target[i]);
    return sum / static_cast<double>(pred.size());
}

Tensor l1_loss_backward(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target)) {
        throw ShapeError("l1_loss_backward: shapes differ, pred " + pred.shape_str() +
                         ", target " + target.shape_str());
    }
    Tensor g(pred.shape());
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        g[i] = d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0);
    }
    return g;
}

void add_inplace(Tensor& dst, const Tensor& src) {
    if (!dst.same_shape(src)) {
        throw ShapeError("add: shapes differ, " + dst.shape_str() + " vs " + src.shape_str());
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void axpy_inplace(Tensor& dst, double alpha, const Tensor& src) {
    if (!dst.same_shape(src)) {
        throw ShapeError("axpy: shapes differ, " + dst.shape_str() + " vs " + src.shape_str());
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

Tensor add(const Tensor& a, const Tensor& b) {
    Tensor c = a;
    add_inplace(c, b);
    return c;
}

Tensor scale(const Tensor& a, double s) {
    Tensor c = a;
    scale_inplace(c, s);
    return c;
}

void scale_inplace(Tensor& a, double s) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= s;
}

} // namespace storm
