// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "storm/rng.hpp"
#include "storm/tensor.hpp"

#include <cstddef>
#include <vector>

namespace storm {

// Dense primitives with analytic backward passes. Forward results are pure
// functions of the inputs; backward passes take the upstream cotangent plus
// whatever the forward cached.

//! c = a * b for a[m x k], b[k x n]. Records 2*m*k*n scalar ops into the
//! active op counter.
Tensor matmul(const Tensor& a, const Tensor& b);
//! c = a * b^T for a[m x k], b[n x k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
//! c = a^T * b for a[k x m], b[k x n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

//! Forward stats needed by layer_norm_backward.
struct LayerNormCache {
    Tensor normalized;            // the forward output
    std::vector<double> inv_std;  // 1/sqrt(var + eps) per slice
};

inline constexpr double kLayerNormEps = 1e-5;

//! Normalizes each last-axis slice to zero mean / unit variance (1/D variance,
//! epsilon inside the root, no learnable affine).
Tensor layer_norm(const Tensor& x, LayerNormCache* cache = nullptr);
Tensor layer_norm_backward(const Tensor& grad_out, const LayerNormCache& cache);

//! Exact GELU x * Phi(x) with Phi the standard normal CDF via erf.
Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& grad_out, const Tensor& x);

//! Max-subtracted softmax along `axis` of a 2-D tensor.
Tensor softmax(const Tensor& x, std::size_t axis);
//! Backward given the forward output y.
Tensor softmax_backward(const Tensor& grad_out, const Tensor& y, std::size_t axis);

//! Per slice along `axis`: softmax of (logits + g)/temperature with
//! g ~ Gumbel(0,1) when rng is given, g = 0 otherwise.
Tensor gumbel_softmax(const Tensor& logits, double temperature, RngState* rng,
                      std::size_t axis = 0);
Tensor gumbel_softmax_backward(const Tensor& grad_out, const Tensor& y, double temperature,
                               std::size_t axis = 0);

//! Column-wise one-hot argmax of a 2-D column-stochastic tensor; ties break
//! to the lowest row index. Backward is the straight-through identity.
Tensor ste_harden(const Tensor& soft);
inline Tensor ste_harden_backward(const Tensor& grad_out) { return grad_out; }

//! Mean absolute difference over all elements.
double l1_loss(const Tensor& pred, const Tensor& target);
//! d(l1)/d(pred); the subgradient at zero difference is 0.
Tensor l1_loss_backward(const Tensor& pred, const Tensor& target);

// Small elementwise helpers shared by the module code.
void add_inplace(Tensor& dst, const Tensor& src);
void axpy_inplace(Tensor& dst, double alpha, const Tensor& src);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
void scale_inplace(Tensor& a, double s);

} // namespace storm
