#pragma once

#include "dvmsr/tensor.hpp"

namespace dvmsr {

// Elementwise / reduction
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);  // scalar
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);

// y = x W^T + b over the last axis. x: [..., Din], w: [Dout, Din],
// b: [Dout] or an undefined Tensor for no bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});

// Cross-correlation plus bias. x: [N,Cin,H,W], w: [Cout,Cin,k,k], b: [Cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int padding = 0);

// Depthwise causal 1-D convolution over the token axis with zero left
// padding: output t sees inputs max(0, t-k+1)..t. x: [N,L,D], w: [D,k], b: [D].
// w[d, k-1] is the current-position tap.
Tensor conv1d_causal(const Tensor& x, const Tensor& w, const Tensor& b);

// Per-token normalization over the last axis with biased (1/D) variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Depth-to-space: [N, C*r^2, H, W] -> [N, C, rH, rW]; channel block (c, i, j)
// maps to spatial offset (i, j).
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& x, int r);

// [N,C,H,W] <-> [N, H*W, C] with raster-order tokens.
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& x, int64_t channels, int64_t h, int64_t w);

// Reverse a [N,L,D] sequence along L.
Tensor flip_seq(const Tensor& x);

// Contiguous slice of the last axis.
Tensor slice_last(const Tensor& x, int64_t start, int64_t len);

// Mean absolute / mean squared difference, reduced to a scalar.
Tensor l1_loss(const Tensor& pred, const Tensor& target);
Tensor l2_loss(const Tensor& pred, const Tensor& target);

}  // namespace dvmsr
