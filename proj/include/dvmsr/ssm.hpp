#pragma once

#include "dvmsr/tensor.hpp"

namespace dvmsr {

// phi(z) = (exp(z) - 1) / z, the zero-order-hold input factor: the exact
// discretization gives B_bar = phi(delta*A) * delta * B. Near z = 0 the
// direct formula cancels catastrophically, so a short series takes over.
inline double zoh_phi(double z) {
    if (std::abs(z) < 1e-6) return 1.0 + z * (0.5 + z / 6.0);
    return std::expm1(z) / z;
}

// The exact derivative formula loses ~half its digits to cancellation for
// |z| below ~1e-3, so the series branch is wider than phi's.
inline double zoh_phi_grad(double z) {
    if (std::abs(z) < 1e-3) return 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z / 30.0));
    return ((z - 1.0) * std::exp(z) + 1.0) / (z * z);
}

// Input-independent parameters of one scan direction, kernel view: the
// state matrix is diagonal per channel, stored as a [D, S] table of
// strictly negative reals.
struct SsmParams {
    Tensor a;          // [D, S], all entries < 0
    Tensor d_skip;     // [D]
    Tensor dt_bias;    // [D]
    Tensor x_proj_w;   // [R + 2S, D]: rows 0..R -> dt (rank-reduced), then B, then C
    Tensor dt_proj_w;  // [D, R]
    int state_size = 0;
    int dt_rank = 0;

    void validate() const;
};

// Token-dependent discretized parameters.
struct SsmDiscrete {
    Tensor a_bar;    // [N, L, D, S], entries in (0, 1)
    Tensor b_bar_x;  // [N, L, D, S], B_bar premultiplied by the token value
    Tensor c_seq;    // [N, L, S]
};

// Elementwise exact ZOH: A_bar = exp(delta*A), B_bar = phi(delta*A)*delta*B.
// All three inputs share one shape; delta must be strictly positive and A
// strictly negative. Returns (A_bar, B_bar).
std::pair<Tensor, Tensor> zoh_discretize(const Tensor& a, const Tensor& b, const Tensor& delta);

// Per-token selection: dt = softplus(dt_proj(x_proj_dt(token)) + dt_bias),
// B/C = x_proj slices, then ZOH per token with B_bar premultiplied by the
// token value.
SsmDiscrete selectivize(const Tensor& tokens, const SsmParams& params);

// Left-to-right recurrence h_t = A_bar h_{t-1} + (B_bar x)_t with readout
// y_t = C_t . h_t + d_skip * x_t, h_0 = 0. Plain evaluation, no gradient.
Tensor selective_scan(const SsmDiscrete& disc, const Tensor& x, const Tensor& d_skip);

// Forward scan plus re-reversed backward scan with independent parameters.
Tensor selective_scan_bidirectional(const Tensor& tokens, const SsmParams& params_fwd,
                                    const SsmParams& params_bwd);

// Autodiff-integrated fused selection + scan used inside the network.
//   x:      [N, L, E] token values entering the SSM
//   dt:     [N, L, E] positive step sizes (post-softplus)
//   a_log:  [E, S] with A = -exp(a_log)
//   b_seq:  [N, L, S] input projections
//   c_seq:  [N, L, S] output projections
//   d_skip: [E] passthrough gains
// Returns [N, L, E]. Backward covers every input.
Tensor ssm_scan(const Tensor& x, const Tensor& dt, const Tensor& a_log, const Tensor& b_seq,
                const Tensor& c_seq, const Tensor& d_skip);

}  // namespace dvmsr
