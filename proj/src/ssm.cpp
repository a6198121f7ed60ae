#include "dvmsr/ssm.hpp"

#include <cmath>

#include "dvmsr/ops.hpp"

namespace dvmsr {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

double softplus_val(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

}  // namespace

void SsmParams::validate() const {
    require(a.defined() && a.ndim() == 2, "SsmParams: A must be [D,S]");
    int64_t d = a.dim(0), s = a.dim(1);
    require(s == state_size, "SsmParams: state_size does not match A");
    require(s >= 1, "SsmParams: state size must be >= 1");
    for (double v : a.values()) {
        if (!(v < 0.0)) throw std::domain_error("SsmParams: A entries must be strictly negative");
    }
    require(d_skip.defined() && d_skip.numel() == d, "SsmParams: d_skip must be [D]");
    require(dt_bias.defined() && dt_bias.numel() == d, "SsmParams: dt_bias must be [D]");
    require(x_proj_w.defined() && x_proj_w.ndim() == 2 && x_proj_w.dim(0) == dt_rank + 2 * s &&
                x_proj_w.dim(1) == d,
            "SsmParams: x_proj_w must be [R+2S, D]");
    require(dt_proj_w.defined() && dt_proj_w.ndim() == 2 && dt_proj_w.dim(0) == d &&
                dt_proj_w.dim(1) == dt_rank,
            "SsmParams: dt_proj_w must be [D, R]");
}

std::pair<Tensor, Tensor> zoh_discretize(const Tensor& a, const Tensor& b, const Tensor& delta) {
    require(a.shape() == b.shape() && a.shape() == delta.shape(),
            "zoh_discretize: A, B, delta must share one shape");
    int64_t n = a.numel();
    const double* pa = a.data();
    const double* pb = b.data();
    const double* pd = delta.data();
    std::vector<double> a_bar(static_cast<size_t>(n));
    std::vector<double> b_bar(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        if (!(pd[i] > 0.0)) throw std::domain_error("zoh_discretize: delta must be > 0");
        double z = pd[i] * pa[i];
        a_bar[i] = std::exp(z);
        b_bar[i] = zoh_phi(z) * pd[i] * pb[i];
    }
    return {Tensor::from_data(a.shape(), std::move(a_bar)),
            Tensor::from_data(a.shape(), std::move(b_bar))};
}

SsmDiscrete selectivize(const Tensor& tokens, const SsmParams& params) {
    params.validate();
    require(tokens.ndim() == 3, "selectivize: tokens must be [N,L,D]");
    int64_t n = tokens.dim(0), l = tokens.dim(1), d = tokens.dim(2);
    require(d == params.a.dim(0), "selectivize: token channels " + std::to_string(d) +
                                      " do not match parameter D " +
                                      std::to_string(params.a.dim(0)));
    int64_t s = params.state_size;
    int64_t r = params.dt_rank;

    SsmDiscrete disc;
    disc.a_bar = Tensor::zeros({n, l, d, s});
    disc.b_bar_x = Tensor::zeros({n, l, d, s});
    disc.c_seq = Tensor::zeros({n, l, s});

    const double* pt = tokens.data();
    const double* pa = params.a.data();
    const double* pxw = params.x_proj_w.data();
    const double* pdw = params.dt_proj_w.data();
    const double* pdb = params.dt_bias.data();
    double* pab = disc.a_bar.data();
    double* pbb = disc.b_bar_x.data();
    double* pc = disc.c_seq.data();

    std::vector<double> proj(static_cast<size_t>(r + 2 * s));
    for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t t = 0; t < l; ++t) {
            const double* tok = pt + (ni * l + t) * d;
            for (int64_t row = 0; row < r + 2 * s; ++row) {
                double acc = 0.0;
                const double* w = pxw + row * d;
                for (int64_t di = 0; di < d; ++di) acc += w[di] * tok[di];
                proj[static_cast<size_t>(row)] = acc;
            }
            const double* b_tok = proj.data() + r;
            const double* c_tok = proj.data() + r + s;
            double* c_out = pc + (ni * l + t) * s;
            for (int64_t si = 0; si < s; ++si) c_out[si] = c_tok[si];
            for (int64_t di = 0; di < d; ++di) {
                double dt_raw = pdb[di];
                const double* wrow = pdw + di * r;
                for (int64_t ri = 0; ri < r; ++ri) dt_raw += wrow[ri] * proj[static_cast<size_t>(ri)];
                double dt = softplus_val(dt_raw);
                double xval = tok[di];
                double* ab = pab + ((ni * l + t) * d + di) * s;
                double* bb = pbb + ((ni * l + t) * d + di) * s;
                for (int64_t si = 0; si < s; ++si) {
                    double z = dt * pa[di * s + si];
                    ab[si] = std::exp(z);
                    bb[si] = zoh_phi(z) * dt * b_tok[si] * xval;
                }
            }
        }
    }
    return disc;
}

Tensor selective_scan(const SsmDiscrete& disc, const Tensor& x, const Tensor& d_skip) {
    require(disc.a_bar.defined() && disc.a_bar.ndim() == 4, "selective_scan: a_bar must be [N,L,D,S]");
    int64_t n = disc.a_bar.dim(0), l = disc.a_bar.dim(1), d = disc.a_bar.dim(2),
            s = disc.a_bar.dim(3);
    require(disc.b_bar_x.shape() == disc.a_bar.shape(), "selective_scan: b_bar_x shape mismatch");
    require(disc.c_seq.ndim() == 3 && disc.c_seq.dim(0) == n && disc.c_seq.dim(1) == l &&
                disc.c_seq.dim(2) == s,
            "selective_scan: c_seq must be [N,L,S]");
    require(x.ndim() == 3 && x.dim(0) == n && x.dim(1) == l && x.dim(2) == d,
            "selective_scan: x must be [N,L,D]");
    require(d_skip.defined() && d_skip.numel() == d, "selective_scan: d_skip must be [D]");

    Tensor y = Tensor::zeros({n, l, d});
    const double* pab = disc.a_bar.data();
    const double* pbb = disc.b_bar_x.data();
    const double* pc = disc.c_seq.data();
    const double* px = x.data();
    const double* pd = d_skip.data();
    double* py = y.data();

    std::vector<double> h(static_cast<size_t>(d * s));
    for (int64_t ni = 0; ni < n; ++ni) {
        std::fill(h.begin(), h.end(), 0.0);
        for (int64_t t = 0; t < l; ++t) {
            const double* ab = pab + ((ni * l + t) * d) * s;
            const double* bb = pbb + ((ni * l + t) * d) * s;
            const double* ct = pc + (ni * l + t) * s;
            double* yt = py + (ni * l + t) * d;
            for (int64_t di = 0; di < d; ++di) {
                double* hd = h.data() + di * s;
                const double* abd = ab + di * s;
                const double* bbd = bb + di * s;
                double acc = 0.0;
                for (int64_t si = 0; si < s; ++si) {
                    hd[si] = abd[si] * hd[si] + bbd[si];
                    acc += ct[si] * hd[si];
                }
                yt[di] = acc + pd[di] * px[(ni * l + t) * d + di];
            }
        }
    }
    return y;
}

Tensor selective_scan_bidirectional(const Tensor& tokens, const SsmParams& params_fwd,
                                    const SsmParams& params_bwd) {
    Tensor fwd = selective_scan(selectivize(tokens, params_fwd), tokens, params_fwd.d_skip);
    Tensor rev = flip_seq(tokens);
    Tensor bwd = selective_scan(selectivize(rev, params_bwd), rev, params_bwd.d_skip);
    return add(fwd, flip_seq(bwd));
}

Tensor ssm_scan(const Tensor& x, const Tensor& dt, const Tensor& a_log, const Tensor& b_seq,
                const Tensor& c_seq, const Tensor& d_skip) {
    require(x.ndim() == 3, "ssm_scan: x must be [N,L,E]");
    int64_t n = x.dim(0), l = x.dim(1), e = x.dim(2);
    require(dt.shape() == x.shape(), "ssm_scan: dt must match x");
    require(a_log.ndim() == 2 && a_log.dim(0) == e, "ssm_scan: a_log must be [E,S]");
    int64_t s = a_log.dim(1);
    require(b_seq.ndim() == 3 && b_seq.dim(0) == n && b_seq.dim(1) == l && b_seq.dim(2) == s,
            "ssm_scan: b_seq must be [N,L,S]");
    require(c_seq.shape() == b_seq.shape(), "ssm_scan: c_seq must match b_seq");
    require(d_skip.defined() && d_skip.numel() == e, "ssm_scan: d_skip must be [E]");

    // A = -exp(a_log), strictly negative for any parameter value.
    std::vector<double> a(static_cast<size_t>(e * s));
    const double* pal = a_log.data();
    for (int64_t i = 0; i < e * s; ++i) a[i] = -std::exp(pal[i]);

    bool rec = grad_enabled() && detail::any_requires_grad({x, dt, a_log, b_seq, c_seq, d_skip});

    // The backward pass needs the whole state history; inference gets by
    // with one rolling slice per batch element.
    auto h_saved = std::make_shared<std::vector<double>>(
        static_cast<size_t>(rec ? n * l * e * s : e * s));
    std::vector<double> out(static_cast<size_t>(n * l * e));

    const double* px = x.data();
    const double* pdt = dt.data();
    const double* pb = b_seq.data();
    const double* pc = c_seq.data();
    const double* pd = d_skip.data();
    double* ph = h_saved->data();

    for (int64_t ni = 0; ni < n; ++ni) {
        if (!rec) std::fill(h_saved->begin(), h_saved->end(), 0.0);
        for (int64_t t = 0; t < l; ++t) {
            const double* bt = pb + (ni * l + t) * s;
            const double* ct = pc + (ni * l + t) * s;
            for (int64_t ei = 0; ei < e; ++ei) {
                int64_t idx = (ni * l + t) * e + ei;
                double dtv = pdt[idx];
                double xv = px[idx];
                const double* ae = a.data() + ei * s;
                double* ht = rec ? ph + idx * s : ph + ei * s;
                const double* hprev =
                    rec ? (t > 0 ? ph + ((ni * l + t - 1) * e + ei) * s : nullptr)
                        : (t > 0 ? ht : nullptr);
                double acc = 0.0;
                for (int64_t si = 0; si < s; ++si) {
                    double z = dtv * ae[si];
                    double abar = std::exp(z);
                    double bbar_x = zoh_phi(z) * dtv * bt[si] * xv;
                    double hv = (hprev ? abar * hprev[si] : 0.0) + bbar_x;
                    ht[si] = hv;
                    acc += ct[si] * hv;
                }
                out[static_cast<size_t>(idx)] = acc + pd[ei] * xv;
            }
        }
    }

    std::function<void(detail::Node&)> bw;
    if (rec) {
        auto xn = x.node();
        auto dtn = dt.node();
        auto aln = a_log.node();
        auto bn = b_seq.node();
        auto cn = c_seq.node();
        auto dn = d_skip.node();
        auto a_saved = std::make_shared<std::vector<double>>(std::move(a));
        bw = [xn, dtn, aln, bn, cn, dn, h_saved, a_saved, n, l, e, s](detail::Node& o) {
            const double* g = o.grad.data();
            const double* pa = a_saved->data();
            const double* ph = h_saved->data();
            const double* px = xn->value.data();
            const double* pdt = dtn->value.data();
            const double* pb = bn->value.data();
            const double* pc = cn->value.data();
            const double* pd = dn->value.data();

            bool need_x = xn->requires_grad;
            bool need_dt = dtn->requires_grad;
            bool need_a = aln->requires_grad;
            bool need_b = bn->requires_grad;
            bool need_c = cn->requires_grad;
            bool need_d = dn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_dt) dtn->ensure_grad();
            if (need_a) aln->ensure_grad();
            if (need_b) bn->ensure_grad();
            if (need_c) cn->ensure_grad();
            if (need_d) dn->ensure_grad();

            std::vector<double> ga(static_cast<size_t>(e * s), 0.0);  // d/dA, folded at the end
            std::vector<double> carry(static_cast<size_t>(s));
            for (int64_t ni = 0; ni < n; ++ni) {
                for (int64_t ei = 0; ei < e; ++ei) {
                    std::fill(carry.begin(), carry.end(), 0.0);
                    const double* ae = pa + ei * s;
                    for (int64_t t = l - 1; t >= 0; --t) {
                        int64_t idx = (ni * l + t) * e + ei;
                        double gy = g[idx];
                        double dtv = pdt[idx];
                        double xv = px[idx];
                        const double* bt = pb + (ni * l + t) * s;
                        const double* ct = pc + (ni * l + t) * s;
                        const double* ht = ph + idx * s;
                        const double* hprev = t > 0 ? ph + ((ni * l + t - 1) * e + ei) * s : nullptr;

                        if (need_d) dn->grad[ei] += gy * xv;
                        double gx_acc = need_x ? gy * pd[ei] : 0.0;
                        double gdt_acc = 0.0;

                        for (int64_t si = 0; si < s; ++si) {
                            double gh = ct[si] * gy + carry[si];
                            if (need_c) cn->grad[(ni * l + t) * s + si] += gy * ht[si];

                            double z = dtv * ae[si];
                            double abar = std::exp(z);
                            double phi = zoh_phi(z);
                            double hp = hprev ? hprev[si] : 0.0;

                            // h_t = abar*h_{t-1} + phi(z)*dt*B*x, z = dt*A
                            double g_z = gh * (abar * hp + zoh_phi_grad(z) * dtv * bt[si] * xv);
                            gdt_acc += g_z * ae[si] + gh * phi * bt[si] * xv;
                            ga[ei * s + si] += g_z * dtv;
                            if (need_b) bn->grad[(ni * l + t) * s + si] += gh * phi * dtv * xv;
                            gx_acc += gh * phi * dtv * bt[si];

                            carry[si] = gh * abar;
                        }
                        if (need_x) xn->grad[idx] += gx_acc;
                        if (need_dt) dtn->grad[idx] += gdt_acc;
                    }
                }
            }
            if (need_a) {
                // dA/da_log = -exp(a_log) = A
                for (int64_t i = 0; i < e * s; ++i) aln->grad[i] += ga[i] * pa[i];
            }
        };
    }
    return detail::make_result({n, l, e}, std::move(out), {x, dt, a_log, b_seq, c_seq, d_skip},
                               std::move(bw), "ssm_scan");
}

}  // namespace dvmsr
