#include "dvmsr/ops.hpp"

#include <cmath>
#include <cstring>

namespace dvmsr {

namespace {

using detail::Node;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

bool recording(std::initializer_list<Tensor> inputs) {
    if (!grad_enabled()) return false;
    for (const auto& t : inputs) {
        if (t.defined() && t.requires_grad()) return true;
    }
    return false;
}

void accumulate(const std::shared_ptr<Node>& n, const std::vector<double>& g) {
    if (!n->requires_grad) return;
    n->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];

    std::function<void(Node&)> bw;
    if (recording({a, b})) {
        auto an = a.node();
        auto bn = b.node();
        bw = [an, bn](Node& o) {
            for (auto& p : {an, bn}) {
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) p->grad[i] += o.grad[i];
            }
        };
    }
    return detail::make_result(a.shape(), std::move(out), {a, b}, std::move(bw), "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];

    std::function<void(Node&)> bw;
    if (recording({a, b})) {
        auto an = a.node();
        auto bn = b.node();
        bw = [an, bn](Node& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
            }
        };
    }
    return detail::make_result(a.shape(), std::move(out), {a, b}, std::move(bw), "sub");
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];

    std::function<void(Node&)> bw;
    if (recording({a, b})) {
        auto an = a.node();
        auto bn = b.node();
        bw = [an, bn](Node& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i] * an->value[i];
            }
        };
    }
    return detail::make_result(a.shape(), std::move(out), {a, b}, std::move(bw), "hadamard");
}

Tensor scale(const Tensor& a, double c) {
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * c;

    std::function<void(Node&)> bw;
    if (recording({a})) {
        auto an = a.node();
        bw = [an, c](Node& o) {
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += c * o.grad[i];
        };
    }
    return detail::make_result(a.shape(), std::move(out), {a}, std::move(bw), "scale");
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    const double* pa = a.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) s += pa[i];

    std::function<void(Node&)> bw;
    if (recording({a})) {
        auto an = a.node();
        bw = [an](Node& o) {
            an->ensure_grad();
            double g = o.grad[0];
            for (auto& gi : an->grad) gi += g;
        };
    }
    return detail::make_result({1}, {s}, {a}, std::move(bw), "sum");
}

Tensor silu(const Tensor& a) {
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * sigmoid(pa[i]);

    std::function<void(Node&)> bw;
    if (recording({a})) {
        auto an = a.node();
        bw = [an](Node& o) {
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                double s = sigmoid(an->value[i]);
                an->grad[i] += o.grad[i] * s * (1.0 + an->value[i] * (1.0 - s));
            }
        };
    }
    return detail::make_result(a.shape(), std::move(out), {a}, std::move(bw), "silu");
}

Tensor softplus(const Tensor& a) {
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    for (int64_t i = 0; i < n; ++i) {
        double x = pa[i];
        out[i] = x > 30.0 ? x : std::log1p(std::exp(x));
    }

    std::function<void(Node&)> bw;
    if (recording({a})) {
        auto an = a.node();
        bw = [an](Node& o) {
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                an->grad[i] += o.grad[i] * sigmoid(an->value[i]);
            }
        };
    }
    return detail::make_result(a.shape(), std::move(out), {a}, std::move(bw), "softplus");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.ndim() >= 1, "linear: input must have at least one axis");
    require(w.ndim() == 2, "linear: weight must be [Dout, Din]");
    int64_t din = x.dim(-1);
    int64_t dout = w.dim(0);
    require(w.dim(1) == din, "linear: input feature size " + std::to_string(din) +
                                 " does not match weight Din " + std::to_string(w.dim(1)));
    if (b.defined()) {
        require(b.ndim() == 1 && b.dim(0) == dout, "linear: bias must be [Dout]");
    }
    int64_t tokens = x.numel() / din;

    Shape out_shape = x.shape();
    out_shape.back() = dout;
    std::vector<double> out(static_cast<size_t>(tokens * dout));
    const double* px = x.data();
    const double* pw = w.data();
    const double* pb = b.defined() ? b.data() : nullptr;

    for (int64_t t = 0; t < tokens; ++t) {
        const double* xt = px + t * din;
        double* yt = out.data() + t * dout;
        for (int64_t o = 0; o < dout; ++o) {
            const double* wo = pw + o * din;
            double acc = pb ? pb[o] : 0.0;
            for (int64_t i = 0; i < din; ++i) acc += xt[i] * wo[i];
            yt[o] = acc;
        }
    }

    std::function<void(Node&)> bw;
    if (recording({x, w, b})) {
        auto xn = x.node();
        auto wn = w.node();
        auto bn = b.defined() ? b.node() : nullptr;
        bw = [xn, wn, bn, tokens, din, dout](Node& o) {
            const double* g = o.grad.data();
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int64_t t = 0; t < tokens; ++t) {
                    const double* gt = g + t * dout;
                    double* gx = xn->grad.data() + t * din;
                    for (int64_t oo = 0; oo < dout; ++oo) {
                        double gv = gt[oo];
                        if (gv == 0.0) continue;
                        const double* wo = wn->value.data() + oo * din;
                        for (int64_t i = 0; i < din; ++i) gx[i] += gv * wo[i];
                    }
                }
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                for (int64_t t = 0; t < tokens; ++t) {
                    const double* gt = g + t * dout;
                    const double* xt = xn->value.data() + t * din;
                    for (int64_t oo = 0; oo < dout; ++oo) {
                        double gv = gt[oo];
                        if (gv == 0.0) continue;
                        double* gw = wn->grad.data() + oo * din;
                        for (int64_t i = 0; i < din; ++i) gw[i] += gv * xt[i];
                    }
                }
            }
            if (bn && bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t t = 0; t < tokens; ++t) {
                    const double* gt = g + t * dout;
                    for (int64_t oo = 0; oo < dout; ++oo) bn->grad[oo] += gt[oo];
                }
            }
        };
    }
    return detail::make_result(std::move(out_shape), std::move(out), {x, w, b}, std::move(bw),
                               "linear");
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    require(x.ndim() == 4, "conv2d: input must be [N,Cin,H,W]");
    require(w.ndim() == 4, "conv2d: weight must be [Cout,Cin,k,k]");
    require(stride >= 1, "conv2d: stride must be >= 1");
    require(padding >= 0, "conv2d: padding must be >= 0");
    int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int64_t cout = w.dim(0), k = w.dim(2);
    require(w.dim(1) == cin, "conv2d: input channels " + std::to_string(cin) +
                                 " do not match weight Cin " + std::to_string(w.dim(1)));
    require(w.dim(3) == k, "conv2d: kernel must be square");
    require(k % 2 == 1, "conv2d: kernel size must be odd");
    require(b.defined() && b.ndim() == 1 && b.dim(0) == cout, "conv2d: bias must be [Cout]");
    int64_t oh = (h + 2 * padding - k) / stride + 1;
    int64_t ow = (wd + 2 * padding - k) / stride + 1;
    require(oh >= 1 && ow >= 1, "conv2d: empty output for input " + shape_str(x.shape()));

    std::vector<double> out(static_cast<size_t>(n * cout * oh * ow));
    const double* px = x.data();
    const double* pw = w.data();
    const double* pb = b.data();

    for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t co = 0; co < cout; ++co) {
            double* yp = out.data() + ((ni * cout + co) * oh) * ow;
            for (int64_t i = 0; i < oh * ow; ++i) yp[i] = pb[co];
            for (int64_t ci = 0; ci < cin; ++ci) {
                const double* xp = px + ((ni * cin + ci) * h) * wd;
                const double* wp = pw + ((co * cin + ci) * k) * k;
                for (int64_t y = 0; y < oh; ++y) {
                    for (int64_t xo = 0; xo < ow; ++xo) {
                        double acc = 0.0;
                        int64_t iy0 = y * stride - padding;
                        int64_t ix0 = xo * stride - padding;
                        for (int64_t ky = 0; ky < k; ++ky) {
                            int64_t iy = iy0 + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int64_t kx = 0; kx < k; ++kx) {
                                int64_t ix = ix0 + kx;
                                if (ix < 0 || ix >= wd) continue;
                                acc += xp[iy * wd + ix] * wp[ky * k + kx];
                            }
                        }
                        yp[y * ow + xo] += acc;
                    }
                }
            }
        }
    }

    std::function<void(Node&)> bw;
    if (recording({x, w, b})) {
        auto xn = x.node();
        auto wn = w.node();
        auto bn = b.node();
        int64_t s = stride, p = padding;
        bw = [xn, wn, bn, n, cin, cout, h, wd, k, oh, ow, s, p](Node& o) {
            const double* g = o.grad.data();
            bool need_x = xn->requires_grad;
            bool need_w = wn->requires_grad;
            bool need_b = bn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_w) wn->ensure_grad();
            if (need_b) bn->ensure_grad();
            for (int64_t ni = 0; ni < n; ++ni) {
                for (int64_t co = 0; co < cout; ++co) {
                    const double* gp = g + ((ni * cout + co) * oh) * ow;
                    if (need_b) {
                        double acc = 0.0;
                        for (int64_t i = 0; i < oh * ow; ++i) acc += gp[i];
                        bn->grad[co] += acc;
                    }
                    if (!need_x && !need_w) continue;
                    for (int64_t ci = 0; ci < cin; ++ci) {
                        const double* xp = xn->value.data() + ((ni * cin + ci) * h) * wd;
                        const double* wp = wn->value.data() + ((co * cin + ci) * k) * k;
                        double* gxp = need_x ? xn->grad.data() + ((ni * cin + ci) * h) * wd : nullptr;
                        double* gwp = need_w ? wn->grad.data() + ((co * cin + ci) * k) * k : nullptr;
                        for (int64_t y = 0; y < oh; ++y) {
                            for (int64_t xo = 0; xo < ow; ++xo) {
                                double gv = gp[y * ow + xo];
                                if (gv == 0.0) continue;
                                int64_t iy0 = y * s - p;
                                int64_t ix0 = xo * s - p;
                                for (int64_t ky = 0; ky < k; ++ky) {
                                    int64_t iy = iy0 + ky;
                                    if (iy < 0 || iy >= h) continue;
                                    for (int64_t kx = 0; kx < k; ++kx) {
                                        int64_t ix = ix0 + kx;
                                        if (ix < 0 || ix >= wd) continue;
                                        if (gxp) gxp[iy * wd + ix] += gv * wp[ky * k + kx];
                                        if (gwp) gwp[ky * k + kx] += gv * xp[iy * wd + ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return detail::make_result({n, cout, oh, ow}, std::move(out), {x, w, b}, std::move(bw),
                               "conv2d");
}

Tensor conv1d_causal(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.ndim() == 3, "conv1d_causal: input must be [N,L,D]");
    require(w.ndim() == 2, "conv1d_causal: weight must be [D,k]");
    int64_t n = x.dim(0), l = x.dim(1), d = x.dim(2);
    int64_t k = w.dim(1);
    require(k >= 1, "conv1d_causal: kernel size must be >= 1");
    require(w.dim(0) == d, "conv1d_causal: channel count " + std::to_string(d) +
                               " does not match weight D " + std::to_string(w.dim(0)));
    require(b.defined() && b.ndim() == 1 && b.dim(0) == d, "conv1d_causal: bias must be [D]");

    std::vector<double> out(static_cast<size_t>(n * l * d));
    const double* px = x.data();
    const double* pw = w.data();
    const double* pb = b.data();
    for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t t = 0; t < l; ++t) {
            const double* base = px + (ni * l) * d;
            double* yt = out.data() + (ni * l + t) * d;
            for (int64_t di = 0; di < d; ++di) {
                double acc = pb[di];
                for (int64_t ki = 0; ki < k; ++ki) {
                    int64_t tt = t - (k - 1) + ki;
                    if (tt < 0) continue;
                    acc += pw[di * k + ki] * base[tt * d + di];
                }
                yt[di] = acc;
            }
        }
    }

    std::function<void(Node&)> bw;
    if (recording({x, w, b})) {
        auto xn = x.node();
        auto wn = w.node();
        auto bn = b.node();
        bw = [xn, wn, bn, n, l, d, k](Node& o) {
            const double* g = o.grad.data();
            bool need_x = xn->requires_grad;
            bool need_w = wn->requires_grad;
            bool need_b = bn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_w) wn->ensure_grad();
            if (need_b) bn->ensure_grad();
            for (int64_t ni = 0; ni < n; ++ni) {
                const double* xb = xn->value.data() + (ni * l) * d;
                double* gxb = need_x ? xn->grad.data() + (ni * l) * d : nullptr;
                for (int64_t t = 0; t < l; ++t) {
                    const double* gt = g + (ni * l + t) * d;
                    for (int64_t di = 0; di < d; ++di) {
                        double gv = gt[di];
                        if (gv == 0.0) continue;
                        if (need_b) bn->grad[di] += gv;
                        for (int64_t ki = 0; ki < k; ++ki) {
                            int64_t tt = t - (k - 1) + ki;
                            if (tt < 0) continue;
                            if (need_x) gxb[tt * d + di] += gv * wn->value[di * k + ki];
                            if (need_w) wn->grad[di * k + ki] += gv * xb[tt * d + di];
                        }
                    }
                }
            }
        };
    }
    return detail::make_result(x.shape(), std::move(out), {x, w, b}, std::move(bw),
                               "conv1d_causal");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require(x.ndim() >= 1, "layer_norm: input must have at least one axis");
    int64_t d = x.dim(-1);
    require(gamma.ndim() == 1 && gamma.dim(0) == d, "layer_norm: gamma must be [D]");
    require(beta.ndim() == 1 && beta.dim(0) == d, "layer_norm: beta must be [D]");
    int64_t tokens = x.numel() / d;

    std::vector<double> out(static_cast<size_t>(x.numel()));
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(tokens));
    const double* px = x.data();
    const double* pg = gamma.data();
    const double* pbta = beta.data();
    for (int64_t t = 0; t < tokens; ++t) {
        const double* xt = px + t * d;
        double mean = 0.0;
        for (int64_t i = 0; i < d; ++i) mean += xt[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            double c = xt[i] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(t)] = inv;
        double* ht = xhat->data() + t * d;
        double* yt = out.data() + t * d;
        for (int64_t i = 0; i < d; ++i) {
            ht[i] = (xt[i] - mean) * inv;
            yt[i] = pg[i] * ht[i] + pbta[i];
        }
    }

    std::function<void(Node&)> bw;
    if (recording({x, gamma, beta})) {
        auto xn = x.node();
        auto gn = gamma.node();
        auto bn = beta.node();
        bw = [xn, gn, bn, xhat, inv_std, tokens, d](Node& o) {
            const double* g = o.grad.data();
            bool need_x = xn->requires_grad;
            bool need_g = gn->requires_grad;
            bool need_b = bn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_g) gn->ensure_grad();
            if (need_b) bn->ensure_grad();
            for (int64_t t = 0; t < tokens; ++t) {
                const double* gt = g + t * d;
                const double* ht = xhat->data() + t * d;
                if (need_g || need_b) {
                    for (int64_t i = 0; i < d; ++i) {
                        if (need_g) gn->grad[i] += gt[i] * ht[i];
                        if (need_b) bn->grad[i] += gt[i];
                    }
                }
                if (need_x) {
                    double mean_gh = 0.0, mean_ghh = 0.0;
                    for (int64_t i = 0; i < d; ++i) {
                        double gh = gt[i] * gn->value[i];
                        mean_gh += gh;
                        mean_ghh += gh * ht[i];
                    }
                    mean_gh /= static_cast<double>(d);
                    mean_ghh /= static_cast<double>(d);
                    double inv = (*inv_std)[static_cast<size_t>(t)];
                    double* gx = xn->grad.data() + t * d;
                    for (int64_t i = 0; i < d; ++i) {
                        double gh = gt[i] * gn->value[i];
                        gx[i] += inv * (gh - mean_gh - ht[i] * mean_ghh);
                    }
                }
            }
        };
    }
    return detail::make_result(x.shape(), std::move(out), {x, gamma, beta}, std::move(bw),
                               "layer_norm");
}

namespace {

// Shared permutation machinery: out[i] = in[perm[i]].
Tensor permute_op(const Tensor& x, Shape out_shape, std::vector<int64_t> perm, const char* name) {
    std::vector<double> out(perm.size());
    const double* px = x.data();
    for (size_t i = 0; i < perm.size(); ++i) out[i] = px[perm[i]];

    std::function<void(Node&)> bw;
    if (recording({x})) {
        auto xn = x.node();
        auto pm = std::make_shared<std::vector<int64_t>>(std::move(perm));
        bw = [xn, pm](Node& o) {
            xn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[(*pm)[i]] += o.grad[i];
        };
    }
    return detail::make_result(std::move(out_shape), std::move(out), {x}, std::move(bw), name);
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, int r) {
    require(x.ndim() == 4, "pixel_shuffle: input must be [N,C,H,W]");
    require(r >= 1, "pixel_shuffle: factor must be >= 1");
    int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    require(c % (static_cast<int64_t>(r) * r) == 0,
            "pixel_shuffle: channel count " + std::to_string(c) + " not divisible by r^2=" +
                std::to_string(r * r));
    int64_t co = c / (static_cast<int64_t>(r) * r);
    int64_t ho = h * r, wo = w * r;
    std::vector<int64_t> perm(static_cast<size_t>(n * co * ho * wo));
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < co; ++ci)
            for (int64_t y = 0; y < ho; ++y)
                for (int64_t xx = 0; xx < wo; ++xx) {
                    int64_t src_c = ci * r * r + (y % r) * r + (xx % r);
                    int64_t src = ((ni * c + src_c) * h + y / r) * w + xx / r;
                    perm[static_cast<size_t>(((ni * co + ci) * ho + y) * wo + xx)] = src;
                }
    return permute_op(x, {n, co, ho, wo}, std::move(perm), "pixel_shuffle");
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
    require(x.ndim() == 4, "pixel_unshuffle: input must be [N,C,H,W]");
    require(r >= 1, "pixel_unshuffle: factor must be >= 1");
    int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    require(h % r == 0 && w % r == 0, "pixel_unshuffle: spatial extents must be divisible by r");
    int64_t co = c * r * r;
    int64_t ho = h / r, wo = w / r;
    std::vector<int64_t> perm(static_cast<size_t>(n * co * ho * wo));
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < co; ++ci)
            for (int64_t y = 0; y < ho; ++y)
                for (int64_t xx = 0; xx < wo; ++xx) {
                    int64_t base_c = ci / (r * r);
                    int64_t off = ci % (r * r);
                    int64_t src = ((ni * c + base_c) * h + y * r + off / r) * w + xx * r + off % r;
                    perm[static_cast<size_t>(((ni * co + ci) * ho + y) * wo + xx)] = src;
                }
    return permute_op(x, {n, co, ho, wo}, std::move(perm), "pixel_unshuffle");
}

Tensor to_tokens(const Tensor& x) {
    require(x.ndim() == 4, "to_tokens: input must be [N,C,H,W]");
    int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<int64_t> perm(static_cast<size_t>(x.numel()));
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t t = 0; t < h * w; ++t)
            for (int64_t ci = 0; ci < c; ++ci)
                perm[static_cast<size_t>((ni * h * w + t) * c + ci)] =
                    ((ni * c + ci) * h + t / w) * w + t % w;
    return permute_op(x, {n, h * w, c}, std::move(perm), "to_tokens");
}

Tensor from_tokens(const Tensor& x, int64_t channels, int64_t h, int64_t w) {
    require(x.ndim() == 3, "from_tokens: input must be [N,L,C]");
    int64_t n = x.dim(0), l = x.dim(1), c = x.dim(2);
    require(c == channels && l == h * w,
            "from_tokens: shape " + shape_str(x.shape()) + " does not match C=" +
                std::to_string(channels) + " H=" + std::to_string(h) + " W=" + std::to_string(w));
    std::vector<int64_t> perm(static_cast<size_t>(x.numel()));
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t t = 0; t < l; ++t)
                perm[static_cast<size_t>((ni * c + ci) * l + t)] = (ni * l + t) * c + ci;
    return permute_op(x, {n, channels, h, w}, std::move(perm), "from_tokens");
}

Tensor flip_seq(const Tensor& x) {
    require(x.ndim() == 3, "flip_seq: input must be [N,L,D]");
    int64_t n = x.dim(0), l = x.dim(1), d = x.dim(2);
    std::vector<int64_t> perm(static_cast<size_t>(x.numel()));
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t t = 0; t < l; ++t)
            for (int64_t di = 0; di < d; ++di)
                perm[static_cast<size_t>((ni * l + t) * d + di)] = (ni * l + (l - 1 - t)) * d + di;
    return permute_op(x, x.shape(), std::move(perm), "flip_seq");
}

Tensor slice_last(const Tensor& x, int64_t start, int64_t len) {
    require(x.ndim() >= 1, "slice_last: input must have at least one axis");
    int64_t d = x.dim(-1);
    require(start >= 0 && len >= 1 && start + len <= d, "slice_last: range out of bounds");
    int64_t tokens = x.numel() / d;
    Shape out_shape = x.shape();
    out_shape.back() = len;
    std::vector<int64_t> perm(static_cast<size_t>(tokens * len));
    for (int64_t t = 0; t < tokens; ++t)
        for (int64_t i = 0; i < len; ++i)
            perm[static_cast<size_t>(t * len + i)] = t * d + start + i;
    return permute_op(x, std::move(out_shape), std::move(perm), "slice_last");
}

namespace {

Tensor diff_loss(const Tensor& pred, const Tensor& target, bool l2, const char* name) {
    require_same_shape(pred, target, name);
    int64_t n = pred.numel();
    const double* pp = pred.data();
    const double* pt = target.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = pp[i] - pt[i];
        acc += l2 ? d * d : std::abs(d);
    }
    acc /= static_cast<double>(n);

    std::function<void(Node&)> bw;
    if (recording({pred, target})) {
        auto pn = pred.node();
        auto tn = target.node();
        bw = [pn, tn, n, l2](Node& o) {
            double g = o.grad[0] / static_cast<double>(n);
            bool need_p = pn->requires_grad;
            bool need_t = tn->requires_grad;
            if (need_p) pn->ensure_grad();
            if (need_t) tn->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                double d = pn->value[i] - tn->value[i];
                double gi = l2 ? g * 2.0 * d : g * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
                if (need_p) pn->grad[i] += gi;
                if (need_t) tn->grad[i] -= gi;
            }
        };
    }
    return detail::make_result({1}, {acc}, {pred, target}, std::move(bw), name);
}

}  // namespace

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    return diff_loss(pred, target, false, "l1_loss");
}

Tensor l2_loss(const Tensor& pred, const Tensor& target) {
    return diff_loss(pred, target, true, "l2_loss");
}

}  // namespace dvmsr
