#include <cmath>

#include "doctest.h"
#include "dvmsr/ops.hpp"
#include "support/checks.hpp"

using namespace dvmsr;
using testsup::check_gradients;
using testsup::make_probe;
using testsup::max_abs_diff;
using testsup::probe_loss;

namespace {

// Independent six-nested-loop cross-correlation.
Tensor conv2d_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int64_t co = w.dim(0), k = w.dim(2);
    int64_t oh = (h + 2 * pad - k) / stride + 1;
    int64_t ow = (wd + 2 * pad - k) / stride + 1;
    Tensor y = Tensor::zeros({n, co, oh, ow});
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t o = 0; o < co; ++o)
            for (int64_t yy = 0; yy < oh; ++yy)
                for (int64_t xx = 0; xx < ow; ++xx) {
                    double acc = b.data()[o];
                    for (int64_t c = 0; c < ci; ++c)
                        for (int64_t ky = 0; ky < k; ++ky)
                            for (int64_t kx = 0; kx < k; ++kx) {
                                int64_t iy = yy * stride - pad + ky;
                                int64_t ix = xx * stride - pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                                acc += x.data()[((ni * ci + c) * h + iy) * wd + ix] *
                                       w.data()[((o * ci + c) * k + ky) * k + kx];
                            }
                    y.data()[((ni * co + o) * oh + yy) * ow + xx] = acc;
                }
    return y;
}

// Sliding window with zero left padding.
Tensor conv1d_oracle(const Tensor& x, const Tensor& w, const Tensor& b) {
    int64_t n = x.dim(0), l = x.dim(1), d = x.dim(2), k = w.dim(1);
    Tensor y = Tensor::zeros(x.shape());
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t t = 0; t < l; ++t)
            for (int64_t di = 0; di < d; ++di) {
                double acc = b.data()[di];
                for (int64_t ki = 0; ki < k; ++ki) {
                    int64_t tt = t - (k - 1) + ki;
                    if (tt >= 0) acc += w.data()[di * k + ki] * x.data()[(ni * l + tt) * d + di];
                }
                y.data()[(ni * l + t) * d + di] = acc;
            }
    return y;
}

Tensor matmul_oracle(const Tensor& x, const Tensor& w, const Tensor& b) {
    int64_t din = x.dim(-1), dout = w.dim(0);
    int64_t tokens = x.numel() / din;
    Shape out_shape = x.shape();
    out_shape.back() = dout;
    Tensor y = Tensor::zeros(out_shape);
    for (int64_t t = 0; t < tokens; ++t)
        for (int64_t o = 0; o < dout; ++o) {
            double acc = b.defined() ? b.data()[o] : 0.0;
            for (int64_t i = 0; i < din; ++i) acc += x.data()[t * din + i] * w.data()[o * din + i];
            y.data()[t * dout + o] = acc;
        }
    return y;
}

Tensor layer_norm_oracle(const Tensor& x, const Tensor& g, const Tensor& b, double eps) {
    int64_t d = x.dim(-1);
    int64_t tokens = x.numel() / d;
    Tensor y = Tensor::zeros(x.shape());
    for (int64_t t = 0; t < tokens; ++t) {
        double mean = 0.0, sq = 0.0;
        for (int64_t i = 0; i < d; ++i) mean += x.data()[t * d + i];
        mean /= static_cast<double>(d);
        for (int64_t i = 0; i < d; ++i) {
            double c = x.data()[t * d + i] - mean;
            sq += c * c;
        }
        double var = sq / static_cast<double>(d);
        for (int64_t i = 0; i < d; ++i) {
            y.data()[t * d + i] =
                g.data()[i] * (x.data()[t * d + i] - mean) / std::sqrt(var + eps) + b.data()[i];
        }
    }
    return y;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("conv2d dirac kernel is the identity") {
    Rng rng(7);
    Tensor x = Tensor::randn({1, 1, 3, 3}, rng);
    Tensor w = Tensor::zeros({1, 1, 3, 3});
    w.data()[4] = 1.0;  // center tap
    Tensor b = Tensor::zeros({1});
    Tensor y = conv2d(x, w, b, 1, 1);
    CHECK(max_abs_diff(x, y) == 0.0);

    // Any input shape, exactly.
    Tensor x2 = Tensor::randn({2, 1, 5, 7}, rng);
    CHECK(max_abs_diff(x2, conv2d(x2, w, b, 1, 1)) == 0.0);
}

TEST_CASE("conv2d pointwise affine") {
    Tensor x = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor w = Tensor::full({1, 1, 1, 1}, 2.0);
    Tensor b = Tensor::full({1}, 0.5);
    Tensor y = conv2d(x, w, b, 1, 0);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(2.5));
}

TEST_CASE("conv2d matches the brute-force oracle") {
    Rng rng(11);
    Tensor x = Tensor::randn({1, 2, 5, 5}, rng);
    Tensor w = Tensor::randn({3, 2, 3, 3}, rng);
    Tensor b = Tensor::randn({3}, rng);
    CHECK(max_abs_diff(conv2d(x, w, b, 1, 1), conv2d_oracle(x, w, b, 1, 1)) < 1e-12);
    CHECK(max_abs_diff(conv2d(x, w, b, 2, 1), conv2d_oracle(x, w, b, 2, 1)) < 1e-12);
    CHECK(max_abs_diff(conv2d(x, w, b, 1, 0), conv2d_oracle(x, w, b, 1, 0)) < 1e-12);
}

TEST_CASE("conv2d rejects channel mismatch") {
    Tensor x = Tensor::zeros({1, 2, 4, 4});
    Tensor w = Tensor::zeros({1, 3, 3, 3});
    Tensor b = Tensor::zeros({1});
    CHECK_THROWS_AS((void)conv2d(x, w, b, 1, 1), std::invalid_argument);
}

TEST_CASE("conv1d_causal identities") {
    Rng rng(3);
    // k=1, unit weight: identity.
    Tensor x = Tensor::randn({1, 5, 2}, rng);
    Tensor w1 = Tensor::full({2, 1}, 1.0);
    Tensor b0 = Tensor::zeros({2});
    CHECK(max_abs_diff(conv1d_causal(x, w1, b0), x) == 0.0);

    // k=3 with only the current tap: identity.
    Tensor xr = Tensor::from_data({1, 3, 1}, {1, 2, 3});
    Tensor w3 = Tensor::from_data({1, 3}, {0, 0, 1});
    Tensor b1 = Tensor::zeros({1});
    Tensor y = conv1d_causal(xr, w3, b1);
    CHECK(y.data()[0] == 1.0);
    CHECK(y.data()[1] == 2.0);
    CHECK(y.data()[2] == 3.0);
}

TEST_CASE("conv1d_causal matches the loop oracle and never reads the future") {
    Rng rng(5);
    Tensor x = Tensor::randn({2, 7, 3}, rng);
    Tensor w = Tensor::randn({3, 3}, rng);
    Tensor b = Tensor::randn({3}, rng);
    CHECK(max_abs_diff(conv1d_causal(x, w, b), conv1d_oracle(x, w, b)) < 1e-12);

    // Perturbing token t must not change outputs before t.
    Tensor y0 = conv1d_causal(x, w, b);
    Tensor x2 = x.clone();
    int64_t t = 4;
    for (int64_t d = 0; d < 3; ++d) x2.data()[(0 * 7 + t) * 3 + d] += 1.0;
    Tensor y1 = conv1d_causal(x2, w, b);
    for (int64_t tt = 0; tt < t; ++tt)
        for (int64_t d = 0; d < 3; ++d)
            CHECK(y0.data()[(0 * 7 + tt) * 3 + d] == y1.data()[(0 * 7 + tt) * 3 + d]);
}

TEST_CASE("linear identities and oracle") {
    Rng rng(13);
    // Identity weight.
    Tensor x = Tensor::randn({4, 3}, rng);
    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0;
    CHECK(max_abs_diff(linear(x, eye), x) == 0.0);

    // Hand-computed 2x2.
    Tensor v = Tensor::from_data({1, 2}, {1, 2});
    Tensor w = Tensor::from_data({2, 2}, {1, 1, 1, -1});
    Tensor b = Tensor::from_data({2}, {0, 1});
    Tensor y = linear(v, w, b);
    CHECK(y.data()[0] == 3.0);
    CHECK(y.data()[1] == 0.0);

    // Random batch vs the triple-loop oracle.
    Tensor xb = Tensor::randn({2, 5, 4}, rng);
    Tensor wb = Tensor::randn({6, 4}, rng);
    Tensor bb = Tensor::randn({6}, rng);
    CHECK(max_abs_diff(linear(xb, wb, bb), matmul_oracle(xb, wb, bb)) < 1e-12);
    CHECK(max_abs_diff(linear(xb, wb), matmul_oracle(xb, wb, {})) < 1e-12);
}

TEST_CASE("layer_norm definition and invariants") {
    Tensor g1 = Tensor::full({4}, 1.0);
    Tensor b0 = Tensor::zeros({4});

    // Constant token collapses to zero.
    Tensor c = Tensor::full({1, 4}, 5.0);
    Tensor yc = layer_norm(c, g1, b0);
    for (int64_t i = 0; i < 4; ++i) CHECK(std::abs(yc.data()[i]) < 1e-10);

    // Already-normalized token passes through as eps -> 0.
    Tensor t = Tensor::from_data({1, 2}, {1, -1});
    Tensor g2 = Tensor::full({2}, 1.0);
    Tensor z2 = Tensor::zeros({2});
    Tensor yt = layer_norm(t, g2, z2, 1e-12);
    CHECK(yt.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(yt.data()[1] == doctest::Approx(-1.0).epsilon(1e-6));

    Rng rng(17);
    Tensor x = Tensor::randn({3, 5, 8}, rng);
    Tensor g = Tensor::randn({8}, rng);
    Tensor b = Tensor::randn({8}, rng);
    CHECK(max_abs_diff(layer_norm(x, g, b, 1e-5), layer_norm_oracle(x, g, b, 1e-5)) < 1e-12);

    // Per-token mean ~ 0 and variance ~ 1 under unit affine.
    Tensor g8 = Tensor::full({8}, 1.0);
    Tensor z8 = Tensor::zeros({8});
    Tensor yn = layer_norm(x, g8, z8, 1e-12);
    for (int64_t tok = 0; tok < 15; ++tok) {
        double mean = 0.0, var = 0.0;
        for (int64_t i = 0; i < 8; ++i) mean += yn.data()[tok * 8 + i];
        mean /= 8.0;
        for (int64_t i = 0; i < 8; ++i) {
            double d = yn.data()[tok * 8 + i] - mean;
            var += d * d;
        }
        var /= 8.0;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-8);
    }
}

TEST_CASE("silu fixed points") {
    Tensor x = Tensor::from_data({3}, {0.0, 40.0, -40.0});
    Tensor y = silu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == doctest::Approx(40.0).epsilon(1e-12));
    CHECK(std::abs(y.data()[2]) < 1e-12);
}

TEST_CASE("pixel_shuffle rearrangement and bijection") {
    Tensor x = Tensor::from_data({1, 4, 1, 1}, {1, 2, 3, 4});
    Tensor y = pixel_shuffle(x, 2);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.data()[0] == 1.0);
    CHECK(y.data()[1] == 2.0);
    CHECK(y.data()[2] == 3.0);
    CHECK(y.data()[3] == 4.0);

    Rng rng(23);
    Tensor r = Tensor::randn({2, 12, 3, 5}, rng);
    CHECK(testsup::bit_equal(pixel_unshuffle(pixel_shuffle(r, 2), 2), r));
    Tensor r3 = Tensor::randn({1, 18, 2, 2}, rng);
    CHECK(testsup::bit_equal(pixel_unshuffle(pixel_shuffle(r3, 3), 3), r3));

    Tensor bad = Tensor::zeros({1, 5, 2, 2});
    CHECK_THROWS_AS((void)pixel_shuffle(bad, 2), std::invalid_argument);
}

TEST_CASE("token round trip keeps raster order") {
    Rng rng(29);
    Tensor x = Tensor::randn({2, 3, 4, 5}, rng);
    Tensor t = to_tokens(x);
    CHECK(t.shape() == Shape{2, 20, 3});
    // token index = h*W + w
    CHECK(t.data()[(0 * 20 + 7) * 3 + 1] == x.data()[((0 * 3 + 1) * 4 + 1) * 5 + 2]);
    CHECK(testsup::bit_equal(from_tokens(t, 3, 4, 5), x));
}

TEST_CASE("backward basics") {
    Rng rng(31);
    Tensor x = Tensor::randn({2, 3}, rng);
    x.set_requires_grad(true);

    sum(x).backward();
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0);

    x.zero_grad();
    sum(hadamard(x, x)).backward();
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-12));

    // Gradients accumulate additively across uses of one tensor.
    x.zero_grad();
    sum(add(x, x)).backward();
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 2.0);

    CHECK_THROWS_AS(x.backward(), std::invalid_argument);  // non-scalar
}

TEST_CASE("finite-difference gradient checks for every operator") {
    Rng rng(37);

    SUBCASE("add/sub/hadamard/scale/silu/softplus") {
        Tensor a = Tensor::randn({3, 4}, rng);
        Tensor b = Tensor::randn({3, 4}, rng);
        Tensor p = make_probe({3, 4}, rng);
        check_gradients({a, b}, [&] { return probe_loss(add(a, b), p); });
        check_gradients({a, b}, [&] { return probe_loss(sub(a, b), p); });
        check_gradients({a, b}, [&] { return probe_loss(hadamard(a, b), p); });
        check_gradients({a}, [&] { return probe_loss(scale(a, -1.7), p); });
        check_gradients({a}, [&] { return probe_loss(silu(a), p); });
        check_gradients({a}, [&] { return probe_loss(softplus(a), p); });
    }

    SUBCASE("linear") {
        Tensor x = Tensor::randn({2, 3, 4}, rng);
        Tensor w = Tensor::randn({5, 4}, rng);
        Tensor b = Tensor::randn({5}, rng);
        Tensor p = make_probe({2, 3, 5}, rng);
        check_gradients({x, w, b}, [&] { return probe_loss(linear(x, w, b), p); });
    }

    SUBCASE("conv2d") {
        Tensor x = Tensor::randn({2, 2, 4, 4}, rng);
        Tensor w = Tensor::randn({3, 2, 3, 3}, rng);
        Tensor b = Tensor::randn({3}, rng);
        Tensor p = make_probe({2, 3, 4, 4}, rng);
        check_gradients({x, w, b}, [&] { return probe_loss(conv2d(x, w, b, 1, 1), p); });
    }

    SUBCASE("conv1d_causal") {
        Tensor x = Tensor::randn({2, 6, 3}, rng);
        Tensor w = Tensor::randn({3, 3}, rng);
        Tensor b = Tensor::randn({3}, rng);
        Tensor p = make_probe({2, 6, 3}, rng);
        check_gradients({x, w, b}, [&] { return probe_loss(conv1d_causal(x, w, b), p); });
    }

    SUBCASE("layer_norm") {
        Tensor x = Tensor::randn({2, 3, 6}, rng);
        Tensor g = Tensor::randn({6}, rng);
        Tensor b = Tensor::randn({6}, rng);
        Tensor p = make_probe({2, 3, 6}, rng);
        check_gradients({x, g, b}, [&] { return probe_loss(layer_norm(x, g, b), p); });
    }

    SUBCASE("permutation ops") {
        Tensor x = Tensor::randn({1, 8, 2, 2}, rng);
        Tensor p = make_probe({1, 2, 4, 4}, rng);
        check_gradients({x}, [&] { return probe_loss(pixel_shuffle(x, 2), p); });

        Tensor t = Tensor::randn({2, 5, 3}, rng);
        Tensor pt = make_probe({2, 5, 3}, rng);
        check_gradients({t}, [&] { return probe_loss(flip_seq(t), pt); });
        Tensor ps = make_probe({2, 5, 2}, rng);
        check_gradients({t}, [&] { return probe_loss(slice_last(t, 1, 2), ps); });
    }

    SUBCASE("losses") {
        Tensor a = Tensor::randn({3, 4}, rng);
        Tensor b = Tensor::randn({3, 4}, rng);
        check_gradients({a, b}, [&] { return l2_loss(a, b); });
        // L1 is non-smooth at 0; random doubles keep differences away from it.
        check_gradients({a, b}, [&] { return l1_loss(a, b); });
    }
}

TEST_CASE("determinism: same seed gives bit-identical results") {
    auto run = [] {
        Rng rng(99);
        Tensor x = Tensor::randn({1, 2, 6, 6}, rng);
        Tensor w = Tensor::randn({4, 2, 3, 3}, rng);
        Tensor b = Tensor::randn({4}, rng);
        return conv2d(x, w, b, 1, 1);
    };
    CHECK(testsup::bit_equal(run(), run()));
}

TEST_CASE("finite checks flag") {
    set_finite_checks(true);
    Tensor x = Tensor::from_data({2}, {1.0, 40.0});
    CHECK_NOTHROW((void)softplus(x));
    Tensor inf = Tensor::from_data({1}, {std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS((void)hadamard(inf, inf), std::runtime_error);
    set_finite_checks(false);
}

}  // TEST_SUITE
