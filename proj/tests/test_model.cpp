#include <cmath>

#include "doctest.h"
#include "dvmsr/model.hpp"
#include "support/checks.hpp"

using namespace dvmsr;
using testsup::bit_equal;
using testsup::check_gradients;
using testsup::make_probe;
using testsup::max_abs_diff;
using testsup::probe_loss;

namespace {

ModelConfig toy_config(int n_rssb = 1, int vimm = 1, int channels = 8, int scale = 4) {
    ModelConfig cfg;
    cfg.n_rssb = n_rssb;
    cfg.vimm_per_rssb = {vimm};
    cfg.channels = channels;
    cfg.scale = scale;
    cfg.n_state = 4;
    cfg.d_conv = 3;
    return cfg;
}

void zero_out(Tensor t) {
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 0.0;
}

// Straight-line transcription of the gated block from tensor primitives,
// written independently of vimm_forward.
Tensor vimm_oracle(const Tensor& x, const VimmWeights& w, const ModelConfig& cfg) {
    Tensor ln = layer_norm(x, w.ln_gamma, w.ln_beta);
    Tensor x1 = conv1d_causal(linear(ln, w.in_proj_w, w.in_proj_b), w.conv1d_w, w.conv1d_b);
    SsmParams kp = to_kernel_params(w.ssm, cfg.inner_dim());
    Tensor x1s = selective_scan(selectivize(x1, kp), x1, kp.d_skip);
    Tensor x2 = silu(linear(ln, w.gate_proj_w, w.gate_proj_b));
    return add(linear(hadamard(x1s, x2), w.out_proj_w), x);
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation") {
    ModelConfig bad = toy_config();
    bad.channels = 15;
    bad.expand = 1.5;  // 22.5 channels: not integral
    bad.scale = 5;
    try {
        bad.validate();
        FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        CHECK(msg.find("integral") != std::string::npos);
        CHECK(msg.find("scale") != std::string::npos);
    }

    ModelConfig lists = toy_config(4, 2, 8);
    lists.vimm_per_rssb = {2, 2, 9, 2};
    CHECK_NOTHROW(lists.validate());
    lists.vimm_per_rssb = {2, 2};
    CHECK_THROWS_AS(lists.validate(), std::invalid_argument);
}

TEST_CASE("build_model is deterministic and matches its manifest") {
    ModelConfig cfg = toy_config(2, 2, 8);
    DvmsrModel a(cfg, 123);
    DvmsrModel b(cfg, 123);
    REQUIRE(a.parameters().size() == b.parameters().size());
    for (size_t i = 0; i < a.parameters().size(); ++i) {
        CHECK(a.parameters()[i].first == b.parameters()[i].first);
        CHECK(bit_equal(a.parameters()[i].second, b.parameters()[i].second));
    }

    auto manifest = parameter_manifest(cfg);
    REQUIRE(manifest.size() == a.parameters().size());
    int64_t total = 0;
    for (size_t i = 0; i < manifest.size(); ++i) {
        CHECK(manifest[i].name == a.parameters()[i].first);
        CHECK(manifest[i].shape == a.parameters()[i].second.shape());
        total += numel(manifest[i].shape);
    }
    CHECK(total == a.parameter_count());

    DvmsrModel c(cfg, 124);
    bool any_diff = false;
    for (size_t i = 0; i < a.parameters().size(); ++i)
        if (!bit_equal(a.parameters()[i].second, c.parameters()[i].second)) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("vimm: zero out-projection is the identity") {
    ModelConfig cfg = toy_config();
    DvmsrModel m(cfg, 7);
    Rng rng(7);
    Tensor x = Tensor::randn({1, 6, cfg.channels}, rng);

    zero_out(m.param("body.0.vimm.0.out_proj.weight"));
    // Re-run through the model's own block weights via a 1x6 feature map.
    Tensor fmap = from_tokens(x, cfg.channels, 1, 6);
    // rssb adds a tail conv; test the vimm alone through vimm_forward.
    VimmWeights w;
    w.ln_gamma = m.param("body.0.vimm.0.norm.gamma");
    w.ln_beta = m.param("body.0.vimm.0.norm.beta");
    w.in_proj_w = m.param("body.0.vimm.0.in_proj.weight");
    w.in_proj_b = m.param("body.0.vimm.0.in_proj.bias");
    w.gate_proj_w = m.param("body.0.vimm.0.gate_proj.weight");
    w.gate_proj_b = m.param("body.0.vimm.0.gate_proj.bias");
    w.conv1d_w = m.param("body.0.vimm.0.conv1d.weight");
    w.conv1d_b = m.param("body.0.vimm.0.conv1d.bias");
    w.ssm.a_log = m.param("body.0.vimm.0.ssm.a_log");
    w.ssm.x_proj_w = m.param("body.0.vimm.0.ssm.x_proj.weight");
    w.ssm.dt_proj_w = m.param("body.0.vimm.0.ssm.dt_proj.weight");
    w.ssm.dt_bias = m.param("body.0.vimm.0.ssm.dt_proj.bias");
    w.ssm.d_skip = m.param("body.0.vimm.0.ssm.d_skip");
    w.out_proj_w = m.param("body.0.vimm.0.out_proj.weight");

    Tensor y = vimm_forward(x, w, cfg);
    CHECK(bit_equal(y, x));  // exact residual identity

    // Zero input with zero biases stays zero.
    zero_out(w.in_proj_b);
    zero_out(w.gate_proj_b);
    zero_out(w.conv1d_b);
    Tensor z = Tensor::zeros({1, 6, cfg.channels});
    Tensor yz = vimm_forward(z, w, cfg);
    for (int64_t i = 0; i < yz.numel(); ++i) CHECK(yz.data()[i] == 0.0);
}

TEST_CASE("vimm matches the straight-line composition oracle") {
    ModelConfig cfg = toy_config(1, 1, 6);
    Rng rng(11);
    DvmsrModel m(cfg, 11);
    VimmWeights w;
    w.ln_gamma = m.param("body.0.vimm.0.norm.gamma");
    w.ln_beta = m.param("body.0.vimm.0.norm.beta");
    w.in_proj_w = m.param("body.0.vimm.0.in_proj.weight");
    w.in_proj_b = m.param("body.0.vimm.0.in_proj.bias");
    w.gate_proj_w = m.param("body.0.vimm.0.gate_proj.weight");
    w.gate_proj_b = m.param("body.0.vimm.0.gate_proj.bias");
    w.conv1d_w = m.param("body.0.vimm.0.conv1d.weight");
    w.conv1d_b = m.param("body.0.vimm.0.conv1d.bias");
    w.ssm.a_log = m.param("body.0.vimm.0.ssm.a_log");
    w.ssm.x_proj_w = m.param("body.0.vimm.0.ssm.x_proj.weight");
    w.ssm.dt_proj_w = m.param("body.0.vimm.0.ssm.dt_proj.weight");
    w.ssm.dt_bias = m.param("body.0.vimm.0.ssm.dt_proj.bias");
    w.ssm.d_skip = m.param("body.0.vimm.0.ssm.d_skip");
    w.out_proj_w = m.param("body.0.vimm.0.out_proj.weight");

    // Randomize weights away from the init so the oracle sees real signal.
    for (Tensor t : {w.in_proj_w, w.gate_proj_w, w.out_proj_w, w.ssm.x_proj_w, w.ssm.dt_proj_w})
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal() * 0.3;

    Tensor x = Tensor::randn({2, 5, 6}, rng);
    CHECK(max_abs_diff(vimm_forward(x, w, cfg), vimm_oracle(x, w, cfg)) < 1e-10);
}

TEST_CASE("rssb: zero tail conv is the identity; single pixel works") {
    ModelConfig cfg = toy_config(1, 2, 8);
    DvmsrModel m(cfg, 17);
    zero_out(m.param("body.0.tail.weight"));
    zero_out(m.param("body.0.tail.bias"));

    Rng rng(17);
    Tensor f = Tensor::randn({1, 8, 3, 4}, rng);
    // Drive through the model's first block only, via forward on a copy of
    // the block weights: easiest through rssb_forward with views.
    // forward() would also apply hconv/recon; rebuild the block here.
    // (The model's parameter tensors are shared with the views.)
    // Build the view list from names.
    RssbWeights blk;
    for (int j = 0; j < 2; ++j) {
        std::string p = "body.0.vimm." + std::to_string(j);
        VimmWeights v;
        v.ln_gamma = m.param(p + ".norm.gamma");
        v.ln_beta = m.param(p + ".norm.beta");
        v.in_proj_w = m.param(p + ".in_proj.weight");
        v.in_proj_b = m.param(p + ".in_proj.bias");
        v.gate_proj_w = m.param(p + ".gate_proj.weight");
        v.gate_proj_b = m.param(p + ".gate_proj.bias");
        v.conv1d_w = m.param(p + ".conv1d.weight");
        v.conv1d_b = m.param(p + ".conv1d.bias");
        v.ssm.a_log = m.param(p + ".ssm.a_log");
        v.ssm.x_proj_w = m.param(p + ".ssm.x_proj.weight");
        v.ssm.dt_proj_w = m.param(p + ".ssm.dt_proj.weight");
        v.ssm.dt_bias = m.param(p + ".ssm.dt_proj.bias");
        v.ssm.d_skip = m.param(p + ".ssm.d_skip");
        v.out_proj_w = m.param(p + ".out_proj.weight");
        blk.vimms.push_back(v);
    }
    blk.tail_w = m.param("body.0.tail.weight");
    blk.tail_b = m.param("body.0.tail.bias");

    Tensor y = rssb_forward(f, blk, cfg);
    CHECK(bit_equal(y, f));

    // Degenerate 1x1 spatial extent: token sequence of length one, finite,
    // shape preserving through the whole network.
    DvmsrModel m2(cfg, 18);
    Tensor pixel = Tensor::randn({1, 3, 1, 1}, rng);
    Tensor yp = m2.forward(pixel);
    CHECK(yp.shape() == Shape{1, 3, 4, 4});
    for (int64_t i = 0; i < yp.numel(); ++i) CHECK(std::isfinite(yp.data()[i]));
    Tensor single = Tensor::randn({1, 8, 1, 1}, rng);
    CHECK(rssb_forward(single, blk, cfg).shape() == single.shape());
}

TEST_CASE("dvmsr forward: shape contract and zeroed deep path") {
    ModelConfig cfg = toy_config(2, 1, 8);
    DvmsrModel m(cfg, 23);
    Rng rng(23);
    Tensor x = Tensor::randn({1, 3, 16, 16}, rng);
    Tensor y = m.forward(x);
    CHECK(y.shape() == Shape{1, 3, 64, 64});

    // Zero every RSSB tail and the closing conv: deep features vanish and
    // the network reduces to reconstruction(head(x)).
    for (int i = 0; i < cfg.n_rssb; ++i) {
        zero_out(m.param("body." + std::to_string(i) + ".tail.weight"));
        zero_out(m.param("body." + std::to_string(i) + ".tail.bias"));
    }
    zero_out(m.param("hconv.weight"));
    zero_out(m.param("hconv.bias"));

    Tensor full = m.forward(x);
    Tensor f0 = conv2d(x, m.param("head.weight"), m.param("head.bias"), 1, 1);
    Tensor shortcut =
        pixel_shuffle(conv2d(f0, m.param("recon.weight"), m.param("recon.bias"), 1, 1), cfg.scale);
    CHECK(bit_equal(full, shortcut));
}

TEST_CASE("dvmsr forward twice is bit-identical") {
    ModelConfig cfg = toy_config(1, 2, 8);
    DvmsrModel m(cfg, 29);
    Rng rng(29);
    Tensor x = Tensor::randn({1, 3, 7, 5}, rng);
    CHECK(bit_equal(m.forward(x), m.forward(x)));
}

TEST_CASE("shape law across spatial extents") {
    ModelConfig cfg = toy_config(1, 1, 4);
    cfg.n_state = 2;
    for (int scale : {2, 3, 4}) {
        cfg.scale = scale;
        DvmsrModel m(cfg, 31);
        Rng rng(31);
        for (int h : {1, 2, 3, 5, 9, 17, 32}) {
            for (int w : {1, 4, 13, 32}) {
                Tensor x = Tensor::randn({1, 3, h, w}, rng);
                Tensor y = m.forward(x);
                CHECK(y.shape() == Shape{1, 3, static_cast<int64_t>(scale) * h,
                                         static_cast<int64_t>(scale) * w});
            }
        }
    }
}

TEST_CASE("token order matters: the scan is direction-sensitive") {
    ModelConfig cfg = toy_config(1, 1, 8);
    DvmsrModel m(cfg, 37);
    Rng rng(37);
    Tensor x = Tensor::randn({1, 3, 6, 6}, rng);
    Tensor y0 = m.forward(x);

    // Swap two pixels.
    Tensor x2 = x.clone();
    for (int64_t c = 0; c < 3; ++c) {
        std::swap(x2.data()[(c * 6 + 1) * 6 + 1], x2.data()[(c * 6 + 4) * 6 + 2]);
    }
    Tensor y1 = m.forward(x2);
    CHECK(max_abs_diff(y0, y1) > 0.0);
}

TEST_CASE("per-block vimm count lists build and run") {
    ModelConfig cfg = toy_config(4, 1, 8);
    cfg.vimm_per_rssb = {2, 2, 9, 2};
    cfg.n_state = 2;
    DvmsrModel m(cfg, 41);
    Rng rng(41);
    Tensor x = Tensor::randn({1, 3, 4, 4}, rng);
    CHECK(m.forward(x).shape() == Shape{1, 3, 16, 16});

    int64_t expect = 0;
    for (const auto& spec : parameter_manifest(cfg)) expect += numel(spec.shape);
    CHECK(expect == m.parameter_count());
}

TEST_CASE("bidirectional model runs and adds one ssm set per vimm") {
    ModelConfig uni = toy_config(1, 2, 8);
    ModelConfig bi = uni;
    bi.bidirectional = true;
    DvmsrModel mu(uni, 43);
    DvmsrModel mb(bi, 43);
    Rng rng(43);
    Tensor x = Tensor::randn({1, 3, 5, 5}, rng);
    CHECK(mb.forward(x).shape() == mu.forward(x).shape());

    int64_t e = uni.inner_dim(), s = uni.n_state, r = uni.resolved_dt_rank(), k = uni.d_conv;
    int64_t per_vimm = (e * k + e) + (e * s + e * (r + 2 * s) + e * r + e + e);
    CHECK(mb.parameter_count() - mu.parameter_count() == 2 * per_vimm);
}

TEST_CASE("full-model gradient check at toy size") {
    ModelConfig cfg = toy_config(1, 1, 8, 4);
    cfg.n_state = 2;
    DvmsrModel m(cfg, 47);
    Rng rng(47);
    Tensor x = Tensor::randn({1, 3, 4, 4}, rng, 0.5);
    Tensor probe = make_probe({1, 3, 16, 16}, rng);

    std::vector<Tensor> params;
    for (const auto& [name, t] : m.parameters()) params.push_back(t);
    check_gradients(params, [&] { return probe_loss(m.forward(x), probe); }, 1e-3, 1e-5, 1e-6);
}

TEST_CASE("separate norms and x1 activation flags change the output") {
    ModelConfig base = toy_config(1, 1, 8);
    Rng rng(53);
    Tensor x = Tensor::randn({1, 3, 4, 4}, rng);

    ModelConfig act = base;
    act.x1_activation = true;
    Tensor ya = DvmsrModel(act, 55).forward(x);
    Tensor yb = DvmsrModel(base, 55).forward(x);
    CHECK(max_abs_diff(ya, yb) > 0.0);

    ModelConfig sep = base;
    sep.separate_norms = true;
    DvmsrModel ms(sep, 55);
    CHECK(ms.parameter_count() ==
          DvmsrModel(base, 55).parameter_count() + 2 * base.channels);
    CHECK(ms.forward(x).shape() == yb.shape());
}

TEST_CASE("classical upsampler keeps the shape contract") {
    ModelConfig cfg = toy_config(1, 1, 8);
    cfg.upsampler = "classical";
    for (int scale : {2, 3, 4}) {
        cfg.scale = scale;
        DvmsrModel m(cfg, 59);
        Rng rng(59);
        Tensor x = Tensor::randn({1, 3, 5, 4}, rng);
        CHECK(m.forward(x).shape() ==
              Shape{1, 3, static_cast<int64_t>(scale) * 5, static_cast<int64_t>(scale) * 4});
    }
}

}  // TEST_SUITE
