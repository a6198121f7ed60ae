#include "dvmsr/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <thread>

#include "json.hpp"

namespace dvmsr {

namespace {

struct LayerCost {
    enum Kind { Conv2d, Linear, Conv1d, Scan, Elementwise } kind;
    int64_t macs = 0;
    int64_t out_elems = 0;
};

void walk_layers(const ModelConfig& cfg, int64_t h, int64_t w, int scan_macs,
                 std::vector<LayerCost>& out) {
    cfg.validate();
    int64_t c = cfg.channels;
    int64_t e = cfg.inner_dim();
    int64_t s = cfg.n_state;
    int64_t r = cfg.resolved_dt_rank();
    int64_t k = cfg.d_conv;
    int64_t l = h * w;

    auto conv2 = [&](int64_t cin, int64_t cout, int64_t kk, int64_t hh, int64_t ww) {
        out.push_back({LayerCost::Conv2d, cout * cin * kk * kk * hh * ww, cout * hh * ww});
    };
    auto lin = [&](int64_t din, int64_t dout) {
        out.push_back({LayerCost::Linear, l * din * dout, l * dout});
    };
    auto ew = [&](int64_t elems) { out.push_back({LayerCost::Elementwise, 0, elems}); };

    conv2(cfg.in_channels, c, 3, h, w);  // head

    auto ssm_direction = [&] {
        lin(e, r + 2 * s);                                      // x_proj
        lin(r, e);                                              // dt_proj
        ew(l * e);                                              // softplus
        ew(l * e * s);                                          // ZOH discretization
        out.push_back({LayerCost::Scan, l * e * s * scan_macs, l * e});
    };

    std::vector<int> vimms = cfg.vimm_counts();
    for (int i = 0; i < cfg.n_rssb; ++i) {
        for (int j = 0; j < vimms[static_cast<size_t>(i)]; ++j) {
            ew(l * c);  // layer norm
            lin(c, e);  // in_proj
            lin(c, e);  // gate_proj
            out.push_back({LayerCost::Conv1d, l * e * k, l * e});
            if (cfg.x1_activation) ew(l * e);
            ssm_direction();
            if (cfg.bidirectional) {
                out.push_back({LayerCost::Conv1d, l * e * k, l * e});
                if (cfg.x1_activation) ew(l * e);
                ssm_direction();
                ew(l * e);  // direction sum
            }
            ew(l * e);  // gate silu
            ew(l * e);  // hadamard
            lin(e, c);  // out_proj
            ew(l * c);  // residual
        }
        conv2(c, c, 3, h, w);  // tail
        ew(l * c);             // block residual
    }
    conv2(c, c, 3, h, w);  // closing conv
    ew(l * c);             // global residual

    int64_t r2 = static_cast<int64_t>(cfg.scale) * cfg.scale;
    if (cfg.upsampler == "direct") {
        conv2(c, 3 * r2, 3, h, w);
    } else {
        conv2(c, 64, 3, h, w);
        ew(l * 64);
        int64_t hh = h, ww = w;
        std::vector<int> stages = cfg.scale == 4 ? std::vector<int>{2, 2}
                                                 : std::vector<int>{cfg.scale};
        for (int f : stages) {
            conv2(64, 64 * f * f, 3, hh, ww);
            hh *= f;
            ww *= f;
        }
        conv2(64, 3, 3, hh, ww);
    }
}

std::string human_hardware() {
    std::string model = "unknown cpu";
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("model name", 0) == 0) {
            auto pos = line.find(':');
            if (pos != std::string::npos) model = line.substr(pos + 2);
            break;
        }
    }
    return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " hw threads";
}

}  // namespace

std::string FlopsConvention::tag() const {
    std::string t = "MAC=" + std::to_string(mac_flops);
    t += include_elementwise ? ",elementwise=included" : ",elementwise=excluded";
    t += ",scan_macs=" + std::to_string(scan_macs_per_state);
    return t;
}

int64_t count_params(const ModelConfig& cfg) {
    int64_t total = 0;
    for (const auto& spec : parameter_manifest(cfg)) total += numel(spec.shape);
    return total;
}

int64_t count_flops(const ModelConfig& cfg, int h, int w, const FlopsConvention& conv) {
    std::vector<LayerCost> layers;
    walk_layers(cfg, h, w, conv.scan_macs_per_state, layers);
    int64_t flops = 0;
    for (const auto& lc : layers) {
        if (lc.kind == LayerCost::Elementwise) {
            if (conv.include_elementwise) flops += lc.out_elems;
        } else {
            flops += lc.macs * conv.mac_flops;
        }
    }
    return flops;
}

double count_activations_m(const ModelConfig& cfg, int h, int w) {
    std::vector<LayerCost> layers;
    walk_layers(cfg, h, w, 3, layers);
    int64_t elems = 0;
    for (const auto& lc : layers) {
        if (lc.kind == LayerCost::Conv2d) elems += lc.out_elems;
    }
    return static_cast<double>(elems) / 1e6;
}

ProfileReport profile_model(const ModelConfig& cfg, int h, int w, const FlopsConvention& conv) {
    ProfileReport rep;
    rep.params = count_params(cfg);
    rep.flops = count_flops(cfg, h, w, conv);
    rep.activations_m = count_activations_m(cfg, h, w);
    rep.input_h = h;
    rep.input_w = w;
    rep.convention = conv.tag();

    std::vector<LayerCost> layers;
    walk_layers(cfg, h, w, conv.scan_macs_per_state, layers);
    int64_t peak = 0;
    for (const auto& lc : layers) {
        // Elementwise records (discretization etc.) never materialize as
        // standalone buffers at inference.
        if (lc.kind != LayerCost::Elementwise) peak = std::max(peak, lc.out_elems);
    }
    rep.peak_activation_bound_mb = static_cast<double>(peak) * 8.0 / 1e6;
    return rep;
}

std::string ProfileReport::to_json() const {
    nlohmann::ordered_json j;
    j["params"] = params;
    j["params_m"] = static_cast<double>(params) / 1e6;
    j["flops"] = flops;
    j["flops_g"] = static_cast<double>(flops) / 1e9;
    j["activations_m"] = activations_m;
    j["input_size"] = {input_h, input_w};
    j["convention"] = convention;
    j["peak_activation_bound_mb"] = peak_activation_bound_mb;
    return j.dump(2);
}

std::string ProfileReport::table() const {
    char buf[256];
    std::string t;
    std::snprintf(buf, sizeof(buf), "%-22s %dx%d\n", "input size", input_h, input_w);
    t += buf;
    std::snprintf(buf, sizeof(buf), "%-22s %lld (%.4f M)\n", "parameters",
                  static_cast<long long>(params), static_cast<double>(params) / 1e6);
    t += buf;
    std::snprintf(buf, sizeof(buf), "%-22s %.4f G  [%s]\n", "flops",
                  static_cast<double>(flops) / 1e9, convention.c_str());
    t += buf;
    std::snprintf(buf, sizeof(buf), "%-22s %.4f M (conv2d outputs)\n", "activations",
                  activations_m);
    t += buf;
    std::snprintf(buf, sizeof(buf), "%-22s %.3f MB (theoretical bound, not an allocator peak)\n",
                  "largest intermediate", peak_activation_bound_mb);
    t += buf;
    return t;
}

BenchmarkResult benchmark_inference(const DvmsrModel& model, int h, int w, int repeats) {
    if (repeats < 3) throw std::invalid_argument("benchmark_inference: repeats must be >= 3");
    NoGradGuard ng;
    Rng rng(0);
    Tensor x = Tensor::randn({1, model.config().in_channels, h, w}, rng);
    (void)model.forward(x);  // warmup

    std::vector<double> times;
    times.reserve(static_cast<size_t>(repeats));
    for (int i = 0; i < repeats; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        (void)model.forward(x);
        auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    BenchmarkResult res;
    res.median_seconds = times[times.size() / 2];
    res.repeats = repeats;
    res.hardware = human_hardware();
    return res;
}

std::vector<ParamTarget> published_param_targets() {
    auto ablation = [](int n_rssb, std::vector<int> vimms, int channels) {
        ModelConfig cfg;
        cfg.n_rssb = n_rssb;
        cfg.vimm_per_rssb = std::move(vimms);
        cfg.channels = channels;
        cfg.upsampler = "classical";
        return cfg;
    };

    ModelConfig student = student_config();
    ModelConfig bidir = student_config();
    bidir.bidirectional = true;

    return {
        {"student", student, 0.4244},
        {"student-bidirectional", bidir, 0.4849},
        {"vimm-6,6,6,6", ablation(4, {6, 6, 6, 6}, 180), 7.222},
        {"vimm-2,2,9,2", ablation(4, {2, 2, 9, 2}, 180), 5.214},
        {"vimm-2,2,2,2", ablation(4, {2}, 180), 3.651},
        {"vimm-1,1,1,1", ablation(4, {1}, 180), 2.758},
        {"rssb-2", ablation(2, {2}, 180), 2.175},
        {"rssb-6", ablation(6, {2}, 180), 5.128},
        {"rssb-10", ablation(10, {2}, 180), 8.080},
        {"channels-150", ablation(4, {2}, 150), 2.664},
        {"channels-192", ablation(4, {2}, 192), 4.089},
        {"channels-210", ablation(4, {2}, 210), 4.809},
        {"teacher-small", teacher_small_config(), 4.089},
        {"teacher-large", teacher_large_config(), 7.432},
    };
}

std::vector<CalibrationEntry> calibration_grid() {
    auto targets = published_param_targets();
    std::vector<CalibrationEntry> grid;
    for (int n_state : {8, 16}) {
        for (int d_conv : {3, 4}) {
            for (double expand : {1.5, 2.0}) {
                for (bool scaled : {true, false}) {
                    double worst = 0.0;
                    for (const auto& t : targets) {
                        ModelConfig cfg = t.config;
                        cfg.n_state = n_state;
                        cfg.d_conv = d_conv;
                        cfg.expand = expand;
                        cfg.dt_rank = scaled ? 0 : 1;
                        double got = static_cast<double>(count_params(cfg)) / 1e6;
                        worst = std::max(worst, std::abs(got - t.params_m) / t.params_m);
                    }
                    grid.push_back({n_state, d_conv, expand, scaled, worst});
                }
            }
        }
    }
    std::sort(grid.begin(), grid.end(),
              [](const CalibrationEntry& a, const CalibrationEntry& b) {
                  return a.max_rel_err < b.max_rel_err;
              });
    return grid;
}

}  // namespace dvmsr
