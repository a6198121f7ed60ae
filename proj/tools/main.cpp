// dvmsr: profile, train, distill, evaluate and run the super-resolution
// models from one executable. Exit codes: 0 success, 2 usage/config
// errors, 3 runtime failures.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dvmsr/checkpoint.hpp"
#include "dvmsr/image.hpp"
#include "dvmsr/profiler.hpp"
#include "dvmsr/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json train_config_to_json(const dvmsr::TrainConfig& cfg) {
    json j;
    j["iterations"] = cfg.iterations;
    j["batch"] = cfg.batch;
    j["patch"] = cfg.patch;
    j["lr0"] = cfg.lr0;
    j["lr_milestones"] = cfg.lr_milestones;
    j["adam_beta1"] = cfg.adam_beta1;
    j["adam_beta2"] = cfg.adam_beta2;
    j["adam_eps"] = cfg.adam_eps;
    j["seed"] = cfg.seed;
    j["scale"] = cfg.scale;
    j["val_every"] = cfg.val_every;
    j["ckpt_every"] = cfg.ckpt_every;
    return j;
}

dvmsr::TrainConfig train_config_from_json(const json& j, dvmsr::TrainConfig cfg) {
    static const std::vector<std::string> known = {
        "iterations", "batch",      "patch",      "lr0",  "lr_milestones", "adam_beta1",
        "adam_beta2", "adam_eps",   "seed",       "scale", "val_every",    "ckpt_every"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw UsageError("unknown train config key: " + it.key());
        }
    }
    if (j.contains("iterations")) cfg.iterations = j["iterations"].get<int64_t>();
    if (j.contains("batch")) cfg.batch = j["batch"].get<int>();
    if (j.contains("patch")) cfg.patch = j["patch"].get<int>();
    if (j.contains("lr0")) cfg.lr0 = j["lr0"].get<double>();
    if (j.contains("lr_milestones")) cfg.lr_milestones = j["lr_milestones"].get<std::vector<int64_t>>();
    if (j.contains("adam_beta1")) cfg.adam_beta1 = j["adam_beta1"].get<double>();
    if (j.contains("adam_beta2")) cfg.adam_beta2 = j["adam_beta2"].get<double>();
    if (j.contains("adam_eps")) cfg.adam_eps = j["adam_eps"].get<double>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("scale")) cfg.scale = j["scale"].get<int>();
    if (j.contains("val_every")) cfg.val_every = j["val_every"].get<int64_t>();
    if (j.contains("ckpt_every")) cfg.ckpt_every = j["ckpt_every"].get<int64_t>();
    return cfg;
}

json distill_config_to_json(const dvmsr::DistillConfig& cfg) {
    json j;
    j["strategy"] = cfg.strategy == dvmsr::DistillStrategy::None  ? "none"
                    : cfg.strategy == dvmsr::DistillStrategy::Mid ? "mid"
                                                                  : "end";
    j["loss_kind"] = cfg.loss_kind == dvmsr::DistillLossKind::L1 ? "l1" : "l2";
    j["lambda_dis"] = cfg.lambda_dis;
    j["lambda_1"] = cfg.lambda_1;
    j["teacher_checkpoint"] = cfg.teacher_checkpoint;
    return j;
}

dvmsr::ModelConfig preset_config(const std::string& name) {
    if (name == "student") return dvmsr::student_config();
    if (name == "teacher-small") return dvmsr::teacher_small_config();
    if (name == "teacher-large") return dvmsr::teacher_large_config();
    throw UsageError("unknown preset: " + name + " (expected student, teacher-small, teacher-large)");
}

// Dotted-path overrides on the merged run config, e.g.
// --set model.channels=32 or --set train.lr0=1e-3.
void apply_override(json& root, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("override must look like key=value: " + kv);
    std::string path = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);

    json* node = &root;
    size_t start = 0;
    while (true) {
        size_t dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw UsageError("bad override path: " + path);
        if (dot == std::string::npos) {
            json parsed;
            try {
                parsed = json::parse(value);
            } catch (...) {
                parsed = value;  // plain string
            }
            (*node)[key] = parsed;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

struct RunSpec {
    dvmsr::ModelConfig model;
    dvmsr::TrainConfig train;
    dvmsr::DistillConfig distill;
};

RunSpec resolve_run(const std::string& preset, const std::string& config_path,
                    const std::vector<std::string>& sets) {
    json merged;
    merged["model"] = json::parse(dvmsr::model_config_to_json(preset_config(preset)));
    merged["train"] = train_config_to_json(dvmsr::TrainConfig{});
    merged["distill"] = distill_config_to_json(dvmsr::DistillConfig{});

    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw UsageError("cannot open config file " + config_path);
        json file;
        try {
            file = json::parse(in);
        } catch (const std::exception& e) {
            throw UsageError("bad config file: " + std::string(e.what()));
        }
        for (auto it = file.begin(); it != file.end(); ++it) {
            if (it.key() != "model" && it.key() != "train" && it.key() != "distill") {
                throw UsageError("unknown config section: " + it.key());
            }
            for (auto f = it.value().begin(); f != it.value().end(); ++f) {
                merged[it.key()][f.key()] = f.value();
            }
        }
    }
    for (const auto& kv : sets) apply_override(merged, kv);

    RunSpec spec;
    spec.model = dvmsr::model_config_from_json(merged["model"].dump());
    spec.train = train_config_from_json(merged["train"], dvmsr::TrainConfig{});
    json d = merged["distill"];
    static const std::vector<std::string> dknown = {"strategy", "loss_kind", "lambda_dis",
                                                    "lambda_1", "teacher_checkpoint"};
    for (auto it = d.begin(); it != d.end(); ++it) {
        if (std::find(dknown.begin(), dknown.end(), it.key()) == dknown.end()) {
            throw UsageError("unknown distill config key: " + it.key());
        }
    }
    if (d.contains("strategy")) {
        std::string s = d["strategy"].get<std::string>();
        if (s == "none") spec.distill.strategy = dvmsr::DistillStrategy::None;
        else if (s == "mid") spec.distill.strategy = dvmsr::DistillStrategy::Mid;
        else if (s == "end") spec.distill.strategy = dvmsr::DistillStrategy::End;
        else throw UsageError("distill strategy must be none, mid or end");
    }
    if (d.contains("loss_kind")) {
        std::string s = d["loss_kind"].get<std::string>();
        if (s == "l1") spec.distill.loss_kind = dvmsr::DistillLossKind::L1;
        else if (s == "l2") spec.distill.loss_kind = dvmsr::DistillLossKind::L2;
        else throw UsageError("distill loss kind must be l1 or l2");
    }
    if (d.contains("lambda_dis")) spec.distill.lambda_dis = d["lambda_dis"].get<double>();
    if (d.contains("lambda_1")) spec.distill.lambda_1 = d["lambda_1"].get<double>();
    if (d.contains("teacher_checkpoint"))
        spec.distill.teacher_checkpoint = d["teacher_checkpoint"].get<std::string>();
    return spec;
}

void write_snapshot(const std::string& out_dir, const std::string& command, const RunSpec& spec,
                    const json& extra) {
    json snap;
    snap["command"] = command;
    snap["model"] = json::parse(dvmsr::model_config_to_json(spec.model));
    snap["train"] = train_config_to_json(spec.train);
    snap["distill"] = distill_config_to_json(spec.distill);
    for (auto it = extra.begin(); it != extra.end(); ++it) snap[it.key()] = it.value();
    std::ofstream out(fs::path(out_dir) / "resolved_config.json");
    out << snap.dump(2) << "\n";
}

std::pair<int, int> parse_size(const std::string& s) {
    auto x = s.find('x');
    if (x == std::string::npos) throw UsageError("size must look like 256x256");
    int h = std::stoi(s.substr(0, x));
    int w = std::stoi(s.substr(x + 1));
    if (h < 1 || w < 1) throw UsageError("size extents must be >= 1");
    return {h, w};
}

// ---------------------------------------------------------------------------

struct ProfileArgs {
    std::string preset = "student";
    std::string config_path;
    std::vector<std::string> sets;
    std::string input_size = "256x256";
    bool bidirectional = false;
    int mac_flops = 1;
    bool include_elementwise = false;
    int scan_macs = 3;
    std::string json_path;
    bool calibration_table = false;
    bool benchmark = false;
};

int cmd_profile(const ProfileArgs& args) {
    if (args.calibration_table) {
        std::printf("%-8s %-7s %-7s %-10s %s\n", "n_state", "d_conv", "expand", "dt_rank",
                    "max_rel_err");
        for (const auto& e : dvmsr::calibration_grid()) {
            std::printf("%-8d %-7d %-7.2f %-10s %.4f%%\n", e.n_state, e.d_conv, e.expand,
                        e.dt_rank_scaled ? "ceil(C/16)" : "1", 100.0 * e.max_rel_err);
        }
        return 0;
    }

    RunSpec spec = resolve_run(args.preset, args.config_path, args.sets);
    if (args.bidirectional) spec.model.bidirectional = true;
    spec.model.validate();

    auto [h, w] = parse_size(args.input_size);
    dvmsr::FlopsConvention conv;
    conv.mac_flops = args.mac_flops;
    conv.include_elementwise = args.include_elementwise;
    conv.scan_macs_per_state = args.scan_macs;

    dvmsr::ProfileReport rep = dvmsr::profile_model(spec.model, h, w, conv);
    std::fputs(rep.table().c_str(), stdout);
    std::string jtext = rep.to_json();
    std::printf("%s\n", jtext.c_str());
    if (!args.json_path.empty()) {
        std::ofstream out(args.json_path);
        if (!out) throw std::runtime_error("cannot write " + args.json_path);
        out << jtext << "\n";
    }

    if (args.benchmark) {
        dvmsr::DvmsrModel model(spec.model, 0);
        auto bench = dvmsr::benchmark_inference(model, h, w, 5);
        std::printf("%-22s %.4f s median of %d on %s\n", "inference time", bench.median_seconds,
                    bench.repeats, bench.hardware.c_str());
    }
    return 0;
}

struct TrainArgs {
    std::string data_hr, data_lr;
    std::string val_hr, val_lr;
    std::string out_dir;
    std::string preset = "student";
    std::string config_path;
    std::vector<std::string> sets;
    double schedule_scale = 0.001;  // desk-scale default; 1.0 is the full schedule
    int64_t iterations = -1;
    int batch = 8;
    int patch = 64;
    double lr0 = -1.0;
    int scale = -1;
    uint64_t seed = 0;
    int64_t val_every = -1;
    int64_t ckpt_every = -1;
    std::string resume;
    // distill only
    std::string teacher;
    std::string strategy = "end";
    std::string loss_kind = "l1";
    double lambda_dis = 1.0;
    double lambda_1 = 1.0;
};

int cmd_train(const TrainArgs& args, bool distill_mode) {
    RunSpec spec = resolve_run(args.preset, args.config_path, args.sets);

    spec.train = spec.train.scaled(args.schedule_scale);
    spec.train.batch = args.batch;
    spec.train.patch = args.patch;
    spec.train.seed = args.seed;
    if (args.iterations >= 0) {
        spec.train.iterations = args.iterations;
        std::erase_if(spec.train.lr_milestones,
                      [&](int64_t m) { return m >= spec.train.iterations; });
    }
    if (args.lr0 > 0) spec.train.lr0 = args.lr0;
    if (args.scale > 0) {
        spec.train.scale = args.scale;
        spec.model.scale = args.scale;
    } else {
        spec.train.scale = spec.model.scale;
    }
    if (args.val_every >= 0) spec.train.val_every = args.val_every;
    if (args.ckpt_every >= 0) spec.train.ckpt_every = args.ckpt_every;

    if (distill_mode) {
        if (args.teacher.empty()) throw UsageError("distill requires --teacher");
        spec.distill.teacher_checkpoint = args.teacher;
        if (args.strategy == "end") spec.distill.strategy = dvmsr::DistillStrategy::End;
        else if (args.strategy == "mid") spec.distill.strategy = dvmsr::DistillStrategy::Mid;
        else throw UsageError("strategy must be end or mid");
        if (args.loss_kind == "l1") spec.distill.loss_kind = dvmsr::DistillLossKind::L1;
        else if (args.loss_kind == "l2") spec.distill.loss_kind = dvmsr::DistillLossKind::L2;
        else throw UsageError("loss kind must be l1 or l2");
        spec.distill.lambda_dis = args.lambda_dis;
        spec.distill.lambda_1 = args.lambda_1;
    } else {
        spec.distill = dvmsr::DistillConfig{};
    }

    spec.model.validate();
    spec.train.validate();

    auto train_set = dvmsr::load_dataset(args.data_hr, args.data_lr, spec.train.scale);
    std::vector<dvmsr::DatasetPair> val_set;
    if (!args.val_hr.empty()) {
        val_set = dvmsr::load_dataset(args.val_hr, args.val_lr, spec.train.scale);
    } else {
        val_set = train_set;
    }

    fs::create_directories(args.out_dir);
    json extra;
    extra["data_hr"] = args.data_hr;
    extra["data_lr"] = args.data_lr;
    extra["out_dir"] = args.out_dir;
    extra["schedule_scale"] = args.schedule_scale;
    write_snapshot(args.out_dir, distill_mode ? "distill" : "train", spec, extra);

    std::optional<dvmsr::Checkpoint> resume;
    if (!args.resume.empty()) resume = dvmsr::load_checkpoint(args.resume);

    dvmsr::TrainOutcome out = dvmsr::train(spec.model, spec.train, spec.distill, train_set,
                                           val_set, args.out_dir,
                                           resume ? &*resume : nullptr);
    std::printf("final checkpoint: %s\n", out.checkpoint_path.c_str());
    std::printf("metrics log:      %s\n", out.metrics_csv_path.c_str());
    std::printf("l1 first->final:  %.6f -> %.6f\n", out.first_loss, out.final_loss);
    if (!val_set.empty()) std::printf("final val psnr:   %.4f dB\n", out.final_val_psnr);
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string baseline;
    std::string data_hr, data_lr;
    std::string out_dir;
    int scale = 4;
    int border = -1;
};

int cmd_eval(const EvalArgs& args) {
    if (args.checkpoint.empty() == args.baseline.empty()) {
        throw UsageError("exactly one of --checkpoint or --baseline is required");
    }
    int scale = args.scale;

    std::optional<dvmsr::DvmsrModel> model;
    if (!args.checkpoint.empty()) {
        model = dvmsr::model_from_checkpoint(dvmsr::load_checkpoint(args.checkpoint));
        if (model->config().scale != scale) {
            throw UsageError("checkpoint scale " + std::to_string(model->config().scale) +
                             " does not match --scale " + std::to_string(scale));
        }
    } else if (args.baseline != "identity" && args.baseline != "bicubic") {
        throw UsageError("baseline must be identity or bicubic");
    }

    auto pairs = dvmsr::load_dataset(args.data_hr, args.data_lr, scale);
    int border = args.border >= 0 ? args.border : scale;

    dvmsr::EvalReport rep;
    if (model) {
        rep = dvmsr::evaluate_model(*model, pairs, border);
    } else {
        for (const auto& pair : pairs) {
            dvmsr::Image sr = args.baseline == "identity"
                                  ? pair.hr
                                  : dvmsr::quantize8(dvmsr::bicubic_resize(pair.lr, scale));
            dvmsr::EvalRow row;
            row.stem = pair.stem;
            row.psnr_db = dvmsr::psnr(sr, pair.hr, border);
            row.ssim_val = dvmsr::ssim(sr, pair.hr, border);
            rep.mean_psnr += row.psnr_db;
            rep.mean_ssim += row.ssim_val;
            rep.rows.push_back(std::move(row));
        }
        rep.mean_psnr /= static_cast<double>(rep.rows.size());
        rep.mean_ssim /= static_cast<double>(rep.rows.size());
    }

    std::printf("%-24s %10s %10s\n", "image", "psnr[dB]", "ssim");
    for (const auto& row : rep.rows) {
        std::printf("%-24s %10.4f %10.6f\n", row.stem.c_str(), row.psnr_db, row.ssim_val);
    }
    std::printf("%-24s %10.4f %10.6f\n", "mean", rep.mean_psnr, rep.mean_ssim);

    if (!args.out_dir.empty()) {
        fs::create_directories(args.out_dir);
        std::ofstream csv(fs::path(args.out_dir) / "eval.csv");
        csv << "image,psnr_db,ssim\n";
        char buf[128];
        for (const auto& row : rep.rows) {
            std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g\n", row.stem.c_str(), row.psnr_db,
                          row.ssim_val);
            csv << buf;
        }
        std::snprintf(buf, sizeof(buf), "mean,%.10g,%.10g\n", rep.mean_psnr, rep.mean_ssim);
        csv << buf;

        json snap;
        snap["command"] = "eval";
        snap["checkpoint"] = args.checkpoint;
        snap["baseline"] = args.baseline;
        snap["data_hr"] = args.data_hr;
        snap["data_lr"] = args.data_lr;
        snap["scale"] = scale;
        snap["border"] = border;
        std::ofstream snapf(fs::path(args.out_dir) / "resolved_config.json");
        snapf << snap.dump(2) << "\n";
    }
    return 0;
}

struct InferArgs {
    std::string checkpoint;
    std::string input;
    std::string output;
};

int cmd_infer(const InferArgs& args) {
    dvmsr::DvmsrModel model = dvmsr::model_from_checkpoint(dvmsr::load_checkpoint(args.checkpoint));
    dvmsr::Image in = dvmsr::load_png(args.input);
    if (in.channels == 1) {
        // Grayscale inputs are replicated to three channels and the result
        // is written as RGB.
        dvmsr::Image rgb = dvmsr::Image::create(in.height, in.width, 3);
        for (int y = 0; y < in.height; ++y)
            for (int x = 0; x < in.width; ++x)
                for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = in.at(y, x, 0);
        in = std::move(rgb);
    }
    dvmsr::NoGradGuard ng;
    dvmsr::Tensor sr = model.forward(dvmsr::image_to_tensor(in));
    dvmsr::save_png(dvmsr::quantize8(dvmsr::tensor_to_image(sr)), args.output);
    std::printf("%s: %dx%d -> %s: %dx%d\n", args.input.c_str(), in.width, in.height,
                args.output.c_str(), in.width * model.config().scale,
                in.height * model.config().scale);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DVMSR: Mamba-based efficient image super-resolution toolkit"};
    app.require_subcommand(1);

    ProfileArgs pa;
    auto* profile = app.add_subcommand("profile", "Static parameter / FLOP / activation analysis");
    profile->add_option("--preset", pa.preset, "student | teacher-small | teacher-large");
    profile->add_option("--config", pa.config_path, "JSON config file");
    profile->add_option("--set", pa.sets, "dotted-key overrides, e.g. model.channels=32");
    profile->add_option("--input-size", pa.input_size, "HxW analysis size (default 256x256)");
    profile->add_flag("--bidirectional", pa.bidirectional, "profile the bidirectional variant");
    profile->add_option("--mac-flops", pa.mac_flops, "flops per MAC (1 or 2)");
    profile->add_flag("--include-elementwise", pa.include_elementwise,
                      "count elementwise work too");
    profile->add_option("--scan-macs", pa.scan_macs, "MACs per scan state element (default 3)");
    profile->add_option("--json", pa.json_path, "also write the JSON report to this file");
    profile->add_flag("--calibration-table", pa.calibration_table,
                      "print the hyperparameter grid fit against the published counts");
    profile->add_flag("--benchmark", pa.benchmark, "measure median inference wall time");

    TrainArgs ta;
    auto add_train_opts = [&](CLI::App* cmd) {
        cmd->add_option("--data-hr", ta.data_hr, "directory of HR training PNGs")->required();
        cmd->add_option("--data-lr", ta.data_lr, "directory of LR training PNGs (else synthesized)");
        cmd->add_option("--val-hr", ta.val_hr, "validation HR directory (defaults to training set)");
        cmd->add_option("--val-lr", ta.val_lr, "validation LR directory");
        cmd->add_option("--out-dir", ta.out_dir, "output directory")->required();
        cmd->add_option("--preset", ta.preset, "student | teacher-small | teacher-large");
        cmd->add_option("--config", ta.config_path, "JSON config file");
        cmd->add_option("--set", ta.sets, "dotted-key overrides");
        cmd->add_option("--schedule-scale", ta.schedule_scale,
                        "shrink the 500k-iteration schedule by this factor (default 0.001)");
        cmd->add_option("--iterations", ta.iterations, "override the iteration count");
        cmd->add_option("--batch", ta.batch, "batch size (default 8)");
        cmd->add_option("--patch", ta.patch, "HR patch size (default 64)");
        cmd->add_option("--lr0", ta.lr0, "initial learning rate");
        cmd->add_option("--scale", ta.scale, "upscaling factor");
        cmd->add_option("--seed", ta.seed, "seed for init and batch sampling");
        cmd->add_option("--val-every", ta.val_every, "validation cadence in iterations");
        cmd->add_option("--ckpt-every", ta.ckpt_every, "checkpoint cadence in iterations");
        cmd->add_option("--resume", ta.resume, "resume from this checkpoint");
    };
    auto* train_cmd = app.add_subcommand("train", "Train a model with plain L1");
    add_train_opts(train_cmd);
    auto* distill_cmd = app.add_subcommand("distill", "Train a student under a frozen teacher");
    add_train_opts(distill_cmd);
    distill_cmd->add_option("--teacher", ta.teacher, "teacher checkpoint")->required();
    distill_cmd->add_option("--strategy", ta.strategy, "end | mid (default end)");
    distill_cmd->add_option("--loss-kind", ta.loss_kind, "l1 | l2 (default l1)");
    distill_cmd->add_option("--lambda-dis", ta.lambda_dis, "distillation loss weight (default 1)");
    distill_cmd->add_option("--lambda-1", ta.lambda_1, "reconstruction loss weight (default 1)");

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Y-channel PSNR/SSIM over a dataset");
    eval_cmd->add_option("--checkpoint", ea.checkpoint, "model checkpoint");
    eval_cmd->add_option("--baseline", ea.baseline, "identity | bicubic instead of a model");
    eval_cmd->add_option("--data-hr", ea.data_hr, "HR directory")->required();
    eval_cmd->add_option("--data-lr", ea.data_lr, "LR directory (else synthesized)");
    eval_cmd->add_option("--scale", ea.scale, "upscaling factor (default 4)");
    eval_cmd->add_option("--border", ea.border, "boundary crop in pixels (default: scale)");
    eval_cmd->add_option("--out-dir", ea.out_dir, "write eval.csv and the config snapshot here");

    InferArgs ia;
    auto* infer_cmd = app.add_subcommand("infer", "Super-resolve one PNG");
    infer_cmd->add_option("--checkpoint", ia.checkpoint, "model checkpoint")->required();
    infer_cmd->add_option("--input", ia.input, "input PNG")->required();
    infer_cmd->add_option("--output", ia.output, "output PNG")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (profile->parsed()) return cmd_profile(pa);
        if (train_cmd->parsed()) return cmd_train(ta, false);
        if (distill_cmd->parsed()) return cmd_train(ta, true);
        if (eval_cmd->parsed()) return cmd_eval(ea);
        if (infer_cmd->parsed()) return cmd_infer(ia);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
