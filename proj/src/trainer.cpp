#include "dvmsr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dvmsr/ops.hpp"

namespace dvmsr {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (iterations < 1) throw std::invalid_argument("TrainConfig: iterations must be >= 1");
    if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
    if (patch < scale || patch % scale != 0)
        throw std::invalid_argument("TrainConfig: patch must be a positive multiple of scale");
    if (!(lr0 > 0.0)) throw std::invalid_argument("TrainConfig: lr0 must be > 0");
    int64_t prev = 0;
    for (int64_t m : lr_milestones) {
        if (m <= prev) throw std::invalid_argument("TrainConfig: milestones must increase strictly");
        if (m >= iterations)
            throw std::invalid_argument("TrainConfig: milestones must stay below iterations");
        prev = m;
    }
}

TrainConfig TrainConfig::scaled(double rho) const {
    if (!(rho > 0.0)) throw std::invalid_argument("TrainConfig::scaled: rho must be > 0");
    TrainConfig out = *this;
    out.iterations = std::max<int64_t>(1, std::llround(static_cast<double>(iterations) * rho));
    out.lr_milestones.clear();
    for (int64_t m : lr_milestones) {
        int64_t sm = std::llround(static_cast<double>(m) * rho);
        if (sm >= 1 && sm < out.iterations) out.lr_milestones.push_back(sm);
    }
    return out;
}

double lr_at(int64_t iteration, const TrainConfig& cfg) {
    if (iteration < 0) throw std::invalid_argument("lr_at: iteration must be >= 0");
    int halvings = 0;
    for (int64_t m : cfg.lr_milestones) {
        if (m <= iteration) ++halvings;
    }
    return cfg.lr0 * std::pow(0.5, halvings);
}

Tensor distill_loss(const Tensor& teacher_out, const Tensor& student_out, DistillLossKind kind) {
    if (teacher_out.requires_grad()) {
        throw std::logic_error("distill_loss: teacher signal is gradient-tracked; "
                               "the teacher must stay frozen");
    }
    return kind == DistillLossKind::L1 ? l1_loss(student_out, teacher_out)
                                       : l2_loss(student_out, teacher_out);
}

void adam_step(std::span<double> param, std::span<const double> grad, std::span<double> m,
               std::span<double> v, int64_t t, double lr, double beta1, double beta2, double eps) {
    if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < param.size(); ++i) {
        double g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params, double beta1,
                             double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(static_cast<size_t>(params_[i].second.numel()), 0.0);
        v_[i].assign(static_cast<size_t>(params_[i].second.numel()), 0.0);
    }
}

void AdamOptimizer::step(double lr) {
    ++t_;
    std::vector<double> zero;
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].second;
        std::span<const double> g = p.grad();
        if (g.empty()) {
            if (zero.size() < static_cast<size_t>(p.numel()))
                zero.assign(static_cast<size_t>(p.numel()), 0.0);
            g = std::span<const double>(zero.data(), static_cast<size_t>(p.numel()));
        } else {
            for (double gv : g) {
                if (!std::isfinite(gv)) {
                    throw std::runtime_error("non-finite gradient in parameter " +
                                             params_[i].first);
                }
            }
        }
        adam_step(std::span<double>(p.data(), static_cast<size_t>(p.numel())), g, m_[i], v_[i], t_,
                  lr, beta1_, beta2_, eps_);
    }
}

void AdamOptimizer::zero_grads() {
    for (auto& [name, p] : params_) p.zero_grad();
}

std::vector<std::pair<std::string, Tensor>> AdamOptimizer::moments_m() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t i = 0; i < params_.size(); ++i)
        out.emplace_back(params_[i].first, Tensor::from_data(params_[i].second.shape(), m_[i]));
    return out;
}

std::vector<std::pair<std::string, Tensor>> AdamOptimizer::moments_v() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (size_t i = 0; i < params_.size(); ++i)
        out.emplace_back(params_[i].first, Tensor::from_data(params_[i].second.shape(), v_[i]));
    return out;
}

void AdamOptimizer::load_moments(const std::vector<std::pair<std::string, Tensor>>& m,
                                 const std::vector<std::pair<std::string, Tensor>>& v) {
    if (m.size() != params_.size() || v.size() != params_.size()) {
        throw std::invalid_argument("AdamOptimizer: moment count mismatch");
    }
    for (size_t i = 0; i < params_.size(); ++i) {
        if (m[i].first != params_[i].first || m[i].second.numel() != params_[i].second.numel()) {
            throw std::invalid_argument("AdamOptimizer: moment mismatch for " + params_[i].first);
        }
        m_[i].assign(m[i].second.data(), m[i].second.data() + m[i].second.numel());
        v_[i].assign(v[i].second.data(), v[i].second.data() + v[i].second.numel());
    }
}

EvalReport evaluate_model(const DvmsrModel& model, const std::vector<DatasetPair>& pairs,
                          int border) {
    NoGradGuard ng;
    if (border < 0) border = model.config().scale;
    EvalReport rep;
    for (const auto& pair : pairs) {
        Tensor sr = model.forward(image_to_tensor(pair.lr));
        Image sr_img = quantize8(tensor_to_image(sr));
        EvalRow row;
        row.stem = pair.stem;
        row.psnr_db = psnr(sr_img, pair.hr, border);
        row.ssim_val = ssim(sr_img, pair.hr, border);
        rep.mean_psnr += row.psnr_db;
        rep.mean_ssim += row.ssim_val;
        rep.rows.push_back(std::move(row));
    }
    if (!rep.rows.empty()) {
        rep.mean_psnr /= static_cast<double>(rep.rows.size());
        rep.mean_ssim /= static_cast<double>(rep.rows.size());
    }
    return rep;
}

namespace {

struct Batch {
    Tensor lr, hr;
};

Batch assemble_batch(const std::vector<const DatasetPair*>& usable, const TrainConfig& cfg,
                     Rng& rng) {
    int lp = cfg.patch / cfg.scale;
    Tensor lr = Tensor::zeros({cfg.batch, 3, lp, lp});
    Tensor hr = Tensor::zeros({cfg.batch, 3, cfg.patch, cfg.patch});
    for (int b = 0; b < cfg.batch; ++b) {
        const DatasetPair& pick = *usable[static_cast<size_t>(rng.randint(
            static_cast<int64_t>(usable.size())))];
        PatchPair p = sample_training_pair(pick.hr, pick.lr, cfg.scale, cfg.patch, rng);
        Tensor lt = image_to_tensor(p.lr);
        Tensor ht = image_to_tensor(p.hr);
        std::copy(lt.data(), lt.data() + lt.numel(), lr.data() + b * lt.numel());
        std::copy(ht.data(), ht.data() + ht.numel(), hr.data() + b * ht.numel());
    }
    return {lr, hr};
}

std::string csv_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

TrainOutcome train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                   const DistillConfig& distill_cfg, const std::vector<DatasetPair>& train_set,
                   const std::vector<DatasetPair>& val_set, const std::string& out_dir,
                   const Checkpoint* resume) {
    model_cfg.validate();
    train_cfg.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty dataset");
    fs::create_directories(out_dir);

    // Images too small for the patch are skipped, with a report.
    std::vector<const DatasetPair*> usable;
    std::vector<std::string> skipped;
    for (const auto& p : train_set) {
        if (p.hr.height >= train_cfg.patch && p.hr.width >= train_cfg.patch) {
            usable.push_back(&p);
        } else {
            skipped.push_back(p.stem);
        }
    }
    if (usable.empty()) throw std::invalid_argument("train: every image is below the patch size");
    if (!skipped.empty()) {
        std::string msg = "skipping undersized images:";
        for (const auto& s : skipped) msg += " " + s;
        std::fprintf(stderr, "%s\n", msg.c_str());
    }

    DvmsrModel model = resume ? model_from_checkpoint(*resume) : DvmsrModel(model_cfg, train_cfg.seed);
    model.set_trainable(true);

    // Frozen teacher for distillation.
    std::optional<DvmsrModel> teacher;
    if (distill_cfg.strategy != DistillStrategy::None) {
        if (distill_cfg.teacher_checkpoint.empty()) {
            throw std::invalid_argument("train: distillation requires a teacher checkpoint");
        }
        teacher.emplace(model_from_checkpoint(load_checkpoint(distill_cfg.teacher_checkpoint)));
        teacher->set_trainable(false);
        if (teacher->config().scale != model_cfg.scale) {
            throw std::invalid_argument("train: teacher scale differs from the student scale");
        }
    }

    // Mid-level tap adapter: student deep features -> teacher width, 1x1
    // conv trained with the student, excluded from the model's parameter set.
    Tensor adapter_w, adapter_b;
    std::vector<std::pair<std::string, Tensor>> opt_params = model.parameters();
    if (distill_cfg.strategy == DistillStrategy::Mid) {
        int64_t cs = model_cfg.channels;
        int64_t ct = teacher->config().channels;
        if (resume) {
            for (const auto& [name, t] : resume->aux_tensors) {
                if (name == "adapter.weight") adapter_w = t.clone();
                if (name == "adapter.bias") adapter_b = t.clone();
            }
        }
        if (!adapter_w.defined()) {
            Rng arng(train_cfg.seed ^ 0xada97e5ULL);
            double bound = 1.0 / std::sqrt(static_cast<double>(cs));
            adapter_w = Tensor::uniform({ct, cs, 1, 1}, arng, -bound, bound);
            adapter_b = Tensor::zeros({ct});
        }
        adapter_w.set_requires_grad(true);
        adapter_b.set_requires_grad(true);
        opt_params.emplace_back("adapter.weight", adapter_w);
        opt_params.emplace_back("adapter.bias", adapter_b);
    }

    AdamOptimizer opt(opt_params, train_cfg.adam_beta1, train_cfg.adam_beta2, train_cfg.adam_eps);

    Rng data_rng(train_cfg.seed + 0x517cc1b727220a95ULL);
    int64_t start_iter = 0;
    if (resume) {
        start_iter = resume->iteration;
        if (!resume->rng_state.empty()) data_rng.load_state(resume->rng_state);
        if (resume->has_optimizer) {
            // Moments stored as model params (+ adapter aux) in order.
            std::vector<std::pair<std::string, Tensor>> m = resume->opt_m;
            std::vector<std::pair<std::string, Tensor>> v = resume->opt_v;
            opt.load_moments(m, v);
            opt.set_t(resume->adam_t);
        }
    }

    std::string csv_path = (fs::path(out_dir) / "metrics.csv").string();
    std::ofstream csv;
    if (resume && fs::exists(csv_path)) {
        csv.open(csv_path, std::ios::app);
    } else {
        csv.open(csv_path, std::ios::trunc);
        csv << "iteration,lr,loss_l1,loss_dis,loss_total,val_psnr,val_ssim\n";
    }

    int64_t val_every = train_cfg.val_every > 0
                            ? train_cfg.val_every
                            : std::max<int64_t>(1, train_cfg.iterations / 20);

    auto make_checkpoint = [&](int64_t iteration) {
        Checkpoint ckpt = checkpoint_from_model(model);
        ckpt.iteration = iteration;
        ckpt.rng_state = data_rng.save_state();
        ckpt.has_optimizer = true;
        if (distill_cfg.strategy == DistillStrategy::Mid) {
            ckpt.aux_tensors.emplace_back("adapter.weight", adapter_w.clone());
            ckpt.aux_tensors.emplace_back("adapter.bias", adapter_b.clone());
        }
        ckpt.opt_m = opt.moments_m();
        ckpt.opt_v = opt.moments_v();
        ckpt.adam_t = opt.t();
        return ckpt;
    };

    TrainOutcome outcome;
    std::string final_path = (fs::path(out_dir) / "final.ckpt").string();

    for (int64_t it = start_iter + 1; it <= train_cfg.iterations; ++it) {
        double lr = lr_at(it, train_cfg);
        Batch batch = assemble_batch(usable, train_cfg, data_rng);

        Tensor l1, dis, total;
        if (distill_cfg.strategy == DistillStrategy::None) {
            Tensor sr = model.forward(batch.lr);
            l1 = l1_loss(sr, batch.hr);
            total = l1;
        } else if (distill_cfg.strategy == DistillStrategy::End) {
            Tensor sr = model.forward(batch.lr);
            Tensor teacher_sr;
            {
                NoGradGuard ng;
                teacher_sr = teacher->forward(batch.lr);
            }
            l1 = l1_loss(sr, batch.hr);
            dis = distill_loss(teacher_sr, sr, distill_cfg.loss_kind);
            total = add(scale(dis, distill_cfg.lambda_dis), scale(l1, distill_cfg.lambda_1));
        } else {
            auto taps = model.forward_with_taps(batch.lr);
            Tensor teacher_deep;
            {
                NoGradGuard ng;
                teacher_deep = teacher->forward_with_taps(batch.lr).deep_features;
            }
            Tensor adapted = conv2d(taps.deep_features, adapter_w, adapter_b, 1, 0);
            l1 = l1_loss(taps.sr, batch.hr);
            dis = distill_loss(teacher_deep, adapted, distill_cfg.loss_kind);
            total = add(scale(dis, distill_cfg.lambda_dis), scale(l1, distill_cfg.lambda_1));
        }

        double total_val = total.item();
        if (!std::isfinite(total_val)) {
            throw std::runtime_error(
                "training diverged at iteration " + std::to_string(it) + ": loss=" +
                std::to_string(total_val) + ", l1=" + std::to_string(l1.item()) +
                (dis.defined() ? ", dis=" + std::to_string(dis.item()) : std::string()));
        }
        if (it == start_iter + 1) outcome.first_loss = l1.item();
        outcome.final_loss = l1.item();

        total.backward();
        opt.step(lr);
        opt.zero_grads();

        bool validate = (it % val_every == 0) || it == train_cfg.iterations;
        csv << it << ',' << csv_num(lr) << ',' << csv_num(l1.item()) << ','
            << (dis.defined() ? csv_num(dis.item()) : std::string()) << ','
            << csv_num(total_val) << ',';
        if (validate && !val_set.empty()) {
            EvalReport rep = evaluate_model(model, val_set);
            outcome.final_val_psnr = rep.mean_psnr;
            csv << csv_num(rep.mean_psnr) << ',' << csv_num(rep.mean_ssim) << '\n';
        } else {
            csv << ",\n";
        }

        if (train_cfg.ckpt_every > 0 && it % train_cfg.ckpt_every == 0 &&
            it != train_cfg.iterations) {
            save_checkpoint(make_checkpoint(it),
                            (fs::path(out_dir) / ("iter_" + std::to_string(it) + ".ckpt")).string());
        }
    }
    csv.flush();

    save_checkpoint(make_checkpoint(train_cfg.iterations), final_path);
    outcome.checkpoint_path = final_path;
    outcome.metrics_csv_path = csv_path;
    return outcome;
}

}  // namespace dvmsr
