#pragma once

#include <optional>
#include <span>

#include "dvmsr/checkpoint.hpp"
#include "dvmsr/image.hpp"
#include "dvmsr/model.hpp"

namespace dvmsr {

struct TrainConfig {
    int64_t iterations = 500000;
    int batch = 128;
    int patch = 256;
    double lr0 = 2e-4;
    std::vector<int64_t> lr_milestones = {250000, 400000, 450000, 475000};
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.99;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    int scale = 4;
    int64_t val_every = 0;   // 0: max(1, iterations/20)
    int64_t ckpt_every = 0;  // 0: final only

    void validate() const;
    // Shrink the schedule by rho, keeping its shape: iterations and every
    // milestone scale together.
    TrainConfig scaled(double rho) const;
};

enum class DistillStrategy { None, Mid, End };
enum class DistillLossKind { L1, L2 };

struct DistillConfig {
    DistillStrategy strategy = DistillStrategy::None;
    DistillLossKind loss_kind = DistillLossKind::L1;
    double lambda_dis = 1.0;
    double lambda_1 = 1.0;
    std::string teacher_checkpoint;
};

// lr0 halved once per milestone already reached.
double lr_at(int64_t iteration, const TrainConfig& cfg);

// Norm between the frozen teacher signal and the student signal. Throws
// std::logic_error if the teacher side carries gradient tracking.
Tensor distill_loss(const Tensor& teacher_out, const Tensor& student_out, DistillLossKind kind);

// Bias-corrected Adam update on one parameter.
void adam_step(std::span<double> param, std::span<const double> grad, std::span<double> m,
               std::span<double> v, int64_t t, double lr, double beta1, double beta2, double eps);

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params, double beta1, double beta2,
                  double eps);

    // Advances t and applies the update; missing grads count as zero.
    // A non-finite gradient aborts, naming the parameter.
    void step(double lr);
    void zero_grads();

    int64_t t() const { return t_; }
    void set_t(int64_t t) { t_ = t; }
    std::vector<std::pair<std::string, Tensor>> moments_m() const;
    std::vector<std::pair<std::string, Tensor>> moments_v() const;
    void load_moments(const std::vector<std::pair<std::string, Tensor>>& m,
                      const std::vector<std::pair<std::string, Tensor>>& v);

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

struct EvalRow {
    std::string stem;
    double psnr_db = 0.0;
    double ssim_val = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

// Y-channel metrics on 8-bit-quantized outputs with the border crop
// (border < 0 selects the scale itself).
EvalReport evaluate_model(const DvmsrModel& model, const std::vector<DatasetPair>& pairs,
                          int border = -1);

struct TrainOutcome {
    std::string checkpoint_path;
    std::string metrics_csv_path;
    double first_loss = 0.0;
    double final_loss = 0.0;
    double final_val_psnr = 0.0;
};

// The full optimization loop: sampled batches, L1 plus optional frozen-
// teacher distillation, Adam with the milestone schedule, periodic
// validation, CSV metrics, checkpoints under out_dir. Deterministic for a
// fixed seed on one platform.
TrainOutcome train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                   const DistillConfig& distill_cfg, const std::vector<DatasetPair>& train_set,
                   const std::vector<DatasetPair>& val_set, const std::string& out_dir,
                   const Checkpoint* resume = nullptr);

}  // namespace dvmsr
