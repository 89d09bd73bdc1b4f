#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "g2l/data.hpp"
#include "g2l/metrics.hpp"
#include "g2l/model.hpp"

namespace g2l {

struct TrainConfig {
    int epochs = 30;
    int warmup_epochs = 3;   // linear ramp start_lr -> peak_lr
    int final_epochs = 7;    // constant final_lr tail
    double start_lr = 1e-7;
    double peak_lr = 1e-4;
    double final_lr = 1e-6;
    double weight_decay = 2e-5;
    double grad_clip_norm = 5.0;  // 0 disables clipping
    int batch_size = 32;
    int workers = 1;
    uint64_t seed = 1;
    double early_stop_train_loss = 0.0;  // 0 disables

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Three-phase schedule: linear warmup to the peak, constant peak for the
// middle epochs, constant final_lr for the last final_epochs.
double lr_at(int epoch, const TrainConfig& cfg);

/// Adam with decoupled weight decay. After the bias-corrected Adam update the
/// parameter is additionally shrunk by lr * weight_decay * p.
class AdamW {
  public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEpsilon = 1e-8;

    explicit AdamW(const std::vector<std::pair<std::string, TensorPtr>>& entries);
    // Throws NumericError naming the parameter if any gradient is non-finite;
    // no parameter is modified in that case.
    void step(const std::vector<std::pair<std::string, TensorPtr>>& entries, double lr,
              double weight_decay);
    int steps_taken() const { return step_count_; }

  private:
    std::vector<std::vector<double>> m_, v_;
    int step_count_ = 0;
};

// Scales all gradients by max_norm/norm when the global L2 norm exceeds it.
double clip_gradients(const std::vector<std::pair<std::string, TensorPtr>>& entries,
                      double max_norm);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_bleu4 = 0.0;
    double val_keyframe_recall = 0.0;
    double val_token_accuracy = 0.0;
    double val_loss = 0.0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainResult {
    std::vector<EpochRecord> history;
    MetricReport final_report;  // best-validation params, beam decode
    ModelParams params;         // best-validation parameters
    ModelConfig model_config;
    double best_val_bleu4 = 0.0;
    int best_epoch = -1;
};

/// Teacher-forced loss/accuracy/keyframe-recall plus BLEU-4 from free-running
/// decoding (beam width from the config unless overridden).
MetricReport evaluate(const ModelParams& params, const ModelConfig& cfg, const Dataset& data,
                      int beam_override = 0, const MaskSpec* mask = nullptr);

/// Mini-batch training with the schedule above. Per-epoch records are
/// appended as JSON lines to log_stream when given. Deterministic for a fixed
/// seed and any worker count (per-sample gradients are reduced in sample
/// order).
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Dataset& train_data, const Dataset& val_data,
                  std::ostream* log_stream = nullptr,
                  const std::string& checkpoint_path = "");

/// Masks the smallest attention weights of one module at every decoding step
/// in the given proportions and reports BLEU-4 relative to ratio 0.
std::vector<std::pair<double, double>> mask_ablation(const ModelParams& params,
                                                     const ModelConfig& cfg, const Dataset& data,
                                                     AttModule module,
                                                     const std::vector<double>& ratios);

// Closed-form probability that top_k uniformly drawn region-frames (without
// replacement) cover all planted ones; the chance floor for keyframe recall.
double chance_keyframe_rate(int top_k, int region_frames, int n_signal_frames);

struct GradSuiteResult {
    std::vector<std::pair<std::string, double>> group_errors;
    double max_rel_err = 0.0;
    double seconds = 0.0;
};

/// Finite-difference check of the teacher-forced loss gradient on a small
/// fixed configuration (6 frames, projected dims 8, vocabulary 5, two
/// keyframes, soft sampler with frozen noise). Perturbs every component of
/// every parameter group.
GradSuiteResult run_gradient_suite(uint64_t seed = 42);

}  // namespace g2l
