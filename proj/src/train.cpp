#include "g2l/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <thread>

namespace g2l {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (warmup_epochs < 0 || final_epochs < 0 || warmup_epochs + final_epochs > epochs)
        throw ConfigError("train: warmup_epochs + final_epochs must not exceed epochs");
    if (start_lr <= 0 || peak_lr <= 0 || final_lr <= 0)
        throw ConfigError("train: learning rates must be positive");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
    if (grad_clip_norm < 0) throw ConfigError("train: grad_clip_norm must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (workers < 1) throw ConfigError("train: workers must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"warmup_epochs", c.warmup_epochs},
                       {"final_epochs", c.final_epochs},
                       {"start_lr", c.start_lr},
                       {"peak_lr", c.peak_lr},
                       {"final_lr", c.final_lr},
                       {"weight_decay", c.weight_decay},
                       {"grad_clip_norm", c.grad_clip_norm},
                       {"batch_size", c.batch_size},
                       {"workers", c.workers},
                       {"seed", c.seed},
                       {"early_stop_train_loss", c.early_stop_train_loss}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.final_epochs = j.value("final_epochs", c.final_epochs);
    c.start_lr = j.value("start_lr", c.start_lr);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.final_lr = j.value("final_lr", c.final_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.workers = j.value("workers", c.workers);
    c.seed = j.value("seed", c.seed);
    c.early_stop_train_loss = j.value("early_stop_train_loss", c.early_stop_train_loss);
}

double lr_at(int epoch, const TrainConfig& cfg) {
    cfg.validate();
    if (epoch < 0 || epoch >= cfg.epochs)
        throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(cfg.epochs) + ")");
    if (epoch < cfg.warmup_epochs)
        return cfg.start_lr +
               (cfg.peak_lr - cfg.start_lr) * static_cast<double>(epoch) / cfg.warmup_epochs;
    if (epoch >= cfg.epochs - cfg.final_epochs) return cfg.final_lr;
    return cfg.peak_lr;
}

AdamW::AdamW(const std::vector<std::pair<std::string, TensorPtr>>& entries) {
    for (const auto& [name, t] : entries) {
        m_.emplace_back(t->values.size(), 0.0);
        v_.emplace_back(t->values.size(), 0.0);
    }
}

void AdamW::step(const std::vector<std::pair<std::string, TensorPtr>>& entries, double lr,
                 double weight_decay) {
    if (entries.size() != m_.size()) throw ContractError("AdamW: parameter list changed size");
    for (const auto& [name, t] : entries) {
        for (double gv : t->grad)
            if (!std::isfinite(gv)) throw NumericError("non-finite gradient in " + name);
    }
    ++step_count_;
    double bias1 = 1.0 - std::pow(kBeta1, step_count_);
    double bias2 = 1.0 - std::pow(kBeta2, step_count_);
    for (size_t e = 0; e < entries.size(); ++e) {
        auto& t = *entries[e].second;
        auto& m = m_[e];
        auto& v = v_[e];
        for (size_t i = 0; i < t.values.size(); ++i) {
            double gv = t.grad[i];
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gv;
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gv * gv;
            double m_hat = m[i] / bias1;
            double v_hat = v[i] / bias2;
            t.values[i] -= lr * m_hat / (std::sqrt(v_hat) + kEpsilon);
            t.values[i] -= lr * weight_decay * t.values[i];
        }
    }
}

double clip_gradients(const std::vector<std::pair<std::string, TensorPtr>>& entries,
                      double max_norm) {
    double sq = 0.0;
    for (const auto& [name, t] : entries)
        for (double gv : t->grad) sq += gv * gv;
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        double factor = max_norm / norm;
        for (const auto& [name, t] : entries)
            for (double& gv : t->grad) gv *= factor;
    }
    return norm;
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
    j = nlohmann::json{{"epoch", r.epoch},
                       {"lr", r.lr},
                       {"train_loss", r.train_loss},
                       {"val_bleu4", r.val_bleu4},
                       {"val_keyframe_recall", r.val_keyframe_recall},
                       {"val_token_accuracy", r.val_token_accuracy},
                       {"val_loss", r.val_loss}};
}

namespace {

std::vector<int> caption_content(const std::vector<int>& caption) {
    std::vector<int> out;
    for (int t : caption)
        if (t != Vocabulary::kBos && t != Vocabulary::kEos && t != Vocabulary::kPad)
            out.push_back(t);
    return out;
}

double recall_from_trace(const std::vector<StepTrace>& trace, const VideoSample& sample) {
    if (sample.planted_frames.empty() || trace.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& step : trace) {
        int hit = 0;
        for (int f : sample.planted_frames)
            if (std::find(step.selected_frames.begin(), step.selected_frames.end(), f) !=
                step.selected_frames.end())
                ++hit;
        acc += static_cast<double>(hit) / static_cast<double>(sample.planted_frames.size());
    }
    return acc / static_cast<double>(trace.size());
}

// Teacher-forced pass in inference mode: loss, next-token accuracy, selection
// trace. Per-sample so it can run inside the worker pool as well.
struct ForcedEval {
    double loss = 0.0;
    int correct = 0;
    int steps = 0;
    double recall = 0.0;
};

ForcedEval forced_eval(const ModelParams& params, const ModelConfig& cfg,
                       const VideoSample& sample, const MaskSpec* mask) {
    Graph g;
    g.grad_enabled = false;
    std::vector<StepTrace> trace;
    DecodeContext ctx;
    ctx.mask = mask;
    ctx.trace = &trace;
    std::vector<int> predicted;
    auto loss = sequence_loss(g, params, cfg, sample, ctx, &predicted);
    ForcedEval out;
    out.loss = loss->values[0];
    out.steps = static_cast<int>(predicted.size());
    for (size_t t = 0; t + 1 < sample.caption.size(); ++t)
        if (predicted[t] == sample.caption[t + 1]) ++out.correct;
    out.recall = recall_from_trace(trace, sample);
    return out;
}

}  // namespace

MetricReport evaluate(const ModelParams& params, const ModelConfig& cfg, const Dataset& data,
                      int beam_override, const MaskSpec* mask) {
    MetricReport report;
    if (data.samples.empty()) return report;
    int beam = beam_override > 0 ? beam_override : cfg.beam_width;
    double loss_sum = 0.0, recall_sum = 0.0;
    long correct = 0, steps = 0;
    std::vector<std::pair<std::vector<int>, std::vector<std::vector<int>>>> pairs;
    for (const auto& sample : data.samples) {
        auto fe = forced_eval(params, cfg, sample, mask);
        loss_sum += fe.loss;
        recall_sum += fe.recall;
        correct += fe.correct;
        steps += fe.steps;
        auto decoded = beam_search(params, cfg, sample, beam, cfg.max_decode_len, mask);
        pairs.emplace_back(std::move(decoded),
                           std::vector<std::vector<int>>{caption_content(sample.caption)});
    }
    double n = static_cast<double>(data.samples.size());
    report.loss = loss_sum / n;
    report.keyframe_recall = recall_sum / n;
    report.token_accuracy = steps > 0 ? static_cast<double>(correct) / static_cast<double>(steps) : 0.0;
    report.bleu4 = corpus_bleu4(pairs);
    report.validate();
    return report;
}

namespace {

// Per-sample gradient of the mean-normalized batch loss, written into a flat
// buffer so reduction order is independent of the worker layout.
void sample_gradients(const ModelParams& params, const ModelConfig& cfg,
                      const VideoSample& sample, uint64_t seed, int epoch, int sample_index,
                      std::vector<double>& flat_grads, double& loss_out) {
    Graph g;
    Rng noise = Rng::stream(seed, (static_cast<uint64_t>(epoch) << 32) | 0x5A5Aull,
                            static_cast<uint64_t>(sample_index));
    DecodeContext ctx;
    ctx.sampler_rng = &noise;
    auto loss = sequence_loss(g, params, cfg, sample, ctx);
    loss_out = loss->values[0];
    if (!std::isfinite(loss_out)) throw NumericError("non-finite training loss");
    auto entries = params.entries();
    for (auto& [name, t] : entries) t->zero_grad();
    g.backward(loss);
    flat_grads.clear();
    for (const auto& [name, t] : entries)
        flat_grads.insert(flat_grads.end(), t->grad.begin(), t->grad.end());
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Dataset& train_data, const Dataset& val_data, std::ostream* log_stream,
                  const std::string& checkpoint_path) {
    model_cfg.validate();
    train_cfg.validate();
    if (train_data.samples.empty()) throw ConfigError("train: empty training set");

    TrainResult result;
    result.model_config = model_cfg;
    ModelParams params = ModelParams::init(model_cfg, train_cfg.seed);
    auto entries = params.entries();
    AdamW optimizer(entries);

    int n = static_cast<int>(train_data.samples.size());
    std::vector<int> order(static_cast<size_t>(n));

    ModelParams best_params = params.clone_values();
    double best_bleu = -1.0;
    int best_epoch = -1;

    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        double lr = lr_at(epoch, train_cfg);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = Rng::stream(train_cfg.seed, 0xE90Cull, static_cast<uint64_t>(epoch));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(i + 1))]);

        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += train_cfg.batch_size) {
            int count = std::min(train_cfg.batch_size, n - start);
            std::vector<std::vector<double>> grads(static_cast<size_t>(count));
            std::vector<double> losses(static_cast<size_t>(count), 0.0);

            int workers = std::min(train_cfg.workers, count);
            if (workers <= 1) {
                for (int i = 0; i < count; ++i) {
                    int idx = order[static_cast<size_t>(start + i)];
                    sample_gradients(params, model_cfg,
                                     train_data.samples[static_cast<size_t>(idx)], train_cfg.seed,
                                     epoch, idx, grads[static_cast<size_t>(i)],
                                     losses[static_cast<size_t>(i)]);
                }
            } else {
                std::vector<std::thread> pool;
                std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
                for (int w = 0; w < workers; ++w) {
                    pool.emplace_back([&, w]() {
                        try {
                            ModelParams local = params.clone_values();
                            for (int i = w; i < count; i += workers) {
                                int idx = order[static_cast<size_t>(start + i)];
                                sample_gradients(local, model_cfg,
                                                 train_data.samples[static_cast<size_t>(idx)],
                                                 train_cfg.seed, epoch, idx,
                                                 grads[static_cast<size_t>(i)],
                                                 losses[static_cast<size_t>(i)]);
                            }
                        } catch (...) {
                            errors[static_cast<size_t>(w)] = std::current_exception();
                        }
                    });
                }
                for (auto& t : pool) t.join();
                for (auto& e : errors)
                    if (e) std::rethrow_exception(e);
            }

            // Fixed reduction order: sample slot 0..count-1.
            params.zero_grad();
            size_t flat = 0;
            for (const auto& [name, t] : entries) flat += t->values.size();
            std::vector<double> mean_grad(flat, 0.0);
            for (int i = 0; i < count; ++i) {
                const auto& gbuf = grads[static_cast<size_t>(i)];
                for (size_t j = 0; j < flat; ++j) mean_grad[j] += gbuf[j];
                epoch_loss += losses[static_cast<size_t>(i)];
            }
            double inv = 1.0 / static_cast<double>(count);
            size_t cursor = 0;
            for (const auto& [name, t] : entries) {
                for (size_t j = 0; j < t->grad.size(); ++j) t->grad[j] = mean_grad[cursor + j] * inv;
                cursor += t->grad.size();
            }
            clip_gradients(entries, train_cfg.grad_clip_norm);
            optimizer.step(entries, lr, train_cfg.weight_decay);
        }
        epoch_loss /= static_cast<double>(n);

        MetricReport val;
        if (!val_data.samples.empty()) val = evaluate(params, model_cfg, val_data, /*beam=*/1);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = epoch_loss;
        rec.val_bleu4 = val.bleu4;
        rec.val_keyframe_recall = val.keyframe_recall;
        rec.val_token_accuracy = val.token_accuracy;
        rec.val_loss = val.loss;
        result.history.push_back(rec);
        if (log_stream) {
            nlohmann::json j = rec;
            (*log_stream) << j.dump() << "\n" << std::flush;
        }

        if (val_data.samples.empty() || val.bleu4 >= best_bleu) {
            best_bleu = val_data.samples.empty() ? 0.0 : val.bleu4;
            best_epoch = epoch;
            best_params = params.clone_values();
        }
        if (train_cfg.early_stop_train_loss > 0.0 &&
            epoch_loss < train_cfg.early_stop_train_loss)
            break;
    }

    result.params = std::move(best_params);
    result.best_val_bleu4 = std::max(best_bleu, 0.0);
    result.best_epoch = best_epoch;
    if (!val_data.samples.empty())
        result.final_report = evaluate(result.params, model_cfg, val_data);
    if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, model_cfg, result.params);
    return result;
}

std::vector<std::pair<double, double>> mask_ablation(const ModelParams& params,
                                                     const ModelConfig& cfg, const Dataset& data,
                                                     AttModule module,
                                                     const std::vector<double>& ratios) {
    for (double r : ratios)
        if (r < 0.0 || r > 1.0) throw ContractError("mask_ablation: ratio outside [0, 1]");
    MaskSpec baseline{module, 0.0};
    double base_bleu = evaluate(params, cfg, data, 0, &baseline).bleu4;
    std::vector<std::pair<double, double>> curve;
    for (double r : ratios) {
        MaskSpec mask{module, r};
        double b = evaluate(params, cfg, data, 0, &mask).bleu4;
        double rel = base_bleu > 0.0 ? b / base_bleu : (b == 0.0 ? 1.0 : 0.0);
        curve.emplace_back(r, rel);
    }
    return curve;
}

double chance_keyframe_rate(int top_k, int region_frames, int n_signal_frames) {
    if (top_k < n_signal_frames) return 0.0;
    // C(n - s, k - s) / C(n, k)
    auto log_choose = [](int nn, int kk) {
        double acc = 0.0;
        for (int i = 0; i < kk; ++i)
            acc += std::log(static_cast<double>(nn - i)) - std::log(static_cast<double>(i + 1));
        return acc;
    };
    return std::exp(log_choose(region_frames - n_signal_frames, top_k - n_signal_frames) -
                    log_choose(region_frames, top_k));
}

GradSuiteResult run_gradient_suite(uint64_t seed) {
    auto t0 = std::chrono::steady_clock::now();

    ModelConfig cfg = ModelConfig::desk_defaults();
    cfg.frames = 6;
    cfg.frame_dim = cfg.clip_dim = cfg.region_dim = 5;
    cfg.frame_proj_dim = cfg.clip_proj_dim = cfg.region_proj_dim = 8;
    cfg.aligned_dim = 6;
    cfg.att_dim = 7;
    cfg.hidden_dim = 8;
    cfg.decoder_layers = 2;
    cfg.embed_dim = 6;
    cfg.regions_per_frame = 2;
    cfg.vocab_size = 5;
    cfg.variant = Variant::G2L;
    cfg.sampler.top_k = 2;
    // Soft sampler: the straight-through path is piecewise constant, which
    // finite differences cannot probe. The temperature keeps rows sharp
    // enough that the clamped suppression terms stay away from the clamp
    // kink, while the softmax itself stays smooth.
    cfg.sampler.straight_through = false;
    cfg.sampler.temperature = 0.15;

    Rng data_rng = Rng::stream(seed, 0xDA7Aull);
    VideoSample sample;
    sample.frame_feats = data_rng.normal_vec(static_cast<size_t>(cfg.frames * cfg.frame_dim));
    sample.clip_feats = data_rng.normal_vec(static_cast<size_t>(cfg.frames * cfg.clip_dim));
    sample.region_feats = data_rng.normal_vec(
        static_cast<size_t>(cfg.region_frames() * cfg.regions_per_frame * cfg.region_dim));
    sample.caption = {Vocabulary::kBos, 4, Vocabulary::kUnk, 4, Vocabulary::kEos};

    ModelParams params = ModelParams::init(cfg, seed);
    // Check at a generic point: zero-initialized biases sit on a symmetry of
    // the attention scores (softmax shift invariance cancels their gradient
    // almost exactly), which turns the comparison into pure roundoff noise.
    Rng bias_rng = Rng::stream(seed, 0xB1A5ull);
    for (const auto& [name, t] : params.entries())
        if (name.find("bias") != std::string::npos)
            t->values = bias_rng.uniform_vec(t->values.size(), -0.5, 0.5);

    // Frozen noise: the same stream seed for every evaluation.
    auto loss_value = [&]() {
        Graph g;
        g.grad_enabled = false;
        Rng noise = Rng::stream(seed, 0x6E015Eull);
        DecodeContext ctx;
        ctx.sampler_rng = &noise;
        auto loss = sequence_loss(g, params, cfg, sample, ctx);
        return loss->values[0];
    };

    params.zero_grad();
    {
        Graph g;
        Rng noise = Rng::stream(seed, 0x6E015Eull);
        DecodeContext ctx;
        ctx.sampler_rng = &noise;
        auto loss = sequence_loss(g, params, cfg, sample, ctx);
        g.backward(loss);
    }

    GradSuiteResult res;
    // Fourth-order central difference. The wider step keeps the roundoff of
    // the O(1) loss below the 1e-8 denominator floor; the higher order keeps
    // truncation negligible at that step size.
    const double eps = 3e-3;
    for (const auto& [name, t] : params.entries()) {
        double group_err = 0.0;
        for (size_t i = 0; i < t->values.size(); ++i) {
            double saved = t->values[i];
            auto at = [&](double offset) {
                t->values[i] = saved + offset;
                double f = loss_value();
                t->values[i] = saved;
                return f;
            };
            double numeric =
                (8.0 * (at(eps) - at(-eps)) - (at(2.0 * eps) - at(-2.0 * eps))) / (12.0 * eps);
            double analytic = t->grad[i];
            double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            group_err = std::max(group_err, std::fabs(analytic - numeric) / denom);
        }
        res.group_errors.emplace_back(name, group_err);
        res.max_rel_err = std::max(res.max_rel_err, group_err);
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace g2l
