// Scalar-loop mirrors of the model-level operations, shared between the unit
// tests and the acceptance suite.
#pragma once

#include <vector>

#include "g2l/model.hpp"
#include "oracles.hpp"

namespace oracle {

inline Mat rows_of(const std::vector<double>& flat, int rows, int cols) {
    Mat out(static_cast<size_t>(rows), Vec(static_cast<size_t>(cols)));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            out[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                flat[static_cast<size_t>(i * cols + j)];
    return out;
}

struct RawModel {
    Mat frame_proj, clip_proj, align_proj, region_proj;
    Vec frame_bias, clip_bias, align_bias, region_bias;
    RawAttention att_frame, att_clip, att_aligned, att_region;

    static RawModel from(const g2l::ModelParams& p, const g2l::ModelConfig& cfg) {
        RawModel r;
        r.frame_proj = as_rows(p.frame_proj);
        r.frame_bias = p.frame_bias->values;
        r.clip_proj = as_rows(p.clip_proj);
        r.clip_bias = p.clip_bias->values;
        if (g2l::variant_has_aligned(cfg.variant)) {
            r.align_proj = as_rows(p.align_proj);
            r.align_bias = p.align_bias->values;
            r.att_aligned = RawAttention::from(p.att_aligned);
        }
        if (g2l::variant_has_local(cfg.variant)) {
            r.region_proj = as_rows(p.region_proj);
            r.region_bias = p.region_bias->values;
            r.att_region = RawAttention::from(p.att_region);
        }
        r.att_frame = RawAttention::from(p.att_frame);
        r.att_clip = RawAttention::from(p.att_clip);
        return r;
    }

    Mat project(const Mat& rows, const Mat& w, const Vec& b) const {
        Mat out(rows.size(), Vec(b.size(), 0.0));
        for (size_t i = 0; i < rows.size(); ++i)
            for (size_t j = 0; j < b.size(); ++j) {
                double acc = b[j];
                for (size_t k = 0; k < rows[i].size(); ++k) acc += rows[i][k] * w[k][j];
                out[i][j] = std::tanh(acc);
            }
        return out;
    }
};

// Deterministic-mode step input: global summaries, then the local branch
// when the variant has one. Optionally returns the aligned weights and the
// selected frame indices.
inline Vec step_embedding(const RawModel& rm, const g2l::ModelConfig& cfg,
                          const g2l::VideoSample& sample, const Vec& h,
                          Vec* aligned_out = nullptr, std::vector<int>* picked_out = nullptr) {
    auto frame_rows = rows_of(sample.frame_feats, cfg.frames, cfg.frame_dim);
    auto clip_rows = rows_of(sample.clip_feats, cfg.frames, cfg.clip_dim);
    auto fp = rm.project(frame_rows, rm.frame_proj, rm.frame_bias);
    auto vp = rm.project(clip_rows, rm.clip_proj, rm.clip_bias);

    auto wf = attention_weights(rm.att_frame, h, fp);
    auto wc = attention_weights(rm.att_clip, h, vp);
    Vec x = weighted_sum(wf, fp);
    auto clip_sum = weighted_sum(wc, vp);
    x.insert(x.end(), clip_sum.begin(), clip_sum.end());

    if (!g2l::variant_has_aligned(cfg.variant)) return x;

    Mat aligned(fp.size());
    for (size_t i = 0; i < fp.size(); ++i) {
        aligned[i] = fp[i];
        aligned[i].insert(aligned[i].end(), vp[i].begin(), vp[i].end());
    }
    auto wa = attention_weights(rm.att_aligned, h, aligned);
    auto asum = weighted_sum(wa, aligned);
    Vec compact(rm.align_bias.size());
    for (size_t j = 0; j < compact.size(); ++j) {
        double acc = rm.align_bias[j];
        for (size_t k = 0; k < asum.size(); ++k) acc += asum[k] * rm.align_proj[k][j];
        compact[j] = std::tanh(acc);
    }
    x.insert(x.end(), compact.begin(), compact.end());
    if (aligned_out) *aligned_out = wa;

    if (!g2l::variant_has_local(cfg.variant)) return x;

    int groups = cfg.region_frames();
    Vec grouped(static_cast<size_t>(groups), 0.0);
    for (int j = 0; j < groups; ++j) {
        for (int q = 0; q < cfg.sparse_stride; ++q)
            grouped[static_cast<size_t>(j)] += wa[static_cast<size_t>(j * cfg.sparse_stride + q)];
        grouped[static_cast<size_t>(j)] /= cfg.sparse_stride;
    }
    double total = 0.0;
    for (double v : grouped) total += v;
    for (double& v : grouped) v /= total;

    std::vector<Vec> zero_noise(static_cast<size_t>(cfg.sampler.top_k),
                                Vec(static_cast<size_t>(groups), 0.0));
    auto picked = topk_selection(grouped, cfg.sampler.scale, cfg.sampler.temperature,
                                 cfg.sampler.top_k, cfg.sampler.floor, zero_noise);
    if (picked_out) *picked_out = picked;

    auto region_rows = rows_of(sample.region_feats, groups * cfg.regions_per_frame, cfg.region_dim);
    auto rp = rm.project(region_rows, rm.region_proj, rm.region_bias);
    Vec local(static_cast<size_t>(cfg.region_proj_dim), 0.0);
    for (int j : picked) {
        Mat frame_regions(rp.begin() + j * cfg.regions_per_frame,
                          rp.begin() + (j + 1) * cfg.regions_per_frame);
        auto wl = attention_weights(rm.att_region, h, frame_regions);
        auto att = weighted_sum(wl, frame_regions);
        for (size_t d = 0; d < local.size(); ++d) local[d] += att[d];
    }
    x.insert(x.end(), local.begin(), local.end());
    return x;
}

inline RawGru gru_from(const g2l::GruLayer& l) {
    RawGru rg;
    rg.in_update = as_rows(l.in_update);
    rg.rec_update = as_rows(l.rec_update);
    rg.bias_update = l.bias_update->values;
    rg.in_reset = as_rows(l.in_reset);
    rg.rec_reset = as_rows(l.rec_reset);
    rg.bias_reset = l.bias_reset->values;
    rg.in_cand = as_rows(l.in_cand);
    rg.rec_cand = as_rows(l.rec_cand);
    rg.bias_cand = l.bias_cand->values;
    return rg;
}

}  // namespace oracle
