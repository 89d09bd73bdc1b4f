#include "g2l/gumbel.hpp"

#include <algorithm>

#include "g2l/errors.hpp"

namespace g2l {

void SamplerConfig::validate() const {
    if (scale <= 0.0) throw ConfigError("sampler: scale must be positive");
    if (temperature <= 0.0) throw ConfigError("sampler: temperature must be positive");
    if (top_k < 1) throw ConfigError("sampler: top_k must be >= 1");
    if (floor <= 0.0 || floor > 1e-6) throw ConfigError("sampler: floor must be in (0, 1e-6]");
}

TensorPtr sample_gumbel(const std::vector<int>& shape, Rng& rng) {
    int n = 1;
    for (int e : shape) n *= e;
    std::vector<double> values(static_cast<size_t>(n));
    for (auto& v : values) v = rng.gumbel();
    return Tensor::leaf(shape, std::move(values));
}

namespace {

TensorPtr noise_for(const TensorPtr& pi0, Rng* rng) {
    if (rng) return sample_gumbel(pi0->shape, *rng);
    return Tensor::zeros(pi0->shape);
}

TensorPtr sharp_softmax(Graph& g, const TensorPtr& base, const TensorPtr& noise,
                        const SamplerConfig& cfg) {
    auto logits = g.log(g.scale(base, cfg.scale), cfg.floor);
    return g.softmax(g.scale(g.add(logits, noise), 1.0 / cfg.temperature), 0);
}

}  // namespace

TensorPtr gumbel_top1(Graph& g, const TensorPtr& pi0, const SamplerConfig& cfg, Rng* rng) {
    cfg.validate();
    if (pi0->rank() != 1)
        throw DimensionError("gumbel_top1: expected a vector, got " + shape_str(pi0->shape));
    return sharp_softmax(g, pi0, noise_for(pi0, rng), cfg);
}

SelectionResult gumbel_topk(Graph& g, const TensorPtr& pi0, const SamplerConfig& cfg, Rng* rng) {
    cfg.validate();
    if (pi0->rank() != 1)
        throw DimensionError("gumbel_topk: expected a vector, got " + shape_str(pi0->shape));
    int n = pi0->shape[0];
    if (cfg.top_k > n)
        throw ConfigError("gumbel_topk: top_k " + std::to_string(cfg.top_k) + " exceeds " +
                          std::to_string(n) + " categories");

    SelectionResult res;
    TensorPtr emitted_mass;  // sum of already emitted rows
    for (int k = 0; k < cfg.top_k; ++k) {
        TensorPtr base = (k == 0) ? pi0 : g.sub(pi0, emitted_mass);
        auto noise = noise_for(pi0, rng);
        auto soft = sharp_softmax(g, base, noise, cfg);

        int arg = 0;
        for (int i = 1; i < n; ++i)
            if (soft->values[static_cast<size_t>(i)] > soft->values[static_cast<size_t>(arg)])
                arg = i;

        TensorPtr out_row;
        if (cfg.straight_through) {
            // Forward: the exact one-hot of the noisy draw. Backward: at a
            // near-zero temperature the sharp softmax is numerically one-hot
            // and its Jacobian vanishes, so the pass-through gradient is
            // attached to the clamped renormalized base distribution instead
            // (softmax of its clamped log is exactly x/sum(x)).
            auto base_renorm = g.softmax(g.log(g.scale(base, cfg.scale), cfg.floor), 0);
            out_row = g.hard_one_hot(base_renorm, arg);
        } else {
            out_row = soft;
        }
        emitted_mass = (k == 0) ? out_row : g.add(emitted_mass, out_row);

        res.rows.push_back(out_row);
        res.indices.push_back(arg);
        res.noise.push_back(noise->values);
    }
    return res;
}

TensorPtr select_frames(Graph& g, const SelectionResult& sel, const TensorPtr& frames) {
    if (frames->rank() != 2)
        throw DimensionError("select_frames: frames must be {n, d}, got " +
                             shape_str(frames->shape));
    if (sel.rows.empty()) throw ContractError("select_frames: empty selection");
    std::vector<TensorPtr> picked;
    picked.reserve(sel.rows.size());
    for (const auto& row : sel.rows) {
        if (row->shape[0] != frames->shape[0])
            throw DimensionError("select_frames: row length " + shape_str(row->shape) +
                                 " against frames " + shape_str(frames->shape));
        picked.push_back(g.matmul(row, frames));
    }
    return g.stack(picked);
}

}  // namespace g2l
