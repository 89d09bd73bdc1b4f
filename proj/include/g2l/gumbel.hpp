#pragma once

#include <vector>

#include "g2l/rng.hpp"
#include "g2l/tensor.hpp"

namespace g2l {

/// Settings of the differentiable top-k frame selector.
struct SamplerConfig {
    double scale = 10.0;          // multiplies the base distribution inside the log
    double temperature = 1e-4;    // softmax temperature; near-one-hot when small
    int top_k = 2;                // number of draws
    bool straight_through = true; // hard one-hot forward, soft gradient
    double floor = 1e-10;         // clamp applied to the log argument

    void validate() const;
};

/// K near-one-hot distributions plus the recorded noise that produced them.
struct SelectionResult {
    std::vector<TensorPtr> rows;             // each a {n} simplex vector
    std::vector<int> indices;                // argmax per row
    std::vector<std::vector<double>> noise;  // per-row Gumbel draws
};

// Elementwise -log(-log(u)), u uniform in (0,1). Constant leaf (no gradient).
TensorPtr sample_gumbel(const std::vector<int>& shape, Rng& rng);

// softmax((log(scale * pi0) + noise) / temperature). A null rng means
// deterministic mode: the noise is replaced by zeros.
TensorPtr gumbel_top1(Graph& g, const TensorPtr& pi0, const SamplerConfig& cfg, Rng* rng);

// Iterated draws; before draw k the probability mass already emitted by draws
// 1..k-1 is subtracted from the base distribution (clamped at cfg.floor
// before the log), which suppresses re-selection. Fresh noise per draw.
SelectionResult gumbel_topk(Graph& g, const TensorPtr& pi0, const SamplerConfig& cfg, Rng* rng);

// Row k of the result: sum_i rows[k][i] * frames[i]; near-one-hot rows pick
// single frames while staying differentiable through the soft path.
TensorPtr select_frames(Graph& g, const SelectionResult& sel, const TensorPtr& frames);

}  // namespace g2l
