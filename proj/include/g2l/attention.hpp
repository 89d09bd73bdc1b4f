#pragma once

#include <string>
#include <utility>
#include <vector>

#include "g2l/rng.hpp"
#include "g2l/tensor.hpp"

namespace g2l {

/// One attention instance: score(h, V) = readout . tanh((Wh h) * (Wv V) + bias)
/// with * the Hadamard product, followed by a softmax over the scored rows.
/// The multiplicative form means a zero hidden state scores every row
/// identically (the bias term is shared), so attention is uniform at the
/// first decoding step.
struct AttentionParams {
    TensorPtr hidden_proj;   // {att_dim, hidden_dim}, applied to h
    TensorPtr feature_proj;  // {feature_dim, att_dim}, applied to feature rows
    TensorPtr bias;          // {att_dim}
    TensorPtr readout;       // {att_dim}

    static AttentionParams init(int hidden_dim, int feature_dim, int att_dim, Rng& rng);
    void collect(const std::string& prefix,
                 std::vector<std::pair<std::string, TensorPtr>>& out) const;
    int att_dim() const { return bias->shape[0]; }
};

// Matrices uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], zero biases.
TensorPtr init_matrix(std::vector<int> shape, int fan_in, Rng& rng);

TensorPtr attention_score(Graph& g, const AttentionParams& p, const TensorPtr& h_prev,
                          const TensorPtr& feature);

// Softmax-normalized scores over the rows of features {L, feature_dim}.
TensorPtr attention_weights(Graph& g, const AttentionParams& p, const TensorPtr& h_prev,
                            const TensorPtr& features);

// Convex combination of the rows of features under the given weights.
TensorPtr weighted_sum(Graph& g, const TensorPtr& weights, const TensorPtr& features);

}  // namespace g2l
