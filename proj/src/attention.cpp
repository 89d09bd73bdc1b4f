#include "g2l/attention.hpp"

#include <cmath>

namespace g2l {

TensorPtr init_matrix(std::vector<int> shape, int fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    int n = 1;
    for (int e : shape) n *= e;
    return Tensor::leaf(std::move(shape), rng.uniform_vec(static_cast<size_t>(n), -bound, bound),
                        /*requires_grad=*/true);
}

AttentionParams AttentionParams::init(int hidden_dim, int feature_dim, int att_dim, Rng& rng) {
    AttentionParams p;
    p.hidden_proj = init_matrix({att_dim, hidden_dim}, hidden_dim, rng);
    p.feature_proj = init_matrix({feature_dim, att_dim}, feature_dim, rng);
    p.bias = Tensor::zeros({att_dim}, true);
    p.readout = init_matrix({att_dim}, att_dim, rng);
    return p;
}

void AttentionParams::collect(const std::string& prefix,
                              std::vector<std::pair<std::string, TensorPtr>>& out) const {
    out.emplace_back(prefix + ".hidden_proj", hidden_proj);
    out.emplace_back(prefix + ".feature_proj", feature_proj);
    out.emplace_back(prefix + ".bias", bias);
    out.emplace_back(prefix + ".readout", readout);
}

TensorPtr attention_score(Graph& g, const AttentionParams& p, const TensorPtr& h_prev,
                          const TensorPtr& feature) {
    auto hp = g.matmul(p.hidden_proj, h_prev);     // {att_dim}
    auto fp = g.matmul(feature, p.feature_proj);   // {att_dim}
    return g.matmul(g.tanh(g.add(g.hadamard(fp, hp), p.bias)), p.readout);  // {1}
}

TensorPtr attention_weights(Graph& g, const AttentionParams& p, const TensorPtr& h_prev,
                            const TensorPtr& features) {
    if (features->rank() != 2)
        throw DimensionError("attention_weights: features must be {L, d}, got " +
                             shape_str(features->shape));
    if (features->shape[0] < 1) throw ContractError("attention_weights: empty feature sequence");
    auto hp = g.matmul(p.hidden_proj, h_prev);                      // {att_dim}
    auto fp = g.matmul(features, p.feature_proj);                   // {L, att_dim}
    auto pre = g.add(g.hadamard(fp, hp), p.bias);                   // rows broadcast
    auto scores = g.matmul(g.tanh(pre), p.readout);                 // {L}
    return g.softmax(scores, 0);
}

TensorPtr weighted_sum(Graph& g, const TensorPtr& weights, const TensorPtr& features) {
    if (weights->rank() != 1 || features->rank() != 2 ||
        weights->shape[0] != features->shape[0])
        throw DimensionError("weighted_sum: got weights " + shape_str(weights->shape) +
                             " against features " + shape_str(features->shape));
    return g.matmul(weights, features);
}

}  // namespace g2l
