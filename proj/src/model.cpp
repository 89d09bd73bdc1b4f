#include "g2l/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace g2l {

namespace {

const char kCheckpointMagic[4] = {'G', '2', 'L', 'C'};
constexpr uint16_t kCheckpointVersion = 1;

int argmax(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
    return best;
}

std::vector<double> log_softmax_values(const std::vector<double>& logits) {
    double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double x : logits) sum += std::exp(x - m);
    double lse = m + std::log(sum);
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

// Zero the smallest ceil(ratio*L) weights, renormalize the rest. Ties break
// toward lower indices. Returns a detached constant.
TensorPtr apply_mask(Graph& g, const TensorPtr& weights, const DecodeContext& ctx,
                     AttModule module) {
    (void)g;
    if (!ctx.mask || ctx.mask->module != module) return weights;
    double ratio = ctx.mask->ratio;
    if (ratio < 0.0 || ratio > 1.0) throw ContractError("mask ratio must be in [0, 1]");
    int n = weights->shape[0];
    int m = static_cast<int>(std::ceil(ratio * n));
    std::vector<double> masked = weights->values;
    if (m > 0) {
        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return weights->values[static_cast<size_t>(a)] < weights->values[static_cast<size_t>(b)];
        });
        for (int i = 0; i < std::min(m, n); ++i) masked[static_cast<size_t>(order[static_cast<size_t>(i)])] = 0.0;
        double total = 0.0;
        for (double v : masked) total += v;
        if (total > 0.0)
            for (double& v : masked) v /= total;
        // total == 0 (ratio 1.0): the module contributes nothing this step.
    }
    return Tensor::leaf(weights->shape, std::move(masked));
}

}  // namespace

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::GlobalBase: return "global_base";
        case Variant::GlobalAligned: return "global_aligned";
        case Variant::G2L: return "g2l";
        case Variant::G2LNoGumbel: return "g2l_no_gumbel";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    if (name == "global_base") return Variant::GlobalBase;
    if (name == "global_aligned") return Variant::GlobalAligned;
    if (name == "g2l") return Variant::G2L;
    if (name == "g2l_no_gumbel") return Variant::G2LNoGumbel;
    throw ConfigError("unknown variant '" + name + "'");
}

bool variant_has_aligned(Variant v) {
    return v != Variant::GlobalBase;
}

bool variant_has_local(Variant v) {
    return v == Variant::G2L || v == Variant::G2LNoGumbel;
}

ModelConfig ModelConfig::desk_defaults() {
    ModelConfig c;
    c.frames = 12;
    c.frame_dim = c.clip_dim = c.region_dim = 16;
    c.frame_proj_dim = c.clip_proj_dim = c.region_proj_dim = 24;
    c.aligned_dim = 6;
    c.att_dim = 16;
    c.hidden_dim = 48;
    c.decoder_layers = 2;
    c.embed_dim = 16;
    c.regions_per_frame = 4;
    c.sparse_stride = 3;
    c.beam_width = 5;
    c.max_decode_len = 8;
    c.variant = Variant::G2L;
    c.sampler.top_k = 2;
    return c;
}

void ModelConfig::adopt(const DatasetSpec& spec, const Vocabulary& vocab) {
    frames = spec.frames;
    frame_dim = spec.frame_dim;
    clip_dim = spec.clip_dim;
    region_dim = spec.region_dim;
    regions_per_frame = spec.regions_per_frame;
    sparse_stride = spec.sparse_stride;
    vocab_size = vocab.size();
}

int ModelConfig::global_dim() const {
    int d = frame_proj_dim + clip_proj_dim;
    if (variant_has_aligned(variant)) d += aligned_dim;
    return d;
}

int ModelConfig::step_input_dim() const {
    return global_dim() + (variant_has_local(variant) ? region_proj_dim : 0);
}

void ModelConfig::validate() const {
    if (frames < 1) throw ConfigError("model: frames must be >= 1");
    if (frames % sparse_stride != 0)
        throw ConfigError("model: frames (" + std::to_string(frames) +
                          ") not divisible by sparse_stride (" + std::to_string(sparse_stride) + ")");
    for (int d : {frame_dim, clip_dim, region_dim, frame_proj_dim, clip_proj_dim, region_proj_dim,
                  aligned_dim, att_dim, hidden_dim, embed_dim, regions_per_frame})
        if (d < 1) throw ConfigError("model: dimensions must be positive");
    if (decoder_layers < 1) throw ConfigError("model: decoder_layers must be >= 1");
    if (vocab_size < 4) throw ConfigError("model: vocab_size must cover the reserved tokens");
    if (beam_width < 1) throw ConfigError("model: beam_width must be >= 1");
    if (max_decode_len < 1) throw ConfigError("model: max_decode_len must be >= 1");
    sampler.validate();
    if (variant_has_local(variant) && sampler.top_k > region_frames())
        throw ConfigError("model: top_k " + std::to_string(sampler.top_k) +
                          " exceeds region frames " + std::to_string(region_frames()));
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{
        {"frames", c.frames},
        {"frame_dim", c.frame_dim},
        {"clip_dim", c.clip_dim},
        {"region_dim", c.region_dim},
        {"frame_proj_dim", c.frame_proj_dim},
        {"clip_proj_dim", c.clip_proj_dim},
        {"region_proj_dim", c.region_proj_dim},
        {"aligned_dim", c.aligned_dim},
        {"att_dim", c.att_dim},
        {"hidden_dim", c.hidden_dim},
        {"decoder_layers", c.decoder_layers},
        {"embed_dim", c.embed_dim},
        {"regions_per_frame", c.regions_per_frame},
        {"sparse_stride", c.sparse_stride},
        {"vocab_size", c.vocab_size},
        {"beam_width", c.beam_width},
        {"max_decode_len", c.max_decode_len},
        {"variant", variant_name(c.variant)},
        {"sampler",
         {{"scale", c.sampler.scale},
          {"temperature", c.sampler.temperature},
          {"top_k", c.sampler.top_k},
          {"straight_through", c.sampler.straight_through},
          {"floor", c.sampler.floor}}},
    };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.frames = j.value("frames", c.frames);
    c.frame_dim = j.value("frame_dim", c.frame_dim);
    c.clip_dim = j.value("clip_dim", c.clip_dim);
    c.region_dim = j.value("region_dim", c.region_dim);
    c.frame_proj_dim = j.value("frame_proj_dim", c.frame_proj_dim);
    c.clip_proj_dim = j.value("clip_proj_dim", c.clip_proj_dim);
    c.region_proj_dim = j.value("region_proj_dim", c.region_proj_dim);
    c.aligned_dim = j.value("aligned_dim", c.aligned_dim);
    c.att_dim = j.value("att_dim", c.att_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.regions_per_frame = j.value("regions_per_frame", c.regions_per_frame);
    c.sparse_stride = j.value("sparse_stride", c.sparse_stride);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.beam_width = j.value("beam_width", c.beam_width);
    c.max_decode_len = j.value("max_decode_len", c.max_decode_len);
    if (j.contains("variant")) c.variant = variant_from_name(j.at("variant").get<std::string>());
    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        c.sampler.scale = s.value("scale", c.sampler.scale);
        c.sampler.temperature = s.value("temperature", c.sampler.temperature);
        c.sampler.top_k = s.value("top_k", c.sampler.top_k);
        c.sampler.straight_through = s.value("straight_through", c.sampler.straight_through);
        c.sampler.floor = s.value("floor", c.sampler.floor);
    }
}

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(mix64(seed));
    ModelParams p;
    p.frame_proj = init_matrix({cfg.frame_dim, cfg.frame_proj_dim}, cfg.frame_dim, rng);
    p.frame_bias = Tensor::zeros({cfg.frame_proj_dim}, true);
    p.clip_proj = init_matrix({cfg.clip_dim, cfg.clip_proj_dim}, cfg.clip_dim, rng);
    p.clip_bias = Tensor::zeros({cfg.clip_proj_dim}, true);
    int aligned_in = cfg.frame_proj_dim + cfg.clip_proj_dim;
    if (variant_has_aligned(cfg.variant)) {
        p.align_proj = init_matrix({aligned_in, cfg.aligned_dim}, aligned_in, rng);
        p.align_bias = Tensor::zeros({cfg.aligned_dim}, true);
    }
    if (variant_has_local(cfg.variant)) {
        p.region_proj = init_matrix({cfg.region_dim, cfg.region_proj_dim}, cfg.region_dim, rng);
        p.region_bias = Tensor::zeros({cfg.region_proj_dim}, true);
    }
    p.att_frame = AttentionParams::init(cfg.hidden_dim, cfg.frame_proj_dim, cfg.att_dim, rng);
    p.att_clip = AttentionParams::init(cfg.hidden_dim, cfg.clip_proj_dim, cfg.att_dim, rng);
    if (variant_has_aligned(cfg.variant))
        p.att_aligned = AttentionParams::init(cfg.hidden_dim, aligned_in, cfg.att_dim, rng);
    if (variant_has_local(cfg.variant))
        p.att_region = AttentionParams::init(cfg.hidden_dim, cfg.region_proj_dim, cfg.att_dim, rng);

    for (int l = 0; l < cfg.decoder_layers; ++l) {
        int in_dim = (l == 0) ? cfg.step_input_dim() + cfg.embed_dim : cfg.hidden_dim;
        GruLayer layer;
        layer.in_update = init_matrix({cfg.hidden_dim, in_dim}, in_dim, rng);
        layer.rec_update = init_matrix({cfg.hidden_dim, cfg.hidden_dim}, cfg.hidden_dim, rng);
        layer.bias_update = Tensor::zeros({cfg.hidden_dim}, true);
        layer.in_reset = init_matrix({cfg.hidden_dim, in_dim}, in_dim, rng);
        layer.rec_reset = init_matrix({cfg.hidden_dim, cfg.hidden_dim}, cfg.hidden_dim, rng);
        layer.bias_reset = Tensor::zeros({cfg.hidden_dim}, true);
        layer.in_cand = init_matrix({cfg.hidden_dim, in_dim}, in_dim, rng);
        layer.rec_cand = init_matrix({cfg.hidden_dim, cfg.hidden_dim}, cfg.hidden_dim, rng);
        layer.bias_cand = Tensor::zeros({cfg.hidden_dim}, true);
        p.gru.push_back(std::move(layer));
    }
    p.word_embedding = init_matrix({cfg.vocab_size, cfg.embed_dim}, cfg.embed_dim, rng);
    p.out_proj = init_matrix({cfg.vocab_size, cfg.hidden_dim}, cfg.hidden_dim, rng);
    p.out_bias = Tensor::zeros({cfg.vocab_size}, true);
    return p;
}

std::vector<std::pair<std::string, TensorPtr>> ModelParams::entries() const {
    std::vector<std::pair<std::string, TensorPtr>> out;
    auto put = [&](const std::string& name, const TensorPtr& t) {
        if (t) out.emplace_back(name, t);
    };
    put("frame_proj", frame_proj);
    put("frame_bias", frame_bias);
    put("clip_proj", clip_proj);
    put("clip_bias", clip_bias);
    put("align_proj", align_proj);
    put("align_bias", align_bias);
    put("region_proj", region_proj);
    put("region_bias", region_bias);
    if (att_frame.hidden_proj) att_frame.collect("att_frame", out);
    if (att_clip.hidden_proj) att_clip.collect("att_clip", out);
    if (att_aligned.hidden_proj) att_aligned.collect("att_aligned", out);
    if (att_region.hidden_proj) att_region.collect("att_region", out);
    for (size_t l = 0; l < gru.size(); ++l) {
        std::string prefix = "gru." + std::to_string(l);
        put(prefix + ".in_update", gru[l].in_update);
        put(prefix + ".rec_update", gru[l].rec_update);
        put(prefix + ".bias_update", gru[l].bias_update);
        put(prefix + ".in_reset", gru[l].in_reset);
        put(prefix + ".rec_reset", gru[l].rec_reset);
        put(prefix + ".bias_reset", gru[l].bias_reset);
        put(prefix + ".in_cand", gru[l].in_cand);
        put(prefix + ".rec_cand", gru[l].rec_cand);
        put(prefix + ".bias_cand", gru[l].bias_cand);
    }
    put("word_embedding", word_embedding);
    put("out_proj", out_proj);
    put("out_bias", out_bias);
    return out;
}

long ModelParams::total_parameters() const {
    long n = 0;
    for (const auto& [name, t] : entries()) n += t->numel();
    return n;
}

void ModelParams::zero_grad() {
    for (auto& [name, t] : entries()) t->zero_grad();
}

ModelParams ModelParams::clone_values() const {
    auto copy = [](const TensorPtr& t) -> TensorPtr {
        if (!t) return nullptr;
        return Tensor::leaf(t->shape, t->values, t->requires_grad);
    };
    auto copy_att = [&](const AttentionParams& a) {
        AttentionParams out;
        out.hidden_proj = copy(a.hidden_proj);
        out.feature_proj = copy(a.feature_proj);
        out.bias = copy(a.bias);
        out.readout = copy(a.readout);
        return out;
    };
    ModelParams p;
    p.frame_proj = copy(frame_proj);
    p.frame_bias = copy(frame_bias);
    p.clip_proj = copy(clip_proj);
    p.clip_bias = copy(clip_bias);
    p.align_proj = copy(align_proj);
    p.align_bias = copy(align_bias);
    p.region_proj = copy(region_proj);
    p.region_bias = copy(region_bias);
    p.att_frame = copy_att(att_frame);
    p.att_clip = copy_att(att_clip);
    p.att_aligned = copy_att(att_aligned);
    p.att_region = copy_att(att_region);
    for (const auto& l : gru)
        p.gru.push_back(GruLayer{copy(l.in_update), copy(l.rec_update), copy(l.bias_update),
                                 copy(l.in_reset), copy(l.rec_reset), copy(l.bias_reset),
                                 copy(l.in_cand), copy(l.rec_cand), copy(l.bias_cand)});
    p.word_embedding = copy(word_embedding);
    p.out_proj = copy(out_proj);
    p.out_bias = copy(out_bias);
    return p;
}

DecoderState DecoderState::initial(const ModelConfig& cfg) {
    DecoderState s;
    for (int l = 0; l < cfg.decoder_layers; ++l)
        s.hidden.push_back(Tensor::zeros({cfg.hidden_dim}));
    return s;
}

AttModule att_module_from_name(const std::string& name) {
    if (name == "2d" || name == "frame") return AttModule::Frame;
    if (name == "3d" || name == "clip") return AttModule::Clip;
    if (name == "al" || name == "aligned") return AttModule::Aligned;
    if (name == "local" || name == "region") return AttModule::Region;
    throw ConfigError("unknown attention module '" + name + "'");
}

std::string att_module_name(AttModule m) {
    switch (m) {
        case AttModule::Frame: return "2d";
        case AttModule::Clip: return "3d";
        case AttModule::Aligned: return "al";
        case AttModule::Region: return "local";
    }
    return "?";
}

std::pair<TensorPtr, TensorPtr> project_global(Graph& g, const ModelParams& p,
                                               const TensorPtr& frame_feats,
                                               const TensorPtr& clip_feats) {
    auto fp = g.tanh(g.add(g.matmul(frame_feats, p.frame_proj), p.frame_bias));
    auto vp = g.tanh(g.add(g.matmul(clip_feats, p.clip_proj), p.clip_bias));
    return {fp, vp};
}

SequenceFeatures prepare_sequence(Graph& g, const ModelParams& p, const ModelConfig& cfg,
                                  const VideoSample& sample) {
    if (static_cast<int>(sample.frame_feats.size()) != cfg.frames * cfg.frame_dim ||
        static_cast<int>(sample.clip_feats.size()) != cfg.frames * cfg.clip_dim)
        throw ConfigError("sample feature sizes do not match the model config");
    auto frame_raw = Tensor::leaf({cfg.frames, cfg.frame_dim}, sample.frame_feats);
    auto clip_raw = Tensor::leaf({cfg.frames, cfg.clip_dim}, sample.clip_feats);

    SequenceFeatures seq;
    std::tie(seq.frame_proj_feats, seq.clip_proj_feats) =
        project_global(g, p, frame_raw, clip_raw);
    if (variant_has_aligned(cfg.variant))
        seq.aligned_feats = g.concat({seq.frame_proj_feats, seq.clip_proj_feats}, 1);
    if (variant_has_local(cfg.variant)) {
        int rows = cfg.region_frames() * cfg.regions_per_frame;
        if (static_cast<int>(sample.region_feats.size()) != rows * cfg.region_dim)
            throw ConfigError("sample region features missing or sized differently "
                              "than the model config");
        auto region_raw = Tensor::leaf({rows, cfg.region_dim}, sample.region_feats);
        seq.region_proj_feats =
            g.tanh(g.add(g.matmul(region_raw, p.region_proj), p.region_bias));
    }
    return seq;
}

GlobalEmbedding global_embedding(Graph& g, const ModelParams& p, const ModelConfig& cfg,
                                 const SequenceFeatures& seq, const TensorPtr& h_prev,
                                 const DecodeContext& ctx) {
    auto frame_w = apply_mask(g, attention_weights(g, p.att_frame, h_prev, seq.frame_proj_feats),
                              ctx, AttModule::Frame);
    auto clip_w = apply_mask(g, attention_weights(g, p.att_clip, h_prev, seq.clip_proj_feats),
                             ctx, AttModule::Clip);
    auto frame_sum = weighted_sum(g, frame_w, seq.frame_proj_feats);
    auto clip_sum = weighted_sum(g, clip_w, seq.clip_proj_feats);

    GlobalEmbedding out;
    if (!variant_has_aligned(cfg.variant)) {
        out.x_global = g.concat({frame_sum, clip_sum}, 0);
        return out;
    }
    auto aligned_w = apply_mask(g, attention_weights(g, p.att_aligned, h_prev, seq.aligned_feats),
                                ctx, AttModule::Aligned);
    auto aligned_sum = weighted_sum(g, aligned_w, seq.aligned_feats);
    auto compact = g.tanh(g.add(g.matmul(aligned_sum, p.align_proj), p.align_bias));
    out.x_global = g.concat({frame_sum, clip_sum, compact}, 0);
    out.aligned_weights = aligned_w;
    return out;
}

TensorPtr align_weights_to_regions(Graph& g, const TensorPtr& aligned_weights, int stride) {
    if (aligned_weights->rank() != 1)
        throw DimensionError("align_weights_to_regions: expected a vector");
    int frames = aligned_weights->shape[0];
    if (stride < 1 || frames % stride != 0)
        throw ConfigError("align_weights_to_regions: length " + std::to_string(frames) +
                          " not divisible by stride " + std::to_string(stride));
    int groups = frames / stride;
    std::vector<TensorPtr> avgs;
    avgs.reserve(static_cast<size_t>(groups));
    for (int j = 0; j < groups; ++j)
        avgs.push_back(
            g.scale(g.sum_all(g.slice(aligned_weights, 0, j * stride, stride)), 1.0 / stride));
    auto grouped = g.concat(avgs, 0);
    // Renormalize to a distribution: x / sum(x), written with log/exp so the
    // division stays differentiable. A zero vector stays zero.
    auto recip = g.exp(g.scale(g.log(g.sum_all(grouped)), -1.0));
    return g.hadamard(grouped, recip);
}

LocalEmbedding local_embedding(Graph& g, const ModelParams& p, const ModelConfig& cfg,
                               const SequenceFeatures& seq, const TensorPtr& region_dist,
                               const TensorPtr& h_prev, const DecodeContext& ctx) {
    if (!seq.region_proj_feats) throw ContractError("local_embedding: no region features");
    int n = cfg.region_frames();
    int per = cfg.regions_per_frame;
    SamplerConfig sampler = cfg.sampler;

    LocalEmbedding out;
    if (cfg.variant == Variant::G2LNoGumbel) {
        // Hard top-k by weight; constant rows, no gradient through selection.
        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return region_dist->values[static_cast<size_t>(a)] >
                   region_dist->values[static_cast<size_t>(b)];
        });
        for (int k = 0; k < sampler.top_k; ++k) {
            std::vector<double> row(static_cast<size_t>(n), 0.0);
            row[static_cast<size_t>(order[static_cast<size_t>(k)])] = 1.0;
            out.selection.rows.push_back(Tensor::leaf({n}, std::move(row)));
            out.selection.indices.push_back(order[static_cast<size_t>(k)]);
            out.selection.noise.emplace_back(static_cast<size_t>(n), 0.0);
        }
    } else {
        out.selection = gumbel_topk(g, region_dist, sampler, ctx.sampler_rng);
    }

    TensorPtr acc;
    for (int k = 0; k < sampler.top_k; ++k) {
        const auto& row = out.selection.rows[static_cast<size_t>(k)];
        TensorPtr picked;
        for (int j = 0; j < n; ++j) {
            auto block = g.slice(seq.region_proj_feats, 0, j * per, per);
            auto term = g.hadamard(block, g.element(row, j));
            picked = picked ? g.add(picked, term) : term;
        }
        auto region_w = apply_mask(g, attention_weights(g, p.att_region, h_prev, picked), ctx,
                                   AttModule::Region);
        auto attended = weighted_sum(g, region_w, picked);
        acc = acc ? g.add(acc, attended) : attended;
    }
    out.x_local = acc;
    return out;
}

StepEmbedding step_embedding(Graph& g, const ModelParams& p, const ModelConfig& cfg,
                             const SequenceFeatures& seq, const TensorPtr& h_prev,
                             const DecodeContext& ctx) {
    StepEmbedding out;
    auto ge = global_embedding(g, p, cfg, seq, h_prev, ctx);
    out.aligned_weights = ge.aligned_weights;
    if (variant_has_local(cfg.variant)) {
        auto region_dist = align_weights_to_regions(g, ge.aligned_weights, cfg.sparse_stride);
        auto le = local_embedding(g, p, cfg, seq, region_dist, h_prev, ctx);
        out.x = g.concat({ge.x_global, le.x_local}, 0);
        out.selection = std::move(le.selection);
    } else {
        out.x = ge.x_global;
    }
    if (ctx.trace) {
        StepTrace t;
        if (out.aligned_weights) t.aligned_weights = out.aligned_weights->values;
        t.selected_frames = out.selection.indices;
        ctx.trace->push_back(std::move(t));
    }
    return out;
}

TensorPtr gru_cell(Graph& g, const GruLayer& l, const TensorPtr& input, const TensorPtr& h_prev) {
    auto update = g.sigmoid(
        g.add(g.add(g.matmul(l.in_update, input), g.matmul(l.rec_update, h_prev)), l.bias_update));
    auto reset = g.sigmoid(
        g.add(g.add(g.matmul(l.in_reset, input), g.matmul(l.rec_reset, h_prev)), l.bias_reset));
    auto cand = g.tanh(g.add(
        g.add(g.matmul(l.in_cand, input), g.matmul(l.rec_cand, g.hadamard(reset, h_prev))),
        l.bias_cand));
    // h' = update * h_prev + (1 - update) * cand
    return g.add(cand, g.hadamard(update, g.sub(h_prev, cand)));
}

std::pair<TensorPtr, DecoderState> decode_step(Graph& g, const ModelParams& p,
                                               const ModelConfig& cfg, const DecoderState& state,
                                               const TensorPtr& x_t, int token) {
    if (token < 0 || token >= cfg.vocab_size)
        throw VocabError("decode_step: token " + std::to_string(token) + " outside vocabulary of " +
                         std::to_string(cfg.vocab_size));
    auto embedded = g.embedding(p.word_embedding, token);
    DecoderState next;
    TensorPtr layer_in = g.concat({x_t, embedded}, 0);
    for (size_t l = 0; l < p.gru.size(); ++l) {
        auto h = gru_cell(g, p.gru[l], layer_in, state.hidden[l]);
        next.hidden.push_back(h);
        layer_in = h;
    }
    auto logits = g.add(g.matmul(p.out_proj, next.hidden.back()), p.out_bias);
    return {logits, std::move(next)};
}

TensorPtr sequence_loss(Graph& g, const ModelParams& p, const ModelConfig& cfg,
                        const VideoSample& sample, const DecodeContext& ctx,
                        std::vector<int>* predicted) {
    const auto& caption = sample.caption;
    if (caption.size() < 2 || caption.front() != Vocabulary::kBos ||
        caption.back() != Vocabulary::kEos)
        throw ContractError("sequence_loss: caption must be non-empty and BOS ... EOS");
    auto seq = prepare_sequence(g, p, cfg, sample);
    DecoderState state = DecoderState::initial(cfg);
    TensorPtr loss;
    for (size_t t = 0; t + 1 < caption.size(); ++t) {
        int input = caption[t];
        int gold = caption[t + 1];
        if (gold < 0 || gold >= cfg.vocab_size)
            throw VocabError("sequence_loss: gold token outside vocabulary");
        auto se = step_embedding(g, p, cfg, seq, state.top(), ctx);
        auto [logits, next] = decode_step(g, p, cfg, state, se.x, input);
        state = std::move(next);
        if (predicted) predicted->push_back(argmax(logits->values));
        auto probs = g.softmax(logits, 0);
        auto term = g.scale(g.log(g.element(probs, gold)), -1.0);
        loss = loss ? g.add(loss, term) : term;
    }
    return loss;
}

namespace {

struct Hypothesis {
    std::vector<int> tokens;
    double score = 0.0;
    DecoderState state;
    int last_token = Vocabulary::kBos;
};

}  // namespace

std::vector<int> beam_search(const ModelParams& p, const ModelConfig& cfg,
                             const VideoSample& sample, int beam, int max_len,
                             const MaskSpec* mask, std::vector<StepTrace>* trace) {
    if (beam < 1) throw ContractError("beam_search: beam must be >= 1");
    Graph g;
    g.grad_enabled = false;
    DecodeContext ctx;
    ctx.mask = mask;
    ctx.trace = (beam == 1) ? trace : nullptr;  // traces are per-hypothesis otherwise
    auto seq = prepare_sequence(g, p, cfg, sample);

    std::vector<Hypothesis> alive(1);
    alive[0].state = DecoderState::initial(cfg);
    std::vector<std::pair<std::vector<int>, double>> finished;

    for (int step = 0; step < max_len && !alive.empty(); ++step) {
        std::vector<Hypothesis> candidates;
        for (const auto& hyp : alive) {
            auto se = step_embedding(g, p, cfg, seq, hyp.state.top(), ctx);
            auto [logits, next] = decode_step(g, p, cfg, hyp.state, se.x, hyp.last_token);
            auto logp = log_softmax_values(logits->values);
            for (int v = 0; v < cfg.vocab_size; ++v) {
                double sc = hyp.score + logp[static_cast<size_t>(v)];
                if (v == Vocabulary::kEos) {
                    finished.emplace_back(hyp.tokens, sc);
                } else {
                    Hypothesis cand;
                    cand.tokens = hyp.tokens;
                    cand.tokens.push_back(v);
                    cand.score = sc;
                    cand.state = next;
                    cand.last_token = v;
                    candidates.push_back(std::move(cand));
                }
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
        if (static_cast<int>(candidates.size()) > beam) candidates.resize(static_cast<size_t>(beam));
        alive = std::move(candidates);
    }
    for (const auto& hyp : alive) finished.emplace_back(hyp.tokens, hyp.score);
    if (finished.empty()) return {};
    size_t best = 0;
    for (size_t i = 1; i < finished.size(); ++i)
        if (finished[i].second > finished[best].second) best = i;
    return finished[best].first;
}

std::vector<int> greedy_decode(const ModelParams& p, const ModelConfig& cfg,
                               const VideoSample& sample, int max_len, const MaskSpec* mask) {
    return beam_search(p, cfg, sample, 1, max_len, mask);
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open " + path + " for writing");
    os.write(kCheckpointMagic, 4);
    write_u16(os, kCheckpointVersion);
    nlohmann::json j = cfg;
    std::string header = j.dump();
    write_u32(os, static_cast<uint32_t>(header.size()));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    auto entries = params.entries();
    write_u32(os, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) write_tensor(os, *t);
    if (!os) throw ParseError("write failure on " + path);
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::string(magic, 4) != std::string(kCheckpointMagic, 4))
        throw ParseError(path + ": bad checkpoint magic");
    uint16_t version = read_u16(is);
    if (version != kCheckpointVersion)
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
    uint32_t header_len = read_u32(is);
    std::string header(header_len, '\0');
    is.read(header.data(), static_cast<std::streamsize>(header_len));
    if (is.gcount() != static_cast<std::streamsize>(header_len))
        throw ParseError(path + ": truncated checkpoint header");
    ModelConfig cfg;
    try {
        from_json(nlohmann::json::parse(header), cfg);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": bad checkpoint header: " + e.what());
    }
    ModelParams params = ModelParams::init(cfg, 0);
    auto entries = params.entries();
    uint32_t count = read_u32(is);
    if (count != entries.size())
        throw ParseError(path + ": checkpoint holds " + std::to_string(count) + " tensors, config " +
                         "expects " + std::to_string(entries.size()));
    for (auto& [name, t] : entries) {
        auto loaded = read_tensor(is);
        if (loaded->shape != t->shape)
            throw ParseError(path + ": tensor " + name + " has shape " + shape_str(loaded->shape) +
                             ", expected " + shape_str(t->shape));
        t->values = loaded->values;
    }
    return {cfg, std::move(params)};
}

}  // namespace g2l
