#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "g2l/attention.hpp"
#include "g2l/data.hpp"
#include "g2l/gumbel.hpp"
#include "g2l/tensor.hpp"

namespace g2l {

enum class Variant {
    GlobalBase,     // independent frame/clip attentions only
    GlobalAligned,  // adds the aligned attention and its compact embedding
    G2L,            // adds the sampled local region branch
    G2LNoGumbel,    // local branch with hard argmax selection, no gradient
};

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);
bool variant_has_aligned(Variant v);
bool variant_has_local(Variant v);

struct ModelConfig {
    int frames = 12;
    int frame_dim = 1536, clip_dim = 2048, region_dim = 2048;
    int frame_proj_dim = 1024, clip_proj_dim = 1024, region_proj_dim = 1024;
    int aligned_dim = 512;
    int att_dim = 384;
    int hidden_dim = 768;
    int decoder_layers = 2;
    int embed_dim = 300;
    int regions_per_frame = 16;
    int sparse_stride = 3;
    int vocab_size = 0;
    int beam_width = 5;
    int max_decode_len = 8;
    Variant variant = Variant::G2L;
    SamplerConfig sampler;  // sampler.top_k is the number of keyframes

    // Small dimensions for CPU-scale experiments on the synthetic task.
    static ModelConfig desk_defaults();
    // Fills dims that must agree with a dataset (frames, raw dims, vocab).
    void adopt(const DatasetSpec& spec, const Vocabulary& vocab);

    int region_frames() const { return frames / sparse_stride; }
    int global_dim() const;  // size of the global step embedding
    int step_input_dim() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct GruLayer {
    TensorPtr in_update, rec_update, bias_update;
    TensorPtr in_reset, rec_reset, bias_reset;
    TensorPtr in_cand, rec_cand, bias_cand;
};

/// All learnable weights. Tensors not used by the configured variant stay
/// null and are skipped by entries() and the checkpoint writer.
struct ModelParams {
    TensorPtr frame_proj, frame_bias;    // raw frame features -> hidden
    TensorPtr clip_proj, clip_bias;      // raw clip features -> hidden
    TensorPtr align_proj, align_bias;    // compact embedding of the aligned summary
    TensorPtr region_proj, region_bias;  // raw region features -> hidden
    AttentionParams att_frame, att_clip, att_aligned, att_region;
    std::vector<GruLayer> gru;
    TensorPtr word_embedding;  // {vocab, embed_dim}
    TensorPtr out_proj, out_bias;

    static ModelParams init(const ModelConfig& cfg, uint64_t seed);
    std::vector<std::pair<std::string, TensorPtr>> entries() const;
    long total_parameters() const;
    void zero_grad();
    ModelParams clone_values() const;  // deep copy for worker threads
};

struct DecoderState {
    std::vector<TensorPtr> hidden;  // one {hidden_dim} vector per layer
    static DecoderState initial(const ModelConfig& cfg);
    const TensorPtr& top() const { return hidden.back(); }
};

enum class AttModule { Frame, Clip, Aligned, Region };
AttModule att_module_from_name(const std::string& name);
std::string att_module_name(AttModule m);

/// Evaluation-time attention masking: zero the smallest ceil(ratio * L)
/// weights of one module and renormalize the survivors (all-zero when the
/// whole vector is masked). Detaches gradients; inference only.
struct MaskSpec {
    AttModule module;
    double ratio = 0.0;
};

struct StepTrace {
    std::vector<double> aligned_weights;
    std::vector<int> selected_frames;
};

struct DecodeContext {
    Rng* sampler_rng = nullptr;  // null: deterministic selection (zero noise)
    const MaskSpec* mask = nullptr;
    std::vector<StepTrace>* trace = nullptr;
};

/// Per-sample tensors that do not depend on the decoder state.
struct SequenceFeatures {
    TensorPtr frame_proj_feats;   // {L, frame_proj_dim}
    TensorPtr clip_proj_feats;    // {L, clip_proj_dim}
    TensorPtr aligned_feats;      // {L, frame_proj_dim + clip_proj_dim} or null
    TensorPtr region_proj_feats;  // {region_frames * regions_per_frame, region_proj_dim} or null
};

struct GlobalEmbedding {
    TensorPtr x_global;
    TensorPtr aligned_weights;  // null for GlobalBase
};

struct LocalEmbedding {
    TensorPtr x_local;
    SelectionResult selection;
};

struct StepEmbedding {
    TensorPtr x;                // step visual input
    TensorPtr aligned_weights;  // may be null
    SelectionResult selection;  // empty for global variants
};

// tanh projections of raw frame/clip features into the hidden spaces.
std::pair<TensorPtr, TensorPtr> project_global(Graph& g, const ModelParams& p,
                                               const TensorPtr& frame_feats,
                                               const TensorPtr& clip_feats);

SequenceFeatures prepare_sequence(Graph& g, const ModelParams& p, const ModelConfig& cfg,
                                  const VideoSample& sample);

// Concatenation of the frame-attended, clip-attended and (per variant)
// compact aligned summaries; also returns the aligned weights that drive
// frame selection.
GlobalEmbedding global_embedding(Graph& g, const ModelParams& p, const ModelConfig& cfg,
                                 const SequenceFeatures& seq, const TensorPtr& h_prev,
                                 const DecodeContext& ctx);

// Averages consecutive stride-sized groups of the aligned weights and
// renormalizes to a distribution over region-frames.
TensorPtr align_weights_to_regions(Graph& g, const TensorPtr& aligned_weights, int stride);

// Selects top_k region-frames from the aligned distribution, applies the
// shared spatial attention inside each selected frame, and sums the attended
// region vectors.
LocalEmbedding local_embedding(Graph& g, const ModelParams& p, const ModelConfig& cfg,
                               const SequenceFeatures& seq, const TensorPtr& region_dist,
                               const TensorPtr& h_prev, const DecodeContext& ctx);

StepEmbedding step_embedding(Graph& g, const ModelParams& p, const ModelConfig& cfg,
                             const SequenceFeatures& seq, const TensorPtr& h_prev,
                             const DecodeContext& ctx);

TensorPtr gru_cell(Graph& g, const GruLayer& l, const TensorPtr& input, const TensorPtr& h_prev);

// One decoder step: embeds the input token, runs the GRU stack on
// [x_t, embedding], and maps the top hidden state to vocabulary logits.
std::pair<TensorPtr, DecoderState> decode_step(Graph& g, const ModelParams& p,
                                               const ModelConfig& cfg, const DecoderState& state,
                                               const TensorPtr& x_t, int token);

// Teacher-forced negative log-likelihood of the sample caption; attention and
// selection are recomputed at every word step from the previous hidden state.
TensorPtr sequence_loss(Graph& g, const ModelParams& p, const ModelConfig& cfg,
                        const VideoSample& sample, const DecodeContext& ctx,
                        std::vector<int>* predicted = nullptr);

// Highest cumulative log-probability hypothesis; EOS terminates a hypothesis
// and max_len caps the length. Returns content tokens (no BOS/EOS).
std::vector<int> beam_search(const ModelParams& p, const ModelConfig& cfg,
                             const VideoSample& sample, int beam, int max_len,
                             const MaskSpec* mask = nullptr,
                             std::vector<StepTrace>* trace = nullptr);

std::vector<int> greedy_decode(const ModelParams& p, const ModelConfig& cfg,
                               const VideoSample& sample, int max_len,
                               const MaskSpec* mask = nullptr);

// Checkpoint: canonical-JSON config header followed by the parameter tensors
// in declaration order.
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params);
std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path);

}  // namespace g2l
