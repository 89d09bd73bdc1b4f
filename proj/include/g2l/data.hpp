#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "g2l/rng.hpp"

namespace g2l {

/// Token table with fixed reserved entries.
struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> index;

    static Vocabulary reserved_only();
    int add(const std::string& token);
    int lookup(const std::string& token) const;  // kUnk for unknown
    int size() const { return static_cast<int>(tokens.size()); }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);
};

/// One generated sequence: per-frame appearance features, per-frame motion
/// features, per-region-frame object proposal features, the target caption
/// and the planted ground truth that the selector is supposed to recover.
struct VideoSample {
    std::vector<double> frame_feats;   // frames x frame_dim
    std::vector<double> clip_feats;    // frames x clip_dim
    std::vector<double> region_feats;  // region_frames x regions_per_frame x region_dim
    std::vector<int> caption;          // BOS ... EOS
    std::vector<int> planted_frames;   // region-frame indices carrying signal
    std::vector<int> planted_regions;  // region index within each planted frame
    int subject = 0, action = 0, object = 0;

    bool has_regions() const { return !region_feats.empty(); }
};

struct DatasetSpec {
    int n_samples = 1200;
    int frames = 12;
    int frame_dim = 16;
    int clip_dim = 16;
    int region_dim = 16;
    int regions_per_frame = 4;
    int sparse_stride = 3;
    int n_subjects = 6;
    int n_actions = 12;
    int n_objects = 6;
    int n_distractors = 8;
    double noise_std = 0.1;
    int n_signal_frames = 2;
    uint64_t seed = 7;
    double train_ratio = 5.0 / 6.0, val_ratio = 1.0 / 12.0, test_ratio = 1.0 / 12.0;

    int region_frames() const { return frames / sparse_stride; }
    void validate() const;
};

struct Dataset {
    DatasetSpec spec;
    std::vector<VideoSample> samples;
};

/// Concept prototypes drawn once per seed; unit-norm vectors.
struct ConceptBank {
    std::vector<std::vector<double>> subjects;     // frame_dim
    std::vector<std::vector<double>> actions;      // clip_dim
    std::vector<std::vector<double>> objects;      // region_dim
    std::vector<std::vector<double>> distractors;  // region_dim
    static ConceptBank build(const DatasetSpec& spec);
};

/// The action concept is recoverable from every clip-feature row, the subject
/// only from the frames covered by planted region-frames, and the object only
/// from the single planted region of each planted region-frame. Deterministic
/// per (seed, sample index).
///
/// Object identities follow a fixed cycle with one extra slot for object 0
/// per cycle, sized to stay within ~2.5 sigma of uniform at any sample
/// count. Models without region access can only guess the most frequent
/// object; the deterministic margin pins that argmax so their scores do not
/// swing with training-seed luck.
Dataset generate_dataset(const DatasetSpec& spec);
Vocabulary build_vocabulary(const DatasetSpec& spec);

// Contiguous, disjoint partition by rounded ratios (val/test rounded,
// remainder to train).
void split_dataset(const Dataset& all, Dataset& train, Dataset& val, Dataset& test);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace g2l
