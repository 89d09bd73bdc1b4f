#pragma once

#include <utility>
#include <vector>

#include <json.hpp>

namespace g2l {

/// Clipped n-gram counts for orders 1..4 plus length bookkeeping.
struct BleuStats {
    long correct[4] = {0, 0, 0, 0};
    long total[4] = {0, 0, 0, 0};
    long candidate_len = 0;
    long reference_len = 0;  // closest reference length, summed

    void accumulate(const std::vector<int>& candidate,
                    const std::vector<std::vector<int>>& references);
};

// Geometric mean of clipped 1..4-gram precisions times the brevity penalty.
// With smoothing on, orders >= 2 use (correct+1)/(total+1); short candidates
// therefore still score 1.0 when they equal their reference.
double bleu_from_stats(const BleuStats& stats, bool smooth);

// Sentence-level BLEU-4. Sequences must exclude BOS/EOS/PAD. An empty
// candidate scores 0 (with a warning on stderr).
double bleu4(const std::vector<int>& candidate, const std::vector<std::vector<int>>& references,
             bool smooth = true);

// Corpus-level BLEU-4 over (candidate, references) pairs: counts are pooled
// before the precision quotients.
double corpus_bleu4(
    const std::vector<std::pair<std::vector<int>, std::vector<std::vector<int>>>>& pairs,
    bool smooth = true);

struct MetricReport {
    double bleu4 = 0.0;
    double token_accuracy = 0.0;
    double keyframe_recall = 0.0;
    double loss = 0.0;

    void validate() const;
};

void to_json(nlohmann::json& j, const MetricReport& r);

}  // namespace g2l
