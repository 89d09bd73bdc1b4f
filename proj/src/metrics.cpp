#include "g2l/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "g2l/errors.hpp"

namespace g2l {

namespace {

using Ngram = std::vector<int>;

std::map<Ngram, long> ngram_counts(const std::vector<int>& seq, int n) {
    std::map<Ngram, long> counts;
    if (static_cast<int>(seq.size()) < n) return counts;
    for (size_t i = 0; i + static_cast<size_t>(n) <= seq.size(); ++i)
        ++counts[Ngram(seq.begin() + static_cast<long>(i), seq.begin() + static_cast<long>(i) + n)];
    return counts;
}

}  // namespace

void BleuStats::accumulate(const std::vector<int>& candidate,
                           const std::vector<std::vector<int>>& references) {
    candidate_len += static_cast<long>(candidate.size());
    long closest = 0;
    long best_gap = -1;
    for (const auto& ref : references) {
        long gap = std::labs(static_cast<long>(ref.size()) - static_cast<long>(candidate.size()));
        if (best_gap < 0 || gap < best_gap ||
            (gap == best_gap && static_cast<long>(ref.size()) < closest)) {
            best_gap = gap;
            closest = static_cast<long>(ref.size());
        }
    }
    reference_len += closest;

    for (int n = 1; n <= 4; ++n) {
        auto cand_counts = ngram_counts(candidate, n);
        std::map<Ngram, long> max_ref;
        for (const auto& ref : references)
            for (const auto& [gram, c] : ngram_counts(ref, n))
                max_ref[gram] = std::max(max_ref[gram], c);
        for (const auto& [gram, c] : cand_counts) {
            total[n - 1] += c;
            auto it = max_ref.find(gram);
            if (it != max_ref.end()) correct[n - 1] += std::min(c, it->second);
        }
    }
}

double bleu_from_stats(const BleuStats& stats, bool smooth) {
    if (stats.candidate_len == 0) return 0.0;
    double log_precision = 0.0;
    for (int n = 0; n < 4; ++n) {
        double c = static_cast<double>(stats.correct[n]);
        double t = static_cast<double>(stats.total[n]);
        if (smooth && n >= 1) {
            c += 1.0;
            t += 1.0;
        }
        if (c <= 0.0 || t <= 0.0) return 0.0;
        log_precision += std::log(c / t);
    }
    double bp = 1.0;
    if (stats.candidate_len < stats.reference_len)
        bp = std::exp(1.0 - static_cast<double>(stats.reference_len) /
                                static_cast<double>(stats.candidate_len));
    return bp * std::exp(log_precision / 4.0);
}

double bleu4(const std::vector<int>& candidate, const std::vector<std::vector<int>>& references,
             bool smooth) {
    if (references.empty()) throw ContractError("bleu4: no references");
    if (candidate.empty()) {
        std::fprintf(stderr, "warning: empty candidate scored as 0\n");
        return 0.0;
    }
    BleuStats stats;
    stats.accumulate(candidate, references);
    return bleu_from_stats(stats, smooth);
}

double corpus_bleu4(
    const std::vector<std::pair<std::vector<int>, std::vector<std::vector<int>>>>& pairs,
    bool smooth) {
    BleuStats stats;
    for (const auto& [cand, refs] : pairs) {
        if (refs.empty()) throw ContractError("corpus_bleu4: pair without references");
        stats.accumulate(cand, refs);
    }
    return bleu_from_stats(stats, smooth);
}

void MetricReport::validate() const {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(bleu4) || !unit(token_accuracy) || !unit(keyframe_recall) || loss < 0.0)
        throw ContractError("metric report outside valid ranges");
}

void to_json(nlohmann::json& j, const MetricReport& r) {
    j = nlohmann::json{{"bleu4", r.bleu4},
                       {"token_accuracy", r.token_accuracy},
                       {"keyframe_recall", r.keyframe_recall},
                       {"loss", r.loss}};
}

}  // namespace g2l
