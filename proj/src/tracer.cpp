#include "cluetrace/tracer.hpp"

#include <algorithm>
#include <cmath>

#include "cluetrace/clue_recall.hpp"
#include "cluetrace/error.hpp"

namespace cluetrace {

std::size_t TracerConfig::effective_fallback_k(std::size_t n_vis) const {
    if (fallback_k) {
        return *fallback_k;
    }
    const auto k = static_cast<std::size_t>(std::llround(0.05 * static_cast<double>(n_vis)));
    return std::max<std::size_t>(1, k);
}

double population_variance(std::span<const double> values) {
    if (values.empty()) {
        reject("variance of an empty vector");
    }
    double mean = 0.0;
    for (double x : values) {
        mean += x;
    }
    mean /= static_cast<double>(values.size());
    double acc = 0.0;
    for (double x : values) {
        acc += (x - mean) * (x - mean);
    }
    return acc / static_cast<double>(values.size());
}

ZScores zscore(std::span<const double> values) {
    if (values.empty()) {
        reject("z-score of an empty vector");
    }
    double mean = 0.0;
    for (double x : values) {
        mean += x;
    }
    mean /= static_cast<double>(values.size());
    double acc = 0.0;
    for (double x : values) {
        acc += (x - mean) * (x - mean);
    }
    const double sigma = std::sqrt(acc / static_cast<double>(values.size()));

    ZScores out;
    out.values.assign(values.size(), 0.0);
    if (!(sigma >= kDegenerateSigma)) {
        out.degenerate = true;
        return out;
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        out.values[i] = (values[i] - mean) / sigma;
    }
    return out;
}

KeyQuerySelection select_key_query_tokens(const AttentionTrace& trace, std::size_t layer, double tau_q) {
    const std::size_t n_q = trace.layout.n_query;
    if (trace.n_steps == 0 || n_q == 0) {
        reject("key query selection needs at least one step and one query token");
    }
    if (layer >= trace.n_layers) {
        reject("layer " + std::to_string(layer) + " outside trace with L=" + std::to_string(trace.n_layers));
    }
    KeyQuerySelection key;
    key.layer = layer;
    key.trajectories.assign(n_q, std::vector<double>(trace.n_steps));
    const std::size_t q0 = trace.layout.query_begin();
    for (std::size_t t = 0; t < trace.n_steps; ++t) {
        for (std::size_t q = 0; q < n_q; ++q) {
            key.trajectories[q][t] = trace.at(t, layer, q0 + q);
        }
    }
    key.variances.reserve(n_q);
    for (const auto& a : key.trajectories) {
        key.variances.push_back(population_variance(a));
    }
    auto z = zscore(key.variances);
    key.zscores = std::move(z.values);
    key.degenerate = z.degenerate;

    if (key.degenerate) {
        for (std::size_t q = 0; q < n_q; ++q) {
            key.selected.push_back(q);
        }
        return key;
    }
    for (std::size_t q = 0; q < n_q; ++q) {
        if (key.zscores[q] >= tau_q) {
            key.selected.push_back(q);
        }
    }
    if (key.selected.empty()) {
        // No token clears tau_q: keep the most variable ones.
        const double best = *std::max_element(key.zscores.begin(), key.zscores.end());
        for (std::size_t q = 0; q < n_q; ++q) {
            if (key.zscores[q] == best) {
                key.selected.push_back(q);
            }
        }
        key.fallback_used = true;
    }
    return key;
}

std::vector<double> alignment_weights(const AttentionTrace& trace, const KeyQuerySelection& key, std::size_t layer) {
    if (key.selected.empty()) {
        reject("empty key query set");
    }
    if (layer >= trace.n_layers) {
        reject("layer " + std::to_string(layer) + " outside trace with L=" + std::to_string(trace.n_layers));
    }
    const std::size_t q0 = trace.layout.query_begin();
    std::vector<double> alignment(trace.n_steps, 0.0);
    for (std::size_t t = 0; t < trace.n_steps; ++t) {
        for (std::size_t q : key.selected) {
            if (q >= trace.layout.n_query) {
                reject("key query ordinal outside the query range");
            }
            alignment[t] += trace.at(t, layer, q0 + q);
        }
    }
    return alignment;
}

std::vector<double> trace_scores(const AttentionTrace& trace, std::span<const double> alignment, std::size_t layer) {
    if (alignment.size() != trace.n_steps) {
        reject("alignment length does not match the step count");
    }
    if (layer >= trace.n_layers) {
        reject("layer " + std::to_string(layer) + " outside trace with L=" + std::to_string(trace.n_layers));
    }
    const std::size_t n_vis = trace.layout.n_vis;
    const std::size_t v0 = trace.layout.visual_begin();
    std::vector<double> scores(n_vis, 0.0);
    for (std::size_t t = 0; t < trace.n_steps; ++t) {
        const double w = alignment[t];
        const float* row = trace.attn.data() + trace.row_offset(t, layer) + v0;
        for (std::size_t v = 0; v < n_vis; ++v) {
            scores[v] += w * static_cast<double>(row[v]);
        }
    }
    return scores;
}

void select_visual_tokens(TraceScoreMap& map, double tau_v, std::size_t fallback_k) {
    if (map.scores.empty()) {
        reject("no visual tokens to select from");
    }
    if (fallback_k == 0) {
        reject("fallback_k must be at least 1");
    }
    auto z = zscore(map.scores);
    map.zscores = std::move(z.values);
    map.degenerate = z.degenerate;
    map.selected.clear();
    map.fallback_used = false;
    if (!map.degenerate) {
        for (std::size_t v = 0; v < map.zscores.size(); ++v) {
            if (map.zscores[v] >= tau_v) {
                map.selected.push_back(v);
            }
        }
    }
    if (map.selected.empty()) {
        map.selected = top_k_indices(map.scores, fallback_k);
        std::sort(map.selected.begin(), map.selected.end());
        map.fallback_used = true;
    }
}

TracerResult run_tracer(const AttentionTrace& trace, const TracerConfig& config) {
    if (!config.layer) {
        reject("tracer layer is not set");
    }
    const std::size_t layer = *config.layer;
    if (layer >= trace.n_layers) {
        reject("layer " + std::to_string(layer) + " outside trace with L=" + std::to_string(trace.n_layers));
    }
    const auto verdict = validate_trace(trace);
    if (!verdict.pass()) {
        throw Error(ErrorCode::kValidationFailed, verdict.summary());
    }
    TracerResult result;
    result.key = select_key_query_tokens(trace, layer, config.tau_q);
    result.visual.alignment = alignment_weights(trace, result.key, layer);
    result.visual.scores = trace_scores(trace, result.visual.alignment, layer);
    select_visual_tokens(result.visual, config.tau_v, config.effective_fallback_k(trace.layout.n_vis));
    return result;
}

}  // namespace cluetrace
