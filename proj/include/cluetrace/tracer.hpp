#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cluetrace/trace.hpp"

namespace cluetrace {

inline constexpr double kDegenerateSigma = 1e-12;

struct TracerConfig {
    std::optional<std::size_t> layer;        // unset: the caller supplies l_max
    double tau_q = 1.0;
    double tau_v = 1.0;
    std::optional<std::size_t> fallback_k;  // unset: max(1, round(0.05 * N_v))

    std::size_t effective_fallback_k(std::size_t n_vis) const;
};

struct ZScores {
    std::vector<double> values;
    bool degenerate = false;  // population sigma below kDegenerateSigma; values are all zero
};

// Standard scores with population moments.
ZScores zscore(std::span<const double> values);

double population_variance(std::span<const double> values);

struct KeyQuerySelection {
    std::size_t layer = 0;
    std::vector<std::vector<double>> trajectories;  // [n_q][t]
    std::vector<double> variances;
    std::vector<double> zscores;
    std::vector<std::size_t> selected;  // query ordinals, ascending
    bool degenerate = false;            // all variances equal: every query token selected
    bool fallback_used = false;         // threshold selected nothing: arg-max tokens selected
};

struct TraceScoreMap {
    std::vector<double> alignment;  // [t]
    std::vector<double> scores;     // [v]
    std::vector<double> zscores;    // [v]
    std::vector<std::size_t> selected;  // visual ordinals, ascending
    bool degenerate = false;
    bool fallback_used = false;
};

struct TracerResult {
    KeyQuerySelection key;
    TraceScoreMap visual;
};

KeyQuerySelection select_key_query_tokens(const AttentionTrace& trace, std::size_t layer, double tau_q);

std::vector<double> alignment_weights(const AttentionTrace& trace, const KeyQuerySelection& key, std::size_t layer);

// Query-aligned visual support: sum over steps of alignment[t] * A[t][layer][v].
std::vector<double> trace_scores(const AttentionTrace& trace, std::span<const double> alignment, std::size_t layer);

// Fills zscores/selected/fallback of a map whose scores are already set.
void select_visual_tokens(TraceScoreMap& map, double tau_v, std::size_t fallback_k);

// The whole question -> output -> vision chain at config.layer, which must be set.
TracerResult run_tracer(const AttentionTrace& trace, const TracerConfig& config);

}  // namespace cluetrace
