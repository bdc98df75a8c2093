#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cluetrace/trace.hpp"

namespace cluetrace {

// One perception-labeled trace: the model was asked about `category` and the
// ground-truth box of that category covers `gt_tokens`.
struct PerceptionInstance {
    AttentionTrace trace;
    std::string category;
    std::vector<std::string> category_token_texts;
    std::set<std::size_t> gt_tokens;
};

struct RecallReport {
    std::vector<double> per_layer;
    std::size_t n_instances = 0;
    std::size_t n_skipped = 0;
    std::size_t l_max = 0;
};

struct RecallTerm {
    double value = 0.0;
    std::size_t n_used = 0;
    std::size_t n_skipped = 0;
};

// Steps t where output_texts[t .. t+m) matches the category tokens after
// trimming and case folding. Every step of every matched window is returned,
// ascending and without duplicates.
std::vector<std::size_t> mention_steps(const std::vector<std::string>& output_texts,
                                       const std::vector<std::string>& category_token_texts);
std::vector<std::size_t> mention_steps(const PerceptionInstance& instance);

// Indices of the k largest values; equal values prefer the smaller index.
// Result is in rank order.
std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k);

// Fraction of gt tokens among the |gt| most attended visual tokens, summed
// over mention steps at layer l. Empty when the category is never mentioned.
std::optional<double> layer_recall(const PerceptionInstance& instance, std::size_t l);

RecallTerm clue_recall(std::span<const PerceptionInstance> instances, std::size_t l);

RecallReport scan_layers(std::span<const PerceptionInstance> instances);

}  // namespace cluetrace
