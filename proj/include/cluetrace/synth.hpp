#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cluetrace/trace.hpp"
#include "cluetrace/tracer.hpp"

namespace cluetrace {

// Counter-based uniform variate in (0, 1), a pure function of its key.
double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b = 0,
                       std::uint64_t c = 0);

struct SynthSpec {
    std::size_t t_steps = 32;
    std::size_t n_layers = 8;
    VisualGrid grid{8, 8, 224, 224};
    std::size_t n_sys = 4;
    std::size_t n_query = 8;
    std::set<std::size_t> planted_query{4};
    PixelRect planted_region{56.0, 56.0, 140.0, 140.0};
    std::size_t n_distractors = 3;
    double drift = 0.0;            // share of visual signal routed to distractors
    double concentration = 5.0;    // logit boost of planted tokens
    double mention_step_frac = 0.25;
    std::size_t best_layer = 5;
    std::uint64_t seed = 0;
    std::string category = "target";

    void check() const;
};

struct GroundTruth {
    std::set<std::size_t> gt_query;
    std::set<std::size_t> gt_visual;
    std::set<std::size_t> distractors;
    std::set<std::size_t> aligned_steps;
    std::size_t best_layer = 0;
    std::string category;
};

struct SynthTrace {
    AttentionTrace trace;
    GroundTruth truth;
};

SynthTrace generate(const SynthSpec& spec);

struct RecoveryScore {
    double precision = 0.0;
    double recall = 0.0;
    double iou = 0.0;
    double query_hit_rate = 0.0;  // |X_q* ∩ gt_query| / |gt_query|
    bool query_top_rank = false;  // gt_query holds exactly the |gt_query| largest variance z-scores
    bool layer_hit = false;       // layer scan on this trace picks best_layer
};

struct SetOverlap {
    double precision = 0.0;
    double recall = 0.0;
    double iou = 0.0;
};

SetOverlap set_overlap(const std::set<std::size_t>& predicted, const std::set<std::size_t>& truth);

// Runs the tracer at config.layer, or at truth.best_layer when unset.
RecoveryScore evaluate_recovery(const AttentionTrace& trace, const GroundTruth& truth, const TracerConfig& config);

struct SweepRow {
    double drift = 0.0;
    std::size_t n_seeds = 0;
    double precision = 0.0;
    double recall = 0.0;
    double iou = 0.0;
    double query_hit_rate = 0.0;
    double query_top_rank = 0.0;
    double layer_hit = 0.0;
};

// Seeds spec.seed, spec.seed + 1, ... are shared across drift values.
std::vector<SweepRow> drift_sweep(const SynthSpec& spec, std::span<const double> drift_values, std::size_t n_seeds,
                                  const TracerConfig& config);

}  // namespace cluetrace
