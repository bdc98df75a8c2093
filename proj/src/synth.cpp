#include "cluetrace/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cluetrace/clue_recall.hpp"
#include "cluetrace/error.hpp"

namespace cluetrace {

namespace {

enum Stream : std::uint64_t {
    kAlign = 1,
    kGenMass,
    kSysJitter,
    kQueryJitter,
    kLiftJitter,
    kVisualNoise,
    kDistractorPlace,
};

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr double kSysMass = 0.06;
constexpr double kQueryBaseMass = 0.12;
constexpr double kQueryLiftMass = 0.25;
constexpr double kGeneratedMassMax = 0.3;
constexpr double kBackgroundShare = 0.1;
constexpr double kOffLayerSignal = 0.3;

double jitter(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return 0.9 + 0.2 * counter_uniform(seed, stream, a, b, c);
}

// softmax(boost * 1[v in set] + u_v) over all visual tokens, u_v ~ U(0,1).
std::vector<double> peaked(const std::vector<bool>& in_set, double boost, std::uint64_t seed, std::uint64_t t,
                           std::uint64_t l, std::uint64_t component) {
    std::vector<double> w(in_set.size());
    double total = 0.0;
    for (std::size_t v = 0; v < w.size(); ++v) {
        const double u = counter_uniform(seed, kVisualNoise + (component << 8), t, l, v);
        w[v] = std::exp((in_set[v] ? boost : 0.0) + u);
        total += w[v];
    }
    for (double& x : w) {
        x /= total;
    }
    return w;
}

std::set<std::size_t> place_distractors(const SynthSpec& spec, const std::set<std::size_t>& gt) {
    std::set<std::size_t> taken(gt);
    std::set<std::size_t> out;
    const std::size_t bh = std::min<std::size_t>(2, spec.grid.rows);
    const std::size_t bw = std::min<std::size_t>(2, spec.grid.cols);
    const std::size_t span_r = spec.grid.rows - bh + 1;
    const std::size_t span_c = spec.grid.cols - bw + 1;
    std::size_t placed = 0;
    for (std::uint64_t attempt = 0; placed < spec.n_distractors && attempt < 256; ++attempt) {
        const auto r0 = static_cast<std::size_t>(counter_uniform(spec.seed, kDistractorPlace, attempt, 0) *
                                                 static_cast<double>(span_r));
        const auto c0 = static_cast<std::size_t>(counter_uniform(spec.seed, kDistractorPlace, attempt, 1) *
                                                 static_cast<double>(span_c));
        std::vector<std::size_t> block;
        bool free = true;
        for (std::size_t r = r0; r < r0 + bh && free; ++r) {
            for (std::size_t c = c0; c < c0 + bw; ++c) {
                const std::size_t v = r * spec.grid.cols + c;
                free = free && taken.count(v) == 0;
                block.push_back(v);
            }
        }
        if (!free) {
            continue;
        }
        // Keep a one-patch gap so distractors never touch the planted region.
        bool adjacent = false;
        for (std::size_t v : block) {
            const auto r = static_cast<long>(v / spec.grid.cols);
            const auto c = static_cast<long>(v % spec.grid.cols);
            for (std::size_t g : gt) {
                const auto gr = static_cast<long>(g / spec.grid.cols);
                const auto gc = static_cast<long>(g % spec.grid.cols);
                adjacent = adjacent || (std::labs(gr - r) <= 1 && std::labs(gc - c) <= 1);
            }
        }
        if (adjacent) {
            continue;
        }
        taken.insert(block.begin(), block.end());
        out.insert(block.begin(), block.end());
        ++placed;
    }
    return out;
}

}  // namespace

double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = mix64(seed + kGolden);
    h = mix64(h ^ (stream + kGolden * 2));
    h = mix64(h ^ (a + kGolden * 3));
    h = mix64(h ^ (b + kGolden * 5));
    h = mix64(h ^ (c + kGolden * 7));
    return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

void SynthSpec::check() const {
    if (t_steps == 0 || n_layers == 0 || n_query == 0) {
        reject("synthetic spec needs at least one step, layer and query token");
    }
    if (grid.rows == 0 || grid.cols == 0 || grid.image_w == 0 || grid.image_h == 0) {
        reject("synthetic grid and image dimensions must be positive");
    }
    if (planted_query.empty() || *planted_query.rbegin() >= n_query) {
        reject("planted query tokens must be a non-empty subset of the query range");
    }
    if (!(drift >= 0.0 && drift <= 1.0)) {
        reject("drift must lie in [0, 1]");
    }
    if (!(concentration > 0.0)) {
        reject("concentration must be positive");
    }
    if (!(mention_step_frac > 0.0 && mention_step_frac <= 1.0)) {
        reject("mention_step_frac must lie in (0, 1]");
    }
    if (best_layer >= n_layers) {
        reject("best_layer outside layer range");
    }
    if (category.empty()) {
        reject("category must be non-empty");
    }
}

SynthTrace generate(const SynthSpec& spec) {
    spec.check();
    SynthTrace out;
    auto& trace = out.trace;
    auto& truth = out.truth;

    truth.gt_visual = bbox_to_token_set(spec.grid, spec.planted_region);
    truth.gt_query = spec.planted_query;
    truth.best_layer = spec.best_layer;
    truth.category = spec.category;
    truth.distractors = place_distractors(spec, truth.gt_visual);

    const std::size_t T = spec.t_steps;
    const auto n_aligned = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(spec.mention_step_frac * static_cast<double>(T))), 1, T);
    std::vector<std::size_t> order(T);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ua = counter_uniform(spec.seed, kAlign, a);
        const double ub = counter_uniform(spec.seed, kAlign, b);
        return ua != ub ? ua < ub : a < b;
    });
    truth.aligned_steps.insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_aligned));

    const std::size_t n_vis = spec.grid.size();
    trace.grid = spec.grid;
    trace.layout.n_sys = spec.n_sys;
    trace.layout.n_vis = n_vis;
    trace.layout.n_query = spec.n_query;
    for (std::size_t q = 0; q < spec.n_query; ++q) {
        trace.layout.query_texts.push_back(q == 0 ? "is" : "q" + std::to_string(q));
    }
    for (std::size_t t = 0; t < T; ++t) {
        trace.layout.output_texts.push_back(truth.aligned_steps.count(t) ? spec.category
                                                                          : "step" + std::to_string(t));
    }
    trace.n_steps = T;
    trace.n_layers = spec.n_layers;
    trace.image_ref = "synth://seed/" + std::to_string(spec.seed);

    std::vector<bool> in_gt(n_vis, false);
    std::vector<bool> in_distractor(n_vis, false);
    std::vector<bool> in_none(n_vis, false);
    for (std::size_t v : truth.gt_visual) {
        in_gt[v] = true;
    }
    for (std::size_t v : truth.distractors) {
        in_distractor[v] = true;
    }

    const std::size_t n_ctx = trace.layout.n_ctx();
    trace.attn.assign(T * spec.n_layers * n_ctx, 0.0F);
    std::vector<double> row(n_ctx);
    const double drift = spec.drift;

    for (std::size_t t = 0; t < T; ++t) {
        const bool aligned = truth.aligned_steps.count(t) != 0;
        const double generated =
            t == 0 ? 0.0
                   : kGeneratedMassMax * static_cast<double>(t) / static_cast<double>(T) *
                         (0.8 + 0.4 * counter_uniform(spec.seed, kGenMass, t));
        const double prefix = 1.0 - generated;
        for (std::size_t l = 0; l < spec.n_layers; ++l) {
            double used = 0.0;
            for (std::size_t s = 0; s < spec.n_sys; ++s) {
                row[s] = kSysMass / static_cast<double>(spec.n_sys) * jitter(spec.seed, kSysJitter, t, l, s);
                used += row[s];
            }
            const std::size_t q0 = spec.n_sys + n_vis;
            for (std::size_t q = 0; q < spec.n_query; ++q) {
                double a = kQueryBaseMass / static_cast<double>(spec.n_query) *
                           jitter(spec.seed, kQueryJitter, t, l, q);
                if (aligned && spec.planted_query.count(q)) {
                    a += kQueryLiftMass / static_cast<double>(spec.planted_query.size()) *
                         jitter(spec.seed, kLiftJitter, t, l, q);
                }
                row[q0 + q] = a;
                used += a;
            }

            // Visual share: background, plus a signal split between the
            // planted region, distractor clusters and diffuse attention.
            const double visual = prefix - used;
            double to_gt = 0.0;
            double to_distractor = drift;
            if (aligned) {
                to_gt = (l == spec.best_layer ? 1.0 : kOffLayerSignal) * (1.0 - drift);
                to_distractor = 1.0 - to_gt;
            }
            const double to_diffuse = 1.0 - to_gt - to_distractor;

            const auto bg = peaked(in_none, 0.0, spec.seed, t, l, 0);
            const auto gt = peaked(in_gt, spec.concentration, spec.seed, t, l, 1);
            const auto ds = peaked(in_distractor, spec.concentration, spec.seed, t, l, 2);
            const auto df = peaked(in_none, 0.0, spec.seed, t, l, 3);
            const double signal = visual * (1.0 - kBackgroundShare);
            for (std::size_t v = 0; v < n_vis; ++v) {
                row[spec.n_sys + v] = visual * kBackgroundShare * bg[v] +
                                      signal * (to_gt * gt[v] + to_distractor * ds[v] + to_diffuse * df[v]);
            }

            float* dst = trace.attn.data() + trace.row_offset(t, l);
            for (std::size_t n = 0; n < n_ctx; ++n) {
                dst[n] = static_cast<float>(row[n]);
            }
        }
    }
    return out;
}

SetOverlap set_overlap(const std::set<std::size_t>& predicted, const std::set<std::size_t>& truth) {
    std::size_t inter = 0;
    for (std::size_t v : predicted) {
        inter += truth.count(v);
    }
    const std::size_t uni = predicted.size() + truth.size() - inter;
    SetOverlap o;
    o.precision = predicted.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(predicted.size());
    o.recall = truth.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(truth.size());
    o.iou = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    return o;
}

RecoveryScore evaluate_recovery(const AttentionTrace& trace, const GroundTruth& truth, const TracerConfig& config) {
    TracerConfig cfg = config;
    if (!cfg.layer) {
        cfg.layer = truth.best_layer;
    }
    const auto result = run_tracer(trace, cfg);

    RecoveryScore score;
    const std::set<std::size_t> picked(result.visual.selected.begin(), result.visual.selected.end());
    const auto overlap = set_overlap(picked, truth.gt_visual);
    score.precision = overlap.precision;
    score.recall = overlap.recall;
    score.iou = overlap.iou;

    const std::set<std::size_t> keys(result.key.selected.begin(), result.key.selected.end());
    score.query_hit_rate = set_overlap(keys, truth.gt_query).recall;
    const auto top = top_k_indices(result.key.zscores, truth.gt_query.size());
    score.query_top_rank =
        !result.key.degenerate && std::set<std::size_t>(top.begin(), top.end()) == truth.gt_query;

    const PerceptionInstance instance{trace, truth.category, {truth.category}, truth.gt_visual};
    try {
        score.layer_hit = scan_layers(std::span(&instance, 1)).l_max == truth.best_layer;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::kEmptyEvaluation) {
            throw;
        }
    }
    return score;
}

std::vector<SweepRow> drift_sweep(const SynthSpec& spec, std::span<const double> drift_values, std::size_t n_seeds,
                                  const TracerConfig& config) {
    if (n_seeds == 0) {
        reject("drift sweep needs at least one seed");
    }
    if (!std::is_sorted(drift_values.begin(), drift_values.end())) {
        reject("drift values must be sorted ascending");
    }
    std::vector<SweepRow> rows;
    for (double drift : drift_values) {
        SweepRow row;
        row.drift = drift;
        row.n_seeds = n_seeds;
        for (std::size_t i = 0; i < n_seeds; ++i) {
            SynthSpec s = spec;
            s.drift = drift;
            s.seed = spec.seed + i;
            const auto synth = generate(s);
            const auto r = evaluate_recovery(synth.trace, synth.truth, config);
            row.precision += r.precision;
            row.recall += r.recall;
            row.iou += r.iou;
            row.query_hit_rate += r.query_hit_rate;
            row.query_top_rank += r.query_top_rank ? 1.0 : 0.0;
            row.layer_hit += r.layer_hit ? 1.0 : 0.0;
        }
        const auto n = static_cast<double>(n_seeds);
        row.precision /= n;
        row.recall /= n;
        row.iou /= n;
        row.query_hit_rate /= n;
        row.query_top_rank /= n;
        row.layer_hit /= n;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace cluetrace
