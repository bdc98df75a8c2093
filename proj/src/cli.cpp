#include "cluetrace/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>

#include "cluetrace/clue_recall.hpp"
#include "cluetrace/error.hpp"
#include "cluetrace/regions.hpp"
#include "cluetrace/synth.hpp"
#include "cluetrace/trace_io.hpp"
#include "cluetrace/tracer.hpp"

namespace cluetrace::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised for argument combinations CLI11 cannot express.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Report {
    std::string command;
    json config = json::object();
    json outputs = json::array();
    json summary = json::object();
};

struct TracerFlags {
    std::size_t layer = 0;
    double tau_q = 1.0;
    double tau_v = 1.0;
    std::size_t fallback_k = 1;
    std::string recall_report;
    CLI::Option* layer_opt = nullptr;
    CLI::Option* tau_q_opt = nullptr;
    CLI::Option* tau_v_opt = nullptr;
    CLI::Option* fallback_opt = nullptr;

    void attach(CLI::App* cmd) {
        layer_opt = cmd->add_option("--layer", layer, "reference layer (default: recorded l_max)");
        tau_q_opt = cmd->add_option("--tau-q", tau_q, "z-score threshold for key query tokens");
        tau_v_opt = cmd->add_option("--tau-v", tau_v, "z-score threshold for visual tokens");
        fallback_opt = cmd->add_option("--fallback-k", fallback_k, "visual tokens kept when none pass tau-v");
        cmd->add_option("--recall-report", recall_report, "take the layer from a recall-scan report");
    }
};

struct RegionFlags {
    double eps = 1.5;
    std::size_t min_pts = 3;
    double pad = 0.10;
    double min_side = 28.0;
    CLI::Option* eps_opt = nullptr;
    CLI::Option* min_pts_opt = nullptr;
    CLI::Option* pad_opt = nullptr;
    CLI::Option* min_side_opt = nullptr;

    void attach(CLI::App* cmd) {
        eps_opt = cmd->add_option("--eps", eps, "DBSCAN radius in patch units");
        min_pts_opt = cmd->add_option("--min-pts", min_pts, "DBSCAN density threshold");
        pad_opt = cmd->add_option("--pad", pad, "padding fraction per side");
        min_side_opt = cmd->add_option("--min-side", min_side, "minimum crop side in pixels");
    }
};

struct SynthFlags {
    SynthSpec spec;
    std::vector<std::size_t> planted_query{4};
    std::vector<double> region{56, 56, 140, 140};
    std::size_t rows = 8;
    std::size_t cols = 8;
    std::uint32_t image_w = 224;
    std::uint32_t image_h = 224;

    void attach(CLI::App* cmd) {
        cmd->add_option("--seed", spec.seed, "generator seed");
        cmd->add_option("--drift", spec.drift, "share of visual signal routed to distractors");
        cmd->add_option("--steps", spec.t_steps, "output steps");
        cmd->add_option("--layers", spec.n_layers, "layers");
        cmd->add_option("--rows", rows, "patch grid rows");
        cmd->add_option("--cols", cols, "patch grid cols");
        cmd->add_option("--image-w", image_w, "image width in pixels");
        cmd->add_option("--image-h", image_h, "image height in pixels");
        cmd->add_option("--n-sys", spec.n_sys, "system tokens");
        cmd->add_option("--n-query", spec.n_query, "question tokens");
        cmd->add_option("--planted-query", planted_query, "planted key query ordinals")->delimiter(',');
        cmd->add_option("--region", region, "planted region x0,y0,x1,y1 in pixels")->delimiter(',')->expected(4);
        cmd->add_option("--distractors", spec.n_distractors, "distractor clusters");
        cmd->add_option("--concentration", spec.concentration, "peakedness of planted attention");
        cmd->add_option("--mention-frac", spec.mention_step_frac, "fraction of aligned steps");
        cmd->add_option("--best-layer", spec.best_layer, "layer carrying the cleanest signal");
        cmd->add_option("--category", spec.category, "planted category token");
    }

    SynthSpec resolve() const {
        SynthSpec s = spec;
        s.grid = {rows, cols, image_w, image_h};
        s.planted_query = {planted_query.begin(), planted_query.end()};
        s.planted_region = {region[0], region[1], region[2], region[3]};
        return s;
    }
};

json tracer_config_json(const TracerConfig& c) {
    json j{{"tau_q", c.tau_q}, {"tau_v", c.tau_v}};
    j["layer"] = c.layer ? json(*c.layer) : json(nullptr);
    j["fallback_k"] = c.fallback_k ? json(*c.fallback_k) : json(nullptr);
    return j;
}

json region_config_json(const RegionConfig& c) {
    return {{"eps", c.eps}, {"min_pts", c.min_pts}, {"pad", c.pad}, {"min_side", c.min_side}};
}

json load_config_file(const std::string& path) {
    if (path.empty()) {
        return json::object();
    }
    const auto text = io::read_text(path);
    try {
        auto j = json::parse(text);
        if (!j.is_object()) {
            throw Error(ErrorCode::kRejectedInput, "config file must hold a JSON object");
        }
        return j;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::kRejectedInput, "config file " + path + ": " + e.what());
    }
}

template <typename T>
std::optional<T> config_value(const json& cfg, const char* key) {
    if (!cfg.contains(key) || cfg.at(key).is_null()) {
        return std::nullopt;
    }
    try {
        return cfg.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::kRejectedInput, std::string("config key '") + key + "': " + e.what());
    }
}

// Flags override config-file values, which override defaults.
TracerConfig resolve_tracer(const TracerFlags& f, const json& cfg) {
    TracerConfig c;
    c.tau_q = f.tau_q_opt->count() ? f.tau_q : config_value<double>(cfg, "tau_q").value_or(c.tau_q);
    c.tau_v = f.tau_v_opt->count() ? f.tau_v : config_value<double>(cfg, "tau_v").value_or(c.tau_v);
    if (f.fallback_opt->count()) {
        c.fallback_k = f.fallback_k;
    } else {
        c.fallback_k = config_value<std::size_t>(cfg, "fallback_k");
    }
    if (c.fallback_k && *c.fallback_k == 0) {
        throw Error(ErrorCode::kRejectedInput, "--fallback-k must be at least 1");
    }
    if (f.layer_opt->count()) {
        c.layer = f.layer;
    } else {
        c.layer = config_value<std::size_t>(cfg, "layer");
    }
    if (!c.layer && !f.recall_report.empty()) {
        c.layer = io::parse_recall_report(io::read_text(f.recall_report)).l_max;
    }
    return c;
}

RegionConfig resolve_regions(const RegionFlags& f, const json& cfg) {
    RegionConfig c;
    c.eps = f.eps_opt->count() ? f.eps : config_value<double>(cfg, "eps").value_or(c.eps);
    c.min_pts = f.min_pts_opt->count() ? f.min_pts : config_value<std::size_t>(cfg, "min_pts").value_or(c.min_pts);
    c.pad = f.pad_opt->count() ? f.pad : config_value<double>(cfg, "pad").value_or(c.pad);
    c.min_side = f.min_side_opt->count() ? f.min_side : config_value<double>(cfg, "min_side").value_or(c.min_side);
    c.check();
    return c;
}

// Picks the layer: explicit choice, then the l_max recorded in the trace,
// then the only layer of a single-layer trace.
TracerConfig finalize_tracer(TracerConfig c, const AttentionTrace& trace) {
    if (!c.layer) {
        if (trace.l_max) {
            c.layer = trace.l_max;
        } else if (trace.n_layers == 1) {
            c.layer = 0;
        } else {
            throw Error(ErrorCode::kRejectedInput,
                        "no --layer given and the trace records no l_max (run recall-scan first)");
        }
    }
    if (*c.layer >= trace.n_layers) {
        throw Error(ErrorCode::kRejectedInput, "--layer " + std::to_string(*c.layer) + " outside [0, " +
                                                   std::to_string(trace.n_layers) + ")");
    }
    c.fallback_k = c.effective_fallback_k(trace.layout.n_vis);
    return c;
}

AttentionTrace load_valid_trace(const std::string& path) {
    auto loaded = io::read_trace(path);
    if (!loaded.verdict.pass()) {
        throw Error(ErrorCode::kValidationFailed, path + ": " + loaded.verdict.summary());
    }
    return std::move(loaded.trace);
}

CropManifest manifest_from_selection(const io::TracerDump& dump, const RegionConfig& region) {
    auto manifest = build_regions(dump.result.visual.selected, dump.grid, region);
    manifest.image_ref = dump.image_ref;
    manifest.provenance.tracer = dump.config;
    apply_fallback_region(manifest, dump.grid, dump.result.visual.selected, dump.result.visual.scores);
    return manifest;
}

void record_output(Report& report, const fs::path& path) {
    const auto bytes = io::read_file(path);
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(io::fnv1a64(bytes)));
    report.outputs.push_back({{"path", path.string()}, {"bytes", bytes.size()}, {"fnv1a64", hash}});
}

std::string format_fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::vector<std::uint8_t> encode_pgm(std::size_t width, std::size_t height, const std::vector<std::uint8_t>& pixels) {
    const std::string head = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> out(head.begin(), head.end());
    out.insert(out.end(), pixels.begin(), pixels.end());
    return out;
}

std::vector<std::uint8_t> normalize_gray(const std::vector<double>& values) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    std::vector<std::uint8_t> out(values.size(), 128);
    if (*hi - *lo <= 0.0) {
        return out;
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / (*hi - *lo)));
    }
    return out;
}

bool is_trace_file(const std::string& path) {
    const auto bytes = io::read_file(path);
    return bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, std::begin(io::kTraceMagic));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Localize question-critical visual evidence in multimodal attention traces", "cluetrace"};
    app.require_subcommand(1);

    bool deterministic = false;
    std::string report_path;
    std::string config_path;
    app.add_flag("--deterministic", deterministic, "omit timestamps and timings from reports");
    app.add_option("--report", report_path, "also write the run report to this file");
    app.add_option("--config", config_path, "JSON file with tracer/region settings (flags override)");

    Report report;
    std::function<int()> action;

    // validate
    std::string validate_path;
    auto* validate = app.add_subcommand("validate", "check a trace file against its invariants");
    validate->add_option("trace", validate_path, "trace file")->required();
    validate->callback([&] {
        action = [&] {
            report.config = {{"trace", validate_path}};
            const auto loaded = io::read_trace(validate_path);
            report.summary = {{"verdict", loaded.verdict.pass() ? "PASS" : "FAIL"},
                              {"violations", loaded.verdict.violations.size()}};
            err << validate_path << ": " << loaded.verdict.summary() << "\n";
            return loaded.verdict.pass() ? kExitOk : kExitValidation;
        };
    });

    // recall-scan
    std::string labels_path;
    std::string recall_out;
    auto* recall = app.add_subcommand("recall-scan", "per-layer clue recall over a label manifest");
    recall->add_option("labels", labels_path, "label manifest")->required();
    recall->add_option("--out", recall_out, "recall report path")->required();
    recall->callback([&] {
        action = [&] {
            report.config = {{"labels", labels_path}};
            const auto instances = io::load_instances(labels_path);
            const auto rr = scan_layers(instances);
            io::write_text(recall_out, io::dump_recall_report(rr));
            record_output(report, recall_out);
            report.summary = {{"per_layer", rr.per_layer},
                              {"l_max", rr.l_max},
                              {"n_instances", rr.n_instances},
                              {"n_skipped", rr.n_skipped}};
            out << "l_max " << rr.l_max << " (" << rr.n_instances << " instances, " << rr.n_skipped
                << " skipped)\n";
            for (std::size_t l = 0; l < rr.per_layer.size(); ++l) {
                out << l << "\t" << format_fixed(rr.per_layer[l]) << "\n";
            }
            return kExitOk;
        };
    });

    // trace
    std::string trace_path;
    std::string trace_out;
    TracerFlags trace_flags;
    auto* trace_cmd = app.add_subcommand("trace", "select key query tokens and trace visual clues");
    trace_cmd->add_option("trace", trace_path, "trace file")->required();
    trace_cmd->add_option("--out", trace_out, "tracer dump path")->required();
    trace_flags.attach(trace_cmd);
    trace_cmd->callback([&] {
        action = [&] {
            const auto cfg = load_config_file(config_path);
            auto tc = resolve_tracer(trace_flags, cfg);
            const auto trace = load_valid_trace(trace_path);
            tc = finalize_tracer(tc, trace);
            report.config = {{"trace", trace_path}, {"tracer", tracer_config_json(tc)}};
            io::TracerDump dump{trace.image_ref, trace.grid, trace.layout.query_texts, tc, run_tracer(trace, tc)};
            io::write_text(trace_out, io::dump_tracer(dump));
            record_output(report, trace_out);
            report.summary = {{"key_query", dump.result.key.selected},
                              {"visual", dump.result.visual.selected},
                              {"fallback_used", dump.result.visual.fallback_used}};
            return kExitOk;
        };
    });

    // regions
    std::string dump_path;
    std::string regions_out;
    RegionFlags region_flags;
    auto* regions = app.add_subcommand("regions", "cluster traced tokens into evidence regions");
    regions->add_option("dump", dump_path, "tracer dump")->required();
    regions->add_option("--out", regions_out, "crop manifest path")->required();
    region_flags.attach(regions);
    regions->callback([&] {
        action = [&] {
            const auto cfg = load_config_file(config_path);
            const auto rc = resolve_regions(region_flags, cfg);
            const auto dump = io::parse_tracer(io::read_text(dump_path));
            if (dump.result.visual.selected.empty()) {
                throw Error(ErrorCode::kMalformedHeader, "tracer dump selects no visual tokens");
            }
            report.config = {{"dump", dump_path}, {"region", region_config_json(rc)}};
            const auto manifest = manifest_from_selection(dump, rc);
            io::write_manifest(manifest, regions_out);
            record_output(report, regions_out);
            report.summary = {{"regions", manifest.regions.size()}, {"fallback_region", manifest.fallback_region}};
            return kExitOk;
        };
    });

    // pipeline
    std::string pipe_trace;
    std::string pipe_out;
    std::string pipe_dump;
    TracerFlags pipe_tracer;
    RegionFlags pipe_region;
    auto* pipeline = app.add_subcommand("pipeline", "trace, then build regions, in one step");
    pipeline->add_option("trace", pipe_trace, "trace file")->required();
    pipeline->add_option("--out", pipe_out, "crop manifest path")->required();
    pipeline->add_option("--dump", pipe_dump, "also write the tracer dump");
    pipe_tracer.attach(pipeline);
    pipe_region.attach(pipeline);
    pipeline->callback([&] {
        action = [&] {
            const auto cfg = load_config_file(config_path);
            auto tc = resolve_tracer(pipe_tracer, cfg);
            const auto rc = resolve_regions(pipe_region, cfg);
            const auto trace = load_valid_trace(pipe_trace);
            tc = finalize_tracer(tc, trace);
            report.config = {
                {"trace", pipe_trace}, {"tracer", tracer_config_json(tc)}, {"region", region_config_json(rc)}};
            io::TracerDump dump{trace.image_ref, trace.grid, trace.layout.query_texts, tc, run_tracer(trace, tc)};
            if (!pipe_dump.empty()) {
                io::write_text(pipe_dump, io::dump_tracer(dump));
                record_output(report, pipe_dump);
            }
            const auto manifest = manifest_from_selection(dump, rc);
            io::write_manifest(manifest, pipe_out);
            record_output(report, pipe_out);
            report.summary = {{"key_query", dump.result.key.selected},
                              {"visual", dump.result.visual.selected},
                              {"regions", manifest.regions.size()},
                              {"fallback_region", manifest.fallback_region}};
            return kExitOk;
        };
    });

    // synth
    SynthFlags synth_flags;
    std::string synth_dir;
    std::size_t synth_count = 1;
    auto* synth = app.add_subcommand("synth", "generate synthetic traces with planted ground truth");
    synth_flags.attach(synth);
    synth->add_option("--count", synth_count, "traces to generate (seeds seed, seed+1, ...)")
        ->check(CLI::PositiveNumber);
    synth->add_option("--out", synth_dir, "output directory")->required();
    synth->callback([&] {
        action = [&] {
            const auto base = synth_flags.resolve();
            report.config = {{"seed", base.seed}, {"drift", base.drift}, {"count", synth_count}};
            base.check();
            fs::create_directories(synth_dir);
            io::LabelManifest labels;
            for (std::size_t i = 0; i < synth_count; ++i) {
                auto spec = base;
                spec.seed = base.seed + i;
                const auto st = generate(spec);
                const std::string stem = "synth_" + std::to_string(spec.seed);
                const fs::path trace_file = fs::path(synth_dir) / (stem + ".ctrace");
                io::write_trace(st.trace, trace_file);
                record_output(report, trace_file);
                const json truth{{"gt_query", st.truth.gt_query},
                                 {"gt_visual", st.truth.gt_visual},
                                 {"distractors", st.truth.distractors},
                                 {"aligned_steps", st.truth.aligned_steps},
                                 {"best_layer", st.truth.best_layer},
                                 {"category", st.truth.category}};
                io::write_text(fs::path(synth_dir) / (stem + ".truth.json"), truth.dump(2) + "\n");
                labels.records.push_back(
                    {stem + ".ctrace", spec.category, {spec.category}, spec.planted_region});
            }
            io::write_label_manifest(labels, fs::path(synth_dir) / "labels.json");
            report.summary = {{"traces", synth_count}};
            return kExitOk;
        };
    });

    // eval-synth
    SynthFlags eval_flags;
    TracerFlags eval_tracer;
    std::vector<double> drifts{0.0, 0.2, 0.4, 0.6, 0.8};
    std::size_t n_seeds = 100;
    std::string eval_out;
    auto* eval = app.add_subcommand("eval-synth", "drift sweep of planted-clue recovery");
    eval_flags.attach(eval);
    eval_tracer.attach(eval);
    eval->add_option("--drifts", drifts, "comma-separated drift values, ascending")->delimiter(',');
    eval->add_option("--seeds", n_seeds, "seeds per drift value");
    eval->add_option("--out", eval_out, "sweep table (TSV); a JSON twin is written next to it")->required();
    eval->callback([&] {
        action = [&] {
            if (n_seeds == 0) {
                throw UsageError("--seeds must be at least 1");
            }
            const auto cfg = load_config_file(config_path);
            const auto tc = resolve_tracer(eval_tracer, cfg);
            const auto spec = eval_flags.resolve();
            spec.check();
            report.config = {{"seed", spec.seed}, {"drifts", drifts}, {"seeds", n_seeds},
                             {"tracer", tracer_config_json(tc)}};
            const auto rows = drift_sweep(spec, drifts, n_seeds, tc);
            std::string tsv = "drift\tn_seeds\tprecision\trecall\tiou\tquery_hit_rate\tquery_top_rank\tlayer_hit\n";
            json records = json::array();
            for (const auto& r : rows) {
                tsv += format_fixed(r.drift) + "\t" + std::to_string(r.n_seeds) + "\t" + format_fixed(r.precision) +
                       "\t" + format_fixed(r.recall) + "\t" + format_fixed(r.iou) + "\t" +
                       format_fixed(r.query_hit_rate) + "\t" + format_fixed(r.query_top_rank) + "\t" +
                       format_fixed(r.layer_hit) + "\n";
                records.push_back({{"drift", r.drift},
                                   {"n_seeds", r.n_seeds},
                                   {"precision", r.precision},
                                   {"recall", r.recall},
                                   {"iou", r.iou},
                                   {"query_hit_rate", r.query_hit_rate},
                                   {"query_top_rank", r.query_top_rank},
                                   {"layer_hit", r.layer_hit}});
            }
            io::write_text(eval_out, tsv);
            record_output(report, eval_out);
            const fs::path json_out = fs::path(eval_out).replace_extension(".json");
            io::write_text(json_out, json{{"format", "cluetrace-sweep"}, {"format_version", 1}, {"rows", records}}
                                         .dump(2) + "\n");
            record_output(report, json_out);
            out << tsv;
            report.summary = {{"rows", rows.size()}};
            return kExitOk;
        };
    });

    // render
    std::string render_in;
    std::string render_out;
    std::string render_regions;
    std::size_t render_step = 0;
    std::size_t render_scale = 1;
    bool render_scores = false;
    TracerFlags render_tracer;
    auto* render = app.add_subcommand("render", "write a grayscale heatmap (PGM) over the patch grid");
    render->add_option("input", render_in, "trace file or tracer dump")->required();
    render->add_option("--out", render_out, "output .pgm")->required();
    auto* step_opt = render->add_option("--step", render_step, "output step whose visual attention is drawn");
    auto* scores_opt = render->add_flag("--scores", render_scores, "draw trace scores instead of one step");
    render->add_option("--regions", render_regions, "crop manifest whose rectangles are outlined");
    render->add_option("--scale", render_scale, "pixels per patch")->check(CLI::PositiveNumber);
    render_tracer.attach(render);
    render->callback([&] {
        action = [&] {
            if (step_opt->count() && scores_opt->count()) {
                throw UsageError("--step and --scores are mutually exclusive");
            }
            std::vector<double> field;
            VisualGrid grid;
            if (is_trace_file(render_in)) {
                const auto trace = load_valid_trace(render_in);
                grid = trace.grid;
                const auto tc = finalize_tracer(resolve_tracer(render_tracer, load_config_file(config_path)), trace);
                if (render_scores) {
                    field = run_tracer(trace, tc).visual.scores;
                } else {
                    if (render_step >= trace.n_steps) {
                        throw Error(ErrorCode::kRejectedInput, "--step outside the trace");
                    }
                    field = visual_slice(trace, render_step, *tc.layer);
                }
            } else {
                if (step_opt->count()) {
                    throw UsageError("--step needs a trace file, not a tracer dump");
                }
                const auto dump = io::parse_tracer(io::read_text(render_in));
                grid = dump.grid;
                field = dump.result.visual.scores;
            }
            const auto cells = normalize_gray(field);
            const std::size_t k = render_scale;
            const std::size_t width = grid.cols * k;
            const std::size_t height = grid.rows * k;
            std::vector<std::uint8_t> pixels(width * height);
            for (std::size_t y = 0; y < height; ++y) {
                for (std::size_t x = 0; x < width; ++x) {
                    pixels[y * width + x] = cells[(y / k) * grid.cols + x / k];
                }
            }
            if (!render_regions.empty()) {
                const auto manifest = io::read_manifest(render_regions);
                const double sx = static_cast<double>(width) / grid.image_w;
                const double sy = static_cast<double>(height) / grid.image_h;
                for (const auto& r : manifest.regions) {
                    const auto x0 = std::min(width - 1, static_cast<std::size_t>(std::floor(r.rect.x0 * sx)));
                    const auto y0 = std::min(height - 1, static_cast<std::size_t>(std::floor(r.rect.y0 * sy)));
                    const auto x1 = std::max(x0, std::min(width, static_cast<std::size_t>(std::ceil(r.rect.x1 * sx))) - 1);
                    const auto y1 = std::max(y0, std::min(height, static_cast<std::size_t>(std::ceil(r.rect.y1 * sy))) - 1);
                    for (std::size_t x = x0; x <= x1; ++x) {
                        pixels[y0 * width + x] = 255;
                        pixels[y1 * width + x] = 255;
                    }
                    for (std::size_t y = y0; y <= y1; ++y) {
                        pixels[y * width + x0] = 255;
                        pixels[y * width + x1] = 255;
                    }
                }
            }
            io::write_file(render_out, encode_pgm(width, height, pixels));
            record_output(report, render_out);
            report.config = {{"input", render_in}, {"mode", render_scores ? "scores" : "step"}, {"scale", k}};
            return kExitOk;
        };
    });

    const auto started = std::chrono::steady_clock::now();
    int status = kExitOk;
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
        report.command = app.get_subcommands().front()->get_name();
        status = action();
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        status = kExitUsage;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        status = kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        switch (e.code()) {
            case ErrorCode::kValidationFailed: status = kExitValidation; break;
            case ErrorCode::kEmptyEvaluation: status = kExitEmpty; break;
            case ErrorCode::kRejectedInput: status = kExitConfig; break;
            default: status = kExitParse; break;
        }
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        status = kExitParse;
    }

    json line{{"command", report.command},
              {"config", report.config},
              {"outputs", report.outputs},
              {"summary", report.summary},
              {"exit_status", status}};
    if (!deterministic) {
        const auto elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started);
        line["timings"] = {{"elapsed_ms", elapsed.count()}};
        line["started_at"] = static_cast<std::int64_t>(std::time(nullptr));
    }
    const std::string text = line.dump();
    err << text << "\n";
    if (!report_path.empty()) {
        try {
            io::write_text(report_path, text + "\n");
        } catch (const Error& e) {
            err << "error: " << e.what() << "\n";
            if (status == kExitOk) {
                status = kExitParse;
            }
        }
    }
    return status;
}

}  // namespace cluetrace::cli
