#include "cluetrace/trace_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "cluetrace/error.hpp"

namespace cluetrace::io {

using nlohmann::json;

namespace {

constexpr std::size_t kPreambleBytes = 8;
constexpr int kDocumentVersion = 1;

[[noreturn]] void malformed_header(const std::string& what) {
    throw Error(ErrorCode::kMalformedHeader, what);
}

template <typename T>
T field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) {
        malformed_header(std::string("missing field '") + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        malformed_header(std::string("field '") + key + "': " + e.what());
    }
}

json parse_json(std::string_view text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        malformed_header(std::string(what) + " is not valid JSON: " + e.what());
    }
}

void check_document(const json& j, const char* format) {
    const auto tag = field<std::string>(j, "format");
    if (tag != format) {
        malformed_header("expected a '" + std::string(format) + "' document, found '" + tag + "'");
    }
    const auto version = field<int>(j, "format_version");
    if (version != kDocumentVersion) {
        throw Error(ErrorCode::kUnsupportedVersion,
                    std::string(format) + " version " + std::to_string(version) + " is not supported");
    }
}

std::string dump_document(const json& j) { return j.dump(2) + "\n"; }

json rect_json(const PixelRect& r) { return json::array({r.x0, r.y0, r.x1, r.y1}); }

PixelRect rect_from(const json& j, const char* key) {
    const auto v = field<std::vector<double>>(j, key);
    if (v.size() != 4) {
        malformed_header(std::string("field '") + key + "' must hold four numbers");
    }
    return {v[0], v[1], v[2], v[3]};
}

json grid_json(const VisualGrid& g) {
    return {{"rows", g.rows}, {"cols", g.cols}, {"image_w", g.image_w}, {"image_h", g.image_h}};
}

VisualGrid grid_from(const json& j) {
    return {field<std::size_t>(j, "rows"), field<std::size_t>(j, "cols"), field<std::uint32_t>(j, "image_w"),
            field<std::uint32_t>(j, "image_h")};
}

json tracer_config_json(const TracerConfig& c) {
    json j{{"tau_q", c.tau_q}, {"tau_v", c.tau_v}};
    j["layer"] = c.layer ? json(*c.layer) : json(nullptr);
    j["fallback_k"] = c.fallback_k ? json(*c.fallback_k) : json(nullptr);
    return j;
}

TracerConfig tracer_config_from(const json& j) {
    TracerConfig c;
    c.tau_q = field<double>(j, "tau_q");
    c.tau_v = field<double>(j, "tau_v");
    if (j.contains("layer") && !j.at("layer").is_null()) {
        c.layer = field<std::size_t>(j, "layer");
    }
    if (j.contains("fallback_k") && !j.at("fallback_k").is_null()) {
        c.fallback_k = field<std::size_t>(j, "fallback_k");
    }
    return c;
}

json region_config_json(const RegionConfig& c) {
    return {{"eps", c.eps}, {"min_pts", c.min_pts}, {"pad", c.pad}, {"min_side", c.min_side}};
}

RegionConfig region_config_from(const json& j) {
    return {field<double>(j, "eps"), field<std::size_t>(j, "min_pts"), field<double>(j, "pad"),
            field<double>(j, "min_side")};
}

std::uint32_t load_u32_le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void store_u32_le(std::uint32_t v, std::uint8_t* p) {
    p[0] = static_cast<std::uint8_t>(v);
    p[1] = static_cast<std::uint8_t>(v >> 8);
    p[2] = static_cast<std::uint8_t>(v >> 16);
    p[3] = static_cast<std::uint8_t>(v >> 24);
}

json trace_header(const AttentionTrace& trace) {
    const auto& lay = trace.layout;
    json h;
    h["format"] = "cluetrace-trace";
    h["format_version"] = kTraceFormatVersion;
    h["dims"] = {{"T", trace.n_steps}, {"L", trace.n_layers}, {"N_s", lay.n_sys}, {"N_v", lay.n_vis},
                 {"N_q", lay.n_query}};
    h["grid"] = grid_json(trace.grid);
    h["raster_order"] = kRasterOrder;
    h["head_aggregation"] = kHeadAggregation;
    h["row_extent"] = kRowExtent;
    h["roles"] = {{"system", {0, lay.n_sys}},
                  {"visual", {lay.visual_begin(), lay.query_begin()}},
                  {"query", {lay.query_begin(), lay.n_ctx()}}};
    h["query_texts"] = lay.query_texts;
    h["output_texts"] = lay.output_texts;
    h["image_ref"] = trace.image_ref;
    h["l_max"] = trace.l_max ? json(*trace.l_max) : json(nullptr);
    return h;
}

void expect_tag(const json& h, const char* key, const char* expected) {
    const auto value = field<std::string>(h, key);
    if (value != expected) {
        throw Error(ErrorCode::kUnsupportedLayout,
                    std::string(key) + " '" + value + "' is not supported (expected '" + expected + "')");
    }
}

}  // namespace

std::vector<std::uint8_t> encode_payload(std::span<const float> values) {
    std::vector<std::uint8_t> out(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        store_u32_le(std::bit_cast<std::uint32_t>(values[i]), out.data() + 4 * i);
    }
    return out;
}

std::vector<float> decode_payload(std::span<const std::uint8_t> bytes) {
    if (bytes.size() % 4 != 0) {
        throw Error(ErrorCode::kMalformedPayload, "payload length is not a multiple of 4");
    }
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::bit_cast<float>(load_u32_le(bytes.data() + 4 * i));
    }
    return out;
}

std::vector<std::uint8_t> serialize_trace(const AttentionTrace& trace) {
    const auto verdict = validate_trace(trace);
    if (!verdict.pass()) {
        throw Error(ErrorCode::kValidationFailed, "refusing to serialize: " + verdict.summary());
    }
    const std::string header = trace_header(trace).dump();
    const auto payload = encode_payload(trace.attn);
    std::vector<std::uint8_t> out(kPreambleBytes);
    std::memcpy(out.data(), kTraceMagic, 4);
    store_u32_le(static_cast<std::uint32_t>(header.size()), out.data() + 4);
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

LoadedTrace parse_trace(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kPreambleBytes || std::memcmp(bytes.data(), kTraceMagic, 4) != 0) {
        malformed_header("missing CTRF magic");
    }
    const std::uint32_t header_len = load_u32_le(bytes.data() + 4);
    if (header_len > bytes.size() - kPreambleBytes) {
        malformed_header("header length " + std::to_string(header_len) + " exceeds file size");
    }
    const std::string_view header_text(reinterpret_cast<const char*>(bytes.data() + kPreambleBytes), header_len);
    const json h = parse_json(header_text, "trace header");
    if (field<std::string>(h, "format") != "cluetrace-trace") {
        malformed_header("not a trace header");
    }
    const auto version = field<std::uint32_t>(h, "format_version");
    if (version != kTraceFormatVersion) {
        throw Error(ErrorCode::kUnsupportedVersion, "trace format version " + std::to_string(version) +
                                                        " is not supported (expected " +
                                                        std::to_string(kTraceFormatVersion) + ")");
    }
    expect_tag(h, "raster_order", kRasterOrder);
    expect_tag(h, "head_aggregation", kHeadAggregation);
    expect_tag(h, "row_extent", kRowExtent);

    LoadedTrace loaded;
    auto& trace = loaded.trace;
    const json dims = field<json>(h, "dims");
    trace.n_steps = field<std::size_t>(dims, "T");
    trace.n_layers = field<std::size_t>(dims, "L");
    trace.layout.n_sys = field<std::size_t>(dims, "N_s");
    trace.layout.n_vis = field<std::size_t>(dims, "N_v");
    trace.layout.n_query = field<std::size_t>(dims, "N_q");
    trace.grid = grid_from(field<json>(h, "grid"));
    trace.layout.query_texts = field<std::vector<std::string>>(h, "query_texts");
    trace.layout.output_texts = field<std::vector<std::string>>(h, "output_texts");
    trace.image_ref = field<std::string>(h, "image_ref");
    if (h.contains("l_max") && !h.at("l_max").is_null()) {
        trace.l_max = field<std::size_t>(h, "l_max");
    }

    const auto& lay = trace.layout;
    const json& roles = field<json>(h, "roles");
    using Range = std::vector<std::size_t>;
    if (field<Range>(roles, "system") != Range{0, lay.n_sys} ||
        field<Range>(roles, "visual") != Range{lay.visual_begin(), lay.query_begin()} ||
        field<Range>(roles, "query") != Range{lay.query_begin(), lay.n_ctx()}) {
        malformed_header("token role ranges disagree with dims");
    }

    const std::size_t expected = trace.n_steps * trace.n_layers * lay.n_ctx() * 4;
    const std::size_t actual = bytes.size() - kPreambleBytes - header_len;
    if (actual != expected) {
        throw Error(ErrorCode::kMalformedPayload, "expected " + std::to_string(expected) + " payload bytes, found " +
                                                      std::to_string(actual));
    }
    trace.attn = decode_payload(bytes.subspan(kPreambleBytes + header_len));
    loaded.verdict = validate_trace(trace);
    return loaded;
}

void write_trace(const AttentionTrace& trace, const std::filesystem::path& path) {
    write_file(path, serialize_trace(trace));
}

LoadedTrace read_trace(const std::filesystem::path& path) { return parse_trace(read_file(path)); }

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::kIo, "cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::kIo, "cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(ErrorCode::kIo, "short write to " + path.string());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Label manifest

std::string dump_label_manifest(const LabelManifest& manifest) {
    json records = json::array();
    for (const auto& r : manifest.records) {
        records.push_back({{"trace", r.trace_path},
                           {"category", r.category},
                           {"category_tokens", r.category_tokens},
                           {"bbox", rect_json(r.bbox)}});
    }
    return dump_document({{"format", "cluetrace-labels"}, {"format_version", kDocumentVersion}, {"instances", records}});
}

LabelManifest parse_label_manifest(const std::string& text) {
    const json j = parse_json(text, "label manifest");
    check_document(j, "cluetrace-labels");
    LabelManifest manifest;
    for (const auto& r : field<json>(j, "instances")) {
        manifest.records.push_back({field<std::string>(r, "trace"), field<std::string>(r, "category"),
                                    field<std::vector<std::string>>(r, "category_tokens"), rect_from(r, "bbox")});
    }
    return manifest;
}

void write_label_manifest(const LabelManifest& manifest, const std::filesystem::path& path) {
    write_text(path, dump_label_manifest(manifest));
}

LabelManifest read_label_manifest(const std::filesystem::path& path) { return parse_label_manifest(read_text(path)); }

std::vector<PerceptionInstance> load_instances(const std::filesystem::path& manifest_path) {
    const auto manifest = read_label_manifest(manifest_path);
    const auto base = manifest_path.parent_path();
    std::vector<PerceptionInstance> instances;
    for (const auto& r : manifest.records) {
        std::filesystem::path p(r.trace_path);
        if (p.is_relative()) {
            p = base / p;
        }
        auto loaded = read_trace(p);
        if (!loaded.verdict.pass()) {
            throw Error(ErrorCode::kValidationFailed, p.string() + ": " + loaded.verdict.summary());
        }
        auto gt = bbox_to_token_set(loaded.trace.grid, r.bbox);
        auto tokens = r.category_tokens.empty() ? std::vector<std::string>{r.category} : r.category_tokens;
        instances.push_back({std::move(loaded.trace), r.category, std::move(tokens), std::move(gt)});
    }
    return instances;
}

// Crop manifest

std::string dump_crop_manifest(const CropManifest& m) {
    json regions = json::array();
    for (const auto& r : m.regions) {
        regions.push_back({{"cluster_id", r.cluster_id},
                           {"rect", {r.rect.x0, r.rect.y0, r.rect.x1, r.rect.y1}},
                           {"members", r.members}});
    }
    json provenance{{"region", region_config_json(m.provenance.region)}};
    provenance["tracer"] = m.provenance.tracer ? tracer_config_json(*m.provenance.tracer) : json(nullptr);
    return dump_document({{"format", "cluetrace-crops"},
                          {"format_version", kDocumentVersion},
                          {"image_ref", m.image_ref},
                          {"image_w", m.image_w},
                          {"image_h", m.image_h},
                          {"regions", regions},
                          {"noise", m.noise},
                          {"flags", {{"noise_only", m.noise_only}, {"fallback_region", m.fallback_region}}},
                          {"provenance", provenance}});
}

CropManifest parse_crop_manifest(const std::string& text) {
    const json j = parse_json(text, "crop manifest");
    check_document(j, "cluetrace-crops");
    CropManifest m;
    m.image_ref = field<std::string>(j, "image_ref");
    m.image_w = field<std::uint32_t>(j, "image_w");
    m.image_h = field<std::uint32_t>(j, "image_h");
    for (const auto& r : field<json>(j, "regions")) {
        const auto rect = field<std::vector<std::int64_t>>(r, "rect");
        if (rect.size() != 4) {
            malformed_header("region rect must hold four integers");
        }
        m.regions.push_back({{rect[0], rect[1], rect[2], rect[3]},
                             field<std::vector<std::size_t>>(r, "members"),
                             field<int>(r, "cluster_id")});
    }
    m.noise = field<std::vector<std::size_t>>(j, "noise");
    const json& flags = field<json>(j, "flags");
    m.noise_only = field<bool>(flags, "noise_only");
    m.fallback_region = field<bool>(flags, "fallback_region");
    const json& prov = field<json>(j, "provenance");
    m.provenance.region = region_config_from(field<json>(prov, "region"));
    if (prov.contains("tracer") && !prov.at("tracer").is_null()) {
        m.provenance.tracer = tracer_config_from(prov.at("tracer"));
    }
    return m;
}

void write_manifest(const CropManifest& manifest, const std::filesystem::path& path) {
    write_text(path, dump_crop_manifest(manifest));
}

CropManifest read_manifest(const std::filesystem::path& path) { return parse_crop_manifest(read_text(path)); }

// Recall report

std::string dump_recall_report(const RecallReport& r) {
    return dump_document({{"format", "cluetrace-recall"},
                          {"format_version", kDocumentVersion},
                          {"per_layer", r.per_layer},
                          {"n_instances", r.n_instances},
                          {"n_skipped", r.n_skipped},
                          {"l_max", r.l_max}});
}

RecallReport parse_recall_report(const std::string& text) {
    const json j = parse_json(text, "recall report");
    check_document(j, "cluetrace-recall");
    RecallReport r;
    r.per_layer = field<std::vector<double>>(j, "per_layer");
    r.n_instances = field<std::size_t>(j, "n_instances");
    r.n_skipped = field<std::size_t>(j, "n_skipped");
    r.l_max = field<std::size_t>(j, "l_max");
    return r;
}

// Tracer dump

std::string dump_tracer(const TracerDump& d) {
    const auto& key = d.result.key;
    const auto& vis = d.result.visual;
    json query{{"layer", key.layer},
               {"trajectories", key.trajectories},
               {"variances", key.variances},
               {"zscores", key.zscores},
               {"selected", key.selected},
               {"degenerate", key.degenerate},
               {"fallback_used", key.fallback_used}};
    json visual{{"alignment", vis.alignment},
                {"scores", vis.scores},
                {"zscores", vis.zscores},
                {"selected", vis.selected},
                {"degenerate", vis.degenerate},
                {"fallback_used", vis.fallback_used}};
    return dump_document({{"format", "cluetrace-tracer"},
                          {"format_version", kDocumentVersion},
                          {"image_ref", d.image_ref},
                          {"grid", grid_json(d.grid)},
                          {"query_texts", d.query_texts},
                          {"config", tracer_config_json(d.config)},
                          {"key_query", query},
                          {"visual", visual}});
}

TracerDump parse_tracer(const std::string& text) {
    const json j = parse_json(text, "tracer dump");
    check_document(j, "cluetrace-tracer");
    TracerDump d;
    d.image_ref = field<std::string>(j, "image_ref");
    d.grid = grid_from(field<json>(j, "grid"));
    d.query_texts = field<std::vector<std::string>>(j, "query_texts");
    d.config = tracer_config_from(field<json>(j, "config"));
    const json& q = field<json>(j, "key_query");
    auto& key = d.result.key;
    key.layer = field<std::size_t>(q, "layer");
    key.trajectories = field<std::vector<std::vector<double>>>(q, "trajectories");
    key.variances = field<std::vector<double>>(q, "variances");
    key.zscores = field<std::vector<double>>(q, "zscores");
    key.selected = field<std::vector<std::size_t>>(q, "selected");
    key.degenerate = field<bool>(q, "degenerate");
    key.fallback_used = field<bool>(q, "fallback_used");
    const json& v = field<json>(j, "visual");
    auto& vis = d.result.visual;
    vis.alignment = field<std::vector<double>>(v, "alignment");
    vis.scores = field<std::vector<double>>(v, "scores");
    vis.zscores = field<std::vector<double>>(v, "zscores");
    vis.selected = field<std::vector<std::size_t>>(v, "selected");
    vis.degenerate = field<bool>(v, "degenerate");
    vis.fallback_used = field<bool>(v, "fallback_used");
    if (vis.scores.size() != d.grid.size()) {
        malformed_header("tracer dump scores do not match the grid");
    }
    for (std::size_t s : vis.selected) {
        if (s >= d.grid.size()) {
            malformed_header("tracer dump selects a token outside the grid");
        }
    }
    return d;
}

}  // namespace cluetrace::io
