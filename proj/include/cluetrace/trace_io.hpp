#pragma once

// On-disk contracts.
//
// Trace container (.ctrace):
//   bytes 0..3   magic "CTRF"
//   bytes 4..7   header length H, uint32 little-endian
//   bytes 8..8+H header, UTF-8 JSON (format_version, dims, grid, tags, texts)
//   remainder    payload, float32 little-endian, [t][l][n] row-major over the
//                N_c prefix columns; exactly T * L * N_c * 4 bytes
//
// Label manifests, crop manifests, recall reports and tracer dumps are UTF-8
// JSON documents, each carrying a "format" tag and a "format_version".

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cluetrace/clue_recall.hpp"
#include "cluetrace/regions.hpp"
#include "cluetrace/trace.hpp"
#include "cluetrace/tracer.hpp"

namespace cluetrace::io {

inline constexpr std::uint32_t kTraceFormatVersion = 1;
inline constexpr char kTraceMagic[4] = {'C', 'T', 'R', 'F'};
inline constexpr const char* kRasterOrder = "row-major-top-left";
inline constexpr const char* kHeadAggregation = "mean";
inline constexpr const char* kRowExtent = "prefix";

struct LoadedTrace {
    AttentionTrace trace;
    ValidationVerdict verdict;
};

// Little-endian float32 payload bytes, independent of host byte order.
std::vector<std::uint8_t> encode_payload(std::span<const float> values);
std::vector<float> decode_payload(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize_trace(const AttentionTrace& trace);
LoadedTrace parse_trace(std::span<const std::uint8_t> bytes);

// Refuses (kValidationFailed) to write a trace that does not validate.
void write_trace(const AttentionTrace& trace, const std::filesystem::path& path);
LoadedTrace read_trace(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

struct LabelRecord {
    std::string trace_path;  // relative paths resolve against the manifest directory
    std::string category;
    std::vector<std::string> category_tokens;
    PixelRect bbox;
};

struct LabelManifest {
    std::vector<LabelRecord> records;
};

std::string dump_label_manifest(const LabelManifest& manifest);
LabelManifest parse_label_manifest(const std::string& text);
void write_label_manifest(const LabelManifest& manifest, const std::filesystem::path& path);
LabelManifest read_label_manifest(const std::filesystem::path& path);

// Reads every referenced trace; a trace that fails validation is an error.
std::vector<PerceptionInstance> load_instances(const std::filesystem::path& manifest_path);

std::string dump_crop_manifest(const CropManifest& manifest);
CropManifest parse_crop_manifest(const std::string& text);
void write_manifest(const CropManifest& manifest, const std::filesystem::path& path);
CropManifest read_manifest(const std::filesystem::path& path);

std::string dump_recall_report(const RecallReport& report);
RecallReport parse_recall_report(const std::string& text);

// Tracer output with every intermediate vector, plus the geometry needed to
// build regions from it without the trace.
struct TracerDump {
    std::string image_ref;
    VisualGrid grid;
    std::vector<std::string> query_texts;
    TracerConfig config;  // layer and fallback_k resolved
    TracerResult result;
};

std::string dump_tracer(const TracerDump& dump);
TracerDump parse_tracer(const std::string& text);

std::string read_text(const std::filesystem::path& path);

}  // namespace cluetrace::io
