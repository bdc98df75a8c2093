#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cluetrace/trace.hpp"
#include "cluetrace/tracer.hpp"

namespace cluetrace {

inline constexpr int kNoise = -1;

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

// DBSCAN with Euclidean distance. A point is core when at least min_pts
// points (itself included) lie within eps. Clusters are numbered in order of
// their first core point; a border point joins the first cluster whose
// expansion reaches it, expanding seeds in ascending index order.
std::vector<int> dbscan(std::span<const Point2> points, double eps, std::size_t min_pts);

struct RegionConfig {
    double eps = 1.5;          // patch units
    std::size_t min_pts = 3;   // lowered to 1 when fewer points are selected
    double pad = 0.10;         // fraction of width/height added to each side
    double min_side = 28.0;    // pixels

    void check() const;
};

// Integer pixel rectangle [x0, x1) x [y0, y1).
struct IntRect {
    std::int64_t x0 = 0;
    std::int64_t y0 = 0;
    std::int64_t x1 = 0;
    std::int64_t y1 = 0;

    bool operator==(const IntRect&) const = default;
};

struct EvidenceRegion {
    IntRect rect;
    std::vector<std::size_t> members;  // visual ordinals, ascending
    int cluster_id = 0;

    bool operator==(const EvidenceRegion&) const = default;
};

struct ManifestProvenance {
    std::optional<TracerConfig> tracer;
    RegionConfig region;
};

struct CropManifest {
    std::string image_ref;
    std::uint32_t image_w = 0;
    std::uint32_t image_h = 0;
    std::vector<EvidenceRegion> regions;  // ordered by (y0, x0, cluster_id)
    std::vector<std::size_t> noise;
    bool noise_only = false;       // DBSCAN labelled every selected token as noise
    bool fallback_region = false;  // single region substituted for a noise-only result
    ManifestProvenance provenance;
};

// Pixel rectangle for a set of visual tokens: tight box around the patch
// centers, grown by half a patch on each side, padded, rounded outwards,
// clamped to the image and widened to min_side where the image allows.
IntRect region_rect(const VisualGrid& grid, std::span<const std::size_t> members, const RegionConfig& config);

// The tight full-patch cover before padding and clamping.
PixelRect patch_cover(const VisualGrid& grid, std::span<const std::size_t> members);

CropManifest build_regions(std::span<const std::size_t> selected, const VisualGrid& grid, const RegionConfig& config);

// Replaces a noise-only manifest with one region around the best-scoring
// selected token.
void apply_fallback_region(CropManifest& manifest, const VisualGrid& grid, std::span<const std::size_t> selected,
                           std::span<const double> scores);

}  // namespace cluetrace
