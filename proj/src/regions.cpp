#include "cluetrace/regions.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>

#include "cluetrace/error.hpp"

namespace cluetrace {

namespace {

constexpr int kUnvisited = -2;

std::vector<std::size_t> region_query(std::span<const Point2> points, std::size_t i, double eps) {
    std::vector<std::size_t> out;
    const double eps2 = eps * eps;
    for (std::size_t j = 0; j < points.size(); ++j) {
        const double dx = points[i].x - points[j].x;
        const double dy = points[i].y - points[j].y;
        if (dx * dx + dy * dy <= eps2) {
            out.push_back(j);
        }
    }
    return out;
}

// Widens [lo, hi) to at least `side` within [0, limit], keeping it centered
// where the bounds allow.
void grow_to(std::int64_t& lo, std::int64_t& hi, std::int64_t side, std::int64_t limit) {
    side = std::min(side, limit);
    const std::int64_t deficit = side - (hi - lo);
    if (deficit <= 0) {
        return;
    }
    lo -= deficit / 2;
    hi += deficit - deficit / 2;
    if (lo < 0) {
        hi -= lo;
        lo = 0;
    }
    if (hi > limit) {
        lo -= hi - limit;
        hi = limit;
    }
    lo = std::max<std::int64_t>(lo, 0);
}

}  // namespace

std::vector<int> dbscan(std::span<const Point2> points, double eps, std::size_t min_pts) {
    if (!(eps > 0.0)) {
        reject("dbscan eps must be positive");
    }
    if (min_pts < 1) {
        reject("dbscan min_pts must be at least 1");
    }
    std::vector<int> labels(points.size(), kUnvisited);
    int cluster = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (labels[i] != kUnvisited) {
            continue;
        }
        auto neighbors = region_query(points, i, eps);
        if (neighbors.size() < min_pts) {
            labels[i] = kNoise;
            continue;
        }
        labels[i] = cluster;
        std::deque<std::size_t> seeds(neighbors.begin(), neighbors.end());
        while (!seeds.empty()) {
            const std::size_t j = seeds.front();
            seeds.pop_front();
            if (labels[j] == kNoise) {
                labels[j] = cluster;  // border point
            }
            if (labels[j] != kUnvisited) {
                continue;
            }
            labels[j] = cluster;
            auto more = region_query(points, j, eps);
            if (more.size() >= min_pts) {
                seeds.insert(seeds.end(), more.begin(), more.end());
            }
        }
        ++cluster;
    }
    return labels;
}

void RegionConfig::check() const {
    if (!(eps > 0.0)) {
        reject("eps must be positive");
    }
    if (min_pts < 1) {
        reject("min_pts must be at least 1");
    }
    if (!(pad >= 0.0)) {
        reject("pad must be non-negative");
    }
    if (!(min_side >= 1.0)) {
        reject("min_side must be at least 1 pixel");
    }
}

PixelRect patch_cover(const VisualGrid& grid, std::span<const std::size_t> members) {
    if (members.empty()) {
        reject("cannot cover an empty token set");
    }
    PixelRect box{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                  -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (std::size_t v : members) {
        const auto p = token_patch(grid, v);
        box.x0 = std::min(box.x0, p.x0);
        box.y0 = std::min(box.y0, p.y0);
        box.x1 = std::max(box.x1, p.x1);
        box.y1 = std::max(box.y1, p.y1);
    }
    return box;
}

IntRect region_rect(const VisualGrid& grid, std::span<const std::size_t> members, const RegionConfig& config) {
    const PixelRect cover = patch_cover(grid, members);
    const double px = config.pad * cover.width();
    const double py = config.pad * cover.height();
    const auto w = static_cast<std::int64_t>(grid.image_w);
    const auto h = static_cast<std::int64_t>(grid.image_h);

    IntRect rect{static_cast<std::int64_t>(std::floor(cover.x0 - px)),
                 static_cast<std::int64_t>(std::floor(cover.y0 - py)),
                 static_cast<std::int64_t>(std::ceil(cover.x1 + px)),
                 static_cast<std::int64_t>(std::ceil(cover.y1 + py))};
    rect.x0 = std::clamp<std::int64_t>(rect.x0, 0, w);
    rect.y0 = std::clamp<std::int64_t>(rect.y0, 0, h);
    rect.x1 = std::clamp<std::int64_t>(rect.x1, 0, w);
    rect.y1 = std::clamp<std::int64_t>(rect.y1, 0, h);

    const auto side = static_cast<std::int64_t>(std::ceil(config.min_side));
    grow_to(rect.x0, rect.x1, side, w);
    grow_to(rect.y0, rect.y1, side, h);
    return rect;
}

CropManifest build_regions(std::span<const std::size_t> selected, const VisualGrid& grid, const RegionConfig& config) {
    config.check();
    if (selected.empty()) {
        reject("no selected visual tokens to organise into regions");
    }
    CropManifest manifest;
    manifest.image_w = grid.image_w;
    manifest.image_h = grid.image_h;
    manifest.provenance.region = config;

    std::vector<Point2> points;
    points.reserve(selected.size());
    for (std::size_t v : selected) {
        const auto c = token_center(grid, v);
        points.push_back({c.x / grid.patch_w(), c.y / grid.patch_h()});
    }
    const std::size_t min_pts = selected.size() < config.min_pts ? 1 : config.min_pts;
    const auto labels = dbscan(points, config.eps, min_pts);

    std::map<int, std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == kNoise) {
            manifest.noise.push_back(selected[i]);
        } else {
            clusters[labels[i]].push_back(selected[i]);
        }
    }
    std::sort(manifest.noise.begin(), manifest.noise.end());
    for (auto& [id, members] : clusters) {
        std::sort(members.begin(), members.end());
        manifest.regions.push_back({region_rect(grid, members, config), members, id});
    }
    std::sort(manifest.regions.begin(), manifest.regions.end(), [](const EvidenceRegion& a, const EvidenceRegion& b) {
        if (a.rect.y0 != b.rect.y0) {
            return a.rect.y0 < b.rect.y0;
        }
        if (a.rect.x0 != b.rect.x0) {
            return a.rect.x0 < b.rect.x0;
        }
        return a.cluster_id < b.cluster_id;
    });
    manifest.noise_only = manifest.regions.empty();
    return manifest;
}

void apply_fallback_region(CropManifest& manifest, const VisualGrid& grid, std::span<const std::size_t> selected,
                           std::span<const double> scores) {
    if (!manifest.regions.empty()) {
        return;
    }
    if (selected.empty()) {
        reject("no selected visual tokens for a fallback region");
    }
    std::size_t best = selected.front();
    for (std::size_t v : selected) {
        if (v >= scores.size()) {
            reject("selected token without a score");
        }
        if (scores[v] > scores[best] || (scores[v] == scores[best] && v < best)) {
            best = v;
        }
    }
    const std::size_t members[] = {best};
    manifest.regions.push_back({region_rect(grid, members, manifest.provenance.region), {best}, 0});
    manifest.fallback_region = true;
}

}  // namespace cluetrace
