#include <doctest.h>

#include <random>

#include "cluetrace/error.hpp"
#include "cluetrace/regions.hpp"
#include "dbscan_reference.hpp"

using namespace cluetrace;
using cluetrace::testing::reference_dbscan;
using cluetrace::testing::same_partition;

namespace {

RegionConfig plain(double eps, std::size_t min_pts) { return {eps, min_pts, 0.0, 1.0}; }

bool contains(const IntRect& outer, const PixelRect& inner) {
    return outer.x0 <= inner.x0 && outer.y0 <= inner.y0 && outer.x1 >= inner.x1 && outer.y1 >= inner.y1;
}

}  // namespace

TEST_CASE("dbscan small cases") {
    const std::vector<Point2> tri{{0, 0}, {0, 1}, {1, 0}};
    CHECK(dbscan(tri, 1.5, 2) == std::vector<int>{0, 0, 0});

    const std::vector<Point2> split{{0, 0}, {0, 1}, {5, 5}};
    CHECK(dbscan(split, 1.5, 2) == std::vector<int>{0, 0, kNoise});

    CHECK(dbscan(split, 1.5, 1) == std::vector<int>{0, 0, 1});
    CHECK(dbscan(std::vector<Point2>{}, 1.0, 3).empty());

    // radius is inclusive
    const std::vector<Point2> pair{{0, 0}, {1, 0}};
    CHECK(dbscan(pair, 1.0, 2) == std::vector<int>{0, 0});

    CHECK_THROWS_AS(dbscan(pair, 0.0, 2), Error);
    CHECK_THROWS_AS(dbscan(pair, 1.0, 0), Error);
}

TEST_CASE("dbscan border point joins the first cluster to reach it") {
    // Two dense groups sharing one border point at x = 2.
    const std::vector<Point2> pts{{0, 0}, {1, 0}, {0.5, 0.5}, {2, 0}, {3, 0}, {4, 0}, {3.5, 0.5}};
    const auto labels = dbscan(pts, 1.0, 4);
    CHECK(labels[3] == labels[0]);
    CHECK(labels[4] != labels[0]);
    CHECK(same_partition(labels, reference_dbscan(pts, 1.0, 4)));
}

TEST_CASE("dbscan matches the reference on random sets") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = rng() % 80;
        const double extent = 2.0 + 20.0 * unit(rng);
        std::vector<Point2> pts(n);
        for (auto& p : pts) p = {std::floor(unit(rng) * extent), std::floor(unit(rng) * extent)};
        const double eps = 0.5 + 2.5 * unit(rng);
        const std::size_t min_pts = 1 + rng() % 6;
        CHECK(same_partition(dbscan(pts, eps, min_pts), reference_dbscan(pts, eps, min_pts)));
    }
}

TEST_CASE("build_regions on the 2x2 grid") {
    const VisualGrid g{2, 2, 100, 100};
    const std::vector<std::size_t> one{2};
    auto m = build_regions(one, g, plain(1.5, 1));
    REQUIRE(m.regions.size() == 1);
    CHECK(m.regions[0].rect == IntRect{0, 50, 50, 100});
    CHECK(m.regions[0].members == std::vector<std::size_t>{2});

    const std::vector<std::size_t> all{0, 1, 2, 3};
    m = build_regions(all, g, plain(1.5, 1));
    REQUIRE(m.regions.size() == 1);
    CHECK(m.regions[0].rect == IntRect{0, 0, 100, 100});

    const std::vector<std::size_t> corners{0, 3};
    m = build_regions(corners, g, plain(0.5, 1));
    REQUIRE(m.regions.size() == 2);
    CHECK(m.regions[0].rect == IntRect{0, 0, 50, 50});
    CHECK(m.regions[1].rect == IntRect{50, 50, 100, 100});
}

TEST_CASE("padding, clamping and minimum side") {
    const VisualGrid g{2, 2, 100, 100};
    const std::vector<std::size_t> one{2};
    auto m = build_regions(one, g, {1.5, 1, 0.10, 28});
    REQUIRE(m.regions.size() == 1);
    CHECK(m.regions[0].rect == IntRect{0, 45, 55, 100});

    // 16x16 grid over 64 px: 4 px patches grow to the 28 px minimum
    const VisualGrid fine{16, 16, 64, 64};
    const std::vector<std::size_t> center{8 * 16 + 8};
    m = build_regions(center, fine, {1.5, 1, 0.0, 28});
    const auto r = m.regions[0].rect;
    CHECK(r.x1 - r.x0 == 28);
    CHECK(r.y1 - r.y0 == 28);
    CHECK(r.x0 <= 32);
    CHECK(r.x1 >= 36);

    // against the image corner the rect is shifted, not cut
    const std::vector<std::size_t> corner{0};
    m = build_regions(corner, fine, {1.5, 1, 0.0, 28});
    CHECK(m.regions[0].rect == IntRect{0, 0, 28, 28});

    // min_side larger than the image stops at the image
    m = build_regions(corner, fine, {1.5, 1, 0.0, 500});
    CHECK(m.regions[0].rect == IntRect{0, 0, 64, 64});
}

TEST_CASE("min_pts drops to 1 for small selections") {
    const VisualGrid g{4, 4, 64, 64};
    const std::vector<std::size_t> two{0, 15};
    const auto m = build_regions(two, g, {1.5, 3, 0.0, 1});
    CHECK(m.regions.size() == 2);
    CHECK_FALSE(m.noise_only);
}

TEST_CASE("noise-only selections and the fallback region") {
    const VisualGrid g{4, 4, 64, 64};
    const std::vector<std::size_t> scattered{0, 3, 12, 15};
    auto m = build_regions(scattered, g, {1.5, 3, 0.0, 1});
    CHECK(m.noise_only);
    CHECK(m.regions.empty());
    CHECK(m.noise == scattered);

    std::vector<double> scores(16, 0.0);
    scores[12] = 0.9;
    scores[3] = 0.9;
    apply_fallback_region(m, g, scattered, scores);
    REQUIRE(m.regions.size() == 1);
    CHECK(m.fallback_region);
    CHECK(m.regions[0].members == std::vector<std::size_t>{3});
    CHECK(m.regions[0].rect == IntRect{48, 0, 64, 16});
}

TEST_CASE("regions are ordered by (y0, x0, cluster)") {
    const VisualGrid g{8, 8, 80, 80};
    const std::vector<std::size_t> sel{7, 56, 0, 63};
    std::vector<std::size_t> sorted(sel);
    std::sort(sorted.begin(), sorted.end());
    const auto m = build_regions(sorted, g, {0.5, 1, 0.0, 1});
    REQUIRE(m.regions.size() == 4);
    for (std::size_t i = 1; i < m.regions.size(); ++i) {
        const auto& a = m.regions[i - 1].rect;
        const auto& b = m.regions[i].rect;
        CHECK((a.y0 < b.y0 || (a.y0 == b.y0 && a.x0 <= b.x0)));
    }
    CHECK(m.regions[0].members == std::vector<std::size_t>{0});
    CHECK(m.regions[1].members == std::vector<std::size_t>{7});
}

TEST_CASE("region properties on random selections") {
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 150; ++trial) {
        const VisualGrid g{2 + rng() % 10, 2 + rng() % 10, static_cast<std::uint32_t>(50 + rng() % 400),
                           static_cast<std::uint32_t>(50 + rng() % 400)};
        std::set<std::size_t> pick;
        const std::size_t k = 1 + rng() % g.size();
        while (pick.size() < k) pick.insert(rng() % g.size());
        const std::vector<std::size_t> sel(pick.begin(), pick.end());
        const RegionConfig cfg{0.8 + 2.0 * unit(rng), 1 + rng() % 4, 0.2 * unit(rng), 1.0 + 40.0 * unit(rng)};
        const auto m = build_regions(sel, g, cfg);

        std::set<std::size_t> seen;
        for (const auto& r : m.regions) {
            CHECK(r.rect.x0 < r.rect.x1);
            CHECK(r.rect.y0 < r.rect.y1);
            CHECK(r.rect.x0 >= 0);
            CHECK(r.rect.y1 <= static_cast<std::int64_t>(g.image_h));
            // cover: the padded integer rect holds every member's full patch
            for (std::size_t v : r.members) {
                CHECK(seen.insert(v).second);
                CHECK(contains(r.rect, token_patch(g, v)));
            }
            // idempotence: re-clustering the members yields one contained region
            const auto again = build_regions(r.members, g, cfg);
            REQUIRE(again.regions.size() == 1);
            CHECK(again.regions[0].members == r.members);
            const auto& ar = again.regions[0].rect;
            CHECK((ar.x0 >= r.rect.x0 && ar.y0 >= r.rect.y0 && ar.x1 <= r.rect.x1 && ar.y1 <= r.rect.y1));
        }
        for (std::size_t v : m.noise) CHECK(seen.insert(v).second);
        CHECK(seen == pick);
    }
}

TEST_CASE("unpadded cover translates with the points") {
    const VisualGrid g{10, 10, 100, 100};
    const std::vector<std::size_t> base{11, 12, 21};
    const auto c0 = patch_cover(g, base);
    std::vector<std::size_t> shifted;
    for (std::size_t v : base) shifted.push_back(v + 3 * 10 + 4);
    const auto c1 = patch_cover(g, shifted);
    CHECK(c1.x0 - c0.x0 == doctest::Approx(40.0));
    CHECK(c1.y0 - c0.y0 == doctest::Approx(30.0));
    CHECK(c1.width() == doctest::Approx(c0.width()));
    CHECK(c1.height() == doctest::Approx(c0.height()));
}

TEST_CASE("region config checks") {
    CHECK_THROWS_AS((RegionConfig{0.0, 1, 0.0, 1.0}.check()), Error);
    CHECK_THROWS_AS((RegionConfig{1.0, 0, 0.0, 1.0}.check()), Error);
    CHECK_THROWS_AS((RegionConfig{1.0, 1, -0.1, 1.0}.check()), Error);
    CHECK_THROWS_AS((RegionConfig{1.0, 1, 0.0, 0.5}.check()), Error);
    const VisualGrid g{2, 2, 100, 100};
    CHECK_THROWS_AS(build_regions(std::vector<std::size_t>{}, g, RegionConfig{}), Error);
}
