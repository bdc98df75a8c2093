#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "cluetrace/clue_recall.hpp"
#include "cluetrace/error.hpp"
#include "fixtures.hpp"

using namespace cluetrace;
using cluetrace::testing::make_f1;

namespace {

PerceptionInstance f1_instance(std::set<std::size_t> gt) {
    return {make_f1(), "helmet", {"helmet"}, std::move(gt)};
}

// Single-layer, single-step trace whose visual attention is given explicitly.
AttentionTrace visual_trace(const std::vector<double>& vis, const std::string& word) {
    AttentionTrace t;
    t.layout = {0, vis.size(), 1, {"q"}, {word}};
    t.grid = {1, vis.size(), static_cast<std::uint32_t>(10 * vis.size()), 10};
    t.n_steps = 1;
    t.n_layers = 1;
    double total = 0.0;
    for (double x : vis) {
        t.attn.push_back(static_cast<float>(x));
        total += x;
    }
    t.attn.push_back(static_cast<float>(1.0 - total));
    return t;
}

}  // namespace

TEST_CASE("mention_steps") {
    CHECK(mention_steps(f1_instance({2})) == std::vector<std::size_t>{1});
    CHECK(mention_steps({"a", "base", "ball", "bat"}, {"base", "ball"}) == std::vector<std::size_t>{1, 2});
    CHECK(mention_steps({"a", "dog"}, {"cat"}).empty());
    CHECK(mention_steps({" Helmet ", "HELMET"}, {"helmet"}) == std::vector<std::size_t>{0, 1});
    // no lemmatization
    CHECK(mention_steps({"helmets"}, {"helmet"}).empty());
    // overlapping windows merge
    CHECK(mention_steps({"a", "a", "a"}, {"a", "a"}) == std::vector<std::size_t>{0, 1, 2});
    CHECK(mention_steps({"x"}, {"x", "y"}).empty());
}

TEST_CASE("top_k_indices prefers smaller ordinals on ties") {
    const std::vector<double> v{0.2, 0.5, 0.5, 0.1, 0.5};
    CHECK(top_k_indices(v, 2) == std::vector<std::size_t>{1, 2});
    CHECK(top_k_indices(v, 4) == std::vector<std::size_t>{1, 2, 4, 0});
    CHECK(top_k_indices(v, 10).size() == 5);
}

TEST_CASE("layer_recall on F1") {
    CHECK(layer_recall(f1_instance({2}), 0).value() == 1.0);
    CHECK(layer_recall(f1_instance({0}), 0).value() == 0.0);
    CHECK_THROWS_AS(layer_recall(f1_instance({2}), 1), Error);

    auto silent = f1_instance({2});
    silent.category_token_texts = {"catcher"};
    CHECK_FALSE(layer_recall(silent, 0).has_value());

    CHECK_THROWS_AS(layer_recall(f1_instance({}), 0), Error);
    CHECK_THROWS_AS(layer_recall(f1_instance({4}), 0), Error);
}

TEST_CASE("perfect retrieval scores 1 for any ground-truth set") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng() % 30;
        std::set<std::size_t> gt;
        const std::size_t k = 1 + rng() % n;
        while (gt.size() < k) gt.insert(rng() % n);
        std::vector<double> vis(n, 0.0);
        for (std::size_t v : gt) vis[v] = 0.9 / static_cast<double>(k);
        PerceptionInstance inst{visual_trace(vis, "cup"), "cup", {"cup"}, gt};
        CHECK(layer_recall(inst, 0).value() == 1.0);
    }
}

TEST_CASE("clue_recall averages non-abstaining terms") {
    const std::vector<PerceptionInstance> two{f1_instance({2}), f1_instance({0})};
    const auto r = clue_recall(two, 0);
    CHECK(r.value == 0.5);
    CHECK(r.n_used == 2);
    CHECK(r.n_skipped == 0);

    auto silent = f1_instance({2});
    silent.category_token_texts = {"bat"};
    const std::vector<PerceptionInstance> mixed{silent, f1_instance({2})};
    const auto m = clue_recall(mixed, 0);
    CHECK(m.value == 1.0);
    CHECK(m.n_skipped == 1);

    const std::vector<PerceptionInstance> none{silent};
    try {
        clue_recall(none, 0);
        FAIL("expected empty evaluation");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kEmptyEvaluation);
    }
}

TEST_CASE("scan_layers picks the first maximal layer") {
    const std::vector<PerceptionInstance> one{f1_instance({2})};
    const auto r = scan_layers(one);
    CHECK(r.per_layer == std::vector<double>{1.0});
    CHECK(r.l_max == 0);
    CHECK(r.n_instances == 1);

    // three identical layers tie at the same value
    auto t = make_f1();
    t.n_layers = 3;
    std::vector<float> attn;
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t l = 0; l < 3; ++l)
            for (std::size_t n = 0; n < 8; ++n) attn.push_back(make_f1().at(s, 0, n));
    t.attn = attn;
    const std::vector<PerceptionInstance> tied{{t, "helmet", {"helmet"}, {2}}};
    const auto rt = scan_layers(tied);
    CHECK(rt.per_layer == std::vector<double>{1.0, 1.0, 1.0});
    CHECK(rt.l_max == 0);

    CHECK_THROWS_AS(scan_layers(std::vector<PerceptionInstance>{}), Error);
}

TEST_CASE("layer_recall properties") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng() % 20;
        std::vector<double> vis(n);
        double total = 0.0;
        for (auto& x : vis) total += (x = unit(rng));
        for (auto& x : vis) x = x / total * 0.8;
        std::set<std::size_t> gt;
        const std::size_t k = 1 + rng() % n;
        while (gt.size() < k) gt.insert(rng() % n);
        const PerceptionInstance base{visual_trace(vis, "cup"), "cup", {"cup"}, gt};
        const double r0 = layer_recall(base, 0).value();
        CHECK(r0 >= 0.0);
        CHECK(r0 <= 1.0);

        // permutation of visual ordinals
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<double> pv(n);
        std::set<std::size_t> pg;
        for (std::size_t v = 0; v < n; ++v) pv[perm[v]] = vis[v];
        for (std::size_t v : gt) pg.insert(perm[v]);
        CHECK(layer_recall({visual_trace(pv, "cup"), "cup", {"cup"}, pg}, 0).value() == r0);

        // positive scaling
        std::vector<double> sv(vis);
        for (auto& x : sv) x *= 0.5;
        CHECK(layer_recall({visual_trace(sv, "cup"), "cup", {"cup"}, gt}, 0).value() == r0);

        // more evidence on a gt token, less elsewhere
        std::vector<double> mv(vis);
        const std::size_t g = *gt.begin();
        mv[g] += 0.05;
        for (std::size_t v = 0; v < n; ++v)
            if (!gt.count(v)) mv[v] *= 0.7;
        CHECK(layer_recall({visual_trace(mv, "cup"), "cup", {"cup"}, gt}, 0).value() >= r0);
    }
}
